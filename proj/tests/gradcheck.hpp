#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include <torch/torch.h>

#include "oracles.hpp"
#include "partsynth/tensor_util.hpp"

namespace gradcheck {

struct Result {
  double max_rel_error = 0.0;
  std::array<double, 4> analytic{};
  std::array<double, 4> numeric{};
};

// Warp-loss MSE(warp(part, s, t), target) on a 4^3 grid: autograd through the
// production warp versus central differences of an independent trilinear warp.
inline Result stn_warp_gradient(std::uint64_t seed, double eps = 1e-4) {
  constexpr int r = 4;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  oracles::Field part{r, std::vector<double>(r * r * r)}, target{r, std::vector<double>(r * r * r)};
  for (auto& v : part.v) v = u(rng);
  for (auto& v : target.v) v = u(rng);
  const double s = 0.85 + 0.3 * u(rng);
  const std::array<double, 3> t{0.1 * (u(rng) - 0.5), 0.1 * (u(rng) - 0.5), 0.1 * (u(rng) - 0.5)};

  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto vol = torch::from_blob(part.v.data(), {1, 1, r, r, r}, opts).clone();
  auto tgt = torch::from_blob(target.v.data(), {1, 1, r, r, r}, opts).clone();
  auto st = torch::tensor({s}, opts).requires_grad_(true);
  auto tt = torch::tensor({t[0], t[1], t[2]}, opts).view({1, 3}).requires_grad_(true);
  auto loss = torch::mse_loss(partsynth::warp_volume(vol, st, tt), tgt);
  loss.backward();

  Result res;
  res.analytic[0] = st.grad()[0].item<double>();
  for (int a = 0; a < 3; ++a) res.analytic[a + 1] = tt.grad()[0][a].item<double>();
  auto eval = [&](double s2, std::array<double, 3> t2) { return oracles::mse(part.warped(s2, t2), target); };
  res.numeric[0] = (eval(s + eps, t) - eval(s - eps, t)) / (2 * eps);
  for (int a = 0; a < 3; ++a) {
    auto tp = t, tm = t;
    tp[a] += eps;
    tm[a] -= eps;
    res.numeric[a + 1] = (eval(s, tp) - eval(s, tm)) / (2 * eps);
  }
  for (int q = 0; q < 4; ++q) {
    const double denom = std::max({std::abs(res.analytic[q]), std::abs(res.numeric[q]), 1e-8});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(res.analytic[q] - res.numeric[q]) / denom);
  }
  return res;
}

}  // namespace gradcheck
