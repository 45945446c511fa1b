#include "partsynth/tensor_util.hpp"

#include <cmath>
#include <cstring>

#include "partsynth/error.hpp"

namespace partsynth {

torch::Tensor grids_to_tensor(std::span<const VoxelGrid> grids) {
  if (grids.empty()) fail(ErrorCode::InvalidArgument, "no grids to stack");
  const int r = grids.front().resolution();
  const auto n = static_cast<std::int64_t>(grids.size());
  auto out = torch::empty({n, 1, r, r, r}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const auto& g : grids) {
    if (g.resolution() != r) fail(ErrorCode::ResolutionMismatch, "grids in one batch must share a resolution");
    std::memcpy(dst, g.values().data(), g.size() * sizeof(float));
    dst += g.size();
  }
  return out;
}

torch::Tensor grid_to_tensor(const VoxelGrid& grid) { return grids_to_tensor(std::span<const VoxelGrid>(&grid, 1)); }

VoxelGrid tensor_to_grid(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).clamp(0.0, 1.0).contiguous();
  const auto n = c.numel();
  const int r = static_cast<int>(std::lround(std::cbrt(static_cast<double>(n))));
  if (static_cast<std::int64_t>(r) * r * r != n) fail(ErrorCode::ShapeMismatch, "tensor is not a cubic volume");
  std::vector<float> values(static_cast<std::size_t>(n));
  std::memcpy(values.data(), c.data_ptr<float>(), values.size() * sizeof(float));
  return VoxelGrid(r, std::move(values));
}

torch::Tensor latents_to_tensor(std::span<const LatentCode> codes) {
  if (codes.empty()) fail(ErrorCode::InvalidArgument, "no latent codes to stack");
  const auto d = static_cast<std::int64_t>(codes.front().dim());
  auto out = torch::empty({static_cast<std::int64_t>(codes.size()), d}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const auto& z : codes) {
    if (static_cast<std::int64_t>(z.dim()) != d) fail(ErrorCode::ShapeMismatch, "latent codes differ in dimension");
    std::memcpy(dst, z.values.data(), z.values.size() * sizeof(float));
    dst += d;
  }
  return out;
}

LatentCode tensor_to_latent(const torch::Tensor& row) {
  auto c = row.detach().to(torch::kFloat32).contiguous().view({-1});
  LatentCode z;
  z.values.resize(static_cast<std::size_t>(c.numel()));
  std::memcpy(z.values.data(), c.data_ptr<float>(), z.values.size() * sizeof(float));
  return z;
}

torch::Tensor warp_volume(const torch::Tensor& volume, const torch::Tensor& scale, const torch::Tensor& translation) {
  namespace F = torch::nn::functional;
  const auto n = volume.size(0);
  const auto opts = volume.options();
  // affine_grid maps normalized output coordinates (2 * frame) to input ones;
  // its coordinate order is (W, H, D), i.e. the reverse of (i, j, k).
  auto inv = (1.0 / scale).view({n, 1, 1});
  auto eye = torch::eye(3, opts).unsqueeze(0);
  auto shift = (-2.0 * translation.flip({1}) / scale.view({n, 1})).view({n, 3, 1});
  auto theta = torch::cat({eye * inv, shift}, 2);
  auto grid = F::affine_grid(theta, volume.sizes().vec(), /*align_corners=*/false);
  return F::grid_sample(volume, grid,
                        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
}

torch::Tensor voxel_centers(int resolution) {
  auto c = (torch::arange(resolution, torch::kFloat32) + 0.5) / resolution - 0.5;
  auto mesh = torch::meshgrid({c, c, c}, "ij");
  return torch::stack({mesh[0], mesh[1], mesh[2]}, -1).view({-1, 3});
}

void seed_torch(std::uint64_t seed) { torch::manual_seed(seed); }

void check_finite(double value, int epoch, const char* what) {
  if (!std::isfinite(value)) throw DivergenceError(epoch, what);
}

}  // namespace partsynth
