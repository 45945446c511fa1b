#include "partsynth/implicit_decoder.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>

#include "partsynth/checkpoint.hpp"
#include "partsynth/error.hpp"
#include "partsynth/tensor_util.hpp"

namespace partsynth {

namespace nn = torch::nn;

namespace {

constexpr double kSlope = 0.02;
constexpr std::int64_t kChunk = 1 << 15;

}  // namespace

ImplicitNetImpl::ImplicitNetImpl(const ImplicitConfig& cfg) : channels(cfg.channels) {
  if (cfg.channels < 1 || cfg.width < 1 || cfg.latent_dim < 1) fail(ErrorCode::InvalidArgument, "invalid implicit decoder shape");
  const int c = cfg.channels;
  seed_fc = register_module("seed_fc", nn::Linear(cfg.latent_dim, 2 * c * 64));
  lattice = nn::Sequential();
  lattice->push_back(nn::ConvTranspose3d(nn::ConvTranspose3dOptions(2 * c, c, 4).stride(2).padding(1)));
  lattice->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)));
  lattice->push_back(nn::ConvTranspose3d(nn::ConvTranspose3dOptions(c, c, 4).stride(2).padding(1)));
  lattice->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)));
  register_module("lattice", lattice);
  head = nn::Sequential();
  head->push_back(nn::Linear(c + 3, cfg.width));
  head->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)));
  head->push_back(nn::Linear(cfg.width, cfg.width));
  head->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)));
  head->push_back(nn::Linear(cfg.width, 1));
  register_module("head", head);
}

torch::Tensor ImplicitNetImpl::forward(const torch::Tensor& z, const torch::Tensor& p) {
  namespace F = torch::nn::functional;
  const auto b = z.size(0);
  auto seed = F::leaky_relu(seed_fc->forward((z - 0.5) * 2.0), F::LeakyReLUFuncOptions().negative_slope(kSlope));
  const auto features = lattice->forward(seed.view({b, 2 * channels, 4, 4, 4}));
  // grid_sample reads (x, y, z) as (W, H, D); frame axis 0 is the depth axis.
  const auto where = (p * 2.0).flip({-1}).unsqueeze(2).unsqueeze(2);
  auto f = F::grid_sample(features, where,
                          F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
  f = f.squeeze(-1).squeeze(-1).transpose(1, 2);
  return head->forward(torch::cat({f, p * 2.0}, -1)).squeeze(-1);
}

ImplicitModel::ImplicitModel(const ImplicitConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  seed_torch(seed);
  net_ = ImplicitNet(cfg_);
  net_->eval();
}

torch::Tensor ImplicitModel::evaluate(const LatentCode& z, const torch::Tensor& points) const {
  if (static_cast<int>(z.dim()) != cfg_.latent_dim)
    fail(ErrorCode::ShapeMismatch, "latent dimension " + std::to_string(z.dim()) + " does not match the implicit decoder");
  torch::NoGradGuard ng;
  const auto zt = latents_to_tensor(std::span<const LatentCode>(&z, 1));
  const auto n = points.size(0);
  auto out = torch::empty({n}, torch::kFloat32);
  for (std::int64_t b = 0; b < n; b += kChunk) {
    const auto len = std::min(kChunk, n - b);
    out.slice(0, b, b + len).copy_(torch::sigmoid(net_.ptr()->forward(zt, points.slice(0, b, b + len).unsqueeze(0))).squeeze(0));
  }
  return out;
}

std::vector<float> ImplicitModel::occupancy(const LatentCode& z, const PointCloud& points) const {
  auto pts = torch::empty({static_cast<std::int64_t>(points.size()), 3}, torch::kFloat32);
  for (std::size_t i = 0; i < points.size(); ++i)
    for (int a = 0; a < 3; ++a) {
      if (!std::isfinite(points.points[i][a])) fail(ErrorCode::InvalidArgument, "query point is not finite");
      pts[static_cast<std::int64_t>(i)][a] = static_cast<float>(points.points[i][a]);
    }
  const auto occ = evaluate(z, pts).contiguous();
  return {occ.data_ptr<float>(), occ.data_ptr<float>() + occ.numel()};
}

VoxelGrid ImplicitModel::decode_field(const LatentCode& z, int resolution) const {
  if (resolution < 8) fail(ErrorCode::InvalidArgument, "decode resolution must be at least 8");
  return tensor_to_grid(evaluate(z, voxel_centers(resolution)));
}

ImplicitReport ImplicitModel::train(std::span<const ImplicitSample> data, const ImplicitTrainConfig& tc) {
  if (data.empty()) fail(ErrorCode::InvalidArgument, "implicit training needs at least one part");
  if (tc.lr <= 0 || tc.epochs < 0 || tc.batch_size < 1 || tc.points_per_part < 1 || tc.occupied_fraction < 0 ||
      tc.occupied_fraction > 1)
    fail(ErrorCode::InvalidArgument, "invalid implicit training configuration");
  const int r = data.front().part.resolution();
  std::vector<VoxelGrid> grids;
  std::vector<LatentCode> codes;
  for (const auto& s : data) {
    if (s.part.resolution() != r) fail(ErrorCode::ResolutionMismatch, "training parts must share a resolution");
    if (static_cast<int>(s.code.dim()) != cfg_.latent_dim) fail(ErrorCode::ShapeMismatch, "latent dimension mismatch");
    grids.push_back(s.part);
    codes.push_back(s.code);
  }
  train_meta_ = {{"lr", tc.lr},
                 {"epochs", tc.epochs},
                 {"batch_size", tc.batch_size},
                 {"points_per_part", tc.points_per_part},
                 {"occupied_fraction", tc.occupied_fraction},
                 {"seed", tc.seed},
                 {"parts", data.size()},
                 {"resolution", r}};
  trained_ = true;
  ImplicitReport report;
  if (tc.epochs == 0) return report;

  seed_torch(tc.seed);
  const auto n = static_cast<std::int64_t>(data.size());
  const auto targets = grids_to_tensor(grids).view({n, -1});
  const auto latents = latents_to_tensor(codes);
  const auto centers = voxel_centers(r);
  grids.clear();

  const std::int64_t occupied_draws = static_cast<std::int64_t>(tc.points_per_part * tc.occupied_fraction);
  const std::int64_t uniform_draws = tc.points_per_part - occupied_draws;
  const std::int64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  torch::optim::Adam opt(net_->parameters(), torch::optim::AdamOptions(tc.lr));
  const double total_steps = static_cast<double>(steps_per_epoch) * tc.epochs;
  std::int64_t step = 0;

  std::mt19937_64 rng(tc.seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  net_->train();
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::int64_t b = 0; b < n; b += tc.batch_size) {
      // Cosine learning-rate decay over the whole run.
      const double lr = 0.5 * tc.lr * (1.0 + std::cos(3.141592653589793 * static_cast<double>(step++) / total_steps));
      for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
      const auto len = std::min<std::int64_t>(tc.batch_size, n - b);
      const auto idx = torch::from_blob(order.data() + b, {len}, torch::kInt64).clone();
      const auto occ = targets.index_select(0, idx);
      auto picks = torch::randint(centers.size(0), {len, uniform_draws}, torch::kInt64);
      if (occupied_draws > 0) picks = torch::cat({picks, torch::multinomial(occ + 1e-3, occupied_draws, true)}, 1);
      const auto p = centers.index_select(0, picks.view({-1})).view({len, picks.size(1), 3});
      const auto t = occ.gather(1, picks);
      const auto loss = torch::binary_cross_entropy_with_logits(net_->forward(latents.index_select(0, idx), p), t);
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum += loss.item<double>() * static_cast<double>(len);
    }
    report.losses.push_back(sum / static_cast<double>(n));
    check_finite(report.losses.back(), epoch, "implicit decoder training");
  }
  net_->eval();
  return report;
}

void ImplicitModel::save(const std::filesystem::path& path) const {
  nlohmann::json meta{{"d", cfg_.latent_dim},
                      {"stage", trained_ ? 1 : 0},
                      {"config", {{"channels", cfg_.channels}, {"width", cfg_.width}}},
                      {"train", train_meta_}};
  if (train_meta_.contains("resolution")) meta["R"] = train_meta_["resolution"];
  save_checkpoint(path, "implicit", meta, *net_);
}

ImplicitModel ImplicitModel::load(const std::filesystem::path& path) {
  const auto ck = load_checkpoint(path, "implicit");
  ImplicitConfig cfg;
  try {
    cfg.latent_dim = ck.header.at("d").get<int>();
    cfg.width = ck.header.at("config").at("width").get<int>();
    cfg.channels = ck.header.at("config").at("channels").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("bad implicit checkpoint header: ") + e.what());
  }
  ImplicitModel m(cfg);
  restore_module(*m.net_, ck);
  m.trained_ = ck.header.value("stage", 0) > 0;
  m.train_meta_ = ck.header.value("train", nlohmann::json::object());
  m.net_->eval();
  return m;
}

ImplicitReport train_implicit(ImplicitModel& model, std::span<const ImplicitSample> data, const ImplicitTrainConfig& tc) {
  return model.train(data, tc);
}

}  // namespace partsynth
