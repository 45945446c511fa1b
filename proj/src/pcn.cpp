#include "partsynth/pcn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "partsynth/checkpoint.hpp"
#include "partsynth/error.hpp"
#include "partsynth/tensor_util.hpp"

namespace partsynth {

namespace nn = torch::nn;

namespace {

constexpr double kSlope = 0.2;

int downsampling_stages(int resolution) {
  int n = 0;
  for (int r = resolution; r > 4; r /= 2) {
    if (r % 2 != 0) return -1;
    ++n;
  }
  return n;
}

void conv_block(nn::Sequential& seq, int in, int out, bool down) {
  seq->push_back(nn::Conv3d(nn::Conv3dOptions(in, out, down ? 4 : 3).stride(down ? 2 : 1).padding(1)));
  seq->push_back(nn::BatchNorm3d(out));
  seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)));
}

void deconv_block(nn::Sequential& seq, int in, int out, bool up) {
  seq->push_back(nn::ConvTranspose3d(nn::ConvTranspose3dOptions(in, out, up ? 4 : 3).stride(up ? 2 : 1).padding(1)));
  seq->push_back(nn::BatchNorm3d(out));
  seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)));
}

void append_params(std::vector<torch::Tensor>& out, const nn::Module& m) {
  for (const auto& p : m.parameters()) out.push_back(p);
}

double mean_abs_error(double a, double b) { return std::abs(a - b); }

}  // namespace

PcnNetImpl::PcnNetImpl(const PcnConfig& c) : cfg(c) {
  const int down = downsampling_stages(cfg.resolution);
  if (down < 1 || down > 4) fail(ErrorCode::InvalidArgument, "PCN resolution must be 8, 16, 32 or 64");
  if (cfg.channels.size() != 5) fail(ErrorCode::InvalidArgument, "PCN needs exactly five channel widths");
  if (cfg.latent_dim < 1) fail(ErrorCode::InvalidArgument, "latent dimension must be positive");
  const auto& ch = cfg.channels;
  const int flat = ch[4] * bottleneck * bottleneck * bottleneck;

  encoder = nn::Sequential();
  for (int q = 0; q < 5; ++q) {
    const int in = q == 0 ? 1 : ch[q - 1];
    conv_block(encoder, in, ch[q], q < down);
  }
  encoder_fc = nn::Linear(flat, cfg.latent_dim);
  decoder_fc = nn::Linear(cfg.latent_dim, flat);
  decoder = nn::Sequential();
  for (int q = 0; q < 5; ++q) {
    const int in = ch[4 - q];
    const bool up = q >= 5 - down;
    if (q == 4) {
      decoder->push_back(nn::ConvTranspose3d(nn::ConvTranspose3dOptions(in, 1, up ? 4 : 3).stride(up ? 2 : 1).padding(1)));
    } else {
      deconv_block(decoder, in, ch[3 - q], up);
    }
  }

  localizer = nn::Sequential();
  const int loc_ch[4] = {ch[0], ch[1], ch[2], ch[2]};
  for (int q = 0; q < 4; ++q) {
    const int in = q == 0 ? 1 : loc_ch[q - 1];
    conv_block(localizer, in, loc_ch[q], q < down);
  }
  const int loc_flat = ch[2] * bottleneck * bottleneck * bottleneck;
  auto act = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)); };
  localizer_head = nn::Sequential(nn::Linear(loc_flat, 128), act(), nn::Linear(128, 64), act(), nn::Linear(64, 32), act(),
                                  nn::Linear(32, 4));

  register_module("encoder", encoder);
  register_module("encoder_fc", encoder_fc);
  register_module("decoder_fc", decoder_fc);
  register_module("decoder", decoder);
  register_module("localizer", localizer);
  register_module("localizer_head", localizer_head);
}

torch::Tensor PcnNetImpl::encode(const torch::Tensor& parts) {
  return torch::sigmoid(encoder_fc(encoder->forward(parts).flatten(1)));
}

torch::Tensor PcnNetImpl::decode(const torch::Tensor& codes) {
  auto h = torch::leaky_relu(decoder_fc(codes), kSlope).view({-1, cfg.channels[4], bottleneck, bottleneck, bottleneck});
  return torch::sigmoid(decoder->forward(h));
}

torch::Tensor PcnNetImpl::localize_raw(const torch::Tensor& parts) {
  return localizer_head->forward(localizer->forward(parts).flatten(1));
}

std::vector<torch::Tensor> PcnNetImpl::autoencoder_parameters() {
  std::vector<torch::Tensor> out;
  append_params(out, *encoder);
  append_params(out, *encoder_fc);
  append_params(out, *decoder_fc);
  append_params(out, *decoder);
  return out;
}

std::vector<torch::Tensor> PcnNetImpl::localizer_parameters() {
  std::vector<torch::Tensor> out;
  append_params(out, *localizer);
  append_params(out, *localizer_head);
  return out;
}

std::string PcnReport::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,loss_AE,loss_STN\n";
  for (const auto& e : epochs) out << e.epoch << ',' << e.loss_ae << ',' << e.loss_stn << '\n';
  return out.str();
}

PcnLossTerms pcn_loss_terms(const torch::Tensor& part, const torch::Tensor& placed, const torch::Tensor& part_hat,
                            const torch::Tensor& placed_hat, const torch::Tensor& scale, const torch::Tensor& scale_hat,
                            const torch::Tensor& translation, const torch::Tensor& translation_hat) {
  PcnLossTerms t;
  t.recon = torch::mse_loss(part_hat, part);
  t.warp = torch::mse_loss(placed_hat, placed);
  t.scale = (scale_hat - scale).abs().mean();
  t.translation = (translation_hat - translation).norm(2, {1}).mean();
  return t;
}

double pcn_loss(const PartRecord& sample, const VoxelGrid& part_hat, const VoxelGrid& placed_hat, double scale_hat,
                const Vec3& translation_hat) {
  require_same_resolution(sample.normalized, part_hat);
  require_same_resolution(sample.transformed, placed_hat);
  auto mse = [](const VoxelGrid& a, const VoxelGrid& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a.values()[i]) - b.values()[i];
      acc += d * d;
    }
    return acc / static_cast<double>(a.size());
  };
  double t2 = 0.0;
  for (int a = 0; a < 3; ++a) t2 += (sample.xf.translation[a] - translation_hat[a]) * (sample.xf.translation[a] - translation_hat[a]);
  return mse(sample.normalized, part_hat) + mse(sample.transformed, placed_hat) +
         mean_abs_error(sample.xf.scale, scale_hat) + std::sqrt(t2);
}

PcnModel::PcnModel(const PcnConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  seed_torch(seed);
  net_ = PcnNet(cfg_);
  net_->eval();
}

void PcnModel::check_grid(const VoxelGrid& g) const {
  if (g.resolution() != cfg_.resolution)
    fail(ErrorCode::ShapeMismatch, "grid resolution " + std::to_string(g.resolution()) + " does not match the PCN (" +
                                       std::to_string(cfg_.resolution) + ")");
}

LatentCode PcnModel::encode(const VoxelGrid& part) const {
  check_grid(part);
  torch::NoGradGuard ng;
  return tensor_to_latent(net_.ptr()->encode(grid_to_tensor(part))[0]);
}

std::vector<LatentCode> PcnModel::encode_batch(std::span<const VoxelGrid> parts) const {
  std::vector<LatentCode> out;
  if (parts.empty()) return out;
  for (const auto& g : parts) check_grid(g);
  torch::NoGradGuard ng;
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < parts.size(); b += kChunk) {
    const auto z = net_.ptr()->encode(grids_to_tensor(parts.subspan(b, std::min(kChunk, parts.size() - b))));
    for (std::int64_t i = 0; i < z.size(0); ++i) out.push_back(tensor_to_latent(z[i]));
  }
  return out;
}

VoxelGrid PcnModel::decode(const LatentCode& z) const {
  if (static_cast<int>(z.dim()) != cfg_.latent_dim)
    fail(ErrorCode::ShapeMismatch, "latent dimension " + std::to_string(z.dim()) + " does not match the PCN");
  torch::NoGradGuard ng;
  return tensor_to_grid(net_.ptr()->decode(latents_to_tensor(std::span<const LatentCode>(&z, 1))));
}

AffineTransform PcnModel::localize(const VoxelGrid& part_hat) const {
  check_grid(part_hat);
  torch::NoGradGuard ng;
  const auto o = net_.ptr()->localize_raw(grid_to_tensor(part_hat)).to(torch::kFloat64);
  AffineTransform xf;
  xf.scale = std::exp(o[0][0].item<double>());
  for (int a = 0; a < 3; ++a) xf.translation[a] = o[0][a + 1].item<double>();
  return xf;
}

PcnReport PcnModel::train(std::span<const PartRecord> data, const PcnTrainConfig& tc) {
  if (data.empty()) fail(ErrorCode::InvalidArgument, "PCN training needs at least one part");
  if (tc.lr_ae <= 0 || tc.lr_stn <= 0 || tc.epochs_joint < 0 || tc.epochs_stn < 0 || tc.batch_size < 1)
    fail(ErrorCode::InvalidArgument, "invalid PCN training configuration");
  for (const auto& r : data) {
    check_grid(r.normalized);
    check_grid(r.transformed);
  }
  train_meta_ = {{"lr_ae", tc.lr_ae},           {"lr_stn", tc.lr_stn},         {"epochs_joint", tc.epochs_joint},
                 {"epochs_stn", tc.epochs_stn}, {"batch_size", tc.batch_size}, {"seed", tc.seed},
                 {"parts", data.size()}};
  PcnReport report;
  stage_ = tc.epochs_stn > 0 ? 2 : 1;
  if (tc.epochs_joint + tc.epochs_stn == 0) return report;

  seed_torch(tc.seed);
  const auto n = static_cast<std::int64_t>(data.size());
  std::vector<VoxelGrid> normalized, transformed;
  normalized.reserve(data.size());
  transformed.reserve(data.size());
  auto scales = torch::empty({n}, torch::kFloat32);
  auto shifts = torch::empty({n, 3}, torch::kFloat32);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& r = data[static_cast<std::size_t>(i)];
    normalized.push_back(r.normalized);
    transformed.push_back(r.transformed);
    scales[i] = r.xf.scale;
    for (int a = 0; a < 3; ++a) shifts[i][a] = r.xf.translation[a];
  }
  const auto parts = grids_to_tensor(normalized);
  const auto placed = grids_to_tensor(transformed);
  normalized.clear();
  transformed.clear();

  auto ae_params = net_->autoencoder_parameters();
  auto stn_params = net_->localizer_parameters();
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(ae_params, std::make_unique<torch::optim::AdamOptions>(tc.lr_ae));
  groups.emplace_back(stn_params, std::make_unique<torch::optim::AdamOptions>(tc.lr_stn));
  torch::optim::Adam joint(std::move(groups), torch::optim::AdamOptions(tc.lr_ae));
  torch::optim::Adam stn_only(stn_params, torch::optim::AdamOptions(tc.lr_stn));

  std::mt19937_64 rng(tc.seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int total = tc.epochs_joint + tc.epochs_stn;
  for (int epoch = 0; epoch < total; ++epoch) {
    const bool stage_two = epoch >= tc.epochs_joint;
    if (stage_two && epoch == tc.epochs_joint) {
      for (auto& p : ae_params) p.set_requires_grad(false);
    }
    net_->train();
    std::shuffle(order.begin(), order.end(), rng);
    double sum_ae = 0.0, sum_stn = 0.0;
    for (std::int64_t b = 0; b < n; b += tc.batch_size) {
      const auto len = std::min<std::int64_t>(tc.batch_size, n - b);
      const auto idx = torch::from_blob(order.data() + b, {len}, torch::kInt64).clone();
      const auto p = parts.index_select(0, idx), pp = placed.index_select(0, idx);
      const auto s = scales.index_select(0, idx), t = shifts.index_select(0, idx);
      torch::Tensor part_hat;
      if (stage_two) {
        // The autoencoder is frozen: run it in inference mode.
        torch::NoGradGuard ng;
        net_->encoder->eval();
        net_->decoder->eval();
        part_hat = net_->decode(net_->encode(p));
      } else {
        part_hat = net_->decode(net_->encode(p));
      }
      // Localization reads the reconstruction as data; its gradient does not
      // flow back into the autoencoder through this input.
      const auto raw = net_->localize_raw(part_hat.detach());
      const auto s_hat = torch::exp(raw.select(1, 0));
      const auto t_hat = raw.slice(1, 1, 4);
      const auto placed_hat = warp_volume(part_hat, s_hat, t_hat);
      const auto terms = pcn_loss_terms(p, pp, part_hat, placed_hat, s, s_hat, t, t_hat);
      const auto loss = terms.total();
      auto& opt = stage_two ? stn_only : joint;
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum_ae += terms.recon.item<double>() * static_cast<double>(len);
      sum_stn += (terms.warp + terms.scale + terms.translation).item<double>() * static_cast<double>(len);
    }
    PcnEpoch e{epoch, stage_two ? 2 : 1, sum_ae / static_cast<double>(n), sum_stn / static_cast<double>(n)};
    check_finite(e.loss_ae + e.loss_stn, epoch, "PCN training");
    report.epochs.push_back(e);
  }
  for (auto& p : ae_params) p.set_requires_grad(true);
  net_->eval();
  return report;
}

void PcnModel::save(const std::filesystem::path& path) const {
  nlohmann::json meta{{"R", cfg_.resolution},
                      {"d", cfg_.latent_dim},
                      {"stage", stage_},
                      {"config", {{"channels", cfg_.channels}}},
                      {"train", train_meta_}};
  save_checkpoint(path, "pcn", meta, *net_);
}

PcnModel PcnModel::load(const std::filesystem::path& path) {
  const auto ck = load_checkpoint(path, "pcn");
  PcnConfig cfg;
  try {
    cfg.resolution = ck.header.at("R").get<int>();
    cfg.latent_dim = ck.header.at("d").get<int>();
    cfg.channels = ck.header.at("config").at("channels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("bad PCN checkpoint header: ") + e.what());
  }
  PcnModel m(cfg);
  restore_module(*m.net_, ck);
  m.stage_ = ck.header.value("stage", 0);
  m.train_meta_ = ck.header.value("train", nlohmann::json::object());
  m.net_->eval();
  return m;
}

PcnReport train_pcn(PcnModel& model, std::span<const PartRecord> data, const PcnTrainConfig& tc) {
  return model.train(data, tc);
}

}  // namespace partsynth
