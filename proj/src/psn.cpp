#include "partsynth/psn.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "partsynth/checkpoint.hpp"
#include "partsynth/error.hpp"
#include "partsynth/random.hpp"
#include "partsynth/tensor_util.hpp"

namespace partsynth {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr double kSlope = 0.2;
constexpr double kMinStd = 1e-3;

at::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

void require_kind(const SuggestionModel& model, PsnKind kind) {
  if (model.kind() != kind)
    fail(ErrorCode::WrongModel, "expected a " + std::string(to_string(kind)) + " model, got " +
                                    std::string(to_string(model.kind())));
}

void require_ready(const SuggestionModel& model) {
  if (!model.ready()) fail(ErrorCode::ModelNotReady, "suggestion model is not trained");
}

void require_code(const SuggestionModel& model, const LatentCode& code) {
  if (static_cast<int>(code.dim()) != model.latent_dim())
    fail(ErrorCode::ShapeMismatch, "latent dimension " + std::to_string(code.dim()) + " does not match the model");
}

torch::Tensor row(const LatentCode& code) { return latents_to_tensor(std::span<const LatentCode>(&code, 1)); }

std::vector<LatentCode> rows_to_codes(const torch::Tensor& t) {
  const auto c = t.clamp(0.0, 1.0).contiguous();
  std::vector<LatentCode> out;
  for (std::int64_t i = 0; i < c.size(0); ++i) out.push_back(tensor_to_latent(c[i]));
  return out;
}

torch::Tensor generate(const SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& noise) {
  return torch::sigmoid(model.net()->generator->forward(torch::cat({(y - 0.5) * 2.0, noise}, -1)));
}

torch::Tensor time_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  const auto freqs = torch::exp(torch::arange(half, torch::kFloat32) * (-std::log(10000.0) / half));
  const auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

torch::Tensor alpha_bar_table(const DiffusionSchedule& s) {
  return torch::tensor(s.alpha_bars, torch::kFloat64).to(torch::kFloat32);
}

void check_step(const DiffusionSchedule& s, int t) {
  if (t < 1 || t > s.steps())
    fail(ErrorCode::StepRange, "diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(s.steps()));
}

}  // namespace

PsnKind parse_psn_kind(std::string_view name) {
  if (name == "mdn") return PsnKind::Mdn;
  if (name == "cgan") return PsnKind::Cgan;
  if (name == "cimle") return PsnKind::Cimle;
  if (name == "cddpm") return PsnKind::Cddpm;
  fail(ErrorCode::InvalidKind, "unknown suggestion model kind '" + std::string(name) + "'");
}

std::string_view to_string(PsnKind kind) noexcept {
  switch (kind) {
    case PsnKind::Mdn: return "mdn";
    case PsnKind::Cgan: return "cgan";
    case PsnKind::Cimle: return "cimle";
    case PsnKind::Cddpm: return "cddpm";
  }
  return "?";
}

double default_learning_rate(PsnKind kind) noexcept {
  switch (kind) {
    case PsnKind::Mdn: return 1e-4;
    case PsnKind::Cgan: return 1e-5;
    case PsnKind::Cimle: return 1e-4;
    case PsnKind::Cddpm: return 8e-5;
  }
  return 1e-4;
}

// ---- mixture / schedule value types ----

void MixtureModel::validate() const {
  const int h = components();
  if (h < 1 || static_cast<int>(means.size()) != h || static_cast<int>(stds.size()) != h)
    fail(ErrorCode::InvalidArgument, "mixture needs matching weights, means and stds");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) fail(ErrorCode::InvalidArgument, "negative mixture weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) fail(ErrorCode::InvalidArgument, "mixture weights do not sum to 1");
  for (int j = 0; j < h; ++j) {
    if (means[j].size() != means[0].size() || stds[j].size() != means[0].size())
      fail(ErrorCode::InvalidArgument, "ragged mixture component");
    for (double s : stds[j])
      if (!(s > 0.0)) fail(ErrorCode::InvalidArgument, "mixture std must be positive");
  }
}

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1 || !(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    fail(ErrorCode::InvalidArgument, "invalid diffusion schedule");
  DiffusionSchedule s;
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double b = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (steps - 1);
    prod *= 1.0 - b;
    s.betas.push_back(b);
    s.alpha_bars.push_back(prod);
  }
  return s;
}

double DiffusionSchedule::beta(int t) const {
  check_step(*this, t);
  return betas[static_cast<std::size_t>(t - 1)];
}

double DiffusionSchedule::alpha_bar(int t) const {
  check_step(*this, t);
  return alpha_bars[static_cast<std::size_t>(t - 1)];
}

std::vector<double> ddpm_q_sample(const DiffusionSchedule& schedule, std::span<const double> z0, int t,
                                  std::span<const double> eps) {
  const double ab = schedule.alpha_bar(t);
  if (eps.size() != z0.size()) fail(ErrorCode::ShapeMismatch, "noise and code lengths differ");
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<double> out(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) {
    if (!std::isfinite(eps[i])) fail(ErrorCode::InvalidArgument, "noise is not finite");
    out[i] = a * z0[i] + b * eps[i];
  }
  return out;
}

std::vector<double> ddpm_q_step(const DiffusionSchedule& schedule, std::span<const double> previous, int t,
                                std::span<const double> eps) {
  const double beta = schedule.beta(t);
  if (eps.size() != previous.size()) fail(ErrorCode::ShapeMismatch, "noise and code lengths differ");
  std::vector<double> out(previous.size());
  for (std::size_t i = 0; i < previous.size(); ++i)
    out[i] = std::sqrt(1.0 - beta) * previous[i] + std::sqrt(beta) * eps[i];
  return out;
}

// ---- networks ----

MlpImpl::MlpImpl(int in, int hidden, int out, int depth) {
  if (depth < 2) fail(ErrorCode::InvalidArgument, "MLP needs at least two layers");
  body = nn::Sequential();
  int width = in;
  for (int l = 0; l + 1 < depth; ++l) {
    body->push_back(nn::Linear(width, hidden));
    body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)));
    width = hidden;
  }
  body->push_back(nn::Linear(width, out));
  register_module("body", body);
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return body->forward(x); }

UnetBlockImpl::UnetBlockImpl(int in, int out, int embed) {
  conv1 = register_module("conv1", nn::Conv1d(nn::Conv1dOptions(in, out, 3).padding(1)));
  conv2 = register_module("conv2", nn::Conv1d(nn::Conv1dOptions(out, out, 3).padding(1)));
  embed_proj = register_module("embed_proj", nn::Linear(embed, out));
  if (in != out) skip = register_module("skip", nn::Conv1d(nn::Conv1dOptions(in, out, 1)));
}

torch::Tensor UnetBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& embedding) {
  auto h = F::silu(conv1->forward(x));
  h = h + embed_proj->forward(embedding).unsqueeze(-1);
  h = F::silu(conv2->forward(h));
  return h + (skip ? skip->forward(x) : x);
}

DenoiserImpl::DenoiserImpl(int latent_dim, const std::vector<int>& ch) {
  if (ch.size() != 5) fail(ErrorCode::InvalidArgument, "denoiser needs five channel widths");
  if (latent_dim % 16 != 0) fail(ErrorCode::InvalidArgument, "denoiser latent dimension must be a multiple of 16");
  const int hidden = 2 * embed_dim;
  time_mlp = nn::Sequential(nn::Linear(embed_dim, hidden), nn::SiLU(), nn::Linear(hidden, hidden));
  register_module("time_mlp", time_mlp);
  in_conv = register_module("in_conv", nn::Conv1d(nn::Conv1dOptions(2, ch[0], 3).padding(1)));
  for (int i = 0; i < 4; ++i) down.push_back(register_module("down" + std::to_string(i), UnetBlock(ch[i], ch[i + 1], hidden)));
  mid = register_module("mid", UnetBlock(ch[4], ch[4], hidden));
  up.resize(4, UnetBlock(nullptr));
  for (int i = 3; i >= 0; --i) {
    const int below = i == 3 ? ch[4] : ch[i + 1];
    up[i] = register_module("up" + std::to_string(i), UnetBlock(below + ch[i + 1], ch[i], hidden));
  }
  out_conv = register_module("out_conv", nn::Conv1d(nn::Conv1dOptions(ch[0], 1, 3).padding(1)));
  // A zero head predicts no noise at all before training.
  torch::NoGradGuard ng;
  out_conv->weight.zero_();
  out_conv->bias.zero_();
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& t) {
  const auto emb = time_mlp->forward(time_embedding(t, embed_dim));
  auto h = in_conv->forward(torch::stack({x, (y - 0.5) * 2.0}, 1));
  std::vector<torch::Tensor> skips;
  for (int i = 0; i < 4; ++i) {
    h = down[i]->forward(h, emb);
    skips.push_back(h);
    h = F::avg_pool1d(h, F::AvgPool1dFuncOptions(2));
  }
  h = mid->forward(h, emb);
  for (int i = 3; i >= 0; --i) {
    h = torch::repeat_interleave(h, 2, -1);
    h = up[i]->forward(torch::cat({h, skips[i]}, 1), emb);
  }
  return out_conv->forward(h).squeeze(1);
}

PsnNetImpl::PsnNetImpl(PsnKind kind, const PsnConfig& cfg) {
  const int d = cfg.latent_dim;
  if (d < 1 || cfg.hidden < 1 || cfg.noise_dim < 1 || cfg.mixture < 1 || cfg.candidates < 1)
    fail(ErrorCode::InvalidArgument, "invalid suggestion network sizes");
  switch (kind) {
    case PsnKind::Mdn:
      mdn_head = register_module("mdn_head", Mlp(d, cfg.hidden, cfg.mixture * (1 + 2 * d)));
      break;
    case PsnKind::Cgan:
      discriminator = register_module("discriminator", Mlp(2 * d, cfg.hidden, 1));
      [[fallthrough]];
    case PsnKind::Cimle:
      generator = register_module("generator", Mlp(d + cfg.noise_dim, cfg.hidden, d));
      break;
    case PsnKind::Cddpm:
      denoiser = register_module("denoiser", Denoiser(d, cfg.unet_channels));
      break;
  }
}

// ---- model ----

SuggestionModel::SuggestionModel(PsnKind kind, const PsnConfig& cfg, std::uint64_t seed)
    : kind_(kind), cfg_(cfg), lr_(default_learning_rate(kind)), opt_(std::make_shared<Optimizers>()) {
  seed_torch(seed);
  net_ = PsnNet(kind_, cfg_);
  net_->eval();
  if (kind_ == PsnKind::Cddpm) schedule_ = DiffusionSchedule::linear(cfg_.diffusion_steps, cfg_.beta_start, cfg_.beta_end);
}

void SuggestionModel::mark_trained(nlohmann::json meta) {
  trained_ = true;
  train_meta_ = std::move(meta);
}

void SuggestionModel::set_learning_rate(double lr) {
  if (!(lr > 0.0)) fail(ErrorCode::InvalidArgument, "learning rate must be positive");
  lr_ = lr;
  for (auto* opt : {opt_->main.get(), opt_->discriminator.get()})
    if (opt)
      for (auto& g : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
}

SuggestionModel::Optimizers& SuggestionModel::optimizers() {
  if (!opt_->main) {
    // GAN updates use the customary beta1 = 0.5.
    const auto betas = kind_ == PsnKind::Cgan ? std::make_tuple(0.5, 0.999) : std::make_tuple(0.9, 0.999);
    if (kind_ == PsnKind::Cgan) {
      opt_->main = std::make_unique<torch::optim::Adam>(net_->generator->parameters(),
                                                        torch::optim::AdamOptions(lr_).betas(betas));
      opt_->discriminator = std::make_unique<torch::optim::Adam>(net_->discriminator->parameters(),
                                                                 torch::optim::AdamOptions(lr_).betas(betas));
    } else {
      opt_->main = std::make_unique<torch::optim::Adam>(net_->parameters(), torch::optim::AdamOptions(lr_).betas(betas));
    }
  }
  return *opt_;
}

std::vector<LatentCode> SuggestionModel::suggest(const LatentCode& y, int k, std::uint64_t seed) const {
  require_ready(*this);
  require_code(*this, y);
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be at least 1");
  switch (kind_) {
    case PsnKind::Mdn: return mdn_sample(mdn_predict(*this, y), k, seed);
    case PsnKind::Cddpm: return cddpm_sample(*this, y, k, seed);
    case PsnKind::Cgan:
    case PsnKind::Cimle: {
      torch::NoGradGuard ng;
      auto gen = make_generator(seed);
      const auto noise = torch::randn({k, cfg_.noise_dim}, gen, torch::kFloat32);
      return rows_to_codes(generate(*this, row(y).expand({k, -1}), noise));
    }
  }
  return {};
}

nlohmann::json SuggestionModel::info() const {
  nlohmann::json j{{"kind", to_string(kind_)}, {"d", cfg_.latent_dim}, {"trained", trained_}};
  switch (kind_) {
    case PsnKind::Mdn: j["h"] = cfg_.mixture; break;
    case PsnKind::Cgan: j["m"] = cfg_.noise_dim; break;
    case PsnKind::Cimle:
      j["m"] = cfg_.noise_dim;
      j["h"] = cfg_.candidates;
      break;
    case PsnKind::Cddpm:
      j["T"] = cfg_.diffusion_steps;
      j["beta"] = {cfg_.beta_start, cfg_.beta_end};
      break;
  }
  j["train"] = train_meta_;
  return j;
}

void SuggestionModel::save(const std::filesystem::path& path) const {
  nlohmann::json meta{{"d", cfg_.latent_dim},
                      {"stage", trained_ ? 1 : 0},
                      {"config",
                       {{"noise_dim", cfg_.noise_dim},
                        {"mixture", cfg_.mixture},
                        {"candidates", cfg_.candidates},
                        {"hidden", cfg_.hidden},
                        {"diffusion_steps", cfg_.diffusion_steps},
                        {"beta_start", cfg_.beta_start},
                        {"beta_end", cfg_.beta_end},
                        {"unet_channels", cfg_.unet_channels}}},
                      {"lr", lr_},
                      {"train", train_meta_}};
  save_checkpoint(path, to_string(kind_), meta, *net_);
}

SuggestionModel SuggestionModel::load(const std::filesystem::path& path) {
  const auto ck = load_checkpoint(path);
  const auto kind = parse_psn_kind(ck.kind());
  PsnConfig cfg;
  double lr = default_learning_rate(kind);
  try {
    const auto& c = ck.header.at("config");
    cfg.latent_dim = ck.header.at("d").get<int>();
    cfg.noise_dim = c.at("noise_dim").get<int>();
    cfg.mixture = c.at("mixture").get<int>();
    cfg.candidates = c.at("candidates").get<int>();
    cfg.hidden = c.at("hidden").get<int>();
    cfg.diffusion_steps = c.at("diffusion_steps").get<int>();
    cfg.beta_start = c.at("beta_start").get<double>();
    cfg.beta_end = c.at("beta_end").get<double>();
    cfg.unet_channels = c.at("unet_channels").get<std::vector<int>>();
    lr = ck.header.value("lr", lr);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("bad suggestion checkpoint header: ") + e.what());
  }
  SuggestionModel m(kind, cfg);
  restore_module(*m.net_, ck);
  m.lr_ = lr;
  m.trained_ = ck.header.value("stage", 0) > 0;
  m.train_meta_ = ck.header.value("train", nlohmann::json::object());
  m.net_->eval();
  return m;
}

// ---- MDN ----

std::tuple<torch::Tensor, torch::Tensor, torch::Tensor> mdn_forward(const SuggestionModel& model, const torch::Tensor& y) {
  require_kind(model, PsnKind::Mdn);
  const int h = model.config().mixture, d = model.latent_dim();
  const auto out = model.net()->mdn_head->forward((y - 0.5) * 2.0);
  const auto b = out.size(0);
  const auto weights = torch::softmax(out.slice(1, 0, h), 1);
  const auto means = out.slice(1, h, h + h * d).view({b, h, d});
  const auto stds = F::softplus(out.slice(1, h + h * d, h + 2 * h * d).view({b, h, d})) + kMinStd;
  return {weights, means, stds};
}

torch::Tensor mdn_nll(const torch::Tensor& weights, const torch::Tensor& means, const torch::Tensor& stds,
                      const torch::Tensor& z) {
  const auto diff = (z.unsqueeze(1) - means) / stds;
  const auto log_density =
      (-0.5 * diff.pow(2) - torch::log(stds) - 0.5 * std::log(2.0 * std::numbers::pi)).sum(-1);
  return -torch::logsumexp(torch::log(weights.clamp_min(1e-30)) + log_density, 1).mean();
}

MixtureModel mdn_predict(const SuggestionModel& model, const LatentCode& y) {
  require_kind(model, PsnKind::Mdn);
  require_code(model, y);
  torch::NoGradGuard ng;
  const auto [w, mu, sd] = mdn_forward(model, row(y));
  const auto wd = w[0].to(torch::kFloat64).contiguous();
  const auto mud = mu[0].to(torch::kFloat64).contiguous();
  const auto sdd = sd[0].to(torch::kFloat64).contiguous();
  MixtureModel mix;
  const int h = static_cast<int>(wd.size(0)), d = static_cast<int>(mud.size(1));
  const double sum = wd.sum().item<double>();
  for (int j = 0; j < h; ++j) {
    mix.weights.push_back(wd[j].item<double>() / sum);
    mix.means.emplace_back(mud[j].data_ptr<double>(), mud[j].data_ptr<double>() + d);
    mix.stds.emplace_back(sdd[j].data_ptr<double>(), sdd[j].data_ptr<double>() + d);
  }
  return mix;
}

double mdn_loss(const MixtureModel& mix, const LatentCode& z) {
  mix.validate();
  if (static_cast<int>(z.dim()) != mix.dim()) fail(ErrorCode::ShapeMismatch, "latent dimension does not match the mixture");
  std::vector<double> terms;
  for (int j = 0; j < mix.components(); ++j) {
    if (mix.weights[j] <= 0.0) continue;
    double lp = std::log(mix.weights[j]);
    for (int i = 0; i < mix.dim(); ++i) {
      const double u = (z.values[i] - mix.means[j][i]) / mix.stds[j][i];
      lp += -0.5 * u * u - std::log(mix.stds[j][i]) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    terms.push_back(lp);
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double lp : terms) acc += std::exp(lp - top);
  return -(top + std::log(acc));
}

std::vector<LatentCode> mdn_sample(const MixtureModel& mix, int k, std::uint64_t seed) {
  mix.validate();
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be at least 1");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(mix.weights.begin(), mix.weights.end());
  std::normal_distribution<double> normal;
  std::vector<LatentCode> out;
  for (int s = 0; s < k; ++s) {
    const int j = pick(rng);
    LatentCode z{std::vector<float>(static_cast<std::size_t>(mix.dim()))};
    for (int i = 0; i < mix.dim(); ++i)
      z.values[i] = static_cast<float>(std::clamp(mix.means[j][i] + mix.stds[j][i] * normal(rng), 0.0, 1.0));
    out.push_back(std::move(z));
  }
  return out;
}

double mdn_train_step(SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z) {
  require_kind(model, PsnKind::Mdn);
  auto& opt = *model.optimizers().main;
  const auto [w, mu, sd] = mdn_forward(model, y);
  const auto loss = mdn_nll(w, mu, sd, z);
  opt.zero_grad();
  loss.backward();
  opt.step();
  return loss.item<double>();
}

// ---- cGAN ----

torch::Tensor cgan_discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return F::binary_cross_entropy_with_logits(real_logits, torch::ones_like(real_logits)) +
         F::binary_cross_entropy_with_logits(fake_logits, torch::zeros_like(fake_logits));
}

CganLosses cgan_step(SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z, std::uint64_t seed) {
  require_kind(model, PsnKind::Cgan);
  auto& opts = model.optimizers();
  auto net = model.net();
  auto gen = make_generator(seed);
  const auto noise = torch::randn({y.size(0), model.config().noise_dim}, gen, torch::kFloat32);
  const auto yc = (y - 0.5) * 2.0;
  const auto fake = generate(model, y, noise);

  CganLosses out;
  const auto loss_d = cgan_discriminator_loss(net->discriminator->forward(torch::cat({yc, (z - 0.5) * 2.0}, 1)),
                                              net->discriminator->forward(torch::cat({yc, (fake.detach() - 0.5) * 2.0}, 1)));
  out.discriminator = loss_d.item<double>();
  out.objective = -out.discriminator;
  opts.discriminator->zero_grad();
  loss_d.backward();
  opts.discriminator->step();

  const auto fake_logits = net->discriminator->forward(torch::cat({yc, (fake - 0.5) * 2.0}, 1));
  const auto loss_g = F::binary_cross_entropy_with_logits(fake_logits, torch::ones_like(fake_logits));
  out.generator = loss_g.item<double>();
  opts.main->zero_grad();
  loss_g.backward();
  opts.main->step();
  return out;
}

// ---- cIMLE ----

LatentCode cimle_generate(const SuggestionModel& model, const LatentCode& y, std::span<const float> noise) {
  require_kind(model, PsnKind::Cimle);
  require_code(model, y);
  if (static_cast<int>(noise.size()) != model.config().noise_dim)
    fail(ErrorCode::ShapeMismatch, "noise length does not match the generator");
  torch::NoGradGuard ng;
  const auto n = torch::from_blob(const_cast<float*>(noise.data()), {1, static_cast<std::int64_t>(noise.size())},
                                  torch::kFloat32).clone();
  return rows_to_codes(generate(model, row(y), n)).front();
}

std::int64_t imle_select(std::span<const double> candidate_distances) {
  if (candidate_distances.empty()) fail(ErrorCode::InvalidArgument, "no candidates to select from");
  return std::min_element(candidate_distances.begin(), candidate_distances.end()) - candidate_distances.begin();
}

double cimle_train_step(SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z, std::uint64_t seed,
                        ImleBatchLog* log) {
  require_kind(model, PsnKind::Cimle);
  auto& opt = *model.optimizers().main;
  const auto b = y.size(0);
  const int h = model.config().candidates;
  auto gen = make_generator(seed);
  const auto noise = torch::randn({b, h, model.config().noise_dim}, gen, torch::kFloat32);
  const auto candidates = generate(model, y.unsqueeze(1).expand({b, h, -1}), noise);

  // Nearest candidate per condition, in double precision.
  const auto dist = (candidates.detach().to(torch::kFloat64) - z.to(torch::kFloat64).unsqueeze(1)).pow(2).sum(-1).sqrt().contiguous();
  std::vector<std::int64_t> selected(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i)
    selected[i] = imle_select(std::span<const double>(dist[i].data_ptr<double>(), static_cast<std::size_t>(h)));
  const auto idx = torch::tensor(selected, torch::kInt64);
  const auto chosen = candidates.index({torch::arange(b), idx});
  const auto loss = F::mse_loss(chosen, z);
  opt.zero_grad();
  loss.backward();
  opt.step();
  const double value = loss.item<double>();
  if (log) *log = ImleBatchLog{z.detach().clone(), candidates.detach().clone(), selected, value};
  return value;
}

// ---- cDDPM ----

namespace {

torch::Tensor cddpm_batch_loss(const SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z,
                               std::uint64_t seed) {
  auto gen = make_generator(seed);
  const auto b = y.size(0);
  const auto t = torch::randint(1, model.schedule().steps() + 1, {b}, gen, torch::kInt64);
  const auto eps = torch::randn({b, model.latent_dim()}, gen, torch::kFloat32);
  const auto ab = alpha_bar_table(model.schedule()).index_select(0, t - 1).unsqueeze(1);
  // Diffusion runs on codes recentered to [-1, 1].
  const auto x = torch::sqrt(ab) * ((z - 0.5) * 2.0) + torch::sqrt(1.0 - ab) * eps;
  return F::mse_loss(model.net()->denoiser->forward(x, y, t), eps);
}

}  // namespace

double cddpm_loss(const SuggestionModel& model, const LatentCode& y, const LatentCode& z0, std::uint64_t seed) {
  require_kind(model, PsnKind::Cddpm);
  require_code(model, y);
  require_code(model, z0);
  torch::NoGradGuard ng;
  return cddpm_batch_loss(model, row(y), row(z0), seed).item<double>();
}

double cddpm_train_step(SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z, std::uint64_t seed) {
  require_kind(model, PsnKind::Cddpm);
  auto& opt = *model.optimizers().main;
  const auto loss = cddpm_batch_loss(model, y, z, seed);
  opt.zero_grad();
  loss.backward();
  opt.step();
  return loss.item<double>();
}

std::vector<LatentCode> cddpm_sample(const SuggestionModel& model, const LatentCode& y, int k, std::uint64_t seed) {
  require_kind(model, PsnKind::Cddpm);
  require_ready(model);
  require_code(model, y);
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be at least 1");
  torch::NoGradGuard ng;
  const auto& s = model.schedule();
  auto gen = make_generator(seed);
  const auto yk = row(y).expand({k, -1});
  auto x = torch::randn({k, model.latent_dim()}, gen, torch::kFloat32);
  for (int t = s.steps(); t >= 1; --t) {
    const double beta = s.beta(t), ab = s.alpha_bar(t);
    const auto eps = model.net()->denoiser->forward(x, yk, torch::full({k}, t, torch::kInt64));
    x = (x - (beta / std::sqrt(1.0 - ab)) * eps) / std::sqrt(1.0 - beta);
    if (t > 1) x = x + std::sqrt(beta) * torch::randn({k, model.latent_dim()}, gen, torch::kFloat32);
  }
  return rows_to_codes((x + 1.0) * 0.5);
}

// ---- training ----

PsnTrainConfig PsnTrainConfig::paper(PsnKind kind) {
  PsnTrainConfig tc;
  tc.lr = default_learning_rate(kind);
  switch (kind) {
    case PsnKind::Mdn: tc.epochs = 1000; break;
    case PsnKind::Cgan: tc.epochs = 2000; break;
    case PsnKind::Cimle: tc.epochs = 500; break;
    case PsnKind::Cddpm: tc.epochs = 500000; break;
  }
  return tc;
}

PsnTrainConfig PsnTrainConfig::desk(PsnKind kind) {
  PsnTrainConfig tc;
  tc.lr = default_learning_rate(kind);
  switch (kind) {
    case PsnKind::Mdn: tc.epochs = 100; break;
    case PsnKind::Cgan: tc.epochs = 200; break;
    case PsnKind::Cimle: tc.epochs = 100; break;
    case PsnKind::Cddpm: tc.epochs = 100; break;
  }
  return tc;
}

std::string PsnReport::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  if (kind == PsnKind::Cgan) {
    os << "epoch,loss_D,loss_G,objective\n";
    for (const auto& e : epochs) os << e.epoch << ',' << e.loss_d << ',' << e.loss << ',' << e.objective << '\n';
  } else {
    os << (kind == PsnKind::Mdn ? "epoch,nll\n" : "epoch,mse\n");
    for (const auto& e : epochs) os << e.epoch << ',' << e.loss << '\n';
  }
  return os.str();
}

PsnReport train_psn(SuggestionModel& model, std::span<const PsnSample> samples, const PsnTrainConfig& tc) {
  if (samples.empty()) fail(ErrorCode::InvalidArgument, "suggestion training needs at least one sample");
  if (tc.epochs < 0 || tc.batch_size < 1) fail(ErrorCode::InvalidArgument, "invalid suggestion training configuration");
  std::vector<LatentCode> ys, zs;
  for (const auto& s : samples) {
    if (!s.assembly_code || !s.target_latent) fail(ErrorCode::InvalidArgument, "suggestion samples must be sealed");
    ys.push_back(*s.assembly_code);
    zs.push_back(*s.target_latent);
    require_code(model, ys.back());
    require_code(model, zs.back());
  }
  model.set_learning_rate(tc.lr > 0.0 ? tc.lr : default_learning_rate(model.kind()));
  const auto kind = model.kind();
  PsnReport report{kind, {}};
  const auto y_all = latents_to_tensor(ys), z_all = latents_to_tensor(zs);
  const auto n = static_cast<std::int64_t>(samples.size());
  std::mt19937_64 rng(tc.seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t step = 0;
  model.net()->train();
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    PsnEpoch e{epoch, 0.0, 0.0, 0.0};
    for (std::int64_t b = 0; b < n; b += tc.batch_size) {
      const auto len = std::min<std::int64_t>(tc.batch_size, n - b);
      const auto idx = torch::from_blob(order.data() + b, {len}, torch::kInt64).clone();
      const auto y = y_all.index_select(0, idx), z = z_all.index_select(0, idx);
      const auto seed = derive_seed(tc.seed, step++);
      const double w = static_cast<double>(len) / static_cast<double>(n);
      switch (kind) {
        case PsnKind::Mdn: e.loss += w * mdn_train_step(model, y, z); break;
        case PsnKind::Cgan: {
          const auto l = cgan_step(model, y, z, seed);
          e.loss += w * l.generator;
          e.loss_d += w * l.discriminator;
          e.objective += w * l.objective;
          break;
        }
        case PsnKind::Cimle: {
          ImleBatchLog log;
          e.loss += w * cimle_train_step(model, y, z, seed, tc.imle_log ? &log : nullptr);
          if (tc.imle_log) tc.imle_log(log);
          break;
        }
        case PsnKind::Cddpm: e.loss += w * cddpm_train_step(model, y, z, seed); break;
      }
    }
    check_finite(e.loss + e.loss_d, epoch, "suggestion network training");
    report.epochs.push_back(e);
  }
  model.net()->eval();
  model.mark_trained({{"epochs", tc.epochs},
                      {"lr", model.learning_rate()},
                      {"batch_size", tc.batch_size},
                      {"seed", tc.seed},
                      {"samples", samples.size()},
                      {"final_loss", report.epochs.empty() ? 0.0 : report.epochs.back().loss}});
  return report;
}

std::pair<SuggestionModel, PsnReport> train_psn(std::string_view kind, std::span<const PsnSample> samples,
                                                const PsnTrainConfig& tc, const PsnConfig& cfg) {
  SuggestionModel model(parse_psn_kind(kind), cfg, tc.seed);
  auto report = train_psn(model, samples, tc);
  return {std::move(model), std::move(report)};
}

}  // namespace partsynth
