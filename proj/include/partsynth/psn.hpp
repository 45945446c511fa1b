#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "partsynth/dataset.hpp"
#include "partsynth/latent.hpp"

namespace partsynth {

enum class PsnKind { Mdn, Cgan, Cimle, Cddpm };

/// "mdn", "cgan", "cimle" or "cddpm"; anything else throws InvalidKind.
PsnKind parse_psn_kind(std::string_view name);
std::string_view to_string(PsnKind kind) noexcept;

struct PsnConfig {
  int latent_dim = 128;
  /// Noise length fed to the cGAN / cIMLE generators.
  int noise_dim = 64;
  /// Mixture components of the MDN.
  int mixture = 4;
  /// Candidates drawn per condition in cIMLE training.
  int candidates = 4;
  /// Hidden width of the MLP kinds.
  int hidden = 256;
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  /// Channel widths of the denoiser's five U-Net levels.
  std::vector<int> unet_channels{32, 32, 64, 64, 128};
};

struct MixtureModel {
  std::vector<double> weights;
  /// h rows of d values each.
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> stds;

  int components() const noexcept { return static_cast<int>(weights.size()); }
  int dim() const noexcept { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  /// Throws InvalidArgument unless the weights lie on the simplex (1e-6) and
  /// every std is positive.
  void validate() const;
};

struct DiffusionSchedule {
  /// betas[t - 1] and alpha_bars[t - 1] belong to step t = 1..T.
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  static DiffusionSchedule linear(int steps, double beta_start, double beta_end);
  int steps() const noexcept { return static_cast<int>(betas.size()); }
  double beta(int t) const;
  double alpha_bar(int t) const;
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. Throws StepRange unless 1 <= t <= T.
std::vector<double> ddpm_q_sample(const DiffusionSchedule& schedule, std::span<const double> z0, int t,
                                  std::span<const double> eps);
/// One forward step z_t = sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) eps.
std::vector<double> ddpm_q_step(const DiffusionSchedule& schedule, std::span<const double> previous, int t,
                                std::span<const double> eps);

/// Fully connected stack with LeakyReLU between layers.
struct MlpImpl : torch::nn::Module {
  MlpImpl(int in, int hidden, int out, int depth = 3);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Mlp);

/// Two convolutions with the step embedding added in between and a residual path.
struct UnetBlockImpl : torch::nn::Module {
  UnetBlockImpl(int in, int out, int embed);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embedding);
  torch::nn::Conv1d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear embed_proj{nullptr};
};
TORCH_MODULE(UnetBlock);

/// 1-D U-Net over the latent signal: 4 downsampling and 4 upsampling blocks
/// with a sinusoidal step embedding added in every block. The condition
/// enters as a second input channel next to the noisy code.
struct DenoiserImpl : torch::nn::Module {
  DenoiserImpl(int latent_dim, const std::vector<int>& channels);
  /// x, y: [B, d]; t: [B] steps in 1..T. Returns the predicted noise [B, d].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& t);

  int embed_dim = 64;
  torch::nn::Sequential time_mlp{nullptr};
  torch::nn::Conv1d in_conv{nullptr}, out_conv{nullptr};
  std::vector<UnetBlock> down, up;
  UnetBlock mid{nullptr};
};
TORCH_MODULE(Denoiser);

/// Holds only the sub-networks of its kind.
struct PsnNetImpl : torch::nn::Module {
  PsnNetImpl(PsnKind kind, const PsnConfig& cfg);

  Mlp mdn_head{nullptr};
  Mlp generator{nullptr};
  Mlp discriminator{nullptr};
  Denoiser denoiser{nullptr};
};
TORCH_MODULE(PsnNet);

/// Everything needed to re-check one cIMLE batch: targets [B, d],
/// candidates [B, h, d] and the chosen candidate per condition.
struct ImleBatchLog {
  torch::Tensor targets;
  torch::Tensor candidates;
  std::vector<std::int64_t> selected;
  double loss = 0.0;
};

class SuggestionModel {
 public:
  SuggestionModel(PsnKind kind, const PsnConfig& cfg = {}, std::uint64_t seed = 0);

  PsnKind kind() const noexcept { return kind_; }
  const PsnConfig& config() const noexcept { return cfg_; }
  int latent_dim() const noexcept { return cfg_.latent_dim; }
  bool ready() const noexcept { return trained_; }
  void mark_trained(nlohmann::json meta);
  const nlohmann::json& train_config() const noexcept { return train_meta_; }
  /// Only meaningful for cddpm.
  const DiffusionSchedule& schedule() const noexcept { return schedule_; }

  /// Learning rate used by the *_step functions; defaults to the kind's preset.
  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr);

  /// k codes in [0, 1]^d, deterministic in (y, seed). Throws ModelNotReady
  /// when untrained.
  std::vector<LatentCode> suggest(const LatentCode& y, int k, std::uint64_t seed) const;

  void save(const std::filesystem::path& path) const;
  static SuggestionModel load(const std::filesystem::path& path);
  /// kind, d, the kind's sizes and the training metadata.
  nlohmann::json info() const;

  PsnNet net() const { return net_; }

  /// Optimizers live with the model so consecutive steps share their state.
  struct Optimizers {
    std::unique_ptr<torch::optim::Adam> main;
    std::unique_ptr<torch::optim::Adam> discriminator;
  };
  Optimizers& optimizers();

 private:
  PsnKind kind_;
  PsnConfig cfg_;
  PsnNet net_{nullptr};
  DiffusionSchedule schedule_;
  double lr_ = 0.0;
  bool trained_ = false;
  nlohmann::json train_meta_ = nlohmann::json::object();
  std::shared_ptr<Optimizers> opt_;
};

/// Paper learning rate of each kind.
double default_learning_rate(PsnKind kind) noexcept;

MixtureModel mdn_predict(const SuggestionModel& model, const LatentCode& y);
/// Differentiable mixture parameters for a batch: weights [B, h], means and
/// stds [B, h, d].
std::tuple<torch::Tensor, torch::Tensor, torch::Tensor> mdn_forward(const SuggestionModel& model, const torch::Tensor& y);
/// Mean negative log-likelihood of z [B, d] under the batch of mixtures.
torch::Tensor mdn_nll(const torch::Tensor& weights, const torch::Tensor& means, const torch::Tensor& stds,
                      const torch::Tensor& z);
double mdn_loss(const MixtureModel& mix, const LatentCode& z);
std::vector<LatentCode> mdn_sample(const MixtureModel& mix, int k, std::uint64_t seed);
double mdn_train_step(SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z);

/// -(log D(real) + log(1 - D(fake))) averaged over the batch, from logits.
torch::Tensor cgan_discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

struct CganLosses {
  double discriminator = 0.0;
  /// Non-saturating generator loss that is actually minimized.
  double generator = 0.0;
  /// mean of log D(y, z) + log(1 - D(y, G(y, n))) before the updates.
  double objective = 0.0;
};
CganLosses cgan_step(SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z, std::uint64_t seed);

/// Generator output for explicit noise; also serves the cGAN.
LatentCode cimle_generate(const SuggestionModel& model, const LatentCode& y, std::span<const float> noise);
/// Index of the candidate row closest to `target` in Euclidean distance
/// (first one on ties).
std::int64_t imle_select(std::span<const double> candidate_distances);
double cimle_train_step(SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z, std::uint64_t seed,
                        ImleBatchLog* log = nullptr);

/// Per-dimension MSE between the drawn noise and its prediction, with t and
/// eps drawn from `seed`. No parameter update.
double cddpm_loss(const SuggestionModel& model, const LatentCode& y, const LatentCode& z0, std::uint64_t seed);
double cddpm_train_step(SuggestionModel& model, const torch::Tensor& y, const torch::Tensor& z, std::uint64_t seed);
std::vector<LatentCode> cddpm_sample(const SuggestionModel& model, const LatentCode& y, int k, std::uint64_t seed);

struct PsnTrainConfig {
  int epochs = 50;
  /// <= 0 selects the kind's default learning rate.
  double lr = 0.0;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Called after every cIMLE batch with the full selection record.
  std::function<void(const ImleBatchLog&)> imle_log;

  /// Epoch counts used in the original training runs (1000 / 2000 / 500 / 5e5).
  static PsnTrainConfig paper(PsnKind kind);
  /// Small counts for single-machine runs.
  static PsnTrainConfig desk(PsnKind kind);
};

struct PsnEpoch {
  int epoch = 0;
  /// NLL, generator loss, selected MSE or noise MSE depending on the kind.
  double loss = 0.0;
  /// cGAN only.
  double loss_d = 0.0;
  double objective = 0.0;
};

struct PsnReport {
  PsnKind kind = PsnKind::Mdn;
  std::vector<PsnEpoch> epochs;

  std::string to_csv() const;
};

/// Needs samples with both codes sealed; throws InvalidArgument otherwise.
PsnReport train_psn(SuggestionModel& model, std::span<const PsnSample> samples, const PsnTrainConfig& tc);
std::pair<SuggestionModel, PsnReport> train_psn(std::string_view kind, std::span<const PsnSample> samples,
                                                const PsnTrainConfig& tc, const PsnConfig& cfg = {});

}  // namespace partsynth
