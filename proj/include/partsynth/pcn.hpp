#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "partsynth/dataset.hpp"
#include "partsynth/latent.hpp"
#include "partsynth/voxel_geometry.hpp"

namespace partsynth {

struct PcnConfig {
  int resolution = 32;
  int latent_dim = 128;
  /// Output channels of the five encoder stages (mirrored by the decoder).
  std::vector<int> channels{8, 16, 32, 64, 64};
};

struct PcnTrainConfig {
  double lr_ae = 1e-4;
  double lr_stn = 1e-6;
  int epochs_joint = 100;
  int epochs_stn = 50;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

/// Volumetric autoencoder plus localization network.
struct PcnNetImpl : torch::nn::Module {
  explicit PcnNetImpl(const PcnConfig& cfg);

  torch::Tensor encode(const torch::Tensor& parts);
  torch::Tensor decode(const torch::Tensor& codes);
  /// Returns [N, 4]: log-scale followed by the translation.
  torch::Tensor localize_raw(const torch::Tensor& parts);

  std::vector<torch::Tensor> autoencoder_parameters();
  std::vector<torch::Tensor> localizer_parameters();

  PcnConfig cfg;
  int bottleneck = 4;
  torch::nn::Sequential encoder{nullptr}, decoder{nullptr}, localizer{nullptr}, localizer_head{nullptr};
  torch::nn::Linear encoder_fc{nullptr}, decoder_fc{nullptr};
};
TORCH_MODULE(PcnNet);

struct PcnEpoch {
  int epoch = 0;
  int stage = 1;
  double loss_ae = 0.0;
  double loss_stn = 0.0;
};

struct PcnReport {
  std::vector<PcnEpoch> epochs;

  std::string to_csv() const;
};

/// The four loss terms of one batch; reconstruction, warped reconstruction,
/// |s_hat - s| and ||t_hat - t||, each averaged over the batch.
struct PcnLossTerms {
  torch::Tensor recon, warp, scale, translation;

  torch::Tensor total() const { return recon + warp + scale + translation; }
};

PcnLossTerms pcn_loss_terms(const torch::Tensor& part, const torch::Tensor& placed, const torch::Tensor& part_hat,
                            const torch::Tensor& placed_hat, const torch::Tensor& scale, const torch::Tensor& scale_hat,
                            const torch::Tensor& translation, const torch::Tensor& translation_hat);

/// Single-record loss on plain grids: MSE(P, P_hat) + MSE(P', P'_hat) + |s - s_hat| + ||t - t_hat||.
double pcn_loss(const PartRecord& sample, const VoxelGrid& part_hat, const VoxelGrid& placed_hat, double scale_hat,
                const Vec3& translation_hat);

class PcnModel : public PartEncoder {
 public:
  explicit PcnModel(const PcnConfig& cfg = {}, std::uint64_t seed = 0);

  bool ready() const override { return stage_ > 0; }
  int stage() const noexcept { return stage_; }
  int resolution() const noexcept { return cfg_.resolution; }
  int latent_dim() const noexcept { return cfg_.latent_dim; }
  const PcnConfig& config() const noexcept { return cfg_; }

  LatentCode encode(const VoxelGrid& part) const override;
  VoxelGrid decode(const LatentCode& z) const;
  AffineTransform localize(const VoxelGrid& part_hat) const;

  std::vector<LatentCode> encode_batch(std::span<const VoxelGrid> parts) const;

  /// Runs both stages; stage() becomes 2 afterwards (1 if no STN epochs).
  PcnReport train(std::span<const PartRecord> data, const PcnTrainConfig& tc);

  void save(const std::filesystem::path& path) const;
  static PcnModel load(const std::filesystem::path& path);

  PcnNet net() const { return net_; }
  const nlohmann::json& train_config() const noexcept { return train_meta_; }

 private:
  void check_grid(const VoxelGrid& g) const;

  PcnConfig cfg_;
  PcnNet net_{nullptr};
  int stage_ = 0;
  nlohmann::json train_meta_ = nlohmann::json::object();
};

/// Convenience wrapper matching the module-level operation.
PcnReport train_pcn(PcnModel& model, std::span<const PartRecord> data, const PcnTrainConfig& tc);

}  // namespace partsynth
