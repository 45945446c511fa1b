#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "partsynth/latent.hpp"
#include "partsynth/voxel_geometry.hpp"

namespace partsynth {

struct ImplicitConfig {
  int latent_dim = 128;
  /// Feature channels of the latent-conditioned 16^3 feature lattice.
  int channels = 16;
  /// Hidden width of the per-point occupancy head.
  int width = 64;
};

struct ImplicitTrainConfig {
  double lr = 1e-3;
  int epochs = 10;
  /// Parts per optimizer step.
  int batch_size = 16;
  /// Voxel centers drawn per part and step.
  int points_per_part = 512;
  /// Share of those draws taken proportionally to occupancy; the rest are uniform.
  double occupied_fraction = 0.5;
  std::uint64_t seed = 0;
};

/// (z, p) -> occupancy logit. The code is expanded into a coarse feature
/// lattice which is sampled trilinearly at p and fed with p to a small MLP,
/// so the field is continuous in p at any query resolution.
struct ImplicitNetImpl : torch::nn::Module {
  explicit ImplicitNetImpl(const ImplicitConfig& cfg);
  /// z: [B, d] in [0, 1], p: [B, M, 3] frame coordinates. Returns logits [B, M].
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& p);

  int channels;
  torch::nn::Linear seed_fc{nullptr};
  torch::nn::Sequential lattice{nullptr};
  torch::nn::Sequential head{nullptr};
};
TORCH_MODULE(ImplicitNet);

struct ImplicitReport {
  /// Mean binary cross-entropy per epoch.
  std::vector<double> losses;
};

struct ImplicitSample {
  VoxelGrid part;
  LatentCode code;
};

class ImplicitModel {
 public:
  explicit ImplicitModel(const ImplicitConfig& cfg = {}, std::uint64_t seed = 0);

  bool ready() const noexcept { return trained_; }
  int latent_dim() const noexcept { return cfg_.latent_dim; }
  const ImplicitConfig& config() const noexcept { return cfg_; }

  /// One value in [0, 1] per point.
  std::vector<float> occupancy(const LatentCode& z, const PointCloud& points) const;
  /// Occupancy at the voxel centers of an R^3 grid, R >= 8.
  VoxelGrid decode_field(const LatentCode& z, int resolution) const;

  ImplicitReport train(std::span<const ImplicitSample> data, const ImplicitTrainConfig& tc);

  void save(const std::filesystem::path& path) const;
  static ImplicitModel load(const std::filesystem::path& path);

  ImplicitNet net() const { return net_; }
  const nlohmann::json& train_config() const noexcept { return train_meta_; }

 private:
  torch::Tensor evaluate(const LatentCode& z, const torch::Tensor& points) const;

  ImplicitConfig cfg_;
  ImplicitNet net_{nullptr};
  bool trained_ = false;
  nlohmann::json train_meta_ = nlohmann::json::object();
};

ImplicitReport train_implicit(ImplicitModel& model, std::span<const ImplicitSample> data, const ImplicitTrainConfig& tc);

}  // namespace partsynth
