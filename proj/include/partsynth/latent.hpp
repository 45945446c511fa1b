#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace partsynth {

/// Part embedding (or assembly code) in the encoder's latent space.
struct LatentCode {
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const LatentCode&, const LatentCode&) = default;
};

inline double latent_distance(const LatentCode& a, const LatentCode& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = static_cast<double>(a.values[i]) - b.values[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

class VoxelGrid;

/// Anything that can embed a voxel grid. The PCN encoder is the production
/// implementation; tests substitute simple fakes.
class PartEncoder {
 public:
  virtual ~PartEncoder() = default;
  virtual bool ready() const = 0;
  virtual LatentCode encode(const VoxelGrid& grid) const = 0;
};

}  // namespace partsynth
