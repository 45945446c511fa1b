#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace partsynth {

using Vec3 = std::array<double, 3>;

/// Dense occupancy volume over the axis-aligned frame [-0.5, 0.5]^3.
///
/// Voxel (i, j, k) has its center at ((i + 0.5) / R - 0.5, ...). Storage is
/// x-major: the flat index is (i * R + j) * R + k. Values live in [0, 1].
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(int resolution, float fill = 0.0f);
  /// Adopts `values`; throws if the size is not R^3 or a value leaves [0, 1].
  VoxelGrid(int resolution, std::vector<float> values);

  int resolution() const noexcept { return resolution_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::size_t index(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(i) * resolution_ + j) * resolution_ + k;
  }
  float operator()(int i, int j, int k) const noexcept {
    return values_[index(i, j, k)];
  }
  float& operator()(int i, int j, int k) noexcept {
    return values_[index(i, j, k)];
  }

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }

  /// Frame coordinate of the center of voxel `i` along one axis.
  static double center(int i, int resolution) noexcept {
    return (i + 0.5) / resolution - 0.5;
  }

  std::size_t count_occupied(float threshold = 0.5f) const noexcept;
  VoxelGrid thresholded(float threshold = 0.5f) const;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  int resolution_ = 0;
  std::vector<float> values_;
};

/// Uniform scale plus translation. Maps a point p to scale * p + translation.
struct AffineTransform {
  double scale = 1.0;
  Vec3 translation{0.0, 0.0, 0.0};

  static AffineTransform identity() { return {}; }
  /// Throws ErrorCode::InvalidTransform when scale is not strictly positive.
  void validate() const;
  /// Applying `*this` after `first` is the same as applying the result once.
  AffineTransform after(const AffineTransform& first) const;
  AffineTransform inverse() const;

  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::int32_t, 3>> faces;

  /// Face indices in range and no face with three identical indices.
  bool valid() const noexcept;
  double surface_area() const noexcept;
  /// Every undirected edge is shared by exactly two faces.
  bool watertight() const;
  /// Ray-parity containment test; meaningful for closed meshes only.
  bool contains(const Vec3& p) const;
};

/// Trilinear sample of the field at frame point p. Lattice taps that fall
/// outside the grid read as 0.
double sample_trilinear(const VoxelGrid& grid, const Vec3& p) noexcept;

/// Output voxel at center c takes the input sampled at (c - t) / s.
VoxelGrid apply_affine(const VoxelGrid& grid, const AffineTransform& xf);

/// Per-axis rescaling about the frame center; output at c samples c / scales.
VoxelGrid scale_axes(const VoxelGrid& grid, const Vec3& scales);

/// Resamples the field at the voxel centers of another resolution.
VoxelGrid resample(const VoxelGrid& grid, int resolution);

/// Voxelwise maximum. Throws on an empty list or mixed resolutions.
VoxelGrid compose_assembly(std::span<const VoxelGrid> parts);
VoxelGrid compose_assembly(const VoxelGrid& a, const VoxelGrid& b);

/// One point per voxel at or above threshold, centered on the centroid and
/// scaled so the farthest point has norm 1.
PointCloud voxel_to_pointcloud(const VoxelGrid& grid, float threshold = 0.5f);

/// Area-weighted uniform surface samples, deterministic in `seed`.
PointCloud sample_mesh_points(const TriangleMesh& mesh, int n, std::uint64_t seed);

/// Iso-surface extraction. The volume is treated as surrounded by empty
/// space, so the result is closed whenever the grid has a crossing at all.
TriangleMesh marching_cubes(const VoxelGrid& grid, double iso = 0.5);

struct NormalizedPart {
  VoxelGrid grid;
  /// Maps the normalized part back onto the input placement.
  AffineTransform xf;
};

/// Fraction of the frame spanned by a normalized part's longest side.
inline constexpr double kNormalizedExtent = 0.8;

NormalizedPart normalize_part(const VoxelGrid& grid, float threshold = 0.5f);

/// Intersection over union of the thresholded occupancies (1 when both empty).
double voxel_iou(const VoxelGrid& a, const VoxelGrid& b, float threshold = 0.5f);

/// Axis-aligned bounds of occupied voxels, as frame coordinates of the outer
/// voxel faces. Throws ErrorCode::EmptyShape when nothing is occupied.
struct Bounds {
  Vec3 lo;
  Vec3 hi;
};
Bounds occupied_bounds(const VoxelGrid& grid, float threshold = 0.5f);

void require_same_resolution(const VoxelGrid& a, const VoxelGrid& b);

}  // namespace partsynth
