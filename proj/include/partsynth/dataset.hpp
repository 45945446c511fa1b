#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "partsynth/latent.hpp"
#include "partsynth/voxel_geometry.hpp"

namespace partsynth {

enum class Category { Chair, Table };
enum class PartLabel { Seat, Back, Legs, Arms, Top };
enum class LegStyle { Posts, Panel };
enum class BackStyle { Solid, Slatted, None };

std::string_view to_string(Category c);
std::string_view to_string(PartLabel l);
Category parse_category(std::string_view s);
PartLabel parse_part_label(std::string_view s);

struct ParamRange {
  double lo;
  double hi;
  bool contains(double v) const { return v >= lo - 1e-12 && v <= hi + 1e-12; }
};

/// Documented sampling ranges for the procedural furniture generator, in frame
/// units. Chairs stand on y = kFloor with the back toward +z.
namespace ranges {
inline constexpr double kFloor = -0.45;
inline constexpr ParamRange kSeatWidth{0.45, 0.65};
inline constexpr ParamRange kSeatDepth{0.40, 0.60};
inline constexpr ParamRange kSeatThickness{0.06, 0.10};
inline constexpr ParamRange kLegHeight{0.30, 0.40};
inline constexpr ParamRange kLegThickness{0.0625, 0.09};
inline constexpr ParamRange kBackHeight{0.28, 0.40};
inline constexpr ParamRange kBackThickness{0.0625, 0.09};
inline constexpr ParamRange kArmHeight{0.12, 0.20};
inline constexpr ParamRange kTopWidth{0.60, 0.85};
inline constexpr ParamRange kTopDepth{0.45, 0.70};
inline constexpr ParamRange kTopThickness{0.0625, 0.09};
inline constexpr ParamRange kTableLegHeight{0.45, 0.65};
inline constexpr double kPanelLegProbability = 0.3;
inline constexpr double kSlattedBackProbability = 0.4;
inline constexpr double kArmProbability = 0.5;
}  // namespace ranges

/// Parameters of one procedural shape. For tables, `seat_*` describe the top
/// and the back/arm fields are unused.
struct ShapeSpec {
  Category category = Category::Chair;
  std::uint64_t seed = 0;
  int resolution = 32;
  double seat_width = 0.55;
  double seat_depth = 0.5;
  double seat_thickness = 0.08;
  LegStyle leg_style = LegStyle::Posts;
  double leg_height = 0.35;
  double leg_thickness = 0.075;
  BackStyle back_style = BackStyle::Solid;
  double back_height = 0.34;
  double back_thickness = 0.075;
  bool arms = false;
  double arm_height = 0.16;

  /// Draws every parameter uniformly from its documented range.
  static ShapeSpec sample(Category category, std::uint64_t seed, int resolution = 32);
  /// Throws ErrorCode::InvalidSpec when a parameter is outside its range.
  void validate() const;
};

struct PartRecord {
  PartLabel label = PartLabel::Seat;
  VoxelGrid normalized;
  VoxelGrid transformed;
  AffineTransform xf;
  int shape_id = 0;
};

struct Shape {
  int shape_id = 0;
  ShapeSpec spec;
  std::vector<PartRecord> parts;

  VoxelGrid assembled() const;
};

/// Rasterizes the spec's parts. Chairs yield {seat, legs, back[, arms]},
/// tables {top, legs}.
std::vector<PartRecord> generate_shape(const ShapeSpec& spec, int shape_id = 0);

struct DatasetSplit {
  std::vector<Shape> train;
  std::vector<Shape> test;
};

/// n shapes split 4:1 by a seeded permutation; shape ids are 0..n-1.
DatasetSplit make_dataset(Category category, int n, std::uint64_t seed, int resolution = 32);

struct PsnSample {
  VoxelGrid assembly;
  VoxelGrid target_part;
  PartLabel target_label = PartLabel::Seat;
  std::vector<PartLabel> assembly_labels;
  std::optional<LatentCode> target_latent;
  std::optional<LatentCode> assembly_code;
  int shape_id = 0;
};

struct PsnSampleSet {
  std::vector<PsnSample> samples;
  int skipped_shapes = 0;
};

/// Per shape: `per_shape` draws of a uniformly chosen non-empty proper subset
/// of transformed parts as the assembly, plus one uniformly chosen part
/// outside it as the target.
PsnSampleSet make_psn_samples(std::span<const Shape> shapes, int per_shape, std::uint64_t seed);

/// Fills target_latent from the normalized target part and assembly_code from
/// the assembly.
std::vector<PsnSample> seal_latents(std::vector<PsnSample> samples, const PartEncoder& encoder);

/// 26-connectivity of the thresholded occupancy (false when empty).
bool is_connected(const VoxelGrid& grid, float threshold = 0.5f);

/// Directory of VGRID files plus manifest.json.
void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split);
/// Also accepts externally produced part sets that follow the same manifest
/// layout (normalized grids are recomputed when only transformed ones exist).
DatasetSplit load_dataset(const std::filesystem::path& dir);

}  // namespace partsynth
