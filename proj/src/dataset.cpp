#include "partsynth/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <string>

#include <json.hpp>

#include "partsynth/error.hpp"
#include "partsynth/io.hpp"
#include "partsynth/random.hpp"

namespace partsynth {

namespace {

struct Box {
  Vec3 lo;
  Vec3 hi;
};

double snap(double v, int r) { return std::round((v + 0.5) * r) / r - 0.5; }

// Boxes are snapped to voxel faces so the transformed rasterization is exact,
// with at least two voxels of thickness per axis.
Box make_box(Vec3 lo, Vec3 hi, int r) {
  Box b;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = snap(lo[a], r);
    b.hi[a] = std::max(snap(hi[a], r), b.lo[a] + 2.0 / r);
  }
  return b;
}

// Each voxel takes the smallest per-axis fraction of its cell covered by the
// box (max over boxes). Voxel-aligned boxes rasterize to exact 0/1 values,
// while normalized parts get ramped edges whose 0.5 level set is the box
// itself, so corners survive the trilinear warp back.
VoxelGrid rasterize(const std::vector<Box>& boxes, int r) {
  VoxelGrid grid(r);
  const double h = 0.5 / r;
  for (const auto& b : boxes) {
    std::array<std::vector<double>, 3> cover;
    for (int a = 0; a < 3; ++a) {
      cover[a].resize(static_cast<std::size_t>(r));
      for (int i = 0; i < r; ++i) {
        const double c = VoxelGrid::center(i, r);
        const double overlap = std::min(b.hi[a], c + h) - std::max(b.lo[a], c - h);
        cover[a][static_cast<std::size_t>(i)] = std::clamp(overlap * r, 0.0, 1.0);
      }
    }
    for (int i = 0; i < r; ++i) {
      const double ci = cover[0][static_cast<std::size_t>(i)];
      if (ci <= 0.0) continue;
      for (int j = 0; j < r; ++j) {
        const double cij = std::min(ci, cover[1][static_cast<std::size_t>(j)]);
        if (cij <= 0.0) continue;
        for (int k = 0; k < r; ++k) {
          const auto v = static_cast<float>(std::min(cij, cover[2][static_cast<std::size_t>(k)]));
          grid(i, j, k) = std::max(grid(i, j, k), v);
        }
      }
    }
  }
  return grid;
}

PartRecord make_record(PartLabel label, const std::vector<Box>& boxes, int r, int shape_id) {
  Vec3 lo{1e9, 1e9, 1e9};
  Vec3 hi{-1e9, -1e9, -1e9};
  for (const auto& b : boxes) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], b.lo[a]);
      hi[a] = std::max(hi[a], b.hi[a]);
    }
  }
  PartRecord rec;
  rec.label = label;
  rec.shape_id = shape_id;
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) {
    rec.xf.translation[a] = 0.5 * (lo[a] + hi[a]);
    extent = std::max(extent, hi[a] - lo[a]);
  }
  rec.xf.scale = extent / kNormalizedExtent;
  rec.transformed = rasterize(boxes, r);

  std::vector<Box> canonical;
  canonical.reserve(boxes.size());
  for (const auto& b : boxes) {
    Box c;
    for (int a = 0; a < 3; ++a) {
      c.lo[a] = (b.lo[a] - rec.xf.translation[a]) / rec.xf.scale;
      c.hi[a] = (b.hi[a] - rec.xf.translation[a]) / rec.xf.scale;
    }
    canonical.push_back(c);
  }
  rec.normalized = rasterize(canonical, r);
  return rec;
}

std::vector<PartRecord> chair_parts(const ShapeSpec& s, int id) {
  const int r = s.resolution;
  const double w = s.seat_width;
  const double d = s.seat_depth;
  const double floor = ranges::kFloor;
  const double leg_top = snap(floor + s.leg_height, r);
  const double seat_top = snap(leg_top + s.seat_thickness, r);
  const double pt = s.leg_thickness;
  const double bt = s.back_thickness;

  std::vector<PartRecord> parts;
  parts.push_back(make_record(PartLabel::Seat, {make_box({-w / 2, leg_top, -d / 2}, {w / 2, seat_top, d / 2}, r)}, r, id));

  std::vector<Box> legs;
  if (s.leg_style == LegStyle::Panel) {
    for (double sx : {-1.0, 1.0}) {
      const double x0 = sx < 0 ? -w / 2 : w / 2 - pt;
      legs.push_back(make_box({x0, floor, -d / 2}, {x0 + pt, leg_top, d / 2}, r));
    }
  } else {
    for (double sx : {-1.0, 1.0}) {
      for (double sz : {-1.0, 1.0}) {
        const double x0 = sx < 0 ? -w / 2 : w / 2 - pt;
        const double z0 = sz < 0 ? -d / 2 : d / 2 - pt;
        legs.push_back(make_box({x0, floor, z0}, {x0 + pt, leg_top, z0 + pt}, r));
      }
    }
  }
  parts.push_back(make_record(PartLabel::Legs, legs, r, id));

  std::vector<Box> back;
  const double back_top = seat_top + s.back_height;
  if (s.back_style == BackStyle::Slatted) {
    const double rail = 0.0625;
    back.push_back(make_box({-w / 2, back_top - rail, d / 2 - bt}, {w / 2, back_top, d / 2}, r));
    constexpr int kSlats = 3;
    for (int n = 0; n < kSlats; ++n) {
      const double x0 = -w / 2 + n * (w - pt) / (kSlats - 1);
      back.push_back(make_box({x0, seat_top, d / 2 - bt}, {x0 + pt, back_top - rail, d / 2}, r));
    }
  } else {
    back.push_back(make_box({-w / 2, seat_top, d / 2 - bt}, {w / 2, back_top, d / 2}, r));
  }
  parts.push_back(make_record(PartLabel::Back, back, r, id));

  if (s.arms) {
    const double bar = 0.0625;
    const double arm_top = seat_top + s.arm_height;
    const double front = -d / 2 + 0.1 * d;
    std::vector<Box> arms;
    for (double sx : {-1.0, 1.0}) {
      const double x0 = sx < 0 ? -w / 2 : w / 2 - pt;
      arms.push_back(make_box({x0, arm_top - bar, front}, {x0 + pt, arm_top, d / 2 - bt}, r));
      arms.push_back(make_box({x0, seat_top, front}, {x0 + pt, arm_top - bar, front + pt}, r));
    }
    parts.push_back(make_record(PartLabel::Arms, arms, r, id));
  }
  return parts;
}

std::vector<PartRecord> table_parts(const ShapeSpec& s, int id) {
  const int r = s.resolution;
  const double w = s.seat_width;
  const double d = s.seat_depth;
  const double floor = ranges::kFloor;
  const double leg_top = snap(floor + s.leg_height, r);
  const double top = snap(leg_top + s.seat_thickness, r);
  const double pt = s.leg_thickness;

  std::vector<PartRecord> parts;
  parts.push_back(make_record(PartLabel::Top, {make_box({-w / 2, leg_top, -d / 2}, {w / 2, top, d / 2}, r)}, r, id));
  std::vector<Box> legs;
  const double inset = 0.04;
  if (s.leg_style == LegStyle::Panel) {
    for (double sx : {-1.0, 1.0}) {
      const double x0 = sx < 0 ? -w / 2 + inset : w / 2 - inset - pt;
      legs.push_back(make_box({x0, floor, -d / 2 + inset}, {x0 + pt, leg_top, d / 2 - inset}, r));
    }
  } else {
    for (double sx : {-1.0, 1.0}) {
      for (double sz : {-1.0, 1.0}) {
        const double x0 = sx < 0 ? -w / 2 + inset : w / 2 - inset - pt;
        const double z0 = sz < 0 ? -d / 2 + inset : d / 2 - inset - pt;
        legs.push_back(make_box({x0, floor, z0}, {x0 + pt, leg_top, z0 + pt}, r));
      }
    }
  }
  parts.push_back(make_record(PartLabel::Legs, legs, r, id));
  return parts;
}

void check(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::InvalidSpec, std::string("shape parameter out of range: ") + what);
}

}  // namespace

std::string_view to_string(Category c) { return c == Category::Chair ? "chair" : "table"; }

std::string_view to_string(PartLabel l) {
  switch (l) {
    case PartLabel::Seat: return "seat";
    case PartLabel::Back: return "back";
    case PartLabel::Legs: return "legs";
    case PartLabel::Arms: return "arms";
    case PartLabel::Top: return "top";
  }
  return "?";
}

Category parse_category(std::string_view s) {
  if (s == "chair") return Category::Chair;
  if (s == "table") return Category::Table;
  fail(ErrorCode::InvalidSpec, "unknown category '" + std::string(s) + "'");
}

PartLabel parse_part_label(std::string_view s) {
  for (auto l : {PartLabel::Seat, PartLabel::Back, PartLabel::Legs, PartLabel::Arms, PartLabel::Top}) {
    if (to_string(l) == s) return l;
  }
  fail(ErrorCode::Format, "unknown part label '" + std::string(s) + "'");
}

ShapeSpec ShapeSpec::sample(Category category, std::uint64_t seed, int resolution) {
  std::mt19937_64 rng(seed);
  auto draw = [&](ParamRange range) { return std::uniform_real_distribution<double>(range.lo, range.hi)(rng); };
  auto coin = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };

  ShapeSpec s;
  s.category = category;
  s.seed = seed;
  s.resolution = resolution;
  if (category == Category::Chair) {
    s.seat_width = draw(ranges::kSeatWidth);
    s.seat_depth = draw(ranges::kSeatDepth);
    s.seat_thickness = draw(ranges::kSeatThickness);
    s.leg_height = draw(ranges::kLegHeight);
    s.leg_thickness = draw(ranges::kLegThickness);
    s.back_height = draw(ranges::kBackHeight);
    s.back_thickness = draw(ranges::kBackThickness);
    s.arm_height = draw(ranges::kArmHeight);
    s.leg_style = coin(ranges::kPanelLegProbability) ? LegStyle::Panel : LegStyle::Posts;
    s.back_style = coin(ranges::kSlattedBackProbability) ? BackStyle::Slatted : BackStyle::Solid;
    s.arms = coin(ranges::kArmProbability);
  } else {
    s.seat_width = draw(ranges::kTopWidth);
    s.seat_depth = draw(ranges::kTopDepth);
    s.seat_thickness = draw(ranges::kTopThickness);
    s.leg_height = draw(ranges::kTableLegHeight);
    s.leg_thickness = draw(ranges::kLegThickness);
    s.leg_style = coin(ranges::kPanelLegProbability) ? LegStyle::Panel : LegStyle::Posts;
    s.back_style = BackStyle::None;
    s.arms = false;
  }
  return s;
}

void ShapeSpec::validate() const {
  check(resolution >= 8 && resolution <= 256, "resolution");
  check(leg_thickness > 0 && ranges::kLegThickness.contains(leg_thickness), "leg_thickness");
  if (category == Category::Chair) {
    check(ranges::kSeatWidth.contains(seat_width), "seat_width");
    check(ranges::kSeatDepth.contains(seat_depth), "seat_depth");
    check(ranges::kSeatThickness.contains(seat_thickness), "seat_thickness");
    check(ranges::kLegHeight.contains(leg_height), "leg_height");
    check(back_style != BackStyle::None, "back_style");
    check(ranges::kBackHeight.contains(back_height), "back_height");
    check(ranges::kBackThickness.contains(back_thickness), "back_thickness");
    check(!arms || ranges::kArmHeight.contains(arm_height), "arm_height");
  } else {
    check(ranges::kTopWidth.contains(seat_width), "top_width");
    check(ranges::kTopDepth.contains(seat_depth), "top_depth");
    check(ranges::kTopThickness.contains(seat_thickness), "top_thickness");
    check(ranges::kTableLegHeight.contains(leg_height), "leg_height");
    check(back_style == BackStyle::None && !arms, "table back/arms");
  }
}

VoxelGrid Shape::assembled() const {
  std::vector<VoxelGrid> grids;
  grids.reserve(parts.size());
  for (const auto& p : parts) grids.push_back(p.transformed);
  return compose_assembly(grids);
}

std::vector<PartRecord> generate_shape(const ShapeSpec& spec, int shape_id) {
  spec.validate();
  return spec.category == Category::Chair ? chair_parts(spec, shape_id) : table_parts(spec, shape_id);
}

DatasetSplit make_dataset(Category category, int n, std::uint64_t seed, int resolution) {
  if (n < 5) fail(ErrorCode::InvalidArgument, "dataset needs at least 5 shapes for a 4:1 split");
  std::vector<Shape> shapes(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& s = shapes[static_cast<std::size_t>(i)];
    s.shape_id = i;
    s.spec = ShapeSpec::sample(category, derive_seed(seed, static_cast<std::uint64_t>(i)), resolution);
    s.parts = generate_shape(s.spec, i);
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x5eed5eedULL));
  std::shuffle(order.begin(), order.end(), rng);
  const int n_test = n / 5;
  std::sort(order.begin(), order.end() - n_test);
  std::sort(order.end() - n_test, order.end());

  DatasetSplit split;
  for (int idx = 0; idx < n; ++idx) {
    auto& target = idx < n - n_test ? split.train : split.test;
    target.push_back(std::move(shapes[static_cast<std::size_t>(order[static_cast<std::size_t>(idx)])]));
  }
  return split;
}

PsnSampleSet make_psn_samples(std::span<const Shape> shapes, int per_shape, std::uint64_t seed) {
  if (per_shape < 1) fail(ErrorCode::InvalidArgument, "per_shape must be at least 1");
  PsnSampleSet out;
  std::mt19937_64 rng(seed);
  for (const auto& shape : shapes) {
    const int n = static_cast<int>(shape.parts.size());
    if (n < 2) {
      ++out.skipped_shapes;
      continue;
    }
    // Non-empty proper subsets of n parts are the masks 1 .. 2^n - 2.
    std::uniform_int_distribution<std::uint32_t> mask_dist(1, (1u << n) - 2);
    for (int draw = 0; draw < per_shape; ++draw) {
      const std::uint32_t mask = mask_dist(rng);
      std::vector<int> outside;
      PsnSample sample;
      sample.shape_id = shape.shape_id;
      std::vector<VoxelGrid> members;
      for (int p = 0; p < n; ++p) {
        if (mask & (1u << p)) {
          members.push_back(shape.parts[static_cast<std::size_t>(p)].transformed);
          sample.assembly_labels.push_back(shape.parts[static_cast<std::size_t>(p)].label);
        } else {
          outside.push_back(p);
        }
      }
      std::uniform_int_distribution<std::size_t> pick(0, outside.size() - 1);
      const auto& target = shape.parts[static_cast<std::size_t>(outside[pick(rng)])];
      sample.assembly = compose_assembly(members);
      sample.target_part = target.normalized;
      sample.target_label = target.label;
      out.samples.push_back(std::move(sample));
    }
  }
  return out;
}

std::vector<PsnSample> seal_latents(std::vector<PsnSample> samples, const PartEncoder& encoder) {
  if (samples.empty()) return samples;
  if (!encoder.ready()) fail(ErrorCode::ModelNotReady, "encoder is not trained");
  for (auto& s : samples) {
    s.target_latent = encoder.encode(s.target_part);
    s.assembly_code = encoder.encode(s.assembly);
  }
  return samples;
}

bool is_connected(const VoxelGrid& grid, float threshold) {
  const int r = grid.resolution();
  const auto values = grid.values();
  std::vector<char> seen(values.size(), 0);
  std::size_t total = grid.count_occupied(threshold);
  if (total == 0) return false;
  std::size_t start = 0;
  while (values[start] < threshold) ++start;
  std::queue<std::size_t> frontier;
  frontier.push(start);
  seen[start] = 1;
  std::size_t reached = 0;
  while (!frontier.empty()) {
    const std::size_t cur = frontier.front();
    frontier.pop();
    ++reached;
    const int i = static_cast<int>(cur / (static_cast<std::size_t>(r) * r));
    const int j = static_cast<int>((cur / r) % r);
    const int k = static_cast<int>(cur % r);
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        for (int dk = -1; dk <= 1; ++dk) {
          const int a = i + di;
          const int b = j + dj;
          const int c = k + dk;
          if (a < 0 || b < 0 || c < 0 || a >= r || b >= r || c >= r) continue;
          const std::size_t nb = grid.index(a, b, c);
          if (seen[nb] || values[nb] < threshold) continue;
          seen[nb] = 1;
          frontier.push(nb);
        }
      }
    }
  }
  return reached == total;
}

void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir / "parts");
  nlohmann::json records = nlohmann::json::array();
  int resolution = 0;
  std::string category = "chair";
  auto emit = [&](const std::vector<Shape>& shapes, std::string_view split_name) {
    for (const auto& shape : shapes) {
      category = std::string(to_string(shape.spec.category));
      for (std::size_t p = 0; p < shape.parts.size(); ++p) {
        const auto& rec = shape.parts[p];
        resolution = rec.transformed.resolution();
        const std::string stem = "s" + std::to_string(shape.shape_id) + "_" + std::to_string(p) + "_" +
                                 std::string(to_string(rec.label));
        io::save_vgrid(dir / "parts" / (stem + "_n.vgrid"), rec.normalized);
        io::save_vgrid(dir / "parts" / (stem + "_t.vgrid"), rec.transformed);
        records.push_back({{"shape_id", shape.shape_id},
                           {"label", to_string(rec.label)},
                           {"scale", rec.xf.scale},
                           {"translation", rec.xf.translation},
                           {"split", split_name},
                           {"normalized", "parts/" + stem + "_n.vgrid"},
                           {"transformed", "parts/" + stem + "_t.vgrid"}});
      }
    }
  };
  emit(split.train, "train");
  emit(split.test, "test");
  nlohmann::json manifest{{"format", "partsynth-dataset/1"},
                          {"category", category},
                          {"resolution", resolution},
                          {"records", records}};
  io::write_file(dir / "manifest.json", manifest.dump(1));
}

DatasetSplit load_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("bad dataset manifest: ") + e.what());
  }
  const Category category = parse_category(manifest.value("category", "chair"));
  std::map<std::pair<std::string, int>, Shape> shapes;
  try {
    for (const auto& rec : manifest.at("records")) {
      PartRecord part;
      part.shape_id = rec.at("shape_id").get<int>();
      part.label = parse_part_label(rec.at("label").get<std::string>());
      part.xf.scale = rec.at("scale").get<double>();
      part.xf.translation = rec.at("translation").get<Vec3>();
      part.xf.validate();
      const bool has_n = rec.contains("normalized");
      const bool has_t = rec.contains("transformed");
      if (!has_n && !has_t) fail(ErrorCode::Format, "record needs a normalized or transformed grid");
      if (has_n) part.normalized = io::load_vgrid(dir / rec.at("normalized").get<std::string>());
      if (has_t) part.transformed = io::load_vgrid(dir / rec.at("transformed").get<std::string>());
      if (!has_n) part.normalized = apply_affine(part.transformed, part.xf.inverse());
      if (!has_t) part.transformed = apply_affine(part.normalized, part.xf);
      const std::string split_name = rec.value("split", "train");
      auto& shape = shapes[{split_name, part.shape_id}];
      shape.shape_id = part.shape_id;
      shape.spec.category = category;
      shape.spec.resolution = part.transformed.resolution();
      shape.parts.push_back(std::move(part));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("bad dataset record: ") + e.what());
  }
  DatasetSplit split;
  for (auto& [key, shape] : shapes) (key.first == "test" ? split.test : split.train).push_back(std::move(shape));
  return split;
}

}  // namespace partsynth
