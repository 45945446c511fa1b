#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <set>

#include "partsynth/dataset.hpp"
#include "partsynth/error.hpp"

using namespace partsynth;

namespace {

// Stand-in encoder: per-axis occupied mass, padded to a fixed width.
class MassEncoder : public PartEncoder {
 public:
  explicit MassEncoder(bool ready) : ready_(ready) {}
  bool ready() const override { return ready_; }
  LatentCode encode(const VoxelGrid& g) const override {
    LatentCode z;
    z.values.assign(128, 0.0f);
    z.values[0] = static_cast<float>(g.count_occupied()) / static_cast<float>(g.size());
    return z;
  }

 private:
  bool ready_;
};

std::set<PartLabel> labels_of(const std::vector<PartRecord>& parts) {
  std::set<PartLabel> s;
  for (const auto& p : parts) s.insert(p.label);
  return s;
}

}  // namespace

TEST(GenerateShape, ChairTemplates) {
  ShapeSpec spec = ShapeSpec::sample(Category::Chair, 1);
  spec.arms = true;
  const auto with_arms = generate_shape(spec);
  EXPECT_EQ(with_arms.size(), 4u);
  EXPECT_EQ(labels_of(with_arms), (std::set<PartLabel>{PartLabel::Seat, PartLabel::Back, PartLabel::Legs, PartLabel::Arms}));
  spec.arms = false;
  const auto without = generate_shape(spec);
  EXPECT_EQ(without.size(), 3u);
  EXPECT_EQ(labels_of(without), (std::set<PartLabel>{PartLabel::Seat, PartLabel::Back, PartLabel::Legs}));
  const auto table = generate_shape(ShapeSpec::sample(Category::Table, 2));
  EXPECT_EQ(labels_of(table), (std::set<PartLabel>{PartLabel::Top, PartLabel::Legs}));
}

TEST(GenerateShape, DeterministicPerSeed) {
  const auto a = generate_shape(ShapeSpec::sample(Category::Chair, 77));
  const auto b = generate_shape(ShapeSpec::sample(Category::Chair, 77));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].normalized, b[i].normalized);
    EXPECT_EQ(a[i].transformed, b[i].transformed);
    EXPECT_EQ(a[i].xf, b[i].xf);
  }
}

TEST(GenerateShape, OutOfRangeSpecFails) {
  ShapeSpec spec;
  spec.seat_width = 2.0;
  try {
    generate_shape(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidSpec);
  }
  ShapeSpec table = ShapeSpec::sample(Category::Table, 3);
  table.arms = true;
  EXPECT_THROW(generate_shape(table), Error);
}

TEST(GenerateShape, RecordsRoundTripAndShapesAreConnected) {
  // Every record of 150 chairs and 50 tables satisfies the placement invariant.
  int records = 0;
  for (auto [cat, n] : {std::pair{Category::Chair, 150}, std::pair{Category::Table, 50}}) {
    for (int i = 0; i < n; ++i) {
      Shape shape;
      shape.spec = ShapeSpec::sample(cat, 1000 + static_cast<std::uint64_t>(i));
      shape.parts = generate_shape(shape.spec, i);
      EXPECT_TRUE(is_connected(shape.assembled())) << "shape " << i;
      for (const auto& rec : shape.parts) {
        ++records;
        ASSERT_GE(voxel_iou(apply_affine(rec.normalized, rec.xf), rec.transformed), 0.9)
            << to_string(rec.label) << " of shape " << i;
        const auto b = occupied_bounds(rec.normalized);
        double extent = 0;
        for (int a = 0; a < 3; ++a) extent = std::max(extent, b.hi[a] - b.lo[a]);
        EXPECT_NEAR(extent, kNormalizedExtent, 2.0 / 32);
      }
    }
  }
  EXPECT_GT(records, 500);
}

TEST(IsConnected, DetectsGaps) {
  VoxelGrid g(8);
  g(1, 1, 1) = 1.0f;
  g(2, 2, 2) = 1.0f;
  EXPECT_TRUE(is_connected(g));
  g(5, 5, 5) = 1.0f;
  EXPECT_FALSE(is_connected(g));
  EXPECT_FALSE(is_connected(VoxelGrid(8)));
}

TEST(MakeDataset, SplitSizesAndDisjointness) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto big = make_dataset(Category::Chair, 500, 7);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 300.0);
  EXPECT_EQ(big.train.size(), 400u);
  EXPECT_EQ(big.test.size(), 100u);
  std::set<int> ids;
  for (const auto& s : big.train) ids.insert(s.shape_id);
  for (const auto& s : big.test) EXPECT_FALSE(ids.count(s.shape_id));

  const auto small = make_dataset(Category::Table, 5, 1);
  EXPECT_EQ(small.train.size(), 4u);
  EXPECT_EQ(small.test.size(), 1u);
  EXPECT_THROW(make_dataset(Category::Chair, 4, 1), Error);
}

TEST(MakeDataset, SameSeedSameSplit) {
  const auto a = make_dataset(Category::Chair, 20, 3);
  const auto b = make_dataset(Category::Chair, 20, 3);
  ASSERT_EQ(a.test.size(), b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    EXPECT_EQ(a.test[i].shape_id, b.test[i].shape_id);
    EXPECT_EQ(a.test[i].assembled(), b.test[i].assembled());
  }
  const auto c = make_dataset(Category::Chair, 20, 4);
  bool differs = false;
  for (std::size_t i = 0; i < a.test.size(); ++i) differs = differs || a.test[i].shape_id != c.test[i].shape_id;
  EXPECT_TRUE(differs);
}

TEST(PsnSamples, ProperSubsetsWithComplementaryTarget) {
  const auto data = make_dataset(Category::Chair, 100, 11);
  const auto set = make_psn_samples(data.train, 4, 5);
  EXPECT_LE(set.samples.size(), 400u);
  EXPECT_EQ(set.skipped_shapes, 0);
  for (const auto& s : set.samples) {
    const auto& shape = *std::find_if(data.train.begin(), data.train.end(), [&](const Shape& x) { return x.shape_id == s.shape_id; });
    ASSERT_GE(s.assembly_labels.size(), 1u);
    ASSERT_LT(s.assembly_labels.size(), shape.parts.size());
    EXPECT_EQ(std::count(s.assembly_labels.begin(), s.assembly_labels.end(), s.target_label), 0);
    EXPECT_FALSE(s.target_latent.has_value());
    // The assembly is the union of exactly the listed parts.
    std::vector<VoxelGrid> members;
    for (const auto& p : shape.parts)
      if (std::count(s.assembly_labels.begin(), s.assembly_labels.end(), p.label)) members.push_back(p.transformed);
    EXPECT_EQ(compose_assembly(members), s.assembly);
  }
}

TEST(PsnSamples, ThreePartShapesGiveSmallAssemblies) {
  ShapeSpec spec = ShapeSpec::sample(Category::Chair, 9);
  spec.arms = false;
  Shape shape{0, spec, generate_shape(spec)};
  std::vector<Shape> one{shape};
  const auto set = make_psn_samples(one, 50, 2);
  for (const auto& s : set.samples) EXPECT_LE(s.assembly_labels.size(), 2u);

  Shape lonely = shape;
  lonely.parts.resize(1);
  std::vector<Shape> skip{lonely};
  EXPECT_EQ(make_psn_samples(skip, 4, 1).skipped_shapes, 1);
}

TEST(SealLatents, FillsCodesAndChecksEncoder) {
  const auto data = make_dataset(Category::Chair, 10, 2);
  auto samples = make_psn_samples(data.train, 2, 1).samples;
  const MassEncoder enc(true);
  const auto sealed = seal_latents(samples, enc);
  for (const auto& s : sealed) {
    ASSERT_TRUE(s.target_latent && s.assembly_code);
    EXPECT_EQ(s.target_latent->dim(), 128u);
    EXPECT_EQ(s.assembly_code->dim(), 128u);
  }
  const auto again = seal_latents(samples, enc);
  EXPECT_EQ(again[0].assembly_code, sealed[0].assembly_code);
  EXPECT_TRUE(seal_latents({}, MassEncoder(false)).empty());
  try {
    seal_latents(samples, MassEncoder(false));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModelNotReady);
  }
}

TEST(DatasetFiles, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "partsynth_dataset_test";
  std::filesystem::remove_all(dir);
  const auto data = make_dataset(Category::Chair, 10, 5);
  save_dataset(dir, data);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.train.size(), data.train.size());
  ASSERT_EQ(back.test.size(), data.test.size());
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const auto& a = data.train[i];
    const auto& b = *std::find_if(back.train.begin(), back.train.end(), [&](const Shape& s) { return s.shape_id == a.shape_id; });
    ASSERT_EQ(a.parts.size(), b.parts.size());
    for (std::size_t p = 0; p < a.parts.size(); ++p) {
      EXPECT_EQ(a.parts[p].normalized, b.parts[p].normalized);
      EXPECT_EQ(a.parts[p].transformed, b.parts[p].transformed);
      EXPECT_EQ(a.parts[p].xf, b.parts[p].xf);
      EXPECT_EQ(a.parts[p].label, b.parts[p].label);
    }
  }
  std::filesystem::remove_all(dir);
}
