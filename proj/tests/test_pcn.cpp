#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "partsynth/checkpoint.hpp"
#include "partsynth/error.hpp"
#include "partsynth/io.hpp"
#include "partsynth/pcn.hpp"
#include "partsynth/tensor_util.hpp"
#include "test_support.hpp"

using namespace partsynth;

namespace {

std::vector<PartRecord> smoke_parts(std::size_t n) {
  const auto data = make_dataset(Category::Chair, 12, 21);
  std::vector<PartRecord> out;
  for (const auto& s : data.train)
    for (const auto& p : s.parts)
      if (out.size() < n) out.push_back(p);
  return out;
}

PcnConfig tiny() {
  PcnConfig c;
  c.resolution = 16;
  c.latent_dim = 8;
  c.channels = {4, 4, 8, 8, 8};
  return c;
}

}  // namespace

TEST(Pcn, EncodeDecodeLocalizeContracts) {
  PcnModel m;
  EXPECT_FALSE(m.ready());
  const auto g = testing_support::random_grid(32, 1);
  const auto z = m.encode(g);
  ASSERT_EQ(z.dim(), 128u);
  for (float v : z.values) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(m.encode(g), z);
  const auto rec = m.decode(z);
  EXPECT_EQ(rec.resolution(), 32);
  EXPECT_EQ(m.decode(z), rec);
  const auto xf = m.localize(rec);
  EXPECT_GT(xf.scale, 0.0);
  EXPECT_EQ(m.localize(rec), xf);

  try {
    m.encode(VoxelGrid(16));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  EXPECT_THROW(m.decode(LatentCode{std::vector<float>(5, 0.5f)}), Error);
  EXPECT_THROW(m.localize(VoxelGrid(8)), Error);
}

TEST(Pcn, WarpMatchesApplyAffine) {
  const auto g = testing_support::random_grid(12, 5, 0.5);
  const AffineTransform xf{0.8, {0.05, -0.1, 0.02}};
  const auto expected = apply_affine(g, xf);
  const auto got = tensor_to_grid(warp_volume(grid_to_tensor(g), torch::tensor({0.8f}),
                                              torch::tensor({0.05f, -0.1f, 0.02f}).view({1, 3})));
  for (std::size_t n = 0; n < g.size(); ++n) EXPECT_NEAR(got.values()[n], expected.values()[n], 1e-5);
}

TEST(PcnLoss, HandValues) {
  const auto rec = smoke_parts(1).front();
  EXPECT_DOUBLE_EQ(pcn_loss(rec, rec.normalized, rec.transformed, rec.xf.scale, rec.xf.translation), 0.0);
  EXPECT_NEAR(pcn_loss(rec, rec.normalized, rec.transformed, rec.xf.scale + 1.0, rec.xf.translation), 1.0, 1e-12);

  PartRecord binary;
  binary.normalized = VoxelGrid(8);
  binary.transformed = VoxelGrid(8);
  for (int n = 0; n < 5; ++n) binary.normalized(n, 1, 1) = binary.transformed(1, n, 2) = 1.0f;
  EXPECT_NEAR(pcn_loss(binary, VoxelGrid(8), VoxelGrid(8), 1.0, {0, 0, 0}), 2.0 * 5 / 512.0, 1e-15);
}

TEST(PcnLoss, DecomposesIntoFourTerms) {
  const auto rec = smoke_parts(1).front();
  const auto p_hat = testing_support::random_grid(32, 2);
  const auto pp_hat = testing_support::random_grid(32, 3);
  const double s_hat = 0.7;
  const Vec3 t_hat{0.1, -0.2, 0.05};
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto terms = pcn_loss_terms(grid_to_tensor(rec.normalized).to(torch::kFloat64),
                                    grid_to_tensor(rec.transformed).to(torch::kFloat64),
                                    grid_to_tensor(p_hat).to(torch::kFloat64), grid_to_tensor(pp_hat).to(torch::kFloat64),
                                    torch::tensor({rec.xf.scale}, opts), torch::tensor({s_hat}, opts),
                                    torch::tensor({rec.xf.translation[0], rec.xf.translation[1], rec.xf.translation[2]}, opts).view({1, 3}),
                                    torch::tensor({t_hat[0], t_hat[1], t_hat[2]}, opts).view({1, 3}));
  const double sum = terms.recon.item<double>() + terms.warp.item<double>() + terms.scale.item<double>() +
                     terms.translation.item<double>();
  EXPECT_NEAR(terms.total().item<double>(), sum, 1e-12);
  EXPECT_NEAR(pcn_loss(rec, p_hat, pp_hat, s_hat, t_hat), sum, 1e-9);
  EXPECT_GE(sum, 0.0);
}

TEST(PcnLoss, WarpGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = gradcheck::stn_warp_gradient(seed);
    EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed;
  }
}

TEST(PcnTrain, ZeroEpochsLeaveWeightsUntouched) {
  PcnModel m(tiny(), 3);
  const auto before = io::digest(encode_checkpoint("pcn", {}, *m.net()));
  const auto parts = smoke_parts(4);
  std::vector<PartRecord> small;
  for (const auto& p : parts) {
    PartRecord q = p;
    q.normalized = resample(p.normalized, 16);
    q.transformed = resample(p.transformed, 16);
    small.push_back(q);
  }
  const auto report = m.train(small, PcnTrainConfig{1e-4, 1e-6, 0, 0, 4, 0});
  EXPECT_TRUE(report.epochs.empty());
  EXPECT_EQ(io::digest(encode_checkpoint("pcn", {}, *m.net())), before);
  EXPECT_TRUE(m.ready());
  EXPECT_THROW(m.train({}, PcnTrainConfig{}), Error);
}

TEST(PcnTrain, SmokeRunReducesLossAndIsDeterministic) {
  const auto parts = smoke_parts(20);
  ASSERT_EQ(parts.size(), 20u);
  PcnTrainConfig tc{1e-3, 1e-5, 30, 15, 4, 7};
  PcnModel a(PcnConfig{}, 7);
  const auto ra = a.train(parts, tc);
  ASSERT_EQ(ra.epochs.size(), 45u);
  const double first = ra.epochs[0].loss_ae + ra.epochs[0].loss_stn;
  const double tenth = ra.epochs[9].loss_ae + ra.epochs[9].loss_stn;
  EXPECT_LE(tenth, 0.8 * first);
  EXPECT_LT(ra.epochs.back().loss_ae + ra.epochs.back().loss_stn, first);
  EXPECT_EQ(a.stage(), 2);
  EXPECT_EQ(ra.epochs[30].stage, 2);
  const auto csv = ra.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 46);

  PcnModel b(PcnConfig{}, 7);
  PcnTrainConfig short_tc = tc;
  short_tc.epochs_joint = 3;
  short_tc.epochs_stn = 2;
  PcnModel c(PcnConfig{}, 7);
  const auto rb = b.train(parts, short_tc);
  const auto rc = c.train(parts, short_tc);
  EXPECT_NEAR(rb.epochs.back().loss_stn, rc.epochs.back().loss_stn, 1e-6);
  EXPECT_NEAR(rb.epochs.back().loss_ae, rc.epochs.back().loss_ae, 1e-6);
}

TEST(PcnCheckpoint, RoundTripAndVersionCheck) {
  const auto dir = std::filesystem::temp_directory_path() / "partsynth_pcn_ckpt";
  std::filesystem::create_directories(dir);
  PcnModel m(tiny(), 9);
  m.save(dir / "pcn.ckpt");
  const auto back = PcnModel::load(dir / "pcn.ckpt");
  const auto g = testing_support::random_grid(16, 4);
  EXPECT_EQ(back.encode(g), m.encode(g));
  EXPECT_EQ(back.localize(g), m.localize(g));
  EXPECT_EQ(back.config().channels, tiny().channels);

  auto bytes = io::read_file(dir / "pcn.ckpt");
  const auto pos = bytes.find("\"format_version\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 17] = '9';
  io::write_file(dir / "bad.ckpt", bytes);
  try {
    PcnModel::load(dir / "bad.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
  }
  try {
    load_checkpoint(dir / "pcn.ckpt", "implicit");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WrongModel);
  }
  std::filesystem::remove_all(dir);
}
