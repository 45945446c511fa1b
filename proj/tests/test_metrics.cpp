#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "partsynth/error.hpp"
#include "partsynth/metrics.hpp"
#include "test_support.hpp"

using namespace partsynth;

namespace {

PointCloud cloud(std::initializer_list<Vec3> pts) { return PointCloud{std::vector<Vec3>(pts)}; }

double brute_emd(const PointCloud& a, const PointCloud& b) {
  std::vector<int> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double s = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      const auto& p = a.points[i];
      const auto& q = b.points[static_cast<std::size_t>(perm[i])];
      s += std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]));
    }
    best = std::min(best, s / static_cast<double>(perm.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

VoxelGrid one_voxel(int r, int i, int j, int k) {
  VoxelGrid g(r);
  g(i, j, k) = 1.0f;
  return g;
}

}  // namespace

TEST(VoxelEd, HandValues) {
  const auto a = testing_support::random_grid(8, 1);
  EXPECT_EQ(voxel_ed(a, a), 0.0);
  VoxelGrid b(8), c(8);
  for (int n = 0; n < 4; ++n) c(n, 0, 0) = 1.0f;
  EXPECT_DOUBLE_EQ(voxel_ed(b, c), 2.0);
  EXPECT_DOUBLE_EQ(voxel_ed(a, c), voxel_ed(c, a));
  EXPECT_THROW(voxel_ed(VoxelGrid(8), VoxelGrid(4)), Error);
}

TEST(Chamfer, HandValues) {
  const auto o = cloud({{0, 0, 0}});
  const auto x1 = cloud({{1, 0, 0}});
  const auto x2 = cloud({{2, 0, 0}});
  EXPECT_DOUBLE_EQ(chamfer(o, x1, true), 2.0);
  EXPECT_DOUBLE_EQ(chamfer(o, x1, false), 2.0);
  EXPECT_DOUBLE_EQ(chamfer(o, x2, true), 8.0);
  EXPECT_DOUBLE_EQ(chamfer(x1, x1, true), 0.0);
  EXPECT_THROW(chamfer(PointCloud{}, o, true), Error);
}

TEST(Emd, HandValues) {
  EXPECT_DOUBLE_EQ(emd(cloud({{0, 0, 0}, {1, 0, 0}}), cloud({{1, 0, 0}, {0, 0, 0}})).value, 0.0);
  const auto r = emd(cloud({{0, 0, 0}, {0, 1, 0}}), cloud({{1, 0, 0}, {1, 1, 0}}));
  EXPECT_NEAR(r.value, 1.0, 1e-12);
  EXPECT_TRUE(r.exact);
}

TEST(Emd, MatchesBruteForceOnSmallClouds) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_int_distribution<int> size(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = size(rng);
    PointCloud a, b;
    for (int i = 0; i < n; ++i) {
      a.points.push_back({u(rng), u(rng), u(rng)});
      b.points.push_back({u(rng), u(rng), u(rng)});
    }
    EXPECT_NEAR(emd(a, b).value, brute_emd(a, b), 1e-9);
    EXPECT_NEAR(emd(a, b).value, emd(b, a).value, 1e-9);
  }
}

TEST(Emd, UnequalSizesAreResampledDeterministically) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  PointCloud a, b;
  for (int i = 0; i < 30; ++i) a.points.push_back({u(rng), u(rng), u(rng)});
  for (int i = 0; i < 12; ++i) b.points.push_back({u(rng), u(rng), u(rng)});
  const auto r1 = emd(a, b, 3), r2 = emd(a, b, 3);
  EXPECT_EQ(r1.matched, 12u);
  EXPECT_EQ(r1.value, r2.value);
}

TEST(Emd, ApproximationIsFlaggedAndNearExact) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  PointCloud a, b;
  for (int i = 0; i < 600; ++i) {
    a.points.push_back({u(rng), u(rng), u(rng)});
    b.points.push_back({u(rng), u(rng), u(rng)});
  }
  const auto approx = emd(a, b);
  EXPECT_FALSE(approx.exact);
  std::vector<double> cost(600 * 600);
  for (int i = 0; i < 600; ++i)
    for (int j = 0; j < 600; ++j) {
      const auto& p = a.points[i];
      const auto& q = b.points[j];
      cost[i * 600 + j] = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]));
    }
  const auto m = hungarian(cost, 600);
  double exact = 0;
  for (int i = 0; i < 600; ++i) exact += cost[i * 600 + m[i]];
  exact /= 600;
  EXPECT_GE(approx.value, exact - 1e-12);
  EXPECT_LE(approx.value, exact * 1.15);
}

TEST(Chamfer, MatchesBruteForceOnRandomClouds) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_int_distribution<int> size(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    PointCloud a, b;
    for (int i = size(rng); i > 0; --i) a.points.push_back({u(rng), u(rng), u(rng)});
    for (int i = size(rng); i > 0; --i) b.points.push_back({u(rng), u(rng), u(rng)});
    for (bool squared : {false, true}) {
      auto side = [&](const PointCloud& x, const PointCloud& y) {
        double s = 0;
        for (const auto& p : x.points) {
          std::vector<double> d;
          for (const auto& q : y.points) {
            const double e = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
            d.push_back(squared ? e : std::sqrt(e));
          }
          s += *std::min_element(d.begin(), d.end());
        }
        return s / static_cast<double>(x.size());
      };
      EXPECT_NEAR(chamfer(a, b, squared), side(a, b) + side(b, a), 1e-9);
    }
  }
}

TEST(PairwiseDiversity, IdenticalPartsAreZero) {
  const auto g = testing_support::random_grid(8, 2);
  std::vector<VoxelGrid> parts(4, g);
  const auto r = pairwise_diversity(parts);
  EXPECT_EQ(r.pair_count, 6);
  EXPECT_EQ(r.mean_ed, 0.0);
  EXPECT_NEAR(r.mean_cd, 0.0, 1e-12);
  EXPECT_NEAR(r.mean_emd, 0.0, 1e-12);
}

TEST(PairwiseDiversity, SingleVoxelPartsMatchHandValues) {
  // Single-voxel clouds all normalize to the origin, so CD and EMD vanish and
  // only the voxel ED (sqrt 2 for any two distinct voxels) remains.
  std::vector<VoxelGrid> parts{one_voxel(8, 0, 0, 0), one_voxel(8, 3, 0, 0), one_voxel(8, 0, 5, 2)};
  const auto r = pairwise_diversity(parts);
  EXPECT_EQ(r.pair_count, 3);
  EXPECT_NEAR(r.mean_ed, std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(r.mean_cd, 0.0, 1e-12);

  // Two-voxel parts: the clouds are {+-u} for a unit axis u.
  VoxelGrid gx(8), gy(8), gx2(8);
  gx(1, 4, 4) = gx(6, 4, 4) = 1.0f;
  gy(4, 1, 4) = gy(4, 6, 4) = 1.0f;
  gx2(2, 3, 3) = gx2(5, 3, 3) = 1.0f;
  std::vector<VoxelGrid> pairs{gx, gy, gx2};
  const auto q = pairwise_diversity(pairs);
  // gx vs gy: each point's nearest is at distance sqrt 2, EMD sqrt 2; gx vs gx2 identical clouds.
  const double s2 = std::sqrt(2.0);
  EXPECT_NEAR(q.mean_cd, (2 * s2 + 0.0 + 2 * s2) / 3.0, 1e-9);
  EXPECT_NEAR(q.mean_emd, (s2 + 0.0 + s2) / 3.0, 1e-9);
  EXPECT_NEAR(q.mean_ed, (2.0 + 2.0 + 2.0) / 3.0, 1e-12);
}

TEST(PairwiseDiversity, EmptyPartsAreSkipped) {
  std::vector<VoxelGrid> parts{one_voxel(8, 0, 0, 0), VoxelGrid(8), one_voxel(8, 1, 1, 1)};
  const auto r = pairwise_diversity(parts);
  EXPECT_EQ(r.skipped, 1);
  EXPECT_EQ(r.pair_count, 1);
  std::vector<VoxelGrid> lonely{one_voxel(8, 0, 0, 0), VoxelGrid(8)};
  EXPECT_THROW(pairwise_diversity(lonely), Error);
}

TEST(SetMetrics, IdentitySets) {
  std::vector<PointCloud> set;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int c = 0; c < 5; ++c) {
    PointCloud pc;
    for (int i = 0; i < 20; ++i) pc.points.push_back({u(rng), u(rng), u(rng)});
    set.push_back(pc);
  }
  EXPECT_EQ(coverage(set, set), 1.0);
  EXPECT_EQ(mmd(set, set), 0.0);
  EXPECT_EQ(jsd(set, set), 0.0);
  const auto r = generative_report(set, set);
  EXPECT_EQ(r.cov, 1.0);
  EXPECT_EQ(r.mmd, 0.0);
  EXPECT_EQ(r.jsd, 0.0);
  // A superset of the reference also covers it fully.
  auto bigger = set;
  bigger.push_back(cloud({{0.4, 0.4, 0.4}}));
  EXPECT_EQ(coverage(bigger, set), 1.0);
}

TEST(SetMetrics, HandBuiltNearestNeighbours) {
  const std::vector<PointCloud> ref{cloud({{0, 0, 0}}), cloud({{1, 0, 0}}), cloud({{5, 0, 0}})};
  const std::vector<PointCloud> gen{cloud({{0.1, 0, 0}}), cloud({{0.2, 0, 0}}), cloud({{4, 0, 0}})};
  // Exhaustive oracle: gen NN are ref0, ref0, ref2.
  EXPECT_NEAR(coverage(gen, ref), 2.0 / 3.0, 1e-12);
  // Per ref, min squared chamfer (2 * d^2): 2*0.01, 2*0.64, 2*1.
  EXPECT_NEAR(mmd(gen, ref), (0.02 + 1.28 + 2.0) / 3.0, 1e-12);
  const std::vector<PointCloud> single{cloud({{0.3, 0, 0}})};
  EXPECT_LE(coverage(single, ref), 1.0 / 3.0);
  EXPECT_NEAR(mmd(single, std::vector<PointCloud>{ref[0]}), chamfer(single[0], ref[0], true), 1e-15);
}

TEST(Jsd, HandBuiltHistograms) {
  const std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
  const double oracle = 0.5 * (0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25)) + 0.5 * std::log(1.0 / 0.75);
  EXPECT_NEAR(jsd_distributions(p, q), oracle, 1e-12);
  EXPECT_NEAR(jsd_distributions(p, q), 0.2158, 1e-4);
  EXPECT_NEAR(jsd_distributions(q, p), oracle, 1e-12);
  const std::vector<double> a{1, 0, 0, 2}, b{0, 3, 1, 0};
  EXPECT_NEAR(jsd_distributions(a, b), std::log(2.0), 1e-12);
  EXPECT_THROW(jsd_distributions(p, std::vector<double>{1.0}), Error);
}

TEST(Jsd, DisjointCloudSetsReachLog2) {
  const std::vector<PointCloud> left{cloud({{-0.4, 0, 0}})}, right{cloud({{0.4, 0, 0}})};
  EXPECT_NEAR(jsd(left, right), std::log(2.0), 1e-12);
  const auto h = occupancy_histogram(left);
  EXPECT_EQ(h.size(), 28u * 28u * 28u);
  EXPECT_EQ(std::accumulate(h.begin(), h.end(), 0.0), 1.0);
}

TEST(Reports, JsonHasScaledFields) {
  DiversityReport d;
  d.mean_cd = 0.5;
  EXPECT_NE(to_json(d).find("\"cd_x100\": 50.0"), std::string::npos);
  GenerativeReport g;
  g.mmd = 0.002;
  EXPECT_NE(to_json(g).find("mmd_x1000"), std::string::npos);
}
