#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "partsynth/voxel_geometry.hpp"

namespace partsynth {

/// Euclidean norm of the difference of the two grids binarized at 0.5.
double voxel_ed(const VoxelGrid& a, const VoxelGrid& b);

/// Mean nearest-neighbour distance a->b plus b->a. With `squared` the
/// per-pair distance is the squared Euclidean distance.
double chamfer(const PointCloud& a, const PointCloud& b, bool squared);

struct EmdResult {
  double value = 0.0;
  /// False when the greedy approximation was used (more than kEmdExactLimit points).
  bool exact = true;
  /// Cardinality after equalizing the two clouds.
  std::size_t matched = 0;
};

inline constexpr std::size_t kEmdExactLimit = 512;

/// Mean matched distance under the optimal bijection. The larger cloud is
/// subsampled (seeded, without replacement) down to the smaller one first.
EmdResult emd(const PointCloud& a, const PointCloud& b, std::uint64_t seed = 0);

/// Minimum-cost perfect matching on a square cost matrix (row-major n*n).
/// Returns the column assigned to each row.
std::vector<int> hungarian(std::span<const double> cost, int n);

struct DiversityReport {
  double mean_ed = 0.0;
  double mean_cd = 0.0;
  double mean_emd = 0.0;
  int pair_count = 0;
  int skipped = 0;
  bool emd_exact = true;
};

/// Table-style pairwise diversity: voxel ED on the grids, unsquared chamfer
/// and EMD on their unit-sphere point clouds, averaged over unordered pairs.
/// Empty parts are skipped and counted.
DiversityReport pairwise_diversity(std::span<const VoxelGrid> parts);

/// Fraction of reference clouds that are the squared-chamfer nearest
/// neighbour of at least one generated cloud.
double coverage(std::span<const PointCloud> gen, std::span<const PointCloud> ref);
/// Mean over reference clouds of the smallest squared chamfer to any generated cloud.
double mmd(std::span<const PointCloud> gen, std::span<const PointCloud> ref);

inline constexpr int kJsdBins = 28;

/// Per-cell count of clouds with at least one point in that cell, over the
/// frame [-0.5, 0.5]^3 split into bins^3 cells. Points outside are clamped.
std::vector<double> occupancy_histogram(std::span<const PointCloud> clouds, int bins = kJsdBins);
/// Jensen-Shannon divergence (natural log) of two histograms after normalizing each.
double jsd_distributions(std::span<const double> p, std::span<const double> q);
double jsd(std::span<const PointCloud> gen, std::span<const PointCloud> ref);

struct GenerativeReport {
  double cov = 0.0;
  double mmd = 0.0;
  double jsd = 0.0;
  int n_gen = 0;
  int n_ref = 0;
};

/// COV and MMD on unit-sphere normalized copies of the clouds; JSD on the
/// clouds as given (frame coordinates).
GenerativeReport generative_report(std::span<const PointCloud> gen, std::span<const PointCloud> ref);

/// Centroid-free copy scaled to max norm 1 (single points go to the origin).
PointCloud normalize_to_unit_sphere(const PointCloud& cloud);

std::string to_json(const DiversityReport& r);
std::string to_json(const GenerativeReport& r);

}  // namespace partsynth
