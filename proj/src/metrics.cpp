#include "partsynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "partsynth/error.hpp"

namespace partsynth {

namespace {

double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

void require_cloud(const PointCloud& c) {
  if (c.empty()) fail(ErrorCode::EmptyShape, "point cloud is empty");
}

template <class Set>
void require_set(const Set& s, const char* what) {
  if (s.empty()) fail(ErrorCode::InvalidArgument, std::string(what) + " set is empty");
}

double directed(const PointCloud& from, const PointCloud& to, bool squared) {
  double sum = 0.0;
  for (const auto& p : from.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to.points) best = std::min(best, dist2(p, q));
    sum += squared ? best : std::sqrt(best);
  }
  return sum / static_cast<double>(from.size());
}

PointCloud subsample(const PointCloud& c, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates; keep the chosen points in their original order.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  PointCloud out;
  out.points.reserve(n);
  for (auto i : idx) out.points.push_back(c.points[i]);
  return out;
}

std::vector<int> greedy_matching(const std::vector<double>& cost, int n) {
  std::vector<std::pair<double, std::int64_t>> edges;
  edges.reserve(static_cast<std::size_t>(n) * n);
  for (std::int64_t e = 0; e < static_cast<std::int64_t>(n) * n; ++e) edges.emplace_back(cost[e], e);
  std::sort(edges.begin(), edges.end());
  std::vector<int> match(n, -1);
  std::vector<char> used(n, 0);
  int left = n;
  for (const auto& [c, e] : edges) {
    const int i = static_cast<int>(e / n), j = static_cast<int>(e % n);
    if (match[i] >= 0 || used[j]) continue;
    match[i] = j;
    used[j] = 1;
    if (--left == 0) break;
  }
  // Pairwise swap refinement until no swap improves (bounded passes).
  for (int pass = 0; pass < 4; ++pass) {
    bool improved = false;
    for (int i = 0; i < n; ++i) {
      for (int k = i + 1; k < n; ++k) {
        const auto ci = static_cast<std::size_t>(i) * n, ck = static_cast<std::size_t>(k) * n;
        const double now = cost[ci + match[i]] + cost[ck + match[k]];
        const double swapped = cost[ci + match[k]] + cost[ck + match[i]];
        if (swapped < now - 1e-15) {
          std::swap(match[i], match[k]);
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
  return match;
}

}  // namespace

double voxel_ed(const VoxelGrid& a, const VoxelGrid& b) {
  require_same_resolution(a, b);
  std::size_t diff = 0;
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) diff += (va[i] >= 0.5f) != (vb[i] >= 0.5f);
  return std::sqrt(static_cast<double>(diff));
}

double chamfer(const PointCloud& a, const PointCloud& b, bool squared) {
  require_cloud(a);
  require_cloud(b);
  return directed(a, b, squared) + directed(b, a, squared);
}

std::vector<int> hungarian(std::span<const double> cost, int n) {
  // Shortest augmenting path with potentials, 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

EmdResult emd(const PointCloud& a, const PointCloud& b, std::uint64_t seed) {
  require_cloud(a);
  require_cloud(b);
  const std::size_t n = std::min(a.size(), b.size());
  const PointCloud& pa = a.size() > n ? subsample(a, n, seed) : a;
  const PointCloud& pb = b.size() > n ? subsample(b, n, seed) : b;
  const int m = static_cast<int>(n);
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = std::sqrt(dist2(pa.points[i], pb.points[j]));

  EmdResult r;
  r.matched = n;
  r.exact = n <= kEmdExactLimit;
  const auto match = r.exact ? hungarian(cost, m) : greedy_matching(cost, m);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += cost[i * n + match[i]];
  r.value = sum / static_cast<double>(n);
  return r;
}

DiversityReport pairwise_diversity(std::span<const VoxelGrid> parts) {
  std::vector<const VoxelGrid*> kept;
  std::vector<PointCloud> clouds;
  DiversityReport r;
  for (const auto& g : parts) {
    if (g.count_occupied() == 0) {
      ++r.skipped;
      continue;
    }
    kept.push_back(&g);
    clouds.push_back(voxel_to_pointcloud(g));
  }
  if (kept.size() < 2) fail(ErrorCode::InvalidArgument, "pairwise diversity needs at least two non-empty parts");
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      r.mean_ed += voxel_ed(*kept[i], *kept[j]);
      r.mean_cd += chamfer(clouds[i], clouds[j], false);
      const auto e = emd(clouds[i], clouds[j], i * 1000 + j);
      r.mean_emd += e.value;
      r.emd_exact = r.emd_exact && e.exact;
      ++r.pair_count;
    }
  }
  r.mean_ed /= r.pair_count;
  r.mean_cd /= r.pair_count;
  r.mean_emd /= r.pair_count;
  return r;
}

namespace {

// Row g, column r: squared chamfer between gen[g] and ref[r].
std::vector<double> cross_chamfer(std::span<const PointCloud> gen, std::span<const PointCloud> ref) {
  require_set(gen, "generated");
  require_set(ref, "reference");
  std::vector<double> d(gen.size() * ref.size());
  for (std::size_t g = 0; g < gen.size(); ++g)
    for (std::size_t r = 0; r < ref.size(); ++r) d[g * ref.size() + r] = chamfer(gen[g], ref[r], true);
  return d;
}

double coverage_from(const std::vector<double>& d, std::size_t n_gen, std::size_t n_ref) {
  std::vector<char> hit(n_ref, 0);
  for (std::size_t g = 0; g < n_gen; ++g) {
    const auto row = d.begin() + static_cast<std::ptrdiff_t>(g * n_ref);
    hit[static_cast<std::size_t>(std::min_element(row, row + static_cast<std::ptrdiff_t>(n_ref)) - row)] = 1;
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(n_ref);
}

double mmd_from(const std::vector<double>& d, std::size_t n_gen, std::size_t n_ref) {
  double sum = 0.0;
  for (std::size_t r = 0; r < n_ref; ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < n_gen; ++g) best = std::min(best, d[g * n_ref + r]);
    sum += best;
  }
  return sum / static_cast<double>(n_ref);
}

}  // namespace

double coverage(std::span<const PointCloud> gen, std::span<const PointCloud> ref) {
  return coverage_from(cross_chamfer(gen, ref), gen.size(), ref.size());
}

double mmd(std::span<const PointCloud> gen, std::span<const PointCloud> ref) {
  return mmd_from(cross_chamfer(gen, ref), gen.size(), ref.size());
}

std::vector<double> occupancy_histogram(std::span<const PointCloud> clouds, int bins) {
  if (bins < 1) fail(ErrorCode::InvalidArgument, "histogram needs at least one bin");
  const std::size_t b = static_cast<std::size_t>(bins);
  std::vector<double> hist(b * b * b, 0.0);
  std::vector<char> seen(hist.size());
  auto cell = [&](double x) { return static_cast<std::size_t>(std::clamp(static_cast<int>(std::floor((x + 0.5) * bins)), 0, bins - 1)); };
  for (const auto& c : clouds) {
    std::fill(seen.begin(), seen.end(), 0);
    for (const auto& p : c.points) {
      const std::size_t idx = (cell(p[0]) * b + cell(p[1])) * b + cell(p[2]);
      if (!seen[idx]) {
        seen[idx] = 1;
        hist[idx] += 1.0;
      }
    }
  }
  return hist;
}

double jsd_distributions(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) fail(ErrorCode::InvalidArgument, "histograms must be non-empty and equally sized");
  const double sp = std::accumulate(p.begin(), p.end(), 0.0);
  const double sq = std::accumulate(q.begin(), q.end(), 0.0);
  if (sp <= 0.0 || sq <= 0.0) fail(ErrorCode::InvalidArgument, "histogram has no mass");
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i] / sp, b = q[i] / sq, m = 0.5 * (a + b);
    if (a > 0.0) kl_p += a * std::log(a / m);
    if (b > 0.0) kl_q += b * std::log(b / m);
  }
  return std::max(0.0, 0.5 * kl_p + 0.5 * kl_q);
}

double jsd(std::span<const PointCloud> gen, std::span<const PointCloud> ref) {
  require_set(gen, "generated");
  require_set(ref, "reference");
  return jsd_distributions(occupancy_histogram(gen), occupancy_histogram(ref));
}

PointCloud normalize_to_unit_sphere(const PointCloud& cloud) {
  require_cloud(cloud);
  Vec3 c{0, 0, 0};
  for (const auto& p : cloud.points)
    for (int a = 0; a < 3; ++a) c[a] += p[a];
  for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(cloud.size());
  PointCloud out;
  out.points.reserve(cloud.size());
  double mx = 0.0;
  for (const auto& p : cloud.points) {
    out.points.push_back({p[0] - c[0], p[1] - c[1], p[2] - c[2]});
    mx = std::max(mx, std::sqrt(dist2(out.points.back(), {0, 0, 0})));
  }
  if (mx > 0.0)
    for (auto& p : out.points)
      for (auto& v : p) v /= mx;
  return out;
}

GenerativeReport generative_report(std::span<const PointCloud> gen, std::span<const PointCloud> ref) {
  std::vector<PointCloud> ng, nr;
  for (const auto& c : gen) ng.push_back(normalize_to_unit_sphere(c));
  for (const auto& c : ref) nr.push_back(normalize_to_unit_sphere(c));
  const auto d = cross_chamfer(ng, nr);
  GenerativeReport r;
  r.cov = coverage_from(d, ng.size(), nr.size());
  r.mmd = mmd_from(d, ng.size(), nr.size());
  r.jsd = jsd(gen, ref);
  r.n_gen = static_cast<int>(gen.size());
  r.n_ref = static_cast<int>(ref.size());
  return r;
}

std::string to_json(const DiversityReport& r) {
  nlohmann::json j{{"protocol", "table1"},
                   {"mean_ed", r.mean_ed},
                   {"mean_cd", r.mean_cd},
                   {"mean_emd", r.mean_emd},
                   {"cd_x100", r.mean_cd * 100.0},
                   {"emd_x100", r.mean_emd * 100.0},
                   {"pair_count", r.pair_count},
                   {"skipped", r.skipped},
                   {"emd_exact", r.emd_exact}};
  return j.dump(2);
}

std::string to_json(const GenerativeReport& r) {
  nlohmann::json j{{"protocol", "table4"},
                   {"cov", r.cov},
                   {"mmd", r.mmd},
                   {"jsd", r.jsd},
                   {"mmd_x1000", r.mmd * 1000.0},
                   {"jsd_x100", r.jsd * 100.0},
                   {"n_gen", r.n_gen},
                   {"n_ref", r.n_ref}};
  return j.dump(2);
}

}  // namespace partsynth
