#include "partsynth/voxel_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>

#include "marching_cubes_table.hpp"
#include "partsynth/error.hpp"

namespace partsynth {

namespace {

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

void require_resolution(int resolution) {
  if (resolution <= 0) {
    fail(ErrorCode::InvalidArgument, "voxel resolution must be positive, got " + std::to_string(resolution));
  }
}

// Builds an R^3 grid whose voxel at center c holds field(c).
template <typename Field>
VoxelGrid tabulate(int resolution, Field&& field) {
  VoxelGrid out(resolution);
  auto values = out.values();
  std::size_t n = 0;
  for (int i = 0; i < resolution; ++i) {
    const double x = VoxelGrid::center(i, resolution);
    for (int j = 0; j < resolution; ++j) {
      const double y = VoxelGrid::center(j, resolution);
      for (int k = 0; k < resolution; ++k) {
        const double z = VoxelGrid::center(k, resolution);
        values[n++] = static_cast<float>(std::clamp(field(Vec3{x, y, z}), 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace

VoxelGrid::VoxelGrid(int resolution, float fill) : resolution_(resolution) {
  require_resolution(resolution);
  if (!(fill >= 0.0f && fill <= 1.0f)) fail(ErrorCode::InvalidArgument, "occupancy fill must lie in [0, 1]");
  values_.assign(static_cast<std::size_t>(resolution) * resolution * resolution, fill);
}

VoxelGrid::VoxelGrid(int resolution, std::vector<float> values)
    : resolution_(resolution), values_(std::move(values)) {
  require_resolution(resolution);
  const auto expected = static_cast<std::size_t>(resolution) * resolution * resolution;
  if (values_.size() != expected) {
    fail(ErrorCode::InvalidArgument,
         "expected " + std::to_string(expected) + " voxel values, got " + std::to_string(values_.size()));
  }
  for (float v : values_) {
    if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorCode::InvalidArgument, "occupancy values must lie in [0, 1]");
  }
}

std::size_t VoxelGrid::count_occupied(float threshold) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(values_.begin(), values_.end(), [threshold](float v) { return v >= threshold; }));
}

VoxelGrid VoxelGrid::thresholded(float threshold) const {
  VoxelGrid out = *this;
  for (float& v : out.values_) v = v >= threshold ? 1.0f : 0.0f;
  return out;
}

void AffineTransform::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    fail(ErrorCode::InvalidTransform, "affine scale must be positive, got " + std::to_string(scale));
  }
  for (double t : translation) {
    if (!std::isfinite(t)) fail(ErrorCode::InvalidTransform, "affine translation must be finite");
  }
}

AffineTransform AffineTransform::after(const AffineTransform& first) const {
  AffineTransform out;
  out.scale = scale * first.scale;
  for (int a = 0; a < 3; ++a) out.translation[a] = scale * first.translation[a] + translation[a];
  return out;
}

AffineTransform AffineTransform::inverse() const {
  validate();
  AffineTransform out;
  out.scale = 1.0 / scale;
  for (int a = 0; a < 3; ++a) out.translation[a] = -translation[a] / scale;
  return out;
}

bool TriangleMesh::valid() const noexcept {
  const auto v = static_cast<std::int64_t>(vertices.size());
  for (const auto& f : faces) {
    for (auto idx : f) {
      if (idx < 0 || idx >= v) return false;
    }
    if (f[0] == f[1] && f[1] == f[2]) return false;
  }
  return true;
}

double TriangleMesh::surface_area() const noexcept {
  double total = 0.0;
  for (const auto& f : faces) {
    total += 0.5 * norm(cross(sub(vertices[f[1]], vertices[f[0]]), sub(vertices[f[2]], vertices[f[0]])));
  }
  return total;
}

bool TriangleMesh::watertight() const {
  if (faces.empty()) return false;
  std::map<std::pair<std::int32_t, std::int32_t>, int> edge_use;
  for (const auto& f : faces) {
    for (int e = 0; e < 3; ++e) {
      auto a = f[e];
      auto b = f[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      ++edge_use[{a, b}];
    }
  }
  return std::all_of(edge_use.begin(), edge_use.end(), [](const auto& kv) { return kv.second == 2; });
}

bool TriangleMesh::contains(const Vec3& p) const {
  // Cast along a fixed irrational-ish direction to avoid grazing edges.
  const Vec3 dir{0.5773502691896258, 0.5773502691896257 + 1e-3, 0.5773502691896259 - 2e-3};
  int hits = 0;
  for (const auto& f : faces) {
    const Vec3& a = vertices[f[0]];
    const Vec3 e1 = sub(vertices[f[1]], a);
    const Vec3 e2 = sub(vertices[f[2]], a);
    const Vec3 h = cross(dir, e2);
    const double det = e1[0] * h[0] + e1[1] * h[1] + e1[2] * h[2];
    if (std::abs(det) < 1e-14) continue;
    const double inv = 1.0 / det;
    const Vec3 s = sub(p, a);
    const double u = inv * (s[0] * h[0] + s[1] * h[1] + s[2] * h[2]);
    if (u < 0.0 || u > 1.0) continue;
    const Vec3 q = cross(s, e1);
    const double v = inv * (dir[0] * q[0] + dir[1] * q[1] + dir[2] * q[2]);
    if (v < 0.0 || u + v > 1.0) continue;
    const double t = inv * (e2[0] * q[0] + e2[1] * q[1] + e2[2] * q[2]);
    if (t > 1e-12) ++hits;
  }
  return hits % 2 == 1;
}

double sample_trilinear(const VoxelGrid& grid, const Vec3& p) noexcept {
  const int r = grid.resolution();
  double u[3];
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    u[a] = (p[a] + 0.5) * r - 0.5;
    const double fl = std::floor(u[a]);
    // Far outside: every tap is out of range.
    if (fl < -2.0 || fl > r + 1.0) return 0.0;
    base[a] = static_cast<int>(fl);
    frac[a] = u[a] - fl;
  }
  double acc = 0.0;
  for (int di = 0; di < 2; ++di) {
    const int i = base[0] + di;
    if (i < 0 || i >= r) continue;
    const double wi = di ? frac[0] : 1.0 - frac[0];
    for (int dj = 0; dj < 2; ++dj) {
      const int j = base[1] + dj;
      if (j < 0 || j >= r) continue;
      const double wj = dj ? frac[1] : 1.0 - frac[1];
      for (int dk = 0; dk < 2; ++dk) {
        const int k = base[2] + dk;
        if (k < 0 || k >= r) continue;
        const double wk = dk ? frac[2] : 1.0 - frac[2];
        acc += wi * wj * wk * grid(i, j, k);
      }
    }
  }
  return acc;
}

VoxelGrid apply_affine(const VoxelGrid& grid, const AffineTransform& xf) {
  xf.validate();
  if (xf == AffineTransform::identity()) return grid;
  const double inv = 1.0 / xf.scale;
  return tabulate(grid.resolution(), [&](const Vec3& c) {
    return sample_trilinear(grid, {(c[0] - xf.translation[0]) * inv, (c[1] - xf.translation[1]) * inv,
                                   (c[2] - xf.translation[2]) * inv});
  });
}

VoxelGrid scale_axes(const VoxelGrid& grid, const Vec3& scales) {
  for (double s : scales) {
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::InvalidTransform, "axis scales must be positive");
  }
  if (scales == Vec3{1.0, 1.0, 1.0}) return grid;
  return tabulate(grid.resolution(), [&](const Vec3& c) {
    return sample_trilinear(grid, {c[0] / scales[0], c[1] / scales[1], c[2] / scales[2]});
  });
}

VoxelGrid resample(const VoxelGrid& grid, int resolution) {
  if (resolution == grid.resolution()) return grid;
  return tabulate(resolution, [&](const Vec3& c) { return sample_trilinear(grid, c); });
}

void require_same_resolution(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.resolution() != b.resolution()) {
    fail(ErrorCode::ResolutionMismatch, "resolution mismatch: " + std::to_string(a.resolution()) + " vs " +
                                            std::to_string(b.resolution()));
  }
}

VoxelGrid compose_assembly(std::span<const VoxelGrid> parts) {
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "compose_assembly needs at least one part");
  VoxelGrid out = parts.front();
  for (const auto& part : parts.subspan(1)) {
    require_same_resolution(out, part);
    auto dst = out.values();
    auto src = part.values();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] = std::max(dst[n], src[n]);
  }
  return out;
}

VoxelGrid compose_assembly(const VoxelGrid& a, const VoxelGrid& b) {
  const VoxelGrid pair[] = {a, b};
  return compose_assembly(pair);
}

PointCloud voxel_to_pointcloud(const VoxelGrid& grid, float threshold) {
  PointCloud cloud;
  const int r = grid.resolution();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      for (int k = 0; k < r; ++k) {
        if (grid(i, j, k) >= threshold) {
          cloud.points.push_back({VoxelGrid::center(i, r), VoxelGrid::center(j, r), VoxelGrid::center(k, r)});
        }
      }
    }
  }
  if (cloud.empty()) fail(ErrorCode::EmptyShape, "no voxel reaches the occupancy threshold");

  Vec3 centroid{0.0, 0.0, 0.0};
  for (const auto& p : cloud.points) {
    for (int a = 0; a < 3; ++a) centroid[a] += p[a];
  }
  for (double& c : centroid) c /= static_cast<double>(cloud.size());
  double max_norm = 0.0;
  for (auto& p : cloud.points) {
    p = sub(p, centroid);
    max_norm = std::max(max_norm, norm(p));
  }
  if (max_norm > 0.0) {
    for (auto& p : cloud.points) {
      for (double& c : p) c /= max_norm;
    }
  }
  return cloud;
}

PointCloud sample_mesh_points(const TriangleMesh& mesh, int n, std::uint64_t seed) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "sample count must be at least 1");
  if (!mesh.valid()) fail(ErrorCode::InvalidArgument, "mesh has out-of-range or degenerate faces");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    total += 0.5 * norm(cross(sub(mesh.vertices[f[1]], mesh.vertices[f[0]]),
                              sub(mesh.vertices[f[2]], mesh.vertices[f[0]])));
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) fail(ErrorCode::DegenerateMesh, "mesh has zero surface area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const double pick = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    const double wa = 1.0 - r1;
    const double wb = r1 * (1.0 - r2);
    const double wc = r1 * r2;
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      p[a] = wa * mesh.vertices[f[0]][a] + wb * mesh.vertices[f[1]][a] + wc * mesh.vertices[f[2]][a];
    }
    cloud.points.push_back(p);
  }
  return cloud;
}

TriangleMesh marching_cubes(const VoxelGrid& grid, double iso) {
  const int r = grid.resolution();
  const auto [mn, mx] = std::minmax_element(grid.values().begin(), grid.values().end());
  if (!(*mn < iso && *mx >= iso)) fail(ErrorCode::EmptySurface, "grid has no iso-surface crossing");

  // Lattice points are voxel centers, padded by one empty layer on each side.
  auto value = [&](int i, int j, int k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= r || j >= r || k >= r) return 0.0;
    return grid(i, j, k);
  };
  static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                        {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                       {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

  TriangleMesh mesh;
  // Vertices are shared through the lattice edge they lie on.
  std::unordered_map<std::uint64_t, std::int32_t> edge_vertex;
  const std::uint64_t span = static_cast<std::uint64_t>(r) + 2;
  auto lattice_key = [&](int i, int j, int k) {
    return ((static_cast<std::uint64_t>(i + 1) * span) + static_cast<std::uint64_t>(j + 1)) * span +
           static_cast<std::uint64_t>(k + 1);
  };

  for (int i = -1; i < r; ++i) {
    for (int j = -1; j < r; ++j) {
      for (int k = -1; k < r; ++k) {
        double corner[8];
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          corner[c] = value(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
          if (corner[c] < iso) config |= 1 << c;
        }
        if (config == 0 || config == 255) continue;

        std::int32_t ids[12];
        std::fill(std::begin(ids), std::end(ids), -1);
        const auto& tris = detail::kMarchingCubesTriangles[static_cast<std::size_t>(config)];
        for (int t = 0; tris[t] != -1; ++t) {
          const int e = tris[t];
          if (ids[e] >= 0) continue;
          int a = kEdge[e][0];
          int b = kEdge[e][1];
          const auto key_a = lattice_key(i + kCorner[a][0], j + kCorner[a][1], k + kCorner[a][2]);
          const auto key_b = lattice_key(i + kCorner[b][0], j + kCorner[b][1], k + kCorner[b][2]);
          const auto key = std::min(key_a, key_b) * 3 +
                           static_cast<std::uint64_t>(kCorner[a][0] != kCorner[b][0]   ? 0
                                                      : kCorner[a][1] != kCorner[b][1] ? 1
                                                                                       : 2);
          auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<std::int32_t>(mesh.vertices.size()));
          if (inserted) {
            if (key_a > key_b) std::swap(a, b);
            const double va = corner[a];
            const double vb = corner[b];
            const double w = (iso - va) / (vb - va);
            Vec3 p;
            for (int ax = 0; ax < 3; ++ax) {
              const int ia = (ax == 0 ? i : ax == 1 ? j : k) + kCorner[a][ax];
              const int ib = (ax == 0 ? i : ax == 1 ? j : k) + kCorner[b][ax];
              const double ca = VoxelGrid::center(ia, r);
              const double cb = VoxelGrid::center(ib, r);
              p[ax] = ca + w * (cb - ca);
            }
            mesh.vertices.push_back(p);
          }
          ids[e] = it->second;
        }
        for (int t = 0; tris[t] != -1; t += 3) {
          // With the inside bit set below iso, table order is already CCW from outside.
          mesh.faces.push_back({ids[tris[t]], ids[tris[t + 1]], ids[tris[t + 2]]});
        }
      }
    }
  }
  return mesh;
}

Bounds occupied_bounds(const VoxelGrid& grid, float threshold) {
  const int r = grid.resolution();
  int lo[3] = {r, r, r};
  int hi[3] = {-1, -1, -1};
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      for (int k = 0; k < r; ++k) {
        if (grid(i, j, k) < threshold) continue;
        const int idx[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], idx[a]);
          hi[a] = std::max(hi[a], idx[a]);
        }
      }
    }
  }
  if (hi[0] < 0) fail(ErrorCode::EmptyShape, "grid has no occupied voxel");
  Bounds b;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = static_cast<double>(lo[a]) / r - 0.5;
    b.hi[a] = static_cast<double>(hi[a] + 1) / r - 0.5;
  }
  return b;
}

NormalizedPart normalize_part(const VoxelGrid& grid, float threshold) {
  const Bounds b = occupied_bounds(grid, threshold);
  AffineTransform xf;
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) {
    xf.translation[a] = 0.5 * (b.lo[a] + b.hi[a]);
    extent = std::max(extent, b.hi[a] - b.lo[a]);
  }
  xf.scale = extent / kNormalizedExtent;
  return {apply_affine(grid, xf.inverse()), xf};
}

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b, float threshold) {
  require_same_resolution(a, b);
  std::size_t inter = 0;
  std::size_t uni = 0;
  auto va = a.values();
  auto vb = b.values();
  for (std::size_t n = 0; n < va.size(); ++n) {
    const bool in_a = va[n] >= threshold;
    const bool in_b = vb[n] >= threshold;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace partsynth
