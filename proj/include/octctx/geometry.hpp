#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "octctx/error.hpp"

namespace octctx {

using Vec3 = std::array<double, 3>;
using Voxel = std::array<std::uint32_t, 3>;

inline constexpr int kMaxDepth = 21;

struct RawPointCloud {
  std::vector<Vec3> points;
  std::string source_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// Integer voxel grid at `depth` bits per axis. `voxels` is kept sorted and
// unique so two clouds compare equal exactly when their voxel sets do.
// Source coordinates are recovered as origin + scale * voxel.
struct QuantizedPointCloud {
  int depth = 1;
  std::vector<Voxel> voxels;
  Vec3 origin{0.0, 0.0, 0.0};
  double scale = 1.0;

  std::size_t size() const { return voxels.size(); }
  std::uint32_t grid_max() const { return (std::uint32_t{1} << depth) - 1; }
};

inline bool same_voxels(const QuantizedPointCloud& a, const QuantizedPointCloud& b) {
  return a.depth == b.depth && a.voxels == b.voxels;
}

// Sorts and deduplicates in place; the canonical voxel-set form.
inline void canonicalize(std::vector<Voxel>& voxels) {
  std::sort(voxels.begin(), voxels.end());
  voxels.erase(std::unique(voxels.begin(), voxels.end()), voxels.end());
}

inline void validate(const QuantizedPointCloud& q) {
  if (q.depth < 1 || q.depth > kMaxDepth)
    throw InvalidInput("depth " + std::to_string(q.depth) + " outside [1, 21]");
  if (!(q.scale > 0.0) || !std::isfinite(q.scale))
    throw InvalidInput("scale must be positive and finite");
  const auto lim = q.grid_max();
  for (const auto& v : q.voxels)
    if (v[0] > lim || v[1] > lim || v[2] > lim)
      throw InvalidInput("voxel coordinate outside [0, 2^depth)");
  if (!std::is_sorted(q.voxels.begin(), q.voxels.end()) ||
      std::adjacent_find(q.voxels.begin(), q.voxels.end()) != q.voxels.end())
    throw InvalidInput("voxel set is not canonical (sorted, unique)");
}

inline QuantizedPointCloud quantize(const RawPointCloud& pc, int depth) {
  if (depth < 1 || depth > kMaxDepth)
    throw InvalidInput("depth " + std::to_string(depth) + " outside [1, 21]");
  if (pc.empty()) throw InvalidInput("empty point cloud");

  Vec3 lo = pc.points.front();
  Vec3 hi = lo;
  for (const auto& p : pc.points) {
    for (int a = 0; a < 3; ++a) {
      if (!std::isfinite(p[a])) throw InvalidInput("non-finite coordinate");
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  const double grid = static_cast<double>((std::uint64_t{1} << depth) - 1);

  QuantizedPointCloud out;
  out.depth = depth;
  out.origin = lo;
  // A zero-extent cloud collapses to voxel 0; any positive scale works.
  out.scale = extent > 0.0 ? extent / grid : 1.0;
  out.voxels.reserve(pc.size());
  for (const auto& p : pc.points) {
    Voxel v{};
    for (int a = 0; a < 3; ++a) {
      const double t = std::round((p[a] - lo[a]) / out.scale);  // half away from zero
      v[a] = static_cast<std::uint32_t>(std::clamp(t, 0.0, grid));
    }
    out.voxels.push_back(v);
  }
  canonicalize(out.voxels);
  return out;
}

inline RawPointCloud dequantize(const QuantizedPointCloud& q) {
  RawPointCloud out;
  out.source_id = "dequantized";
  out.points.reserve(q.size());
  for (const auto& v : q.voxels)
    out.points.push_back({q.origin[0] + q.scale * v[0], q.origin[1] + q.scale * v[1],
                          q.origin[2] + q.scale * v[2]});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators. Desk-scale stand-ins for object scans and LiDAR
// sweeps. All draw from one std::mt19937_64 seeded with `seed`.

enum class SynthKind { uniform, plane, sphere, gaussian_clusters, lidar_rings };

inline SynthKind parse_synth_kind(std::string_view s) {
  if (s == "uniform") return SynthKind::uniform;
  if (s == "plane") return SynthKind::plane;
  if (s == "sphere") return SynthKind::sphere;
  if (s == "gaussian_clusters") return SynthKind::gaussian_clusters;
  if (s == "lidar_rings") return SynthKind::lidar_rings;
  throw InvalidInput("unknown synth kind '" + std::string(s) + "'");
}

inline std::string_view to_string(SynthKind k) {
  switch (k) {
    case SynthKind::uniform: return "uniform";
    case SynthKind::plane: return "plane";
    case SynthKind::sphere: return "sphere";
    case SynthKind::gaussian_clusters: return "gaussian_clusters";
    case SynthKind::lidar_rings: return "lidar_rings";
  }
  return "unknown";
}

struct SynthOptions {
  double jitter = 0.0;       // additive noise amplitude, applied along the surface normal
  double radius = 1.0;       // sphere radius
  int clusters = 8;          // gaussian_clusters
  double cluster_sigma = 0.05;
  int beams = 32;            // lidar_rings
};

namespace detail {

inline Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v{g(rng), g(rng), g(rng)};
    const double n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if (n2 > 1e-12) return normalized(v);
  }
}

}  // namespace detail

// Normal of the plane synth(plane, n, seed) samples from. The plane passes
// through the origin; in-plane coordinates are uniform in [-1, 1]^2.
inline Vec3 synth_plane_normal(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return detail::random_unit(rng);
}

inline RawPointCloud synth(SynthKind kind, std::size_t n, std::uint64_t seed,
                           const SynthOptions& opt = {}) {
  if (n < 1) throw InvalidInput("synth needs n >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> jit(-opt.jitter, opt.jitter);

  RawPointCloud pc;
  pc.source_id = std::string(to_string(kind)) + ":" + std::to_string(n) + ":" +
                 std::to_string(seed);
  pc.points.reserve(n);

  switch (kind) {
    case SynthKind::uniform:
      for (std::size_t i = 0; i < n; ++i) pc.points.push_back({unit(rng), unit(rng), unit(rng)});
      break;

    case SynthKind::plane: {
      const Vec3 nrm = detail::random_unit(rng);
      const Vec3 helper = std::abs(nrm[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
      const Vec3 e1 = detail::normalized(detail::cross(nrm, helper));
      const Vec3 e2 = detail::cross(nrm, e1);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = unit(rng), v = unit(rng);
        const double h = opt.jitter > 0.0 ? jit(rng) : 0.0;
        pc.points.push_back({u * e1[0] + v * e2[0] + h * nrm[0],
                             u * e1[1] + v * e2[1] + h * nrm[1],
                             u * e1[2] + v * e2[2] + h * nrm[2]});
      }
      break;
    }

    case SynthKind::sphere:
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 d = detail::random_unit(rng);
        const double r = opt.radius + (opt.jitter > 0.0 ? jit(rng) : 0.0);
        pc.points.push_back({r * d[0], r * d[1], r * d[2]});
      }
      break;

    case SynthKind::gaussian_clusters: {
      const int k = std::max(1, opt.clusters);
      std::vector<Vec3> centers;
      for (int c = 0; c < k; ++c) centers.push_back({unit(rng), unit(rng), unit(rng)});
      std::normal_distribution<double> g(0.0, opt.cluster_sigma);
      std::uniform_int_distribution<int> pick(0, k - 1);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& c = centers[static_cast<std::size_t>(pick(rng))];
        pc.points.push_back({c[0] + g(rng), c[1] + g(rng), c[2] + g(rng)});
      }
      break;
    }

    case SynthKind::lidar_rings: {
      // Spinning sensor 1.7 units above a ground plane, surrounded by a wall
      // at range 40. Beam elevations span [-25, +3] degrees.
      const double height = 1.7, wall = 40.0;
      const int beams = std::max(1, opt.beams);
      std::uniform_real_distribution<double> azimuth(0.0, 2.0 * std::numbers::pi);
      std::uniform_int_distribution<int> pick(0, beams - 1);
      for (std::size_t i = 0; i < n; ++i) {
        const int b = pick(rng);
        const double elev_deg =
            beams == 1 ? -10.0 : -25.0 + 28.0 * static_cast<double>(b) / (beams - 1);
        const double elev = elev_deg * std::numbers::pi / 180.0;
        const double th = azimuth(rng);
        double range = wall;
        if (elev < 0.0) range = std::min(wall, height / std::tan(-elev));
        range += opt.jitter > 0.0 ? jit(rng) : 0.0;
        const double z = range >= wall ? wall * std::tan(elev) : -height;
        pc.points.push_back({range * std::cos(th), range * std::sin(th), z});
      }
      break;
    }
  }
  return pc;
}

}  // namespace octctx
