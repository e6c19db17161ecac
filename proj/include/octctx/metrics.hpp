#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "octctx/error.hpp"
#include "octctx/geometry.hpp"

namespace octctx {

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Static 3-d tree for exact nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> pts) : pts_(std::move(pts)) {
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    build(0, idx_.size(), 0);
  }

  // Squared distance to the nearest stored point.
  double nearest_sq(const Vec3& q) const {
    if (pts_.empty()) throw InvalidInput("nearest neighbour in an empty set");
    double best = std::numeric_limits<double>::infinity();
    search(0, idx_.size(), 0, q, best);
    return best;
  }

 private:
  void build(std::size_t lo, std::size_t hi, int axis) {
    if (hi - lo <= 1) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(lo), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::size_t a, std::size_t b) { return pts_[a][static_cast<std::size_t>(axis)] < pts_[b][static_cast<std::size_t>(axis)]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(std::size_t lo, std::size_t hi, int axis, const Vec3& q, double& best) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const auto& p = pts_[idx_[mid]];
    best = std::min(best, squared_distance(p, q));
    const double d = q[static_cast<std::size_t>(axis)] - p[static_cast<std::size_t>(axis)];
    const int next = (axis + 1) % 3;
    if (d < 0) {
      search(lo, mid, next, q, best);
      if (d * d < best) search(mid + 1, hi, next, q, best);
    } else {
      search(mid + 1, hi, next, q, best);
      if (d * d < best) search(lo, mid, next, q, best);
    }
  }

  std::vector<Vec3> pts_;
  std::vector<std::size_t> idx_;
};

// Mean over `from` of the squared distance to the nearest point of `to`.
inline double mean_nn_sq(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  if (from.empty() || to.empty()) throw InvalidInput("distance metric on an empty cloud");
  const KdTree tree(to);
  double s = 0.0;
  for (const auto& p : from) s += tree.nearest_sq(p);
  return s / static_cast<double>(from.size());
}

inline std::vector<Vec3> voxel_points(const QuantizedPointCloud& q) {
  std::vector<Vec3> out;
  out.reserve(q.size());
  for (const auto& v : q.voxels) out.push_back({double(v[0]), double(v[1]), double(v[2])});
  return out;
}

// Symmetric chamfer distance in source units: average of the two directional
// mean squared nearest-neighbour distances.
inline double chamfer(const QuantizedPointCloud& a, const QuantizedPointCloud& b) {
  if (a.voxels.empty() || b.voxels.empty()) throw InvalidInput("chamfer of an empty cloud");
  const auto pa = dequantize(a).points;
  const auto pb = dequantize(b).points;
  return 0.5 * (mean_nn_sq(pa, pb) + mean_nn_sq(pb, pa));
}

// Point-to-point PSNR in voxel units with peak 3 (2^depth - 1)^2. The error
// is the average of both directions; identical clouds give +infinity.
inline double d1_psnr(const QuantizedPointCloud& a, const QuantizedPointCloud& b, int depth) {
  if (a.voxels.empty() || b.voxels.empty()) throw InvalidInput("d1_psnr of an empty cloud");
  if (depth < 1 || depth > kMaxDepth) throw InvalidInput("depth must be in [1, 21]");
  const auto pa = voxel_points(a);
  const auto pb = voxel_points(b);
  const double mse = 0.5 * (mean_nn_sq(pa, pb) + mean_nn_sq(pb, pa));
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double peak = std::ldexp(1.0, depth) - 1.0;
  return 10.0 * std::log10(3.0 * peak * peak / mse);
}

}  // namespace octctx
