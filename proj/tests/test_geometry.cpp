#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "octctx/geometry.hpp"

using namespace octctx;

TEST(Quantize, SinglePointCollapsesToOrigin) {
  RawPointCloud pc{{{0.5, 0.5, 0.5}}, "one"};
  const auto q = quantize(pc, 3);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(q.voxels[0], (Voxel{0, 0, 0}));
  EXPECT_EQ(q.origin, (Vec3{0.5, 0.5, 0.5}));
  EXPECT_GT(q.scale, 0.0);
}

TEST(Quantize, CubeCornersAtDepthOne) {
  RawPointCloud pc;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) pc.points.push_back({double(x), double(y), double(z)});
  const auto q = quantize(pc, 1);
  ASSERT_EQ(q.size(), 8u);
  std::set<Voxel> got(q.voxels.begin(), q.voxels.end());
  for (std::uint32_t x = 0; x < 2; ++x)
    for (std::uint32_t y = 0; y < 2; ++y)
      for (std::uint32_t z = 0; z < 2; ++z) EXPECT_TRUE(got.count({x, y, z}));
}

TEST(Quantize, MatchesIndependentRoundingOracle) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RawPointCloud pc;
  for (int i = 0; i < 1000; ++i) pc.points.push_back({u(rng), u(rng), u(rng)});
  const int D = 6;
  const auto q = quantize(pc, D);

  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const auto& p : pc.points)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  const double ext = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  const double s = ext / 63.0;
  std::set<std::array<long, 3>> oracle;
  for (const auto& p : pc.points) {
    std::array<long, 3> v{};
    for (int a = 0; a < 3; ++a) {
      const double t = (p[a] - lo[a]) / s;
      v[a] = static_cast<long>(std::floor(t + 0.5));  // t >= 0, so half-up == half-away
    }
    oracle.insert(v);
  }
  ASSERT_EQ(q.size(), oracle.size());
  std::size_t k = 0;
  for (const auto& v : oracle) {
    EXPECT_EQ(q.voxels[k][0], static_cast<std::uint32_t>(v[0]));
    EXPECT_EQ(q.voxels[k][1], static_cast<std::uint32_t>(v[1]));
    EXPECT_EQ(q.voxels[k][2], static_cast<std::uint32_t>(v[2]));
    ++k;
  }
}

TEST(Quantize, ZeroExtentAxisMapsToZero) {
  RawPointCloud pc{{{0, 5, 1}, {1, 5, 0}, {0.5, 5, 0.25}}, "flat"};
  const auto q = quantize(pc, 4);
  for (const auto& v : q.voxels) EXPECT_EQ(v[1], 0u);
}

TEST(Quantize, PermutationInvariant) {
  auto pc = synth(SynthKind::gaussian_clusters, 500, 3);
  const auto a = quantize(pc, 7);
  std::mt19937_64 rng(9);
  std::shuffle(pc.points.begin(), pc.points.end(), rng);
  EXPECT_TRUE(same_voxels(a, quantize(pc, 7)));
}

TEST(Quantize, Errors) {
  EXPECT_THROW(quantize(RawPointCloud{}, 4), InvalidInput);
  RawPointCloud bad{{{0, 0, 0}, {NAN, 0, 0}}, "nan"};
  EXPECT_THROW(quantize(bad, 4), InvalidInput);
  RawPointCloud inf{{{0, 0, INFINITY}}, "inf"};
  EXPECT_THROW(quantize(inf, 4), InvalidInput);
  RawPointCloud ok{{{0, 0, 0}}, "ok"};
  EXPECT_THROW(quantize(ok, 0), InvalidInput);
  EXPECT_THROW(quantize(ok, 22), InvalidInput);
}

TEST(Dequantize, AffineMap) {
  QuantizedPointCloud q;
  q.depth = 3;
  q.voxels = {{0, 0, 0}};
  q.origin = {1, 2, 3};
  q.scale = 2;
  const auto pc = dequantize(q);
  ASSERT_EQ(pc.size(), 1u);
  EXPECT_EQ(pc.points[0], (Vec3{1, 2, 3}));

  q.voxels = {{7, 7, 7}};
  const auto top = dequantize(q).points[0];
  for (int a = 0; a < 3; ++a) EXPECT_DOUBLE_EQ(top[a], q.origin[a] + 2.0 * 7.0);
}

TEST(Dequantize, RoundTripIsIdempotent) {
  for (auto kind : {SynthKind::uniform, SynthKind::sphere, SynthKind::lidar_rings}) {
    const auto pc = synth(kind, 2000, 5);
    for (int D : {1, 4, 8, 12}) {
      const auto q1 = quantize(pc, D);
      const auto q2 = quantize(dequantize(q1), D);
      EXPECT_TRUE(same_voxels(q1, q2)) << to_string(kind) << " D=" << D;
    }
  }
}

TEST(Synth, Deterministic) {
  for (auto kind : {SynthKind::uniform, SynthKind::plane, SynthKind::sphere, SynthKind::gaussian_clusters,
                    SynthKind::lidar_rings}) {
    const auto a = synth(kind, 100, 7);
    const auto b = synth(kind, 100, 7);
    EXPECT_EQ(a.points, b.points) << to_string(kind);
    EXPECT_NE(a.points, synth(kind, 100, 8).points) << to_string(kind);
  }
}

TEST(Synth, PlanePointsOnPlane) {
  const auto pc = synth(SynthKind::plane, 1000, 7);
  const auto n = synth_plane_normal(7);
  for (const auto& p : pc.points) EXPECT_LT(std::abs(p[0] * n[0] + p[1] * n[1] + p[2] * n[2]), 1e-9);
}

TEST(Synth, SphereRadiiWithinJitter) {
  SynthOptions opt;
  opt.radius = 2.0;
  for (double eps : {0.0, 0.01}) {
    opt.jitter = eps;
    const auto pc = synth(SynthKind::sphere, 1000, 1, opt);
    for (const auto& p : pc.points) {
      const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      EXPECT_LE(std::abs(r - 2.0), eps + 1e-9);
    }
  }
}

TEST(Synth, KindParsing) {
  EXPECT_EQ(parse_synth_kind("lidar_rings"), SynthKind::lidar_rings);
  EXPECT_EQ(parse_synth_kind(to_string(SynthKind::gaussian_clusters)), SynthKind::gaussian_clusters);
  EXPECT_THROW(parse_synth_kind("bogus"), InvalidInput);
  EXPECT_THROW(synth(SynthKind::uniform, 0, 1), InvalidInput);
}
