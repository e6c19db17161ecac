#include <gtest/gtest.h>

#include <sstream>

#include "octctx/context.hpp"
#include "octctx/geometry.hpp"
#include "octctx/octree.hpp"

using namespace octctx;

namespace {

// Depth-2 tree with voxels (0,0,0), (0,0,1), (2,0,0), (3,3,3):
//   0: root occ 1|16|128 = 145
//   1: octant 0, occ 3     2: octant 4, occ 1     3: octant 7, occ 128
NodeSequence tiny_tree() {
  QuantizedPointCloud q;
  q.depth = 2;
  q.voxels = {{0, 0, 0}, {0, 0, 1}, {2, 0, 0}, {3, 3, 3}};
  canonicalize(q.voxels);
  return build(q);
}

NodeSequence medium_tree() { return build(quantize(synth(SynthKind::sphere, 800, 4), 6)); }

}  // namespace

TEST(Window, TinyTreeHandEnumeration) {
  const auto seq = tiny_tree();
  ASSERT_EQ(seq.size(), 4u);
  ASSERT_EQ(seq.nodes[0].occupancy, 145);
  ContextConfig cfg{4, 1};
  const auto w = window_for(seq, 3, cfg);
  const NodeFeature pad{0, 0, 0};
  const NodeFeature root{145, 1, 0};
  EXPECT_EQ(w.valid, (std::vector<std::uint8_t>{1, 1, 1, 1}));
  EXPECT_EQ(w.at(0, 0), root);
  EXPECT_EQ(w.at(0, 1), pad);
  EXPECT_EQ(w.at(1, 0), (NodeFeature{3, 2, 0}));
  EXPECT_EQ(w.at(1, 1), root);
  EXPECT_EQ(w.at(2, 0), (NodeFeature{1, 2, 4}));
  EXPECT_EQ(w.at(2, 1), root);
  EXPECT_EQ(w.at(3, 0), (NodeFeature{0, 2, 7}));  // target occupancy hidden
  EXPECT_EQ(w.at(3, 1), root);
}

TEST(Window, RootIsFullyPadded) {
  const auto seq = tiny_tree();
  ContextConfig cfg{4, 2};
  const auto w = window_for(seq, 0, cfg);
  for (int s = 0; s < 3; ++s) {
    EXPECT_EQ(w.valid[static_cast<std::size_t>(s)], 0);
    for (int d = 0; d < 3; ++d) EXPECT_EQ(w.at(s, d), NodeFeature{});
  }
  EXPECT_EQ(w.valid[3], 1);
  EXPECT_EQ(w.at(3, 0), (NodeFeature{0, 1, 0}));
  EXPECT_EQ(w.at(3, 1), NodeFeature{});
}

TEST(Window, SlidingByOne) {
  const auto seq = medium_tree();
  ContextConfig cfg{16, 2};
  for (std::size_t i = 20; i < 60; ++i) {
    const auto a = window_for(seq, i, cfg);
    const auto b = window_for(seq, i + 1, cfg);
    // b's predecessor slots are a's shifted left by one, plus node i appended.
    for (int s = 0; s + 1 < cfg.window - 1; ++s)
      for (int d = 0; d < cfg.chain(); ++d) EXPECT_EQ(b.at(s, d), a.at(s + 1, d));
    EXPECT_EQ(b.at(cfg.window - 2, 0).occupancy, seq.nodes[i].occupancy);
  }
}

TEST(Window, OnlyUsesEarlierNodes) {
  // Changing the occupancy of nodes >= i must not change window i.
  const auto seq = medium_tree();
  ContextConfig cfg{32, 3};
  for (std::size_t i : {0ul, 1ul, 17ul, 100ul, seq.size() - 1}) {
    auto tampered = seq;
    for (std::size_t j = i; j < tampered.size(); ++j) tampered.nodes[j].occupancy ^= 0x5a;
    EXPECT_EQ(window_for(seq, i, cfg), window_for(tampered, i, cfg)) << i;
  }
}

TEST(Window, StrictLevelMasksOtherLevels) {
  const auto seq = medium_tree();
  ContextConfig cfg{16, 1, true};
  const std::size_t i = seq.level_begin(4) + 2;
  const auto w = window_for(seq, i, cfg);
  for (int s = 0; s < cfg.window - 1; ++s) {
    const long j = static_cast<long>(i) - (cfg.window - 1) + s;
    const bool same = j >= 0 && seq.nodes[static_cast<std::size_t>(j)].level == 4;
    EXPECT_EQ(w.valid[static_cast<std::size_t>(s)], same ? 1 : 0);
  }
}

TEST(Window, OutOfRange) {
  const auto seq = tiny_tree();
  EXPECT_THROW(window_for(seq, 4, ContextConfig{}), InvalidInput);
  EXPECT_THROW(window_for(seq, 0, ContextConfig{0, 1}), ConfigError);
}

TEST(WindowBatch, MatchesIndividualWindows) {
  const auto seq = medium_tree();
  ContextConfig cfg{8, 2};
  const auto b = window_batch(seq, 5, 8, cfg);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(b[k], window_for(seq, 5 + k, cfg));
  EXPECT_THROW(window_batch(seq, 5, 5, cfg), InvalidInput);

  std::vector<ContextWindow> chunks;
  for (std::size_t s = 0; s < seq.size(); s += 7) {
    auto part = window_batch(seq, s, std::min(seq.size(), s + 7), cfg);
    chunks.insert(chunks.end(), part.begin(), part.end());
  }
  EXPECT_EQ(chunks, window_batch(seq, 0, seq.size(), cfg));
}

TEST(WindowBatch, LevelBoundary) {
  const auto seq = medium_tree();
  ContextConfig cfg{4, 1};
  const std::size_t b = seq.level_begin(3);
  const auto ws = window_batch(seq, b - 2, b + 2, cfg);
  for (std::size_t k = 0; k < ws.size(); ++k) {
    const auto& w = ws[k];
    EXPECT_EQ(w.at(cfg.window - 1, 0).level, seq.nodes[b - 2 + k].level);
    for (int s = 0; s < cfg.window - 1; ++s) {
      const auto j = b - 2 + k - static_cast<std::size_t>(cfg.window - 1 - s);
      EXPECT_EQ(w.at(s, 0).level, seq.nodes[j].level);
    }
  }
}

TEST(WindowDump, RoundTrip) {
  const auto seq = medium_tree();
  ContextConfig cfg{6, 2};
  std::stringstream ss;
  write_window_dump(ss, seq, cfg);
  const auto recs = read_window_dump(ss);
  ASSERT_EQ(recs.size(), seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    EXPECT_EQ(recs[i].window, window_for(seq, i, cfg));
    EXPECT_EQ(recs[i].label, seq.nodes[i].occupancy);
  }
  std::istringstream bad("0 1 2 1 1 1 0 0 0 300 0 0\n");
  EXPECT_THROW(read_window_dump(bad), ParseError);
}
