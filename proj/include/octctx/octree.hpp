#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "octctx/error.hpp"
#include "octctx/geometry.hpp"

namespace octctx {

// Child octant j = 4*x_half + 2*y_half + z_half; occupancy bit j marks child j.
// The paper-style string "b7...b0" is MSB first, so "11111110" == 254.
inline constexpr int octant_of(unsigned xb, unsigned yb, unsigned zb) {
  return static_cast<int>((xb << 2) | (yb << 1) | zb);
}

inline int occupancy_code(const std::array<bool, 8>& child_mask) {
  int code = 0;
  for (int j = 0; j < 8; ++j)
    if (child_mask[static_cast<std::size_t>(j)]) code |= 1 << j;
  if (code == 0) throw InvalidInput("occupancy mask with no occupied child");
  return code;
}

inline std::array<bool, 8> occupancy_mask(int code) {
  if (code < 1 || code > 255) throw InvalidInput("occupancy code outside [1, 255]");
  std::array<bool, 8> m{};
  for (int j = 0; j < 8; ++j) m[static_cast<std::size_t>(j)] = ((code >> j) & 1) != 0;
  return m;
}

inline constexpr std::uint32_t kNoParent = std::numeric_limits<std::uint32_t>::max();

struct OctreeNode {
  std::uint8_t occupancy = 0;  // 1..255
  std::uint8_t level = 1;      // 1..depth, root is 1
  std::uint8_t octant = 0;     // position inside the parent
  std::uint32_t parent = kNoParent;

  friend bool operator==(const OctreeNode&, const OctreeNode&) = default;
};

// Breadth-first node list. level_offsets[L-1] is the first index of level L;
// the final entry is nodes.size(). A sequence may hold fewer than `depth`
// levels when only a prefix of the tree was coded.
struct NodeSequence {
  int depth = 0;
  std::vector<OctreeNode> nodes;
  std::vector<std::size_t> level_offsets;

  std::size_t size() const { return nodes.size(); }
  int num_levels() const { return static_cast<int>(level_offsets.size()) - 1; }
  std::size_t level_begin(int level) const { return level_offsets[static_cast<std::size_t>(level - 1)]; }
  std::size_t level_end(int level) const { return level_offsets[static_cast<std::size_t>(level)]; }
};

inline void validate(const NodeSequence& seq) {
  if (seq.depth < 1 || seq.depth > kMaxDepth) throw InvalidInput("sequence depth out of range");
  const int levels = seq.num_levels();
  if (levels < 1 || levels > seq.depth) throw InvalidInput("level_offsets inconsistent with depth");
  if (seq.level_offsets.front() != 0 || seq.level_offsets.back() != seq.size())
    throw InvalidInput("level_offsets do not span the node list");
  if (seq.level_begin(1) + 1 != seq.level_end(1)) throw InvalidInput("level 1 must hold exactly the root");
  const auto& root = seq.nodes.front();
  if (root.level != 1 || root.octant != 0 || root.parent != kNoParent) throw InvalidInput("malformed root");
  for (int L = 1; L <= levels; ++L) {
    std::size_t children = 0;
    for (std::size_t i = seq.level_begin(L); i < seq.level_end(L); ++i) {
      const auto& n = seq.nodes[i];
      if (n.occupancy == 0) throw InvalidInput("empty node serialized");
      if (n.level != L) throw InvalidInput("node level disagrees with level_offsets");
      if (L > 1 && (n.parent < seq.level_begin(L - 1) || n.parent >= seq.level_end(L - 1)))
        throw InvalidInput("parent index not in previous level");
      children += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(n.occupancy)));
    }
    if (L < levels && children != seq.level_end(L + 1) - seq.level_begin(L + 1))
      throw InvalidInput("child count does not match occupancy popcount");
  }
}

namespace detail {

inline std::uint64_t spread3(std::uint32_t v) {
  std::uint64_t x = v & 0x1fffff;
  x = (x | x << 32) & 0x1f00000000ffffULL;
  x = (x | x << 16) & 0x1f0000ff0000ffULL;
  x = (x | x << 8) & 0x100f00f00f00f00fULL;
  x = (x | x << 4) & 0x10c30c30c30c30c3ULL;
  x = (x | x << 2) & 0x1249249249249249ULL;
  return x;
}

// Interleaved code whose 3-bit groups are octants (x in the high bit).
inline std::uint64_t morton(const Voxel& v) {
  return spread3(v[0]) << 2 | spread3(v[1]) << 1 | spread3(v[2]);
}

}  // namespace detail

// Within a level, breadth-first order equals ascending Morton prefix order, so
// the tree falls out of one sort.
inline NodeSequence build(const QuantizedPointCloud& qpc) {
  validate(qpc);
  if (qpc.voxels.empty()) throw InvalidInput("cannot build an octree of an empty cloud");
  const int D = qpc.depth;

  std::vector<std::uint64_t> codes;
  codes.reserve(qpc.size());
  for (const auto& v : qpc.voxels) codes.push_back(detail::morton(v));
  std::sort(codes.begin(), codes.end());

  NodeSequence seq;
  seq.depth = D;
  seq.level_offsets.push_back(0);
  std::vector<std::uint64_t> prev_prefixes;  // prefixes of the previous level, in node order
  std::vector<std::uint64_t> prefixes;
  for (int L = 1; L <= D; ++L) {
    const int node_shift = 3 * (D - L + 1);  // prefix identifying a level-L node
    const int child_shift = 3 * (D - L);
    const std::size_t parent_base = L > 1 ? seq.level_begin(L - 1) : 0;
    std::size_t parent_cursor = 0;
    prefixes.clear();
    for (std::size_t k = 0; k < codes.size();) {
      const std::uint64_t prefix = node_shift >= 64 ? 0 : codes[k] >> node_shift;
      OctreeNode node;
      node.level = static_cast<std::uint8_t>(L);
      if (L > 1) {
        node.octant = static_cast<std::uint8_t>(prefix & 7);
        while (prev_prefixes[parent_cursor] != (prefix >> 3)) ++parent_cursor;
        node.parent = static_cast<std::uint32_t>(parent_base + parent_cursor);
      }
      unsigned occ = 0;
      for (; k < codes.size() && (node_shift >= 64 ? 0 : codes[k] >> node_shift) == prefix; ++k)
        occ |= 1u << ((codes[k] >> child_shift) & 7);
      node.occupancy = static_cast<std::uint8_t>(occ);
      seq.nodes.push_back(node);
      prefixes.push_back(prefix);
    }
    seq.level_offsets.push_back(seq.nodes.size());
    prev_prefixes.swap(prefixes);
  }
  return seq;
}

// First `levels` levels of a sequence; what a decoder holds after coding a
// truncated tree.
inline NodeSequence truncate(const NodeSequence& seq, int levels) {
  if (levels < 1 || levels > seq.num_levels()) throw InvalidInput("truncation level out of range");
  NodeSequence out;
  out.depth = seq.depth;
  out.level_offsets.assign(seq.level_offsets.begin(), seq.level_offsets.begin() + levels + 1);
  out.nodes.assign(seq.nodes.begin(), seq.nodes.begin() + static_cast<std::ptrdiff_t>(out.level_offsets.back()));
  return out;
}

// Cell index of every node at the resolution of its own level (2^(level-1)
// cells per axis).
inline std::vector<Voxel> node_cells(const NodeSequence& seq) {
  std::vector<Voxel> cell(seq.size(), Voxel{0, 0, 0});
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const auto& n = seq.nodes[i];
    const auto& p = cell[n.parent];
    cell[i] = {p[0] << 1 | ((n.octant >> 2) & 1u), p[1] << 1 | ((n.octant >> 1) & 1u),
               p[2] << 1 | (n.octant & 1u)};
  }
  return cell;
}

// Voxel set implied by the occupancy codes of level `levels`. At full depth
// this is exact; shallower, every occupied cell of side 2^(depth-levels)
// contributes the voxel at its center (lower corner + side/2).
inline QuantizedPointCloud reconstruct(const NodeSequence& seq, int levels) {
  if (levels < 1 || levels > seq.depth || levels > seq.num_levels())
    throw InvalidInput("reconstruct levels " + std::to_string(levels) + " out of range");
  const auto cells = node_cells(seq);
  const int side_log = seq.depth - levels;
  const std::uint32_t half = side_log > 0 ? std::uint32_t{1} << (side_log - 1) : 0;

  QuantizedPointCloud out;
  out.depth = seq.depth;
  for (std::size_t i = seq.level_begin(levels); i < seq.level_end(levels); ++i) {
    const auto& c = cells[i];
    const unsigned occ = seq.nodes[i].occupancy;
    for (unsigned j = 0; j < 8; ++j) {
      if (!((occ >> j) & 1u)) continue;
      const Voxel child{c[0] << 1 | ((j >> 2) & 1u), c[1] << 1 | ((j >> 1) & 1u), c[2] << 1 | (j & 1u)};
      out.voxels.push_back({(child[0] << side_log) + half, (child[1] << side_log) + half,
                            (child[2] << side_log) + half});
    }
  }
  canonicalize(out.voxels);
  return out;
}

}  // namespace octctx
