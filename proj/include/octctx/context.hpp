#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "octctx/error.hpp"
#include "octctx/octree.hpp"

namespace octctx {

struct ContextConfig {
  int window = 64;     // N slots, the last one describes the target
  int ancestors = 2;   // K ancestors per slot chain
  bool strict_level = false;  // mask predecessors from other octree levels

  int chain() const { return ancestors + 1; }
  int features_per_slot() const { return 3 * chain(); }

  void check() const {
    if (window < 1) throw ConfigError("context window must be >= 1");
    if (ancestors < 0) throw ConfigError("ancestor count must be >= 0");
  }
};

// Features of one chain entry; occupancy 0 marks padding or the unknown
// target occupancy.
struct NodeFeature {
  std::uint8_t occupancy = 0;
  std::uint8_t level = 0;
  std::uint8_t octant = 0;

  friend bool operator==(const NodeFeature&, const NodeFeature&) = default;
};

// Model input for one target node. Slot s (0..N-1) holds node i-N+1+s; the
// last slot is the target itself with its occupancy zeroed. Each slot is a
// chain of the node followed by its K ancestors, padded above the root.
// Slots without a real predecessor are zero and masked.
struct ContextWindow {
  int window = 0;
  int chain = 0;
  std::size_t target_index = 0;
  std::vector<NodeFeature> slots;  // window * chain entries
  std::vector<std::uint8_t> valid;  // window entries

  const NodeFeature& at(int slot, int depth) const {
    return slots[static_cast<std::size_t>(slot * chain + depth)];
  }
  NodeFeature& at(int slot, int depth) { return slots[static_cast<std::size_t>(slot * chain + depth)]; }

  friend bool operator==(const ContextWindow&, const ContextWindow&) = default;
};

// Chain for node `i` as seen by later nodes: the node, its parent, ... up to
// K ancestors. `hide_self` zeroes the node's own occupancy (target slot).
inline void fill_chain(const NodeSequence& seq, std::size_t i, int ancestors, bool hide_self,
                       NodeFeature* out) {
  std::uint32_t cur = static_cast<std::uint32_t>(i);
  for (int d = 0; d <= ancestors; ++d) {
    if (cur == kNoParent) {
      out[d] = {};
      continue;
    }
    const auto& n = seq.nodes[cur];
    out[d] = {(d == 0 && hide_self) ? std::uint8_t{0} : n.occupancy, n.level, n.octant};
    cur = n.parent;
  }
}

inline ContextWindow window_for(const NodeSequence& seq, std::size_t i, const ContextConfig& cfg) {
  cfg.check();
  if (i >= seq.size()) throw InvalidInput("window target index out of range");
  ContextWindow w;
  w.window = cfg.window;
  w.chain = cfg.chain();
  w.target_index = i;
  w.slots.assign(static_cast<std::size_t>(w.window * w.chain), NodeFeature{});
  w.valid.assign(static_cast<std::size_t>(w.window), 0);

  const auto target_level = seq.nodes[i].level;
  for (int s = 0; s < cfg.window - 1; ++s) {
    const auto j = static_cast<std::ptrdiff_t>(i) - (cfg.window - 1) + s;
    if (j < 0) continue;
    const auto ju = static_cast<std::size_t>(j);
    if (cfg.strict_level && seq.nodes[ju].level != target_level) continue;
    fill_chain(seq, ju, cfg.ancestors, false, &w.at(s, 0));
    w.valid[static_cast<std::size_t>(s)] = 1;
  }
  fill_chain(seq, i, cfg.ancestors, true, &w.at(cfg.window - 1, 0));
  w.valid.back() = 1;
  return w;
}

inline std::vector<ContextWindow> window_batch(const NodeSequence& seq, std::size_t begin,
                                               std::size_t end, const ContextConfig& cfg) {
  if (begin >= end) throw InvalidInput("empty window range");
  if (end > seq.size()) throw InvalidInput("window range past end of sequence");
  std::vector<ContextWindow> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(window_for(seq, i, cfg));
  return out;
}

// ---------------------------------------------------------------------------
// Debug dump: one text record per window,
//   target_index label window chain  valid[window]  (occ level octant)[window*chain]
// all whitespace separated integers on a single line. `label` is the target's
// true occupancy (1..255).

struct LabeledWindow {
  ContextWindow window;
  int label = 0;
};

inline void write_window_dump(std::ostream& out, const ContextWindow& w, int label) {
  out << w.target_index << ' ' << label << ' ' << w.window << ' ' << w.chain;
  for (auto v : w.valid) out << ' ' << int{v};
  for (const auto& f : w.slots) out << ' ' << int{f.occupancy} << ' ' << int{f.level} << ' ' << int{f.octant};
  out << '\n';
}

inline void write_window_dump(std::ostream& out, const NodeSequence& seq, const ContextConfig& cfg) {
  for (std::size_t i = 0; i < seq.size(); ++i)
    write_window_dump(out, window_for(seq, i, cfg), seq.nodes[i].occupancy);
}

inline std::vector<LabeledWindow> read_window_dump(std::istream& in) {
  std::vector<LabeledWindow> out;
  long long target = 0;
  while (in >> target) {
    LabeledWindow r;
    int window = 0, chain = 0;
    if (!(in >> r.label >> window >> chain) || window < 1 || chain < 1 || target < 0)
      throw ParseError("malformed window record header");
    if (r.label < 1 || r.label > 255) throw ParseError("window record label outside [1, 255]");
    auto& w = r.window;
    w.window = window;
    w.chain = chain;
    w.target_index = static_cast<std::size_t>(target);
    w.valid.resize(static_cast<std::size_t>(window));
    w.slots.resize(static_cast<std::size_t>(window * chain));
    for (auto& v : w.valid) {
      int x = 0;
      if (!(in >> x) || (x != 0 && x != 1)) throw ParseError("bad mask entry");
      v = static_cast<std::uint8_t>(x);
    }
    for (auto& f : w.slots) {
      int o = 0, l = 0, c = 0;
      if (!(in >> o >> l >> c) || o < 0 || o > 255 || l < 0 || l > kMaxDepth || c < 0 || c > 7)
        throw ParseError("bad slot feature");
      f = {static_cast<std::uint8_t>(o), static_cast<std::uint8_t>(l), static_cast<std::uint8_t>(c)};
    }
    out.push_back(std::move(r));
  }
  if (!in.eof()) throw ParseError("trailing garbage in window dump");
  return out;
}

}  // namespace octctx
