#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "octctx/bitstream.hpp"
#include "octctx/checkpoint.hpp"
#include "octctx/error.hpp"
#include "octctx/geometry.hpp"
#include "octctx/model.hpp"
#include "octctx/octree.hpp"
#include "octctx/range_coder.hpp"

namespace octctx {

struct EncodeReport {
  std::uint64_t total_bits = 0;    // header + payload
  std::uint64_t header_bits = 0;
  std::uint64_t payload_bits = 0;
  std::uint64_t point_count = 0;
  std::uint64_t voxel_count = 0;
  std::uint64_t node_count = 0;
  double bpip = 0.0;
  double ideal_bits = 0.0;  // model cross-entropy of the coded nodes
  double table_bits = 0.0;  // same, under the quantized frequency tables
  std::vector<double> per_level_bits;  // table bits split by level
  double wall_seconds = 0.0;

  // Timing is optional so report files stay byte-identical across runs.
  std::string to_text(bool with_timing = true) const {
    std::ostringstream o;
    o.precision(17);
    o << "total_bits = " << total_bits << "\n"
      << "header_bits = " << header_bits << "\n"
      << "payload_bits = " << payload_bits << "\n"
      << "point_count = " << point_count << "\n"
      << "voxel_count = " << voxel_count << "\n"
      << "node_count = " << node_count << "\n"
      << "bpip = " << bpip << "\n"
      << "ideal_bits = " << ideal_bits << "\n"
      << "table_bits = " << table_bits << "\n";
    for (std::size_t L = 0; L < per_level_bits.size(); ++L)
      o << "level_" << (L + 1) << "_bits = " << per_level_bits[L] << "\n";
    if (with_timing) o << "wall_seconds = " << wall_seconds << "\n";
    return o.str();
  }
};

inline double bpip(double total_bits, std::uint64_t point_count) {
  if (point_count == 0) throw InvalidInput("bpip of a cloud with zero points");
  return total_bits / static_cast<double>(point_count);
}

// Sees every frequency table in coding order; used to check that encoder and
// decoder agree.
using TableObserver = std::function<void(std::size_t node, const FreqTable&)>;

struct EncodeResult {
  Bitstream bitstream;
  EncodeReport report;
};

inline void check_codable(const ContextModel& model, int depth, int coded_levels) {
  if (depth < 1 || depth > kMaxDepth) throw InvalidInput("depth must be in [1, 21]");
  if (coded_levels < 1 || coded_levels > depth) throw InvalidInput("coded_levels must be in [1, depth]");
  if (coded_levels > model.config().max_level)
    throw ConfigError("model max_level " + std::to_string(model.config().max_level) + " below coded_levels " +
                      std::to_string(coded_levels));
}

inline EncodeResult encode(const QuantizedPointCloud& qpc, std::uint64_t point_count, int coded_levels,
                           const ContextModel& model, const TableObserver& observer = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  check_codable(model, qpc.depth, coded_levels);
  const auto seq = truncate(build(qpc), coded_levels);

  InferenceSession session(model);
  RangeEncoder enc;
  EncodeReport rep;
  rep.per_level_bits.assign(static_cast<std::size_t>(coded_levels), 0.0);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto out = session.predict(seq, i);
    const auto table = quantize_dist(out.dist);
    if (observer) observer(i, table);
    const int occ = seq.nodes[i].occupancy;
    enc.encode(table, occ - 1);
    const double tb = -std::log2(static_cast<double>(table.freq[static_cast<std::size_t>(occ - 1)]) / table.total());
    rep.table_bits += tb;
    rep.per_level_bits[seq.nodes[i].level - 1u] += tb;
    rep.ideal_bits += loss_ce(out.dist, occ);
    session.commit(seq, i);
  }

  EncodeResult r;
  r.bitstream.payload = enc.finish();
  auto& h = r.bitstream.header;
  h.depth = qpc.depth;
  h.coded_levels = coded_levels;
  h.residual = model.config().residual;
  h.branch = model.config().branch;
  h.origin = qpc.origin;
  h.scale = qpc.scale;
  h.point_count = point_count;
  h.voxel_count = qpc.size();
  h.node_count = seq.size();
  h.model_digest = checkpoint::digest(model);
  h.payload_bytes = r.bitstream.payload.size();
  h.payload_checksum = fnv1a64(r.bitstream.payload);

  rep.header_bits = BitstreamHeader::kSize * 8;
  rep.payload_bits = r.bitstream.payload.size() * 8;
  rep.total_bits = rep.header_bits + rep.payload_bits;
  rep.point_count = point_count;
  rep.voxel_count = qpc.size();
  rep.node_count = seq.size();
  rep.bpip = bpip(static_cast<double>(rep.total_bits), point_count);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.report = rep;
  return r;
}

inline EncodeResult encode(const RawPointCloud& pc, int depth, int coded_levels, const ContextModel& model,
                           const TableObserver& observer = {}) {
  return encode(quantize(pc, depth), pc.points.size(), coded_levels, model, observer);
}

// Rebuilds the tree while decoding: each node's children are appended as soon
// as its occupancy is known, so the node list is always the breadth-first
// prefix the encoder saw.
inline NodeSequence decode_sequence(const Bitstream& bs, const ContextModel& model,
                                    const TableObserver& observer = {}) {
  const auto& h = bs.header;
  if (h.model_digest != checkpoint::digest(model))
    throw ModelMismatch("bitstream was produced by a different model");
  check_codable(model, h.depth, h.coded_levels);
  if (h.node_count == 0) throw CorruptStream("header declares zero nodes");
  if (h.payload_bytes != bs.payload.size() || h.payload_checksum != fnv1a64(bs.payload))
    throw CorruptStream("payload does not match header length/checksum");

  NodeSequence seq;
  seq.depth = h.depth;
  seq.nodes.push_back(OctreeNode{});
  InferenceSession session(model);
  RangeDecoder dec(bs.payload);
  for (std::size_t i = 0; i < seq.nodes.size(); ++i) {
    const auto out = session.predict(seq, i);
    const auto table = quantize_dist(out.dist);
    if (observer) observer(i, table);
    const int occ = dec.decode(table) + 1;
    seq.nodes[i].occupancy = static_cast<std::uint8_t>(occ);
    session.commit(seq, i);
    const auto level = seq.nodes[i].level;
    if (level < h.coded_levels) {
      for (int j = 0; j < 8; ++j) {
        if (!((occ >> j) & 1)) continue;
        OctreeNode child;
        child.level = static_cast<std::uint8_t>(level + 1);
        child.octant = static_cast<std::uint8_t>(j);
        child.parent = static_cast<std::uint32_t>(i);
        seq.nodes.push_back(child);
      }
    }
    if (seq.nodes.size() > h.node_count) throw CorruptStream("more nodes than the header declares");
  }
  if (seq.nodes.size() != h.node_count) throw CorruptStream("fewer nodes than the header declares");
  if (!dec.exhausted()) throw CorruptStream("trailing payload bytes");

  seq.level_offsets.assign(1, 0);
  for (int L = 1; L <= h.coded_levels; ++L) {
    std::size_t e = seq.level_offsets.back();
    while (e < seq.size() && seq.nodes[e].level == L) ++e;
    seq.level_offsets.push_back(e);
  }
  return seq;
}

inline QuantizedPointCloud decode(const Bitstream& bs, const ContextModel& model, const TableObserver& observer = {}) {
  const auto seq = decode_sequence(bs, model, observer);
  auto qpc = reconstruct(seq, bs.header.coded_levels);
  qpc.origin = bs.header.origin;
  qpc.scale = bs.header.scale;
  if (bs.header.coded_levels == bs.header.depth && qpc.size() != bs.header.voxel_count)
    throw CorruptStream("decoded voxel count disagrees with header");
  return qpc;
}

inline QuantizedPointCloud decode(std::span<const std::uint8_t> bytes, const ContextModel& model) {
  // Header first: a model mismatch is reported before the payload is touched.
  const auto h = parse_header(bytes);
  if (h.model_digest != checkpoint::digest(model))
    throw ModelMismatch("bitstream was produced by a different model");
  return decode(parse(bytes), model);
}

}  // namespace octctx
