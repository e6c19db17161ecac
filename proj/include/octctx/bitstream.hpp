#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "octctx/error.hpp"
#include "octctx/geometry.hpp"

namespace octctx {

namespace le {

inline void put_u8(std::vector<std::uint8_t>& o, std::uint8_t v) { o.push_back(v); }

inline void put_u32(std::vector<std::uint8_t>& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& o, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& o, double v) { put_u64(o, std::bit_cast<std::uint64_t>(v)); }

inline void put_f32(std::vector<std::uint8_t>& o, float v) { put_u32(o, std::bit_cast<std::uint32_t>(v)); }

// Bounds-checked little-endian reader; `Err` is thrown on overrun.
template <class Err>
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > b_.size() - pos_) throw Err("unexpected end of data");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = v << 8 | s[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | s[static_cast<std::size_t>(i)];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace le

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Container layout, all fields little-endian:
//
//   offset  size  field
//        0     4  magic "OCTX"
//        4     4  version (u32) = 1
//        8     1  depth D
//        9     1  coded_levels
//       10     1  flags: bit0 residual, bit1 branch
//       11     1  reserved (0)
//       12    24  origin x, y, z (f64)
//       36     8  scale (f64)
//       44     8  input point count (u64)
//       52     8  quantized voxel count (u64)
//       60     8  coded node count (u64)
//       68     8  model digest (u64)
//       76     8  payload length in bytes (u64)
//       84     8  payload checksum, FNV-1a 64 (u64)
//       92     *  range-coded occupancy payload
struct BitstreamHeader {
  static constexpr std::array<std::uint8_t, 4> kMagic{'O', 'C', 'T', 'X'};
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kSize = 92;

  int depth = 1;
  int coded_levels = 1;
  bool residual = false;
  bool branch = false;
  Vec3 origin{0, 0, 0};
  double scale = 1.0;
  std::uint64_t point_count = 0;
  std::uint64_t voxel_count = 0;
  std::uint64_t node_count = 0;
  std::uint64_t model_digest = 0;
  std::uint64_t payload_bytes = 0;
  std::uint64_t payload_checksum = 0;

  friend bool operator==(const BitstreamHeader&, const BitstreamHeader&) = default;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> payload;

  std::size_t total_bytes() const { return BitstreamHeader::kSize + payload.size(); }
};

inline std::vector<std::uint8_t> serialize(const Bitstream& bs) {
  std::vector<std::uint8_t> o;
  o.reserve(bs.total_bytes());
  const auto& h = bs.header;
  for (std::uint8_t c : BitstreamHeader::kMagic) le::put_u8(o, c);
  le::put_u32(o, BitstreamHeader::kVersion);
  le::put_u8(o, static_cast<std::uint8_t>(h.depth));
  le::put_u8(o, static_cast<std::uint8_t>(h.coded_levels));
  le::put_u8(o, static_cast<std::uint8_t>((h.residual ? 1 : 0) | (h.branch ? 2 : 0)));
  le::put_u8(o, 0);
  for (double v : h.origin) le::put_f64(o, v);
  le::put_f64(o, h.scale);
  le::put_u64(o, h.point_count);
  le::put_u64(o, h.voxel_count);
  le::put_u64(o, h.node_count);
  le::put_u64(o, h.model_digest);
  le::put_u64(o, bs.payload.size());
  le::put_u64(o, fnv1a64(bs.payload));
  o.insert(o.end(), bs.payload.begin(), bs.payload.end());
  return o;
}

// Parses only the fixed header; usable before any payload is inspected.
inline BitstreamHeader parse_header(std::span<const std::uint8_t> bytes) {
  le::Reader<CorruptStream> r(bytes);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), BitstreamHeader::kMagic.begin()))
    throw CorruptStream("bad magic");
  if (r.u32() != BitstreamHeader::kVersion) throw CorruptStream("unsupported version");
  BitstreamHeader h;
  h.depth = r.u8();
  h.coded_levels = r.u8();
  const auto flags = r.u8();
  if (r.u8() != 0 || (flags & ~3u) != 0) throw CorruptStream("reserved bits set");
  h.residual = (flags & 1) != 0;
  h.branch = (flags & 2) != 0;
  for (auto& v : h.origin) v = r.f64();
  h.scale = r.f64();
  h.point_count = r.u64();
  h.voxel_count = r.u64();
  h.node_count = r.u64();
  h.model_digest = r.u64();
  h.payload_bytes = r.u64();
  h.payload_checksum = r.u64();
  if (h.depth < 1 || h.depth > kMaxDepth || h.coded_levels < 1 || h.coded_levels > h.depth)
    throw CorruptStream("depth fields out of range");
  if (!(h.scale > 0.0) || !std::isfinite(h.scale)) throw CorruptStream("bad scale");
  return h;
}

inline Bitstream parse(std::span<const std::uint8_t> bytes) {
  Bitstream bs;
  bs.header = parse_header(bytes);
  if (bytes.size() - BitstreamHeader::kSize != bs.header.payload_bytes)
    throw CorruptStream("payload length does not match header");
  bs.payload.assign(bytes.begin() + BitstreamHeader::kSize, bytes.end());
  if (fnv1a64(bs.payload) != bs.header.payload_checksum) throw CorruptStream("payload checksum mismatch");
  return bs;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidInput("write failed for '" + path + "'");
}

}  // namespace octctx
