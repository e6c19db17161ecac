#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "octctx/bitstream.hpp"
#include "octctx/error.hpp"
#include "octctx/model.hpp"
#include "octctx/params.hpp"

// Checkpoint layout (little-endian):
//   magic "OCKP", u32 version = 1,
//   u32 config length, config text (ModelConfig::to_text),
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u32 dims[rank], f32 values[prod(dims)]
// Adam moments are not stored; a checkpoint is an inference artifact.
namespace octctx::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

inline std::vector<std::uint8_t> serialize(const ContextModel& model) {
  std::vector<std::uint8_t> o{'O', 'C', 'K', 'P'};
  le::put_u32(o, kVersion);
  const auto text = model.config().to_text();
  le::put_u32(o, static_cast<std::uint32_t>(text.size()));
  o.insert(o.end(), text.begin(), text.end());
  le::put_u32(o, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    le::put_u32(o, static_cast<std::uint32_t>(p.name.size()));
    o.insert(o.end(), p.name.begin(), p.name.end());
    le::put_u32(o, static_cast<std::uint32_t>(p.value.shape().size()));
    for (auto d : p.value.shape()) le::put_u32(o, static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) le::put_f32(o, static_cast<float>(v));
  }
  return o;
}

inline ContextModel deserialize(std::span<const std::uint8_t> bytes) {
  le::Reader<ParseError> r(bytes);
  const auto magic = r.take(4);
  if (std::string(magic.begin(), magic.end()) != "OCKP") throw ParseError("not a checkpoint (bad magic)");
  if (r.u32() != kVersion) throw ParseError("unsupported checkpoint version");
  const auto text_len = r.u32();
  const auto text = r.take(text_len);
  const auto cfg = ModelConfig::from_text(std::string(text.begin(), text.end()));
  const auto count = r.u32();
  ParamStore ps;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.u32();
    const auto name = r.take(name_len);
    const auto rank = r.u32();
    if (rank > 4) throw ParseError("tensor rank too large");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    const auto idx = ps.add(std::string(name.begin(), name.end()), shape);
    for (auto& v : ps[idx].value.values()) v = static_cast<double>(r.f32());
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after checkpoint");
  return ContextModel(cfg, std::move(ps));
}

// FNV-1a over the serialized checkpoint; identifies the model in bitstreams.
inline std::uint64_t digest(std::span<const std::uint8_t> bytes) { return fnv1a64(bytes); }

inline std::uint64_t digest(const ContextModel& model) { return digest(serialize(model)); }

inline void save(const std::string& path, const ContextModel& model) { write_bytes(path, serialize(model)); }

inline ContextModel load(const std::string& path) { return deserialize(read_bytes(path)); }

}  // namespace octctx::checkpoint
