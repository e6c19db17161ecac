#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "octctx/error.hpp"

namespace octctx {

inline constexpr int kFreqBits = 16;
inline constexpr std::uint32_t kFreqTotal = 1u << kFreqBits;

// Integer form of a 255-way distribution. Symbol s (0-based) owns
// [cum[s], cum[s+1]) out of kFreqTotal.
struct FreqTable {
  std::array<std::uint32_t, 255> freq{};
  std::array<std::uint32_t, 256> cum{};

  std::uint32_t total() const { return cum[255]; }

  void rebuild_cum() {
    cum[0] = 0;
    for (std::size_t s = 0; s < 255; ++s) cum[s + 1] = cum[s] + freq[s];
  }

  friend bool operator==(const FreqTable&, const FreqTable&) = default;
};

inline void validate(const FreqTable& t) {
  if (t.cum[0] != 0) throw InvalidInput("cumulative table must start at 0");
  for (std::size_t s = 0; s < 255; ++s) {
    if (t.freq[s] < 1) throw InvalidInput("zero frequency in table");
    if (t.cum[s + 1] != t.cum[s] + t.freq[s]) throw InvalidInput("cumulative table inconsistent");
  }
  if (t.total() > kFreqTotal) throw InvalidInput("frequency total exceeds 2^16");
}

// Every symbol gets 1 + floor(q * (T - 255)); the leftover goes one unit at a
// time to the largest fractional parts (lower index wins ties). Pure integer
// bookkeeping after one multiply per entry, so identical input bits give an
// identical table.
inline FreqTable quantize_dist(std::span<const double> q) {
  if (q.size() != 255) throw InvalidInput("distribution must have 255 entries");
  constexpr double budget = static_cast<double>(kFreqTotal - 255);
  FreqTable t;
  std::array<double, 255> frac{};
  std::uint32_t used = 0;
  for (std::size_t s = 0; s < 255; ++s) {
    const double x = std::clamp(q[s], 0.0, 1.0) * budget;
    const double fl = std::floor(x);
    t.freq[s] = 1 + static_cast<std::uint32_t>(fl);
    frac[s] = x - fl;
    used += t.freq[s];
  }
  if (used > kFreqTotal) {
    // Only reachable when q sums above 1; trim the largest entries.
    while (used > kFreqTotal) {
      auto it = std::max_element(t.freq.begin(), t.freq.end());
      --*it;
      --used;
    }
  } else if (used < kFreqTotal) {
    std::array<std::uint8_t, 255> order{};
    std::iota(order.begin(), order.end(), std::uint8_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::uint8_t a, std::uint8_t b) { return frac[a] > frac[b]; });
    std::uint32_t left = kFreqTotal - used;
    for (std::size_t k = 0; left > 0; k = (k + 1) % 255, --left) ++t.freq[order[k]];
  }
  t.rebuild_cum();
  return t;
}

// Byte-oriented range coder: 32-bit range, 64-bit low with a cache byte for
// carry propagation (the LZMA arrangement). Encoder and decoder both touch
// exactly one byte per renormalisation, so a well-formed payload is consumed
// to its last byte.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum_lo, std::uint32_t freq) {
    const std::uint32_t r = range_ >> kFreqBits;
    low_ += static_cast<std::uint64_t>(r) * cum_lo;
    range_ = r * freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  void encode(const FreqTable& t, int symbol) {
    const auto s = static_cast<std::size_t>(symbol);
    encode(t.cum[s], t.freq[s]);
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  void shift_low() {
    if (low_ < 0xFF000000ULL || low_ >= (1ULL << 32)) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      if (!first_) out_.push_back(static_cast<std::uint8_t>(cache_ + carry));
      first_ = false;
      for (; pending_ > 0; --pending_) out_.push_back(static_cast<std::uint8_t>(0xFF + carry));
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    } else {
      ++pending_;
    }
    low_ = (low_ & 0x00FFFFFFULL) << 8;
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 0;
  bool first_ = true;  // the leading cache byte is always 0 and is not stored
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> payload) : in_(payload) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  int decode(const FreqTable& t) {
    const std::uint32_t r = range_ >> kFreqBits;
    const std::uint32_t value = code_ / r;
    if (value >= t.total()) throw CorruptStream("decoded value outside the frequency table");
    const auto it = std::upper_bound(t.cum.begin(), t.cum.end(), value);
    const auto s = static_cast<std::size_t>(std::distance(t.cum.begin(), it) - 1);
    code_ -= r * t.cum[s];
    range_ = r * t.freq[s];
    while (range_ < kTop) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
    return static_cast<int>(s);
  }

  bool exhausted() const { return pos_ == in_.size(); }
  std::size_t consumed() const { return pos_; }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  std::uint32_t next_byte() {
    if (pos_ >= in_.size()) throw CorruptStream("payload exhausted");
    return in_[pos_++];
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

// Encodes occupancy codes (1..255) with one table per symbol.
inline std::vector<std::uint8_t> encode_symbols(std::span<const int> symbols, std::span<const FreqTable> tables) {
  if (symbols.size() != tables.size()) throw InvalidInput("symbol and table counts differ");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (symbols[i] < 1 || symbols[i] > 255) throw InvalidInput("occupancy code outside [1, 255]");
    enc.encode(tables[i], symbols[i] - 1);
  }
  return enc.finish();
}

inline std::vector<int> decode_symbols(std::span<const std::uint8_t> payload, std::span<const FreqTable> tables) {
  RangeDecoder dec(payload);
  std::vector<int> out;
  out.reserve(tables.size());
  for (const auto& t : tables) out.push_back(dec.decode(t) + 1);
  if (!dec.exhausted()) throw CorruptStream("trailing payload bytes");
  return out;
}

// Sum of -log2(freq/total) over a symbol stream.
inline double ideal_bits(std::span<const int> symbols, std::span<const FreqTable> tables) {
  double b = 0.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto& t = tables[i];
    b -= std::log2(static_cast<double>(t.freq[static_cast<std::size_t>(symbols[i] - 1)]) / t.total());
  }
  return b;
}

}  // namespace octctx
