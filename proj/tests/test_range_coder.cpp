#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "octctx/range_coder.hpp"

using namespace octctx;

namespace {

std::vector<double> random_dist(std::mt19937_64& rng, double concentration) {
  std::gamma_distribution<double> g(concentration, 1.0);
  std::vector<double> q(255);
  double s = 0.0;
  for (auto& x : q) s += (x = g(rng) + 1e-300);
  for (auto& x : q) x /= s;
  return q;
}

FreqTable random_table(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(0.02, 2.0);
  return quantize_dist(random_dist(rng, c(rng)));
}

int sample(const FreqTable& t, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> u(0, t.total() - 1);
  const auto v = u(rng);
  return static_cast<int>(std::upper_bound(t.cum.begin(), t.cum.end(), v) - t.cum.begin());  // 1-based
}

}  // namespace

TEST(QuantizeDist, UniformIsFlat) {
  const std::vector<double> q(255, 1.0 / 255.0);
  const auto t = quantize_dist(q);
  validate(t);
  EXPECT_EQ(t.total(), kFreqTotal);
  const auto [lo, hi] = std::minmax_element(t.freq.begin(), t.freq.end());
  EXPECT_LE(*hi - *lo, 1u);
}

TEST(QuantizeDist, PeakedGetsEverythingElse) {
  std::vector<double> q(255, 1e-12);
  q[100] = 1.0 - 254e-12;
  const auto t = quantize_dist(q);
  EXPECT_EQ(t.freq[100], kFreqTotal - 254);
  for (std::size_t s = 0; s < 255; ++s)
    if (s != 100) {
      EXPECT_EQ(t.freq[s], 1u);
    }
}

TEST(QuantizeDist, RandomTotalsAndKl) {
  // freq_s >= q_s * (T - 255), so each log-ratio is at most log2(T / (T - 255)).
  const double bound = std::log2(double(kFreqTotal) / (kFreqTotal - 255));
  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    const auto q = random_dist(rng, k % 2 ? 0.05 : 1.0);
    const auto t = quantize_dist(q);
    validate(t);
    ASSERT_EQ(t.total(), kFreqTotal);
    double kl = 0.0;
    for (std::size_t s = 0; s < 255; ++s)
      if (q[s] > 0) kl += q[s] * std::log2(q[s] / (double(t.freq[s]) / kFreqTotal));
    EXPECT_LE(kl, bound);
  }
}

TEST(QuantizeDist, PureFunction) {
  std::mt19937_64 rng(2);
  const auto q = random_dist(rng, 0.3);
  EXPECT_EQ(quantize_dist(q), quantize_dist(q));
  EXPECT_THROW(quantize_dist(std::vector<double>(10, 0.1)), InvalidInput);
}

TEST(RangeCoder, EmptyStreamFlushIsSmall) {
  const auto bytes = encode_symbols({}, {});
  EXPECT_LT(bytes.size(), 8u);
  EXPECT_TRUE(decode_symbols(bytes, {}).empty());
}

TEST(RangeCoder, EveryCodeUnderRandomTables) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto table = random_table(rng);
    std::vector<int> sym;
    for (int s = 1; s <= 255; ++s) sym.push_back(s);
    const std::vector<FreqTable> tables(sym.size(), table);
    EXPECT_EQ(decode_symbols(encode_symbols(sym, tables), tables), sym);
  }
}

TEST(RangeCoder, UniformPayloadNearIdeal) {
  const auto table = quantize_dist(std::vector<double>(255, 1.0 / 255.0));
  std::mt19937_64 rng(4);
  std::vector<int> sym;
  for (int i = 0; i < 1000; ++i) sym.push_back(1 + static_cast<int>(rng() % 255));
  const std::vector<FreqTable> tables(sym.size(), table);
  const auto bytes = encode_symbols(sym, tables);
  const double ideal = 1000 * std::log2(255.0);
  EXPECT_LE(8.0 * bytes.size(), 1.01 * ideal + 64);
  EXPECT_EQ(decode_symbols(bytes, tables), sym);
}

TEST(RangeCoder, NearCertainSymbolIsTiny) {
  FreqTable t;
  t.freq.fill(1);
  t.freq[0] = kFreqTotal - 254;
  t.rebuild_cum();
  const std::vector<int> sym{1};
  const std::vector<FreqTable> tables{t};
  const auto bytes = encode_symbols(sym, tables);
  EXPECT_LE(bytes.size(), 2u + 4u);
  EXPECT_EQ(decode_symbols(bytes, tables), sym);
}

TEST(RangeCoder, AlternatingTablesLongStream) {
  std::mt19937_64 rng(5);
  const auto a = random_table(rng), b = random_table(rng);
  std::vector<int> sym;
  std::vector<FreqTable> tables;
  for (int i = 0; i < 10000; ++i) {
    tables.push_back(i % 2 ? a : b);
    sym.push_back(sample(tables.back(), rng));
  }
  const auto bytes = encode_symbols(sym, tables);
  EXPECT_EQ(decode_symbols(bytes, tables), sym);
  EXPECT_LE(8.0 * bytes.size(), 1.01 * ideal_bits(sym, tables) + 64);
}

TEST(RangeCoder, CarryPropagationStress) {
  // Highly skewed tables push low toward 0xFF.. runs, exercising the carry path.
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<int> sym;
    std::vector<FreqTable> tables;
    for (int i = 0; i < 2000; ++i) {
      FreqTable t;
      t.freq.fill(1);
      t.freq[254] = kFreqTotal - 254;
      t.rebuild_cum();
      tables.push_back(t);
      sym.push_back(rng() % 7 == 0 ? 1 + static_cast<int>(rng() % 254) : 255);
    }
    EXPECT_EQ(decode_symbols(encode_symbols(sym, tables), tables), sym);
  }
}

TEST(RangeCoder, CorruptionDetected) {
  std::mt19937_64 rng(7);
  const auto table = random_table(rng);
  std::vector<int> sym;
  for (int i = 0; i < 300; ++i) sym.push_back(sample(table, rng));
  const std::vector<FreqTable> tables(sym.size(), table);
  auto bytes = encode_symbols(sym, tables);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(decode_symbols(truncated, tables), CorruptStream);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_symbols(extra, tables), CorruptStream);
  EXPECT_THROW(encode_symbols(std::vector<int>{0}, std::vector<FreqTable>{table}), InvalidInput);
}
