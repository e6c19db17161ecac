#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "octctx/error.hpp"
#include "octctx/tensor.hpp"

// Forward/backward kernels the context model is composed from. Backward
// functions accumulate (+=) into gradient buffers so callers can sum over a
// batch without temporaries.
namespace octctx::nn {

// y = W x + b, W is [out, in].
inline void linear(const Tensor& W, const Tensor* b, std::span<const double> x, std::span<double> y) {
  const std::size_t out = W.rows(), in = W.cols();
  const double* w = W.data();
  for (std::size_t r = 0; r < out; ++r) {
    double acc = b ? (*b)[r] : 0.0;
    const double* wr = w + r * in;
    for (std::size_t c = 0; c < in; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

inline void linear_backward(const Tensor& W, std::span<const double> x, std::span<const double> dy,
                            Tensor* dW, Tensor* db, std::span<double> dx) {
  const std::size_t out = W.rows(), in = W.cols();
  if (dW) {
    double* g = dW->data();
    for (std::size_t r = 0; r < out; ++r) {
      const double d = dy[r];
      if (d == 0.0) continue;
      double* gr = g + r * in;
      for (std::size_t c = 0; c < in; ++c) gr[c] += d * x[c];
    }
  }
  if (db)
    for (std::size_t r = 0; r < out; ++r) (*db)[r] += dy[r];
  if (!dx.empty()) {
    const double* w = W.data();
    for (std::size_t r = 0; r < out; ++r) {
      const double d = dy[r];
      if (d == 0.0) continue;
      const double* wr = w + r * in;
      for (std::size_t c = 0; c < in; ++c) dx[c] += d * wr[c];
    }
  }
}

inline void relu(std::span<double> v) {
  for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

// dv *= 1[y > 0] where y is the relu output.
inline void relu_backward(std::span<const double> y, std::span<double> dv) {
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!(y[i] > 0.0)) dv[i] = 0.0;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void softmax(std::span<const double> z, std::span<double> p) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& x : p) x /= s;
}

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention.

struct AttentionWeights {
  Tensor query, key, value;  // [d, d], no bias
  Tensor out;                // [d, d]
  Tensor out_bias;           // [d]
};

inline void check_heads(std::size_t d, int heads) {
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0)
    throw InvalidInput("model width not divisible by head count");
}

// One query row against a set of key/value rows. `mix` receives the
// concatenated per-head weighted values (before the output projection) and
// `probs` the [heads, rows] attention weights (0 for masked rows).
inline void attend_row(std::span<const double> q, std::span<const double* const> keys,
                       std::span<const double* const> values, std::span<const std::uint8_t> mask, int heads,
                       std::span<double> mix, std::span<double> probs) {
  const std::size_t d = q.size();
  const std::size_t rows = keys.size();
  check_heads(d, heads);
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  bool any = false;
  for (auto m : mask) any = any || m;
  if (!any) throw InvalidInput("attention over an all-masked input");

  std::fill(mix.begin(), mix.end(), 0.0);
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    double* p = probs.data() + static_cast<std::size_t>(h) * rows;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < rows; ++j) {
      if (!mask[j]) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += q[off + c] * keys[j][off + c];
      p[j] = s * inv_sqrt;
      mx = std::max(mx, p[j]);
    }
    double tot = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      if (!mask[j]) {
        p[j] = 0.0;
        continue;
      }
      tot += (p[j] = std::exp(p[j] - mx));
    }
    for (std::size_t j = 0; j < rows; ++j) {
      if (!mask[j]) continue;
      p[j] /= tot;
      const double a = p[j];
      for (std::size_t c = 0; c < dh; ++c) mix[off + c] += a * values[j][off + c];
    }
  }
}

// Gradients of attend_row given d(mix). Accumulates into dq, dkeys[j], dvalues[j].
inline void attend_row_backward(std::span<const double> q, std::span<const double* const> keys,
                                std::span<const double* const> values, std::span<const std::uint8_t> mask,
                                int heads, std::span<const double> probs, std::span<const double> dmix,
                                std::span<double> dq, std::span<double* const> dkeys,
                                std::span<double* const> dvalues) {
  const std::size_t d = q.size();
  const std::size_t rows = keys.size();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> dp(rows);
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    const double* p = probs.data() + static_cast<std::size_t>(h) * rows;
    double dot = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      if (!mask[j]) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) {
        s += dmix[off + c] * values[j][off + c];
        dvalues[j][off + c] += p[j] * dmix[off + c];
      }
      dp[j] = s;
      dot += p[j] * s;
    }
    for (std::size_t j = 0; j < rows; ++j) {
      if (!mask[j]) continue;
      const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
      if (ds == 0.0) continue;
      for (std::size_t c = 0; c < dh; ++c) {
        dq[off + c] += ds * keys[j][off + c];
        dkeys[j][off + c] += ds * q[off + c];
      }
    }
  }
}

struct AttentionResult {
  Tensor output;  // [N, d]
  Tensor probs;   // [heads, N, N]
};

// Full self-attention over x [N, d]: every row queries every unmasked row.
// Row N-1 of the output is what the context model uses for the target.
inline AttentionResult attention(const Tensor& x, std::span<const std::uint8_t> mask, int heads,
                                 const AttentionWeights& w) {
  const std::size_t n = x.rows(), d = x.cols();
  check_heads(d, heads);
  if (mask.size() != n) throw InvalidInput("attention mask length differs from row count");
  Tensor q({n, d}), k({n, d}), v({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    linear(w.query, nullptr, x.row(i), q.row(i));
    linear(w.key, nullptr, x.row(i), k.row(i));
    linear(w.value, nullptr, x.row(i), v.row(i));
  }
  std::vector<const double*> kp(n), vp(n);
  for (std::size_t j = 0; j < n; ++j) {
    kp[j] = k.row(j).data();
    vp[j] = v.row(j).data();
  }
  AttentionResult r{Tensor({n, d}), Tensor({static_cast<std::size_t>(heads), n, n})};
  std::vector<double> mix(d), probs(static_cast<std::size_t>(heads) * n);
  for (std::size_t i = 0; i < n; ++i) {
    attend_row(q.row(i), kp, vp, mask, heads, mix, probs);
    linear(w.out, &w.out_bias, mix, r.output.row(i));
    for (int h = 0; h < heads; ++h)
      for (std::size_t j = 0; j < n; ++j)
        r.probs[(static_cast<std::size_t>(h) * n + i) * n + j] = probs[static_cast<std::size_t>(h) * n + j];
  }
  return r;
}

}  // namespace octctx::nn
