#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "octctx/geometry.hpp"
#include "octctx/model.hpp"
#include "octctx/octree.hpp"

namespace octctx::testing {

inline NodeSequence tree_of(SynthKind kind, std::size_t n, int depth, std::uint64_t seed) {
  return build(quantize(synth(kind, n, seed), depth));
}

inline ModelConfig toy_config(bool residual = true, bool branch = true) {
  ModelConfig c;
  c.context.window = 8;
  c.context.ancestors = 1;
  c.embed_dim = 4;
  c.model_dim = 16;
  c.heads = 2;
  c.hidden_main = 12;
  c.hidden_branch = 8;
  c.max_level = 8;
  c.residual = residual;
  c.branch = branch;
  c.zero_init_heads = false;
  return c;
}

// Zero-initialized biases plus small activations put many ReLU inputs within
// a finite-difference step of the kink; nonzero biases move the check point to
// a generic, differentiable spot.
inline void randomize_biases(ContextModel& model, std::uint64_t seed, double sigma = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  for (auto& p : model.params())
    if (p.name.ends_with(".bias"))
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = g(rng);
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // parameter[index] with the largest error
};

// Central differences of  w.ce * CE + w.mse * MSE  over every scalar
// parameter. Relative error is |a - n| / max(|a|, |n|, floor), so entries whose
// true gradient is ~0 are judged on absolute error below `floor`.
inline GradCheckResult grad_check(ContextModel& model, const NodeSequence& seq, std::size_t begin, std::size_t end,
                                  const LossWeights& w, double eps = 1e-4, double floor = 1e-3) {
  Gradients g;
  model.loss_and_grad(seq, begin, end, w, &g);
  auto loss = [&] {
    const auto l = model.loss_and_grad(seq, begin, end, w, nullptr);
    return w.ce * l.ce + w.mse * l.mse;
  };
  GradCheckResult r;
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    auto& t = model.params()[p].value;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double keep = t[k];
      t[k] = keep + eps;
      const double lp = loss();
      t[k] = keep - eps;
      const double lm = loss();
      t[k] = keep;
      const double num = (lp - lm) / (2.0 * eps);
      const double ana = g[p][k];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = model.params()[p].name + "[" + std::to_string(k) + "] analytic " + std::to_string(ana) +
                  " numeric " + std::to_string(num);
      }
    }
  }
  return r;
}

}  // namespace octctx::testing
