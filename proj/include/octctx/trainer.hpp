#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <vector>

#include "octctx/error.hpp"
#include "octctx/model.hpp"
#include "octctx/octree.hpp"
#include "octctx/params.hpp"

namespace octctx {

// Two-stage schedule: the branch alone on MSE, then everything except the
// branch on cross-entropy. Learning rate decays by `decay` after every epoch
// and restarts at `lr` when stage 2 begins. Each stage shuffles from its own
// seeded stream, so variants with and without stage 1 see the same stage-2
// batch order.
struct Schedule {
  int branch_epochs = 1;
  int main_epochs = 3;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double decay = 0.95;
  bool shuffle = true;  // batch order per epoch; targets inside a batch stay contiguous
  std::uint64_t seed = 1;
  // Stage 1 also trains the shared embeddings and attention; only the main
  // MLP stays fixed.
  bool stage1_extractor = false;
};

struct TraceEntry {
  int stage = 0;  // 1 = branch, 2 = main
  int epoch = 0;
  std::size_t batch = 0;  // global batch index
  double ce = 0.0;
  double mse = 0.0;
};

struct TrainResult {
  std::vector<TraceEntry> trace;

  std::vector<TraceEntry> stage(int s) const {
    std::vector<TraceEntry> out;
    for (const auto& e : trace)
      if (e.stage == s) out.push_back(e);
    return out;
  }
};

struct BatchRange {
  std::size_t sequence = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline std::vector<BatchRange> make_batches(const std::vector<NodeSequence>& corpus, std::size_t batch_size) {
  if (batch_size < 1) throw InvalidInput("batch size must be >= 1");
  std::vector<BatchRange> out;
  for (std::size_t s = 0; s < corpus.size(); ++s)
    for (std::size_t b = 0; b < corpus[s].size(); b += batch_size)
      out.push_back({s, b, std::min(b + batch_size, corpus[s].size())});
  return out;
}

// Called after every optimizer step; returning false stops training early.
using TrainObserver = std::function<bool(const TraceEntry&, const ContextModel&)>;

inline TrainResult train(ContextModel& model, const std::vector<NodeSequence>& corpus, const Schedule& sched,
                         const TrainObserver& observer = {}) {
  if (corpus.empty()) throw InvalidInput("empty training corpus");
  for (const auto& seq : corpus)
    if (seq.size() == 0) throw InvalidInput("empty sequence in training corpus");
  if (sched.branch_epochs < 0 || sched.main_epochs < 0) throw InvalidInput("negative epoch count");

  const auto batches = make_batches(corpus, sched.batch_size);
  TrainResult result;
  std::size_t global = 0;
  auto grads = zero_gradients(model.params());

  auto run_stage = [&](int stage, int epochs, const LossWeights& lw, const std::vector<bool>& trainable) {
    AdamOptions opt;
    opt.lr = sched.lr;
    std::mt19937_64 rng(sched.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(stage));
    std::vector<std::size_t> order(batches.size());
    for (int ep = 0; ep < epochs; ++ep) {
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      if (sched.shuffle) std::shuffle(order.begin(), order.end(), rng);
      for (auto k : order) {
        const auto& b = batches[k];
        for (auto& g : grads) g.fill(0.0);
        const auto loss = model.loss_and_grad(corpus[b.sequence], b.begin, b.end, lw, &grads);
        adam_step(model.params(), grads, opt, trainable);
        model.params().round_to_float(trainable);
        TraceEntry e{stage, ep, global++, loss.ce, loss.mse};
        result.trace.push_back(e);
        if (observer && !observer(e, model)) return false;
      }
      opt.lr *= sched.decay;
    }
    return true;
  };

  bool go = true;
  if (model.config().branch && sched.branch_epochs > 0) {
    auto mask = model.branch_mask();
    if (sched.stage1_extractor)
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = !model.is_main_head_param(i);
    go = run_stage(1, sched.branch_epochs, {0.0, 1.0}, mask);
  }
  if (go && sched.main_epochs > 0) run_stage(2, sched.main_epochs, {1.0, 0.0}, model.main_mask());
  return result;
}

// batch_index,ce_loss,mse_loss with a comment line at each stage start.
inline void write_trace(std::ostream& out, const TrainResult& r) {
  out << "batch_index,ce_loss,mse_loss\n";
  int stage = 0;
  for (const auto& e : r.trace) {
    if (e.stage != stage) {
      stage = e.stage;
      out << "# stage " << stage << (stage == 1 ? " (branch, mse)" : " (main, cross-entropy)") << "\n";
    }
    out << e.batch << ',' << e.ce << ',' << e.mse << '\n';
  }
}

// Mean cross-entropy of the first `fraction` of stage-2 batches.
inline double early_ce(const TrainResult& r, double fraction) {
  const auto s2 = r.stage(2);
  if (s2.empty()) throw InvalidInput("trace has no cross-entropy stage");
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(s2.size()))));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += s2[i].ce;
  return sum / static_cast<double>(n);
}

}  // namespace octctx
