#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "octctx/context.hpp"
#include "octctx/error.hpp"
#include "octctx/nn.hpp"
#include "octctx/octree.hpp"
#include "octctx/params.hpp"
#include "octctx/tensor.hpp"

namespace octctx {

inline constexpr int kSymbols = 255;
inline constexpr double kProbabilityFloor = 1e-6;  // mixing weight of the uniform floor

// q[j] is the probability of occupancy code j + 1.
using Distribution255 = std::array<double, kSymbols>;
using BranchVector8 = std::array<double, 8>;

struct ModelConfig {
  ContextConfig context;
  int embed_dim = 8;       // per feature (occupancy, level, octant)
  int model_dim = 64;      // attention width, size of the weighted context
  int heads = 4;
  int hidden_main = 128;   // both hidden layers of the main MLP
  int hidden_branch = 64;
  int max_level = kMaxDepth;
  bool residual = true;
  bool branch = true;
  bool zero_init_heads = true;  // zero the output layers so an untrained model is uniform
  std::uint64_t seed = 1;

  static ModelConfig desk() { return {}; }

  static ModelConfig paper_scale() {
    ModelConfig c;
    c.context.window = 1024;
    c.context.ancestors = 4;
    c.embed_dim = 16;
    c.model_dim = 128;
    c.hidden_main = 552;
    c.hidden_branch = 128;
    return c;
  }

  int slot_input_dim() const { return context.chain() * 3 * embed_dim; }

  // base / ER / EM / EMR
  std::string variant() const {
    if (residual && branch) return "EMR";
    if (residual) return "ER";
    if (branch) return "EM";
    return "base";
  }

  void check() const {
    context.check();
    if (embed_dim < 1 || model_dim < 1 || hidden_main < 1 || hidden_branch < 1)
      throw ConfigError("model dimensions must be positive");
    if (heads < 1 || model_dim % heads != 0) throw ConfigError("model_dim must be divisible by heads");
    if (max_level < 1 || max_level > kMaxDepth) throw ConfigError("max_level outside [1, 21]");
  }

  // key = value lines, the config block of checkpoints and run echoes.
  std::string to_text() const {
    std::ostringstream o;
    o << "window = " << context.window << "\n"
      << "ancestors = " << context.ancestors << "\n"
      << "strict_level = " << (context.strict_level ? 1 : 0) << "\n"
      << "embed_dim = " << embed_dim << "\n"
      << "model_dim = " << model_dim << "\n"
      << "heads = " << heads << "\n"
      << "hidden_main = " << hidden_main << "\n"
      << "hidden_branch = " << hidden_branch << "\n"
      << "max_level = " << max_level << "\n"
      << "residual = " << (residual ? 1 : 0) << "\n"
      << "branch = " << (branch ? 1 : 0) << "\n"
      << "zero_init_heads = " << (zero_init_heads ? 1 : 0) << "\n"
      << "seed = " << seed << "\n"
      << "variant = " << variant() << "\n";
    return o.str();
  }

  static ModelConfig from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const char* k) -> long long {
      const auto it = kv.find(k);
      if (it == kv.end()) throw ConfigError(std::string("config missing key '") + k + "'");
      try {
        return std::stoll(it->second);
      } catch (const std::logic_error&) {
        throw ConfigError(std::string("config key '") + k + "' is not an integer");
      }
    };
    ModelConfig c;
    c.context.window = static_cast<int>(get("window"));
    c.context.ancestors = static_cast<int>(get("ancestors"));
    c.context.strict_level = get("strict_level") != 0;
    c.embed_dim = static_cast<int>(get("embed_dim"));
    c.model_dim = static_cast<int>(get("model_dim"));
    c.heads = static_cast<int>(get("heads"));
    c.hidden_main = static_cast<int>(get("hidden_main"));
    c.hidden_branch = static_cast<int>(get("hidden_branch"));
    c.max_level = static_cast<int>(get("max_level"));
    c.residual = get("residual") != 0;
    c.branch = get("branch") != 0;
    c.zero_init_heads = get("zero_init_heads") != 0;
    c.seed = static_cast<std::uint64_t>(get("seed"));
    c.check();
    return c;
  }
};

// Everything forward produces for one target node.
struct NodeOutput {
  std::vector<double> weighted_context;  // wc_i
  std::vector<double> residual;          // r_i
  std::vector<double> hidden1;           // first main-MLP layer output
  Distribution255 dist{};
  BranchVector8 branch{};
};

inline double loss_ce(const Distribution255& q, int occupancy) {
  if (occupancy < 1 || occupancy > kSymbols) throw InvalidInput("occupancy code outside [1, 255]");
  return -std::log2(q[static_cast<std::size_t>(occupancy - 1)]);
}

inline BranchVector8 occupancy_target(int occupancy) {
  BranchVector8 l{};
  for (int j = 0; j < 8; ++j) l[static_cast<std::size_t>(j)] = ((occupancy >> j) & 1) ? 1.0 : 0.0;
  return l;
}

// Mean squared error over the 8 child indicators.
inline double loss_mse(const BranchVector8& o, const BranchVector8& l) {
  double s = 0.0;
  for (std::size_t j = 0; j < 8; ++j) s += (l[j] - o[j]) * (l[j] - o[j]);
  return s / 8.0;
}

struct BatchLoss {
  double ce = 0.0;   // mean bits per node
  double mse = 0.0;  // mean branch MSE
  std::size_t nodes = 0;
};

struct LossWeights {
  double ce = 1.0;
  double mse = 1.0;
};

class ContextModel {
 public:
  explicit ContextModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.check();
    declare();
    initialize();
  }

  // Adopts trained weights (e.g. from a checkpoint); shapes must match cfg.
  ContextModel(const ModelConfig& cfg, ParamStore params) : cfg_(cfg) {
    cfg_.check();
    declare();
    if (params.size() != params_.size()) throw ConfigError("checkpoint parameter count does not match config");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const long k = params.find(params_[i].name);
      if (k < 0) throw ConfigError("checkpoint lacks parameter '" + params_[i].name + "'");
      const auto& src = params[static_cast<std::size_t>(k)].value;
      if (src.shape() != params_[i].value.shape())
        throw ConfigError("parameter '" + params_[i].name + "' has shape " + shape_string(src.shape()) +
                          ", config expects " + shape_string(params_[i].value.shape()));
      params_[i].value = src;
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  bool is_branch_param(std::size_t i) const { return params_[i].name.rfind("branch.", 0) == 0; }
  bool is_main_head_param(std::size_t i) const { return params_[i].name.rfind("main.", 0) == 0; }

  std::vector<bool> branch_mask() const {
    std::vector<bool> m(params_.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = is_branch_param(i);
    return m;
  }
  std::vector<bool> main_mask() const {
    auto m = branch_mask();
    m.flip();
    return m;
  }

  // -------------------------------------------------------------------------
  // Reference forward over an explicit window.
  NodeOutput forward(const ContextWindow& w, const std::vector<double>* wc_prev) const {
    if (w.window != cfg_.context.window || w.chain != cfg_.context.chain())
      throw InvalidInput("window shape does not match model config");
    for (const auto& f : w.slots)
      if (f.level > cfg_.max_level) throw InvalidInput("node level exceeds model max_level");
    if (wc_prev && wc_prev->size() != static_cast<std::size_t>(cfg_.model_dim))
      throw InvalidInput("previous weighted context has wrong width");
    const int n = w.window;
    std::vector<SlotState> slots(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s)
      if (w.valid[static_cast<std::size_t>(s)]) slot_forward(&w.at(s, 0), slots[static_cast<std::size_t>(s)], s == n - 1);
    std::vector<const SlotState*> ptr(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) ptr[static_cast<std::size_t>(s)] = &slots[static_cast<std::size_t>(s)];
    AttnState a;
    attend(ptr, w.valid, a);
    HeadState h;
    heads_forward(a.wc, wc_prev, h);
    return to_output(a, h);
  }

  // -------------------------------------------------------------------------
  // Mean loss over targets [begin, end) of `seq`, plus gradients when `grads`
  // is non-null. Node begin-1 is run as well (without a loss term) so every
  // target's residual sees the true previous weighted context.
  BatchLoss loss_and_grad(const NodeSequence& seq, std::size_t begin, std::size_t end, const LossWeights& lw,
                          Gradients* grads) const {
    if (begin >= end || end > seq.size()) throw InvalidInput("bad batch range");
    check_levels(seq);
    const auto N = static_cast<std::size_t>(cfg_.context.window);
    const std::size_t t0 = (cfg_.residual && begin > 0) ? begin - 1 : begin;
    const std::size_t p0 = t0 + 1 >= N ? t0 + 1 - N : 0;  // first predecessor node needed
    const std::size_t pred_end = end - 1;                  // predecessors are < end-1

    std::vector<SlotState> pred(pred_end > p0 ? pred_end - p0 : 0);
    std::vector<NodeFeature> chain(static_cast<std::size_t>(cfg_.context.chain()));
    for (std::size_t j = p0; j < pred_end; ++j) {
      fill_chain(seq, j, cfg_.context.ancestors, false, chain.data());
      slot_forward(chain.data(), pred[j - p0], false);
    }
    const std::size_t nt = end - t0;
    std::vector<SlotState> tslot(nt);
    std::vector<AttnState> attn(nt);
    std::vector<std::vector<std::uint8_t>> masks(nt);
    std::vector<std::vector<SlotState*>> rows(nt);
    for (std::size_t k = 0; k < nt; ++k) {
      const std::size_t t = t0 + k;
      fill_chain(seq, t, cfg_.context.ancestors, true, chain.data());
      slot_forward(chain.data(), tslot[k], true);
      gather(seq, t, p0, pred, tslot[k], rows[k], masks[k]);
      attend(rows[k], masks[k], attn[k]);
      require_finite(attn[k].wc, "attention");
    }

    BatchLoss out;
    out.nodes = end - begin;
    const double inv_b = 1.0 / static_cast<double>(out.nodes);
    std::vector<HeadState> head(nt);
    for (std::size_t k = begin - t0; k < nt; ++k) {
      const std::size_t t = t0 + k;
      const std::vector<double>* prev = (t > 0 && k > 0) ? &attn[k - 1].wc : nullptr;
      heads_forward(attn[k].wc, prev, head[k]);
      const int y = seq.nodes[t].occupancy;
      out.ce += -std::log2(head[k].q[static_cast<std::size_t>(y - 1)]);
      out.mse += loss_mse(head[k].o, occupancy_target(y));
    }
    out.ce *= inv_b;
    out.mse *= inv_b;
    if (!std::isfinite(out.ce) || !std::isfinite(out.mse)) throw NumericalError("non-finite batch loss");
    if (!grads) return out;

    auto& g = *grads;
    if (g.size() != params_.size()) g = zero_gradients(params_);
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    std::vector<std::vector<double>> dwc(nt, std::vector<double>(d, 0.0));
    std::vector<double> du(2 * d);
    for (std::size_t k = begin - t0; k < nt; ++k) {
      const std::size_t t = t0 + k;
      std::fill(du.begin(), du.end(), 0.0);
      heads_backward(head[k], seq.nodes[t].occupancy, lw.ce * inv_b, lw.mse * inv_b, g, du);
      for (std::size_t c = 0; c < d; ++c) dwc[k][c] += du[c];
      if (cfg_.residual && t > 0 && k > 0)
        for (std::size_t c = 0; c < d; ++c) {
          dwc[k][c] += du[d + c];
          dwc[k - 1][c] -= du[d + c];
        }
    }
    for (auto& s : pred) s.zero_grads();
    for (auto& s : tslot) s.zero_grads();
    for (std::size_t k = 0; k < nt; ++k) attend_backward(rows[k], masks[k], attn[k], dwc[k], g);
    for (auto& s : pred) slot_backward(s, g);
    for (auto& s : tslot) slot_backward(s, g);
    return out;
  }

  friend class InferenceSession;

 private:
  // Per-slot activations. `chain` is kept for the embedding gradient scatter.
  struct SlotState {
    std::vector<NodeFeature> chain;
    std::vector<double> s, x, k, v, q;
    std::vector<double> dk, dv, dq;
    bool has_query = false;

    void zero_grads() {
      dk.assign(k.size(), 0.0);
      dv.assign(v.size(), 0.0);
      dq.assign(q.size(), 0.0);
    }
  };

  struct AttnState {
    std::vector<double> mix, probs, wc;
  };

  struct HeadState {
    std::vector<double> u, h1, h2, g1, zin, z;
    Distribution255 p{}, q{};
    BranchVector8 o{};
    bool first = true;
  };

  // Parameter handles.
  std::size_t e_occ_{}, e_lvl_{}, e_oct_{}, slot_w_{}, slot_b_{}, wq_{}, wk_{}, wv_{}, wo_{}, bo_{};
  std::size_t m1w_{}, m1b_{}, m2w_{}, m2b_{}, m3w_{}, m3b_{}, b1w_{}, b1b_{}, b2w_{}, b2b_{};

  ModelConfig cfg_;
  ParamStore params_;

  const Tensor& P(std::size_t i) const { return params_[i].value; }

  void declare() {
    const auto e = static_cast<std::size_t>(cfg_.embed_dim);
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    const auto hm = static_cast<std::size_t>(cfg_.hidden_main);
    const auto hb = static_cast<std::size_t>(cfg_.hidden_branch);
    e_occ_ = params_.add("embed.occupancy", {256, e});
    e_lvl_ = params_.add("embed.level", {static_cast<std::size_t>(cfg_.max_level) + 1, e});
    e_oct_ = params_.add("embed.octant", {8, e});
    slot_w_ = params_.add("slot.weight", {d, static_cast<std::size_t>(cfg_.slot_input_dim())});
    slot_b_ = params_.add("slot.bias", {d});
    wq_ = params_.add("attn.query", {d, d});
    wk_ = params_.add("attn.key", {d, d});
    wv_ = params_.add("attn.value", {d, d});
    wo_ = params_.add("attn.out.weight", {d, d});
    bo_ = params_.add("attn.out.bias", {d});
    m1w_ = params_.add("main.fc1.weight", {hm, 2 * d});
    m1b_ = params_.add("main.fc1.bias", {hm});
    m2w_ = params_.add("main.fc2.weight", {hm, hm});
    m2b_ = params_.add("main.fc2.bias", {hm});
    m3w_ = params_.add("main.out.weight", {kSymbols, hm + 8});
    m3b_ = params_.add("main.out.bias", {kSymbols});
    b1w_ = params_.add("branch.fc1.weight", {hb, 2 * d});
    b1b_ = params_.add("branch.fc1.bias", {hb});
    b2w_ = params_.add("branch.out.weight", {8, hb});
    b2b_ = params_.add("branch.out.bias", {8});
  }

  void initialize() {
    std::mt19937_64 rng(cfg_.seed);
    for (auto i : {e_occ_, e_lvl_, e_oct_}) init_normal(params_[i].value, 0.02, rng);
    for (auto i : {slot_w_, wq_, wk_, wv_, wo_, m1w_, m2w_, m3w_, b1w_, b2w_}) init_xavier(params_[i].value, rng);
    if (cfg_.zero_init_heads) {
      params_[m3w_].value.fill(0.0);
      params_[b2w_].value.fill(0.0);
    }
    params_.round_to_float();
  }

  void check_levels(const NodeSequence& seq) const {
    if (seq.num_levels() > cfg_.max_level) throw InvalidInput("sequence deeper than model max_level");
  }

  void slot_forward(const NodeFeature* chain, SlotState& st, bool with_query) const {
    const auto e = static_cast<std::size_t>(cfg_.embed_dim);
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    const auto c = static_cast<std::size_t>(cfg_.context.chain());
    st.chain.assign(chain, chain + c);
    st.s.resize(c * 3 * e);
    for (std::size_t p = 0; p < c; ++p) {
      const auto occ = P(e_occ_).row(chain[p].occupancy);
      const auto lvl = P(e_lvl_).row(chain[p].level);
      const auto oct = P(e_oct_).row(chain[p].octant);
      double* dst = st.s.data() + p * 3 * e;
      std::copy(occ.begin(), occ.end(), dst);
      std::copy(lvl.begin(), lvl.end(), dst + e);
      std::copy(oct.begin(), oct.end(), dst + 2 * e);
    }
    st.x.resize(d);
    nn::linear(P(slot_w_), &P(slot_b_), st.s, st.x);
    st.k.resize(d);
    st.v.resize(d);
    nn::linear(P(wk_), nullptr, st.x, st.k);
    nn::linear(P(wv_), nullptr, st.x, st.v);
    st.has_query = with_query;
    if (with_query) {
      st.q.resize(d);
      nn::linear(P(wq_), nullptr, st.x, st.q);
    } else {
      st.q.clear();
    }
  }

  void slot_backward(SlotState& st, Gradients& g) const {
    const auto e = static_cast<std::size_t>(cfg_.embed_dim);
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    std::vector<double> dx(d, 0.0);
    nn::linear_backward(P(wk_), st.x, st.dk, &g[wk_], nullptr, dx);
    nn::linear_backward(P(wv_), st.x, st.dv, &g[wv_], nullptr, dx);
    if (st.has_query) nn::linear_backward(P(wq_), st.x, st.dq, &g[wq_], nullptr, dx);
    std::vector<double> ds(st.s.size(), 0.0);
    nn::linear_backward(P(slot_w_), st.s, dx, &g[slot_w_], &g[slot_b_], ds);
    for (std::size_t p = 0; p < st.chain.size(); ++p) {
      const double* src = ds.data() + p * 3 * e;
      auto occ = g[e_occ_].row(st.chain[p].occupancy);
      auto lvl = g[e_lvl_].row(st.chain[p].level);
      auto oct = g[e_oct_].row(st.chain[p].octant);
      for (std::size_t k = 0; k < e; ++k) {
        occ[k] += src[k];
        lvl[k] += src[e + k];
        oct[k] += src[2 * e + k];
      }
    }
  }

  // Rows for target t: predecessor slots t-N+1..t-1 (masked when missing or,
  // in strict mode, on another level), then the target slot.
  void gather(const NodeSequence& seq, std::size_t t, std::size_t p0, std::vector<SlotState>& pred,
              SlotState& target, std::vector<SlotState*>& rows, std::vector<std::uint8_t>& mask) const {
    const auto N = static_cast<std::ptrdiff_t>(cfg_.context.window);
    rows.assign(static_cast<std::size_t>(N), &target);
    mask.assign(static_cast<std::size_t>(N), 0);
    for (std::ptrdiff_t s = 0; s < N - 1; ++s) {
      const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(t) - (N - 1) + s;
      if (j < 0) continue;
      const auto ju = static_cast<std::size_t>(j);
      if (cfg_.context.strict_level && seq.nodes[ju].level != seq.nodes[t].level) continue;
      rows[static_cast<std::size_t>(s)] = &pred[ju - p0];
      mask[static_cast<std::size_t>(s)] = 1;
    }
    mask.back() = 1;
  }

  template <class SlotPtr>
  void attend(const std::vector<SlotPtr>& rows, const std::vector<std::uint8_t>& mask, AttnState& a) const {
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    const std::size_t n = rows.size();
    std::vector<const double*> kp(n), vp(n);
    for (std::size_t j = 0; j < n; ++j) {
      kp[j] = rows[j]->k.empty() ? nullptr : rows[j]->k.data();
      vp[j] = rows[j]->v.empty() ? nullptr : rows[j]->v.data();
    }
    a.mix.resize(d);
    a.probs.resize(static_cast<std::size_t>(cfg_.heads) * n);
    nn::attend_row(rows.back()->q, kp, vp, mask, cfg_.heads, a.mix, a.probs);
    a.wc.resize(d);
    nn::linear(P(wo_), &P(bo_), a.mix, a.wc);
  }

  void attend_backward(const std::vector<SlotState*>& rows, const std::vector<std::uint8_t>& mask,
                       const AttnState& a, const std::vector<double>& dwc, Gradients& g) const {
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    const std::size_t n = rows.size();
    std::vector<double> dmix(d, 0.0);
    nn::linear_backward(P(wo_), a.mix, dwc, &g[wo_], &g[bo_], dmix);
    std::vector<const double*> kp(n), vp(n);
    std::vector<double*> dkp(n), dvp(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j]) continue;
      kp[j] = rows[j]->k.data();
      vp[j] = rows[j]->v.data();
      dkp[j] = rows[j]->dk.data();
      dvp[j] = rows[j]->dv.data();
    }
    auto* target = rows.back();
    nn::attend_row_backward(target->q, kp, vp, mask, cfg_.heads, a.probs, dmix, target->dq, dkp, dvp);
  }

  void heads_forward(const std::vector<double>& wc, const std::vector<double>* wc_prev, HeadState& h) const {
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    const auto hm = static_cast<std::size_t>(cfg_.hidden_main);
    const auto hb = static_cast<std::size_t>(cfg_.hidden_branch);
    h.u.assign(2 * d, 0.0);
    std::copy(wc.begin(), wc.end(), h.u.begin());
    h.first = wc_prev == nullptr;
    if (cfg_.residual && wc_prev)
      for (std::size_t c = 0; c < d; ++c) h.u[d + c] = wc[c] - (*wc_prev)[c];

    h.g1.resize(hb);
    nn::linear(P(b1w_), &P(b1b_), h.u, h.g1);
    nn::relu(h.g1);
    std::array<double, 8> zb{};
    nn::linear(P(b2w_), &P(b2b_), h.g1, zb);
    for (std::size_t j = 0; j < 8; ++j) h.o[j] = nn::sigmoid(zb[j]);

    h.h1.resize(hm);
    nn::linear(P(m1w_), &P(m1b_), h.u, h.h1);
    nn::relu(h.h1);
    h.h2.resize(hm);
    nn::linear(P(m2w_), &P(m2b_), h.h1, h.h2);
    nn::relu(h.h2);
    h.zin.assign(hm + 8, 0.0);
    std::copy(h.h2.begin(), h.h2.end(), h.zin.begin());
    if (cfg_.branch) std::copy(h.o.begin(), h.o.end(), h.zin.begin() + static_cast<std::ptrdiff_t>(hm));
    h.z.resize(kSymbols);
    nn::linear(P(m3w_), &P(m3b_), h.zin, h.z);
    require_finite(h.z, "main head");
    nn::softmax(h.z, h.p);
    for (std::size_t j = 0; j < kSymbols; ++j)
      h.q[j] = (1.0 - kProbabilityFloor) * h.p[j] + kProbabilityFloor / kSymbols;
  }

  // Accumulates parameter gradients of  wce*CE + wmse*MSE  and writes dL/du.
  void heads_backward(const HeadState& h, int label, double wce, double wmse, Gradients& g,
                      std::vector<double>& du) const {
    const auto hm = static_cast<std::size_t>(cfg_.hidden_main);
    const auto hb = static_cast<std::size_t>(cfg_.hidden_branch);
    const auto y = static_cast<std::size_t>(label - 1);

    // d(-log2 q_y)/dz_k = -(1-floor) p_y (delta_yk - p_k) / (q_y ln 2)
    std::vector<double> dz(kSymbols);
    const double coef = wce * (1.0 - kProbabilityFloor) * h.p[y] / (h.q[y] * std::log(2.0));
    for (std::size_t k = 0; k < kSymbols; ++k) dz[k] = coef * (h.p[k] - (k == y ? 1.0 : 0.0));
    std::vector<double> dzin(hm + 8, 0.0);
    nn::linear_backward(P(m3w_), h.zin, dz, &g[m3w_], &g[m3b_], dzin);

    std::vector<double> dh2(dzin.begin(), dzin.begin() + static_cast<std::ptrdiff_t>(hm));
    nn::relu_backward(h.h2, dh2);
    std::vector<double> dh1(hm, 0.0);
    nn::linear_backward(P(m2w_), h.h1, dh2, &g[m2w_], &g[m2b_], dh1);
    nn::relu_backward(h.h1, dh1);
    nn::linear_backward(P(m1w_), h.u, dh1, &g[m1w_], &g[m1b_], du);

    const auto target = occupancy_target(label);
    std::array<double, 8> dzb{};
    for (std::size_t j = 0; j < 8; ++j) {
      double d_o = wmse * 2.0 * (h.o[j] - target[j]) / 8.0;
      if (cfg_.branch) d_o += dzin[hm + j];
      dzb[j] = d_o * h.o[j] * (1.0 - h.o[j]);
    }
    std::vector<double> dg1(hb, 0.0);
    nn::linear_backward(P(b2w_), h.g1, dzb, &g[b2w_], &g[b2b_], dg1);
    nn::relu_backward(h.g1, dg1);
    nn::linear_backward(P(b1w_), h.u, dg1, &g[b1w_], &g[b1b_], du);

    if (!cfg_.residual || h.first) {
      // u's residual half is a constant zero, not a function of any wc.
      const auto d = static_cast<std::size_t>(cfg_.model_dim);
      std::fill(du.begin() + static_cast<std::ptrdiff_t>(d), du.end(), 0.0);
    }
  }

  NodeOutput to_output(const AttnState& a, const HeadState& h) const {
    NodeOutput out;
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    out.weighted_context = a.wc;
    out.residual.assign(h.u.begin() + static_cast<std::ptrdiff_t>(d), h.u.end());
    out.hidden1 = h.h1;
    out.dist = h.q;
    out.branch = h.o;
    return out;
  }
};

// Sequential predictor used by the encoder, the decoder and evaluation. It
// caches the key/value rows of the last N-1 nodes and the previous weighted
// context, so each step costs one slot projection plus one attention row.
class InferenceSession {
 public:
  explicit InferenceSession(const ContextModel& model) : model_(model) {
    const auto n = static_cast<std::size_t>(model.cfg_.context.window);
    ring_.resize(n > 1 ? n - 1 : 0);
  }

  // Prediction for node i of `seq`. Reads node i's level, octant and
  // ancestors but never its occupancy. Nodes < i must have been committed.
  NodeOutput predict(const NodeSequence& seq, std::size_t i) {
    if (i != next_) throw InvalidInput("inference session must be fed nodes in order");
    if (seq.nodes[i].level > model_.cfg_.max_level) throw InvalidInput("node level exceeds model max_level");
    const auto& cfg = model_.cfg_;
    std::vector<NodeFeature> chain(static_cast<std::size_t>(cfg.context.chain()));
    fill_chain(seq, i, cfg.context.ancestors, true, chain.data());
    ContextModel::SlotState target;
    model_.slot_forward(chain.data(), target, true);

    const auto N = static_cast<std::ptrdiff_t>(cfg.context.window);
    std::vector<const ContextModel::SlotState*> rows(static_cast<std::size_t>(N), &target);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(N), 0);
    for (std::ptrdiff_t s = 0; s < N - 1; ++s) {
      const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) - (N - 1) + s;
      if (j < 0) continue;
      const auto ju = static_cast<std::size_t>(j);
      if (cfg.context.strict_level && seq.nodes[ju].level != seq.nodes[i].level) continue;
      rows[static_cast<std::size_t>(s)] = &ring_[ju % ring_.size()];
      mask[static_cast<std::size_t>(s)] = 1;
    }
    mask.back() = 1;
    ContextModel::AttnState a;
    model_.attend(rows, mask, a);
    ContextModel::HeadState h;
    model_.heads_forward(a.wc, has_prev_ ? &prev_wc_ : nullptr, h);
    pending_wc_ = a.wc;
    return model_.to_output(a, h);
  }

  // Makes node i (now with its occupancy known) available as context.
  void commit(const NodeSequence& seq, std::size_t i) {
    if (i != next_) throw InvalidInput("commit out of order");
    if (!ring_.empty()) {
      std::vector<NodeFeature> chain(static_cast<std::size_t>(model_.cfg_.context.chain()));
      fill_chain(seq, i, model_.cfg_.context.ancestors, false, chain.data());
      model_.slot_forward(chain.data(), ring_[i % ring_.size()], false);
    }
    prev_wc_ = pending_wc_;
    has_prev_ = true;
    ++next_;
  }

 private:
  const ContextModel& model_;
  std::vector<ContextModel::SlotState> ring_;
  std::vector<double> prev_wc_, pending_wc_;
  bool has_prev_ = false;
  std::size_t next_ = 0;
};

// Ideal codelength of the sequence under the model, in bits.
inline double sequence_entropy(const ContextModel& model, const NodeSequence& seq) {
  InferenceSession session(model);
  double bits = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto out = session.predict(seq, i);
    bits += loss_ce(out.dist, seq.nodes[i].occupancy);
    session.commit(seq, i);
  }
  return bits;
}

}  // namespace octctx
