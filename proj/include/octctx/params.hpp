#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "octctx/error.hpp"
#include "octctx/tensor.hpp"

namespace octctx {

struct Param {
  std::string name;
  Tensor value;
  Tensor m, v;             // Adam moments
  std::uint64_t step = 0;  // Adam steps applied to this parameter
};

// Named parameters in a fixed order. Gradients are a vector of tensors in the
// same order (see Gradients).
class ParamStore {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    if (find(name) >= 0) throw ConfigError("duplicate parameter '" + name + "'");
    Param p;
    p.name = std::move(name);
    p.value = Tensor(shape);
    p.m = Tensor(shape);
    p.v = Tensor(std::move(shape));
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  long find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return static_cast<long>(i);
    return -1;
  }
  Tensor& value(const std::string& name) { return params_[index(name)].value; }
  const Tensor& value(const std::string& name) const { return params_[index(name)].value; }

  std::size_t index(const std::string& name) const {
    const long i = find(name);
    if (i < 0) throw ConfigError("no parameter named '" + name + "'");
    return static_cast<std::size_t>(i);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Rounds values to the nearest float so the in-memory model equals its
  // 32-bit checkpoint bit for bit. An empty mask selects every tensor.
  void round_to_float(const std::vector<bool>& mask = {}) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      for (auto& x : params_[i].value.values()) x = static_cast<double>(static_cast<float>(x));
    }
  }

 private:
  std::vector<Param> params_;
};

using Gradients = std::vector<Tensor>;

inline Gradients zero_gradients(const ParamStore& ps) {
  Gradients g;
  g.reserve(ps.size());
  for (const auto& p : ps) g.emplace_back(p.value.shape());
  return g;
}

// Xavier-uniform for a [out, in] weight.
inline void init_xavier(Tensor& w, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& x : w.values()) x = u(rng);
}

inline void init_normal(Tensor& w, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  for (auto& x : w.values()) x = g(rng);
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam on the parameters selected by `trainable` (all when
// empty). Unselected parameters and their moments are left untouched.
inline void adam_step(ParamStore& ps, const Gradients& grads, const AdamOptions& opt,
                      const std::vector<bool>& trainable = {}) {
  if (grads.size() != ps.size()) throw InvalidInput("gradient count differs from parameter count");
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (grads[i].shape() != ps[i].value.shape())
      throw InvalidInput("gradient shape " + shape_string(grads[i].shape()) + " does not match parameter '" +
                         ps[i].name + "' " + shape_string(ps[i].value.shape()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    auto& p = ps[i];
    ++p.step;
    const double t = static_cast<double>(p.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    auto w = p.value.values();
    auto m = p.m.values();
    auto v = p.v.values();
    const auto g = grads[i].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
      v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

}  // namespace octctx
