#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "octctx/context.hpp"
#include "octctx/error.hpp"
#include "octctx/model.hpp"
#include "octctx/octree.hpp"

namespace octctx {

// Per occupancy class: node count and running sum of first-layer features.
class ClassFeatureBank {
 public:
  explicit ClassFeatureBank(std::size_t dim = 0) : dim_(dim) {}

  void add(int occupancy, const std::vector<double>& v) {
    if (occupancy < 1 || occupancy > 255) throw InvalidInput("occupancy code outside [1, 255]");
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_) throw InvalidInput("feature dimension changed within a bank");
    auto& s = sum_[static_cast<std::size_t>(occupancy)];
    if (s.empty()) s.assign(dim_, 0.0);
    for (std::size_t k = 0; k < dim_; ++k) s[k] += v[k];
    ++count_[static_cast<std::size_t>(occupancy)];
  }

  std::size_t dim() const { return dim_; }
  std::size_t count(int occupancy) const { return count_[static_cast<std::size_t>(occupancy)]; }

  std::vector<int> present() const {
    std::vector<int> out;
    for (int j = 1; j <= 255; ++j)
      if (count_[static_cast<std::size_t>(j)] > 0) out.push_back(j);
    return out;
  }

  std::vector<double> mean(int occupancy) const {
    const auto n = count(occupancy);
    if (n == 0) throw InvalidInput("class " + std::to_string(occupancy) + " has no samples");
    auto m = sum_[static_cast<std::size_t>(occupancy)];
    for (auto& x : m) x /= static_cast<double>(n);
    return m;
  }

 private:
  std::size_t dim_;
  std::array<std::size_t, 256> count_{};
  std::array<std::vector<double>, 256> sum_;
};

struct InterClassStats {
  double ad = 0.0;    // mean pairwise Euclidean distance
  double acos = 0.0;  // mean pairwise cosine similarity
  int classes_present = 0;

  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "ad = " << ad << "\nacos = " << acos << "\nclasses_present = " << classes_present << "\n";
    return o.str();
  }
};

inline ClassFeatureBank collect_features(const ContextModel& model, const std::vector<NodeSequence>& corpus) {
  if (corpus.empty()) throw InvalidInput("empty corpus");
  ClassFeatureBank bank(static_cast<std::size_t>(model.config().hidden_main));
  for (const auto& seq : corpus) {
    InferenceSession session(model);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      bank.add(seq.nodes[i].occupancy, session.predict(seq, i).hidden1);
      session.commit(seq, i);
    }
  }
  return bank;
}

// From a window dump. Consecutive records whose target indices follow one
// another share the residual chain; any gap restarts it.
inline ClassFeatureBank collect_features(const ContextModel& model, const std::vector<LabeledWindow>& records) {
  if (records.empty()) throw InvalidInput("empty window dump");
  ClassFeatureBank bank(static_cast<std::size_t>(model.config().hidden_main));
  std::vector<double> prev;
  std::size_t prev_index = 0;
  bool have_prev = false;
  for (const auto& r : records) {
    const bool chained = have_prev && r.window.target_index == prev_index + 1;
    const auto out = model.forward(r.window, chained ? &prev : nullptr);
    bank.add(r.label, out.hidden1);
    prev = out.weighted_context;
    prev_index = r.window.target_index;
    have_prev = true;
  }
  return bank;
}

// Double sums over all ordered pairs of present classes, diagonal included,
// normalised by P^2. A zero-norm mean contributes cosine 0.
inline InterClassStats interclass_stats(const ClassFeatureBank& bank) {
  const auto cls = bank.present();
  if (cls.size() < 2) throw InsufficientClasses("need at least 2 populated classes, found " + std::to_string(cls.size()));
  std::vector<std::vector<double>> v;
  std::vector<double> norm;
  for (int j : cls) {
    v.push_back(bank.mean(j));
    double n = 0.0;
    for (double x : v.back()) n += x * x;
    norm.push_back(std::sqrt(n));
  }
  double ad = 0.0, ac = 0.0;
  for (std::size_t a = 0; a < v.size(); ++a) {
    for (std::size_t b = 0; b < v.size(); ++b) {
      double d2 = 0.0, dot = 0.0;
      for (std::size_t k = 0; k < v[a].size(); ++k) {
        d2 += (v[a][k] - v[b][k]) * (v[a][k] - v[b][k]);
        dot += v[a][k] * v[b][k];
      }
      ad += std::sqrt(d2);
      if (norm[a] > 0.0 && norm[b] > 0.0) ac += dot / (norm[a] * norm[b]);
    }
  }
  const double p2 = static_cast<double>(v.size() * v.size());
  return {ad / p2, ac / p2, static_cast<int>(v.size())};
}

}  // namespace octctx
