#pragma once

// Single-hidden-layer tanh network with a linear output node, squashed by a
// logistic for classification. Weight layout (hidden units h = 0..H-1):
//   [ for each h: w_h1 .. w_hd, c_h ]   input->hidden weights and bias (LDR block)
//   [ v_1 .. v_H, v_0 ]                 hidden->output weights and bias (OUT block)

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "model.hpp"

namespace hierbayes {

class MlpLayout {
 public:
  MlpLayout(int input_dim, int hidden_dim) : d_(input_dim), h_(hidden_dim) {
    if (input_dim < 1 || hidden_dim < 1) throw RejectedInput("MlpLayout: dimensions must be positive");
  }

  [[nodiscard]] int input_dim() const { return d_; }
  [[nodiscard]] int hidden_dim() const { return h_; }
  [[nodiscard]] int ldr_size() const { return h_ * (d_ + 1); }
  [[nodiscard]] int out_size() const { return h_ + 1; }
  [[nodiscard]] int size() const { return ldr_size() + out_size(); }

  [[nodiscard]] int incoming(int unit) const { return unit * (d_ + 1); }  // offset of w_h1
  [[nodiscard]] int outgoing(int unit) const { return ldr_size() + unit; }
  [[nodiscard]] int output_bias() const { return ldr_size() + h_; }

  /// Linear output (pre-squash).
  [[nodiscard]] double activation(const Vector& w, const Vector& x) const {
    double out = w[output_bias()];
    for (int u = 0; u < h_; ++u) {
      const int base = incoming(u);
      double pre = w[base + d_];
      for (int k = 0; k < d_; ++k) pre += w[base + k] * x[k];
      out += w[outgoing(u)] * std::tanh(pre);
    }
    return out;
  }

  /// f_theta(x) = P(y = 1 | x) in (0, 1).
  [[nodiscard]] double probability(const Vector& w, const Vector& x) const {
    return 1.0 / (1.0 + std::exp(-activation(w, x)));
  }

  /// Negates all weights into and out of `unit`; the network function is unchanged.
  [[nodiscard]] Vector flip_unit(Vector w, int unit) const {
    w.segment(incoming(unit), d_ + 1) *= -1.0;
    w[outgoing(unit)] *= -1.0;
    return w;
  }

  /// Reorders hidden units so that new unit i is old unit perm[i].
  [[nodiscard]] Vector permute_units(const Vector& w, const std::vector<int>& perm) const {
    Vector out = w;
    for (int i = 0; i < h_; ++i) {
      out.segment(incoming(i), d_ + 1) = w.segment(incoming(perm[i]), d_ + 1);
      out[outgoing(i)] = w[outgoing(perm[i])];
    }
    return out;
  }

  /// Representative of the sign-flip / permutation orbit: each unit's
  /// largest-magnitude incoming weight made positive, then units sorted by the
  /// magnitude of their first incoming weight (ties broken lexicographically).
  [[nodiscard]] Vector canonicalize(const Vector& w) const {
    Vector out = w;
    for (int u = 0; u < h_; ++u) {
      Eigen::Index arg = 0;
      out.segment(incoming(u), d_ + 1).cwiseAbs().maxCoeff(&arg);
      if (out[incoming(u) + arg] < 0.0) out = flip_unit(out, u);
    }
    std::vector<int> perm(static_cast<std::size_t>(h_));
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](int p, int q) {
      const double ap = std::abs(out[incoming(p)]), aq = std::abs(out[incoming(q)]);
      if (ap != aq) return ap < aq;
      for (int k = 0; k <= d_; ++k) {
        if (out[incoming(p) + k] != out[incoming(q) + k]) return out[incoming(p) + k] < out[incoming(q) + k];
      }
      return out[outgoing(p)] < out[outgoing(q)];
    });
    return permute_units(out, perm);
  }

  /// A uniformly random element of the symmetry group applied to `w`.
  [[nodiscard]] Vector random_symmetry(const Vector& w, Rng& rng) const {
    std::vector<int> perm(static_cast<std::size_t>(h_));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Vector out = permute_units(w, perm);
    for (int u = 0; u < h_; ++u)
      if (uniform01(rng) < 0.5) out = flip_unit(out, u);
    return out;
  }

 private:
  int d_;
  int h_;
};

/// Sum over (x, y) of y log f + (1 - y) log(1 - f). Returns -inf (with the flag
/// set) when f is exactly 0 or 1 at a disagreeing label.
struct ClassifierLogLikelihood {
  double value = 0.0;
  bool degenerate = false;
};

struct LabeledPoint {
  Vector x;
  int y = 0;
};

template <typename Prob>
ClassifierLogLikelihood classifier_log_likelihood(Prob&& f, std::span<const LabeledPoint> data) {
  ClassifierLogLikelihood out;
  for (const LabeledPoint& p : data) {
    const double q = f(p.x);
    const double mass = p.y == 1 ? q : 1.0 - q;
    if (mass <= 0.0) {
      out.value = -kInf;
      out.degenerate = true;
      return out;
    }
    out.value += p.y == 1 ? std::log(q) : std::log1p(-q);
  }
  return out;
}

inline ClassifierLogLikelihood mlp_classifier_log_likelihood(const MlpLayout& net, const Vector& weights,
                                                             std::span<const LabeledPoint> data) {
  return classifier_log_likelihood([&](const Vector& x) { return net.probability(weights, x); }, data);
}

}  // namespace hierbayes
