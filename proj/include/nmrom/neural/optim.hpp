#pragma once

#include <cmath>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/neural/tensor.hpp"

namespace nmrom::nn {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;
};

/// One bias-corrected Adam update of every parameter from its gradient.
inline void adam_step(const std::vector<Param*>& params, AdamState& st, double lr) {
  if (st.m.empty()) {
    for (const Param* p : params) {
      st.m.emplace_back(p->size(), 0.0);
      st.v.emplace_back(p->size(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    auto& m = st.m[k];
    auto& v = st.v[k];
    if (m.size() != p.size()) throw ShapeError("adam: moment shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
    }
  }
}

/// Adds lambda * ||theta||^2 to the loss and its gradient; returns the penalty.
inline double add_weight_penalty(const std::vector<Param*>& params, double lambda) {
  if (lambda == 0.0) return 0.0;
  double s = 0.0;
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      s += p->value[i] * p->value[i];
      p->grad[i] += 2.0 * lambda * p->value[i];
    }
  }
  return lambda * s;
}

}  // namespace nmrom::nn
