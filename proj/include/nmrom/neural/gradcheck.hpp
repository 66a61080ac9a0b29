#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nmrom/neural/network.hpp"
#include "nmrom/neural/rng.hpp"

namespace nmrom::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;  // over parameters and inputs
  double max_param_error = 0.0;
  double max_input_error = 0.0;
  Index checked = 0;
};

inline double fd_relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares back-propagated gradients of L = sum_i r_i y_i (r fixed random)
/// with central differences of step `h`. The error of each parameter tensor
/// (and of the input) is max|g_fd - g| / max|g|, so entries with vanishing
/// gradients are measured against the tensor's gradient scale.
inline GradCheckResult gradient_check(Network& net, const Tensor& input, std::uint64_t seed = 7, double h = 1e-6,
                                      double floor = 1e-12) {
  Rng rng(seed);
  Tensor y = net.forward(input, true);
  std::vector<double> r(y.data.size());
  for (double& v : r) v = rng.uniform(-1.0, 1.0);
  auto loss = [&](const Tensor& x) {
    const Tensor out = net.forward(x, false);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * out.data[i];
    return s;
  };
  net.zero_grad();
  net.forward(input, true);
  Tensor dy(y.n, y.shape, r);
  const Tensor dx = net.backward(dy);

  GradCheckResult res;
  for (Param* p : net.params()) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double lp = loss(input);
      p->value[i] = keep - h;
      const double lm = loss(input);
      p->value[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      diff = std::max(diff, std::abs(fd - p->grad[i]));
      scale = std::max({scale, std::abs(fd), std::abs(p->grad[i])});
      ++res.checked;
    }
    res.max_param_error = std::max(res.max_param_error, diff / std::max(scale, floor));
  }
  Tensor x = input;
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double lp = loss(x);
    x.data[i] = keep - h;
    const double lm = loss(x);
    x.data[i] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    diff = std::max(diff, std::abs(fd - dx.data[i]));
    scale = std::max({scale, std::abs(fd), std::abs(dx.data[i])});
    ++res.checked;
  }
  res.max_input_error = diff / std::max(scale, floor);
  res.max_rel_error = std::max(res.max_param_error, res.max_input_error);
  return res;
}

}  // namespace nmrom::nn
