#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "nmrom/error.hpp"

namespace nmrom::nn {

using Index = std::size_t;

/// Per-sample shape (channels, height, width); dense layers use (features, 1, 1).
struct Shape {
  Index c = 0, h = 1, w = 1;
  [[nodiscard]] Index size() const noexcept { return c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
  [[nodiscard]] std::string str() const {
    return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

/// Batch of samples, row-major (n, c, h, w).
struct Tensor {
  Index n = 0;
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Index batch, Shape s, double fill = 0.0) : n(batch), shape(s), data(batch * s.size(), fill) {}
  Tensor(Index batch, Shape s, std::vector<double> values) : n(batch), shape(s), data(std::move(values)) {
    if (data.size() != n * shape.size()) throw ShapeError("tensor data length does not match shape");
  }

  [[nodiscard]] Index sample_size() const noexcept { return shape.size(); }
  [[nodiscard]] double* sample(Index i) noexcept { return data.data() + i * shape.size(); }
  [[nodiscard]] const double* sample(Index i) const noexcept { return data.data() + i * shape.size(); }
  [[nodiscard]] bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Trainable array with its gradient accumulator.
struct Param {
  std::string name;
  std::vector<Index> dims;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string n, std::vector<Index> d) : name(std::move(n)), dims(std::move(d)) {
    Index total = 1;
    for (Index x : dims) total *= x;
    value.assign(total, 0.0);
    grad.assign(total, 0.0);
  }
  [[nodiscard]] Index size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

}  // namespace nmrom::nn
