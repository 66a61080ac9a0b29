#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/log.hpp"

namespace nmrom {

/// Time-averaged and time-maximum relative L2 error of one series.
struct ErrorStats {
  double mean = 0.0;
  double max = 0.0;
  std::size_t count = 0;    // snapshots that entered the averages
  std::size_t skipped = 0;  // zero-norm reference snapshots
};

/// ||pred - truth||_2 / ||truth||_2, or a negative value when truth is zero.
inline double relative_error(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ShapeError("relative_error: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = pred[i] - truth[i];
    num += e * e;
    den += truth[i] * truth[i];
  }
  if (den == 0.0) return -1.0;
  return std::sqrt(num / den);
}

class ErrorAccumulator {
 public:
  void add(std::span<const double> pred, std::span<const double> truth) { add_error(relative_error(pred, truth)); }

  /// Negative values mark a zero-norm reference and are skipped.
  void add_error(double e) {
    if (e < 0.0) {
      ++stats_.skipped;
      return;
    }
    sum_ += e;
    stats_.max = std::max(stats_.max, e);
    ++stats_.count;
  }

  [[nodiscard]] ErrorStats finish(const std::string& label = {}) const {
    ErrorStats s = stats_;
    s.mean = s.count ? sum_ / static_cast<double>(s.count) : 0.0;
    if (s.skipped) log::warn(label + ": skipped " + std::to_string(s.skipped) + " zero-norm reference snapshot(s)");
    return s;
  }

 private:
  ErrorStats stats_;
  double sum_ = 0.0;
};

/// Mean and max relative error over paired series of equal length.
inline ErrorStats metrics(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("metrics: series lengths differ");
  ErrorAccumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], truth[i]);
  return acc.finish("metrics");
}

}  // namespace nmrom
