#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "nmrom/fvm/ncl.hpp"
#include "nmrom/fvm/swe.hpp"

namespace nmrom::fvm {

using Problem = std::variant<NclProblem, SweProblem>;

inline const Grid& grid_of(const Problem& p) {
  return std::visit([](const auto& q) -> const Grid& { return q.grid; }, p);
}
inline Index channels_of(const Problem& p) {
  return std::visit([](const auto& q) { return std::decay_t<decltype(q)>::kChannels; }, p);
}
inline int stencil_layers_of(const Problem& p) {
  return std::visit([](const auto& q) { return std::decay_t<decltype(q)>::kStencilLayers; }, p);
}
inline double mu_of(const Problem& p) {
  return std::visit([](const auto& q) { return q.mu; }, p);
}
inline double dt_of(const Problem& p) {
  return std::visit([](const auto& q) { return q.dt; }, p);
}
inline double t_final_of(const Problem& p) {
  return std::visit([](const auto& q) { return q.t_final; }, p);
}
inline std::string problem_id(const Problem& p) { return std::holds_alternative<NclProblem>(p) ? "ncl" : "swe"; }

inline Problem with_mu(Problem p, double mu) {
  std::visit([mu](auto& q) { q.mu = mu; }, p);
  return p;
}
inline Problem with_horizon(Problem p, double t_final) {
  std::visit([t_final](auto& q) { q.t_final = t_final; }, p);
  return p;
}

inline long step_count(const Problem& p) { return std::lround(t_final_of(p) / dt_of(p)); }

inline Field initial_condition(const Problem& p) {
  return std::visit(
      [](const auto& q) {
        if constexpr (std::is_same_v<std::decay_t<decltype(q)>, NclProblem>)
          return initial_condition_ncl(q.grid, q.mu);
        else
          return initial_condition_swe(q.grid, q.mu);
      },
      p);
}

inline Field step(const Problem& p, const Field& prev) {
  return std::visit(
      [&](const auto& q) {
        if constexpr (std::is_same_v<std::decay_t<decltype(q)>, NclProblem>)
          return step_ncl(q, prev);
        else
          return step_swe(q, prev);
      },
      p);
}

inline std::vector<double> residual(const Problem& p, const Field& state, const Field& prev) {
  return std::visit([&](const auto& q) { return residual(q, state, prev); }, p);
}

inline std::vector<double> residual_restricted(const Problem& p, std::span<const double> halo_state,
                                               std::span<const double> prev_halo_state, const SubmeshProjector& proj) {
  return std::visit([&](const auto& q) { return residual_restricted(q, halo_state, prev_halo_state, proj); }, p);
}

/// Sampled full-order trajectory for one parameter value.
struct SnapshotSeries {
  double mu = 0.0;
  std::vector<double> times;
  std::vector<Field> states;
  std::vector<double> step_ms;  // wall-clock per time step
};

/// Semi-implicit march from the initial condition, keeping every
/// `sample_every`-th state (the initial one included).
inline SnapshotSeries fom_rollout(const Problem& p, int sample_every) {
  if (sample_every < 1) throw ConfigError("fom_rollout: sample_every must be >= 1");
  std::visit([](const auto& q) { q.validate(); }, p);
  const long steps = step_count(p);
  const double dt = dt_of(p);
  SnapshotSeries out;
  out.mu = mu_of(p);
  Field state = initial_condition(p);
  out.times.push_back(0.0);
  out.states.push_back(state);
  out.step_ms.reserve(static_cast<std::size_t>(steps));
  for (long s = 1; s <= steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    state = step(p, state);
    const auto t1 = std::chrono::steady_clock::now();
    out.step_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    if (s % sample_every == 0) {
      out.times.push_back(static_cast<double>(s) * dt);
      out.states.push_back(state);
    }
  }
  return out;
}

}  // namespace nmrom::fvm
