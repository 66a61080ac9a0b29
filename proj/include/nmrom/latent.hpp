#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "nmrom/autoencoder.hpp"
#include "nmrom/error.hpp"
#include "nmrom/metrics.hpp"
#include "nmrom/neural/checkpoint.hpp"
#include "nmrom/neural/lstm.hpp"
#include "nmrom/neural/network.hpp"
#include "nmrom/neural/train.hpp"
#include "nmrom/rom.hpp"
#include "nmrom/snapshots.hpp"

namespace nmrom {

/// Sequence model (mu, t_i) -> z_i: a 2-layer LSTM followed by a per-step
/// head Linear(H, 50) ELU Linear(50, 4). Inputs are divided by fixed
/// scales taken from the training data.
struct LstmModel {
  nn::Lstm lstm{2, 100, 2};
  nn::Network head;
  double stride = 0.0;   // time between consecutive sequence entries
  double mu_scale = 1.0;
  double t_scale = 1.0;

  std::vector<nn::Param*> params() {
    auto p = lstm.params();
    auto q = head.params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
};

inline LstmModel build_lstm(Index hidden = 100, Index layers = 2, std::uint64_t seed = 0) {
  LstmModel m{nn::Lstm(2, hidden, layers), nn::Network({hidden, 1, 1})};
  m.head.add(nn::Linear(hidden, 50, "head.l0"));
  m.head.add_activation(nn::Activation::elu);
  m.head.add(nn::Linear(50, kLatentDim, "head.l1"));
  nn::Rng rng(seed);
  m.lstm.init(rng);
  m.head.init(rng);
  return m;
}

namespace detail {
inline nn::Tensor lstm_inputs(const LstmModel& m, const std::vector<double>& mus, Index steps) {
  auto seq = nn::make_sequence(mus.size(), steps, 2);
  for (Index b = 0; b < mus.size(); ++b)
    for (Index t = 0; t < steps; ++t) {
      seq.data[(b * steps + t) * 2] = mus[b] / m.mu_scale;
      seq.data[(b * steps + t) * 2 + 1] = static_cast<double>(t) * m.stride / m.t_scale;
    }
  return seq;
}

/// Latents for each (sequence, step), laid out [b][t][k].
inline nn::Tensor lstm_forward(LstmModel& m, const nn::Tensor& seq, bool cache) {
  const nn::Tensor h = m.lstm.forward(seq, cache);
  const Index B = seq.n, T = seq.shape.c, H = m.lstm.hidden_size();
  const nn::Tensor flat(B * T, {H, 1, 1}, h.data);
  return m.head.forward(flat, cache);
}

inline void check_stride(const LstmModel& m, const std::vector<double>& times) {
  if (!(m.stride > 0.0)) throw ConfigError("lstm: model has no training stride");
  for (Index i = 0; i < times.size(); ++i) {
    const double expect = static_cast<double>(i) * m.stride;
    if (std::abs(times[i] - expect) > 1e-9 * std::max(1.0, std::abs(expect))) {
      throw std::invalid_argument("lstm: times must be 0, dt, 2 dt, ... with the training stride dt = " +
                                  std::to_string(m.stride));
    }
  }
}
}  // namespace detail

/// Fits the LSTM to the encoder latents of every training trajectory with
/// a plain MSE loss; mini-batches are groups of trajectories.
inline nn::TrainHistory train_lstm(LstmModel& m, CaeModel& cae, const SnapshotSet& train, const nn::TrainConfig& cfg) {
  if (train.n_params() == 0) throw ConfigError("train_lstm: empty training set");
  const Index T = train.times[0].size();
  for (const auto& ts : train.times)
    if (ts.size() != T) throw ConfigError("train_lstm: trajectories must have equal length");
  if (T < 2) throw ConfigError("train_lstm: need at least two times per trajectory");
  m.stride = train.dt * static_cast<double>(train.stride);
  detail::check_stride(m, train.times[0]);
  m.mu_scale = 0.0;
  for (double mu : train.params) m.mu_scale = std::max(m.mu_scale, std::abs(mu));
  if (m.mu_scale == 0.0) m.mu_scale = 1.0;
  m.t_scale = static_cast<double>(T - 1) * m.stride;

  const Matrix latents = encode_batch(cae, train.data);
  const nn::Tensor all_inputs = detail::lstm_inputs(m, train.params, T);
  auto params = m.params();
  auto hist = nn::train_loop(params, train.n_params(), cfg, [&](const std::vector<Index>& batch) {
    const Index B = batch.size();
    nn::Tensor seq = nn::make_sequence(B, T, 2);
    for (Index b = 0; b < B; ++b)
      std::copy_n(all_inputs.sample(batch[b]), T * 2, seq.sample(b));
    const nn::Tensor y = detail::lstm_forward(m, seq, true);
    nn::Tensor dy(y.n, y.shape);
    const double norm = static_cast<double>(B * T * kLatentDim);
    double loss = 0.0;
    for (Index b = 0; b < B; ++b)
      for (Index t = 0; t < T; ++t)
        for (Index k = 0; k < kLatentDim; ++k) {
          const Index i = (b * T + t) * kLatentDim + k;
          const double e = y.data[i] - latents(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(train.offset(batch[b]) + t));
          loss += e * e;
          dy.data[i] = 2.0 * e / norm;
        }
    const nn::Tensor dh = m.head.backward(dy);
    m.lstm.backward(nn::Tensor(B, {T, m.lstm.hidden_size(), 1}, dh.data));
    return loss / norm;
  });
  if (hist.aborted) log::warn("train_lstm: " + hist.message);
  return hist;
}

/// One batched forward pass over all parameters.
inline std::vector<LatentTrajectory> lstm_rollout(LstmModel& m, const std::vector<double>& mus,
                                                  const std::vector<double>& times) {
  if (mus.empty() || times.empty()) throw std::invalid_argument("lstm_rollout: empty parameter or time list");
  detail::check_stride(m, times);
  const Index T = times.size();
  const nn::Tensor y = detail::lstm_forward(m, detail::lstm_inputs(m, mus, T), false);
  std::vector<LatentTrajectory> out(mus.size());
  for (Index b = 0; b < mus.size(); ++b) {
    auto& tr = out[b];
    tr.mu = mus[b];
    tr.variant = "lstm";
    tr.dt = m.stride;
    tr.times = times;
    for (Index t = 0; t < T; ++t)
      tr.states.push_back(Eigen::Map<const Vector>(y.sample(b * T + t), static_cast<Eigen::Index>(kLatentDim)));
  }
  return out;
}

/// Per-parameter errors of decoded LSTM latents; the first `time_cut`
/// snapshots of each series are skipped.
inline std::vector<ErrorStats> lstm_report(LstmModel& m, CaeModel& cae, const SnapshotSet& test, Index time_cut = 0) {
  std::vector<ErrorStats> out;
  for (Index p = 0; p < test.n_params(); ++p) {
    const auto traj = lstm_rollout(m, {test.params[p]}, test.times[p]);
    ErrorAccumulator acc;
    for (Index k = time_cut; k < test.times[p].size(); ++k)
      acc.add(decode(cae, traj[0].states[k]).values, test.column(test.offset(p) + k));
    out.push_back(acc.finish("lstm mu=" + std::to_string(test.params[p])));
  }
  return out;
}

inline void save_lstm(LstmModel& m, const std::filesystem::path& path) {
  nn::Checkpoint ck;
  ck.meta["kind"] = "lstm";
  ck.meta["arch"] = "lstm-head";
  ck.meta["hidden"] = std::to_string(m.lstm.hidden_size());
  ck.meta["layers"] = std::to_string(m.lstm.layers());
  ck.add("scales", {m.stride, m.mu_scale, m.t_scale});
  ck.add_all(m.params());
  nn::save_checkpoint(ck, path);
}

inline LstmModel load_lstm(const std::filesystem::path& path) {
  const auto ck = nn::load_checkpoint(path);
  if (ck.meta_at("kind") != "lstm") throw FormatError(path.string() + ": not an LSTM checkpoint");
  LstmModel m = build_lstm(std::stoul(ck.meta_at("hidden")), std::stoul(ck.meta_at("layers")));
  ck.load_into(m.params());
  const auto& s = ck.get("scales").data;
  if (s.size() != 3) throw FormatError(path.string() + ": bad scales entry");
  m.stride = s[0];
  m.mu_scale = s[1];
  m.t_scale = s[2];
  return m;
}

}  // namespace nmrom
