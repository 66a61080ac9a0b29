#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/grid.hpp"
#include "nmrom/log.hpp"
#include "nmrom/metrics.hpp"
#include "nmrom/neural/checkpoint.hpp"
#include "nmrom/neural/network.hpp"
#include "nmrom/neural/train.hpp"
#include "nmrom/snapshots.hpp"

namespace nmrom {

inline constexpr Index kLatentDim = 4;

/// One decoder network and the field channels it produces.
struct DecoderHead {
  nn::Network net;
  std::vector<Index> channels;
};

/// Convolutional autoencoder with normalization folded into encode/decode.
/// Networks act on normalized fields; positivity channels are clipped with
/// a ReLU after denormalization.
struct CaeModel {
  std::string problem;
  Index channels = 0;
  Index nx = 0, ny = 0;
  nn::Network encoder;
  std::vector<DecoderHead> decoders;
  std::vector<bool> positive;  // per channel
  NormalizationStats stats;

  [[nodiscard]] Index dofs() const noexcept { return channels * nx * ny; }
  [[nodiscard]] bool fitted() const noexcept { return stats.dofs() == dofs(); }
  [[nodiscard]] Index parameter_count() const {
    Index n = encoder.parameter_count();
    for (const auto& d : decoders) n += d.net.parameter_count();
    return n;
  }
  std::vector<nn::Param*> params() {
    auto p = encoder.params();
    for (auto& d : decoders) {
      auto q = d.net.params();
      p.insert(p.end(), q.begin(), q.end());
    }
    return p;
  }
};

/// Side length entering the decoder's first transposed convolution and the
/// padding of the last one, so that 32 s0 - 36 - 2 (p_last - 1) = n.
struct DecoderGeometry {
  Index s0;
  Index last_pad;
};

inline DecoderGeometry decoder_geometry(Index n) {
  if (n < 6 || n % 2 != 0) throw ConfigError("CAE needs an even grid side >= 6, got " + std::to_string(n));
  const Index s0 = std::max<Index>(2, (n + 36 + 31) / 32);
  return {s0, 1 + (32 * s0 - 36 - n) / 2};
}

namespace detail {
using nn::Activation;
using nn::ConvTr2d;
using nn::Linear;
using nn::Reshape;

inline nn::Network build_encoder(Index channels, Index n) {
  nn::Network enc({channels, n, n});
  const Index chans[] = {channels, 8, 16, 32, 64, 128};
  const Index ks[] = {5, 3, 3, 3, 2};
  const Index pads[] = {0, 1, 1, 1, 1};
  for (int l = 0; l < 5; ++l) {
    enc.add(nn::Conv2d(chans[l], chans[l + 1], ks[l], pads[l], 2, "enc.conv" + std::to_string(l)));
    enc.add_activation(Activation::elu);
  }
  const Index flat = enc.output_shape().size();
  enc.add(Reshape({flat, 1, 1}));
  enc.add(Linear(flat, kLatentDim, "enc.linear"));
  enc.add_activation(Activation::elu);
  return enc;
}

/// Linear, reshape, then a stride-2 chain of transposed convolutions
/// (kernels 2, 3, 4, 4, 4; paddings 1, 1, 1, 0, last).
inline nn::Network build_plain_decoder(const std::string& tag, const std::vector<Index>& chans, Index n) {
  const auto geo = decoder_geometry(n);
  nn::Network dec({kLatentDim, 1, 1});
  dec.add(Linear(kLatentDim, chans[0] * geo.s0 * geo.s0, tag + ".linear"));
  dec.add_activation(Activation::elu);
  dec.add(Reshape({chans[0], geo.s0, geo.s0}));
  const Index ks[] = {2, 3, 4, 4, 4};
  const Index pads[] = {1, 1, 1, 0, geo.last_pad};
  for (int l = 0; l < 5; ++l) {
    dec.add(ConvTr2d(chans[l], chans[l + 1], ks[l], pads[l], 2, tag + ".convtr" + std::to_string(l)));
    if (l < 4) dec.add_activation(Activation::elu);
  }
  return dec;
}

inline nn::Network build_velocity_decoder(Index n) {
  const auto geo = decoder_geometry(n);
  nn::Network dec({kLatentDim, 1, 1});
  dec.add(Linear(kLatentDim, 300 * geo.s0 * geo.s0, "decU.linear"));
  dec.add_activation(Activation::elu);
  dec.add(Reshape({300, geo.s0, geo.s0}));
  dec.add(ConvTr2d(300, 75, 2, 1, 2, "decU.convtr0"));
  dec.add_activation(Activation::elu);
  dec.add(nn::RecurrentPair(ConvTr2d(75, 75, 3, 1, 2, "decU.convtr1"), ConvTr2d(75, 75, 3, 1, 2, "decU.rec1")));
  dec.add(ConvTr2d(75, 35, 4, 1, 2, "decU.convtr2"));
  dec.add_activation(Activation::elu);
  dec.add(nn::RecurrentPair(ConvTr2d(35, 20, 4, 0, 2, "decU.convtr3"), ConvTr2d(35, 20, 4, 0, 2, "decU.rec3")));
  dec.add(ConvTr2d(20, 2, 4, geo.last_pad, 2, "decU.convtr4"));
  return dec;
}
}  // namespace detail

/// Untrained CAE for "ncl" (one 2-channel decoder) or "swe" (a depth decoder
/// and a velocity decoder with recurrent transposed convolutions).
inline CaeModel build_cae(const std::string& problem, Index nx, Index ny, std::uint64_t seed = 0) {
  if (nx != ny) throw ConfigError("CAE needs a square grid");
  CaeModel m;
  m.problem = problem;
  m.nx = nx;
  m.ny = ny;
  if (problem == "ncl") {
    m.channels = 2;
    m.encoder = detail::build_encoder(2, nx);
    m.decoders.push_back({detail::build_plain_decoder("dec", {128, 64, 32, 16, 8, 2}, nx), {0, 1}});
    m.positive = {true, true};
  } else if (problem == "swe") {
    m.channels = 3;
    m.encoder = detail::build_encoder(3, nx);
    m.decoders.push_back({detail::build_plain_decoder("decH", {240, 120, 60, 30, 15, 1}, nx), {2}});
    m.decoders.push_back({detail::build_velocity_decoder(nx), {0, 1}});
    m.positive = {false, false, true};
  } else {
    throw ConfigError("build_cae: unknown problem '" + problem + "'");
  }
  nn::Rng rng(seed);
  m.encoder.init(rng);
  for (auto& d : m.decoders) {
    d.net.init(rng);
    if (d.net.output_shape() != nn::Shape{d.channels.size(), ny, nx}) throw ShapeError("decoder output shape mismatch");
  }
  return m;
}

namespace detail {
inline void require_fitted(const CaeModel& m) {
  if (!m.fitted()) throw ConfigError("CAE normalization statistics are not fitted");
}

/// Writes the decoders' outputs for a batch of latents into normalized
/// channel-major fields.
inline nn::Tensor run_decoders(CaeModel& m, const nn::Tensor& z, bool cache) {
  const Index cells = m.nx * m.ny;
  nn::Tensor out(z.n, {m.channels, m.ny, m.nx});
  for (auto& d : m.decoders) {
    const nn::Tensor y = d.net.forward(z, cache);
    for (Index i = 0; i < z.n; ++i)
      for (Index k = 0; k < d.channels.size(); ++k)
        std::copy_n(y.sample(i) + k * cells, cells, out.sample(i) + d.channels[k] * cells);
  }
  return out;
}

inline void backward_decoders(CaeModel& m, const nn::Tensor& d_out, nn::Tensor& dz) {
  const Index cells = m.nx * m.ny;
  for (auto& d : m.decoders) {
    nn::Tensor dy(d_out.n, {d.channels.size(), m.ny, m.nx});
    for (Index i = 0; i < d_out.n; ++i)
      for (Index k = 0; k < d.channels.size(); ++k)
        std::copy_n(d_out.sample(i) + d.channels[k] * cells, cells, dy.sample(i) + k * cells);
    const nn::Tensor g = d.net.backward(dy);
    for (std::size_t j = 0; j < g.data.size(); ++j) dz.data[j] += g.data[j];
  }
}

/// Denormalize in place and clip positivity channels; returns the ReLU mask.
inline void to_physical(std::span<double> u, const NormalizationStats& stats, const std::vector<bool>& positive,
                        std::vector<char>* mask = nullptr) {
  denormalize_inplace(u, stats);
  const Index cells = stats.cells();
  if (mask) mask->assign(u.size(), 1);
  for (Index k = 0; k < positive.size(); ++k) {
    if (!positive[k]) continue;
    for (Index i = k * cells; i < (k + 1) * cells; ++i) {
      if (u[i] <= 0.0) {
        u[i] = 0.0;
        if (mask) (*mask)[i] = 0;
      }
    }
  }
}
}  // namespace detail

/// Latent coordinates of raw (physical) fields, one per column.
inline Matrix encode_batch(CaeModel& m, const Matrix& fields) {
  detail::require_fitted(m);
  if (static_cast<Index>(fields.rows()) != m.dofs()) throw ShapeError("encode: field length mismatch");
  if (!fields.allFinite()) throw NumericError("encode: non-finite input");
  const Matrix norm = normalize_columns(fields, m.stats);
  nn::Tensor x(static_cast<Index>(norm.cols()), {m.channels, m.ny, m.nx},
               std::vector<double>(norm.data(), norm.data() + norm.size()));
  const nn::Tensor z = m.encoder.forward(x);
  return Eigen::Map<const Matrix>(z.data.data(), kLatentDim, static_cast<Eigen::Index>(x.n));
}

inline Vector encode(CaeModel& m, std::span<const double> field) {
  return encode_batch(m, Eigen::Map<const Matrix>(field.data(), static_cast<Eigen::Index>(field.size()), 1)).col(0);
}

/// Physical fields for a batch of latents (kLatentDim x N), one per column.
inline Matrix decode_batch(CaeModel& m, const Matrix& z) {
  detail::require_fitted(m);
  if (z.rows() != static_cast<Eigen::Index>(kLatentDim)) throw ShapeError("decode: latent dimension mismatch");
  nn::Tensor zt(static_cast<Index>(z.cols()), {kLatentDim, 1, 1}, std::vector<double>(z.data(), z.data() + z.size()));
  nn::Tensor y = detail::run_decoders(m, zt, false);
  for (Index i = 0; i < y.n; ++i) detail::to_physical({y.sample(i), m.dofs()}, m.stats, m.positive);
  return Eigen::Map<const Matrix>(y.data.data(), static_cast<Eigen::Index>(m.dofs()), static_cast<Eigen::Index>(y.n));
}

inline Field decode(CaeModel& m, const Vector& z) {
  const Matrix u = decode_batch(m, z);
  return Field(m.channels, std::vector<double>(u.data(), u.data() + u.size()));
}

/// Mean relative squared reconstruction error over a batch plus, when
/// `grad` is set, back-propagation of that mean into the parameters.
inline double cae_batch_loss(CaeModel& m, const Matrix& normalized, const Matrix& raw, const std::vector<Index>& idx,
                             bool grad) {
  const Index B = idx.size(), d = m.dofs();
  nn::Tensor x(B, {m.channels, m.ny, m.nx});
  for (Index i = 0; i < B; ++i) std::copy_n(normalized.col(static_cast<Eigen::Index>(idx[i])).data(), d, x.sample(i));
  const nn::Tensor z = m.encoder.forward(x, grad);
  nn::Tensor y = detail::run_decoders(m, z, grad);
  nn::Tensor dy(B, y.shape);
  double loss = 0.0;
  std::vector<char> mask;
  const Index cells = m.nx * m.ny;
  for (Index i = 0; i < B; ++i) {
    std::span<double> u{y.sample(i), d};
    detail::to_physical(u, m.stats, m.positive, &mask);
    const auto target = raw.col(static_cast<Eigen::Index>(idx[i]));
    const double den = target.squaredNorm();
    double num = 0.0;
    for (Index j = 0; j < d; ++j) {
      const double e = u[j] - target[static_cast<Eigen::Index>(j)];
      num += e * e;
      const double scale = 1.0 / m.stats.scale(j / cells);
      dy.sample(i)[j] = mask[j] ? 2.0 * e / den / static_cast<double>(B) * scale : 0.0;
    }
    loss += num / den;
  }
  if (grad) {
    nn::Tensor dz(B, z.shape);
    detail::backward_decoders(m, dy, dz);
    m.encoder.backward(dz);
  }
  return loss / static_cast<double>(B);
}

/// Relative squared loss ||U - (phi o psi)(U)||^2 / ||U||^2 averaged over the
/// columns, plus lambda_1 ||theta||^2. Zero-norm columns are excluded.
inline double cae_loss(CaeModel& m, const Matrix& fields, double lambda1 = 0.0) {
  detail::require_fitted(m);
  std::vector<Index> idx;
  for (Eigen::Index j = 0; j < fields.cols(); ++j)
    if (fields.col(j).squaredNorm() > 0.0) idx.push_back(static_cast<Index>(j));
  if (idx.size() < static_cast<std::size_t>(fields.cols())) log::warn("cae_loss: excluded zero-norm snapshots");
  if (idx.empty()) throw ConfigError("cae_loss: no non-zero snapshots");
  double loss = cae_batch_loss(m, normalize_columns(fields, m.stats), fields, idx, false);
  double penalty = 0.0;
  for (auto* p : m.params())
    for (double v : p->value) penalty += v * v;
  return loss + lambda1 * penalty;
}

/// Fits normalization on the training set, then trains encoder and decoders
/// jointly on the relative reconstruction loss.
inline nn::TrainHistory train_cae(CaeModel& m, const SnapshotSet& train, const nn::TrainConfig& cfg,
                                  const std::function<void(int, double)>& on_epoch = {}) {
  if (train.problem != m.problem || train.nx != m.nx || train.ny != m.ny) {
    throw ConfigError("train_cae: snapshot set does not match the model");
  }
  m.stats = fit_normalization(train);
  std::vector<Index> keep;
  for (Index j = 0; j < train.count(); ++j)
    if (train.data.col(static_cast<Eigen::Index>(j)).squaredNorm() > 0.0) keep.push_back(j);
  if (keep.size() < train.count()) {
    log::warn("train_cae: excluded " + std::to_string(train.count() - keep.size()) + " zero-norm snapshot(s)");
  }
  if (keep.empty()) throw ConfigError("train_cae: no usable snapshots");
  const Matrix normalized = normalize_columns(train.data, m.stats);
  auto params = m.params();
  auto hist = nn::train_loop(
      params, keep.size(), cfg,
      [&](const std::vector<Index>& batch) {
        std::vector<Index> idx(batch.size());
        for (Index i = 0; i < batch.size(); ++i) idx[i] = keep[batch[i]];
        return cae_batch_loss(m, normalized, train.data, idx, true);
      },
      nullptr, on_epoch);
  if (hist.aborted) log::warn("train_cae: " + hist.message);
  return hist;
}

/// Per-parameter relative errors of decode(encode(U)) against U.
inline std::vector<ErrorStats> reconstruction_report(CaeModel& m, const SnapshotSet& test) {
  std::vector<ErrorStats> out;
  for (Index p = 0; p < test.n_params(); ++p) {
    const Index o = test.offset(p), n = test.times[p].size();
    const Matrix cols = test.data.middleCols(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(n));
    const Matrix rec = decode_batch(m, encode_batch(m, cols));
    ErrorAccumulator acc;
    for (Index k = 0; k < n; ++k)
      acc.add({rec.col(static_cast<Eigen::Index>(k)).data(), m.dofs()}, test.column(o + k));
    out.push_back(acc.finish("reconstruction mu=" + std::to_string(test.params[p])));
  }
  return out;
}

// Checkpoint helpers.

inline void add_stats(nn::Checkpoint& ck, const NormalizationStats& s, const std::string& prefix) {
  ck.add(prefix + "mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size()));
  ck.add(prefix + "min", s.min);
  ck.add(prefix + "max", s.max);
}

inline NormalizationStats read_stats(const nn::Checkpoint& ck, const std::string& prefix, Index channels) {
  NormalizationStats s;
  s.channels = channels;
  const auto& mean = ck.get(prefix + "mean").data;
  s.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.min = ck.get(prefix + "min").data;
  s.max = ck.get(prefix + "max").data;
  if (s.min.size() != channels || s.max.size() != channels) throw FormatError("stats channel count mismatch");
  for (Index k = 0; k < channels; ++k) s.degenerate.push_back(!(s.max[k] > s.min[k]));
  return s;
}

inline nn::Checkpoint cae_checkpoint(CaeModel& m) {
  detail::require_fitted(m);
  nn::Checkpoint ck;
  ck.meta["kind"] = "cae";
  ck.meta["problem"] = m.problem;
  ck.meta["nx"] = std::to_string(m.nx);
  ck.meta["ny"] = std::to_string(m.ny);
  ck.meta["arch"] = m.problem + "-cae";
  ck.add_all(m.params());
  add_stats(ck, m.stats, "stats.");
  return ck;
}

inline void save_cae(CaeModel& m, const std::filesystem::path& path) { nn::save_checkpoint(cae_checkpoint(m), path); }

inline CaeModel load_cae(const std::filesystem::path& path) {
  const auto ck = nn::load_checkpoint(path);
  if (ck.meta_at("kind") != "cae") throw FormatError(path.string() + ": not a CAE checkpoint");
  CaeModel m = build_cae(ck.meta_at("problem"), std::stoul(ck.meta_at("nx")), std::stoul(ck.meta_at("ny")));
  ck.load_into(m.params());
  m.stats = read_stats(ck, "stats.", m.channels);
  return m;
}

/// Feed-forward surrogate mapping latents directly to the halo values of
/// the submesh: 4 -> H (ELU) -> channels * s_h per head. Outputs are
/// normalized with the CAE statistics restricted to the halo.
struct CompressedDecoder {
  std::string problem;
  Index channels = 0;
  std::vector<DecoderHead> heads;  // head channels index the field channels
  std::vector<bool> positive;
  std::vector<Index> halo;         // halo cell ids (copied from the projector)
  NormalizationStats stats;        // restricted to the halo

  [[nodiscard]] Index s_h() const noexcept { return halo.size(); }
  [[nodiscard]] Index output_dim() const noexcept { return channels * halo.size(); }
  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> p;
    for (auto& h : heads) {
      auto q = h.net.params();
      p.insert(p.end(), q.begin(), q.end());
    }
    return p;
  }
};

/// Hidden width of the compressed decoder for a given number of magic
/// points. Listed counts map directly; other counts take the row of the
/// next listed count above (or the largest).
inline Index ts_hidden_size(const std::string& problem, const std::string& head, Index magic_points) {
  struct Row { Index mp, hidden; };
  std::vector<Row> rows;
  if (problem == "ncl") rows = {{50, 300}, {100, 350}, {150, 400}};
  else if (head == "h") rows = {{25, 200}, {50, 200}, {100, 300}, {150, 300}};
  else rows = {{25, 400}, {50, 400}, {100, 600}, {150, 600}};
  for (const auto& r : rows)
    if (magic_points <= r.mp) return r.hidden;
  return rows.back().hidden;
}

inline NormalizationStats restrict_stats(const NormalizationStats& s, const SubmeshProjector& proj) {
  NormalizationStats out = s;
  const auto mean = restrict_field({s.mean.data(), s.dofs()}, s.channels, proj, Target::halo);
  out.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  return out;
}

inline CompressedDecoder build_compressed_decoder(const CaeModel& cae, const SubmeshProjector& proj,
                                                  std::uint64_t seed = 0, Index hidden_override = 0) {
  if (!cae.fitted()) throw ConfigError("compressed decoder needs a fitted CAE");
  CompressedDecoder cd;
  cd.problem = cae.problem;
  cd.channels = cae.channels;
  cd.positive = cae.positive;
  cd.halo = proj.halo();
  cd.stats = restrict_stats(cae.stats, proj);
  const Index mp = proj.r_h(), sh = proj.s_h();
  auto head = [&](const std::string& tag, std::vector<Index> chans) {
    const Index hidden = hidden_override ? hidden_override : ts_hidden_size(cae.problem, tag, mp);
    nn::Network net({kLatentDim, 1, 1});
    net.add(nn::Linear(kLatentDim, hidden, "ts" + tag + ".l0"));
    net.add_activation(nn::Activation::elu);
    net.add(nn::Linear(hidden, chans.size() * sh, "ts" + tag + ".l1"));
    cd.heads.push_back({std::move(net), std::move(chans)});
  };
  if (cae.problem == "ncl") {
    head("", {0, 1});
  } else {
    head("h", {2});
    head("U", {0, 1});
  }
  nn::Rng rng(seed);
  for (auto& h : cd.heads) h.net.init(rng);
  return cd;
}

namespace detail {
inline nn::Tensor run_ts_heads(CompressedDecoder& cd, const nn::Tensor& z, bool cache) {
  const Index sh = cd.s_h();
  nn::Tensor out(z.n, {cd.output_dim(), 1, 1});
  for (auto& h : cd.heads) {
    const nn::Tensor y = h.net.forward(z, cache);
    for (Index i = 0; i < z.n; ++i)
      for (Index k = 0; k < h.channels.size(); ++k)
        std::copy_n(y.sample(i) + k * sh, sh, out.sample(i) + h.channels[k] * sh);
  }
  return out;
}
}  // namespace detail

/// Physical halo values (channel-major, c * s_h) for one latent vector.
inline std::vector<double> compressed_decode(CompressedDecoder& cd, const Vector& z) {
  if (z.size() != static_cast<Eigen::Index>(kLatentDim)) throw ShapeError("compressed decode: latent size mismatch");
  nn::Tensor zt(1, {kLatentDim, 1, 1}, std::vector<double>(z.data(), z.data() + z.size()));
  nn::Tensor y = detail::run_ts_heads(cd, zt, false);
  detail::to_physical(y.data, cd.stats, cd.positive);
  return std::move(y.data);
}

/// Teacher-student fit on (latent, restricted target) pairs with the mean
/// relative squared loss. Zero-norm targets are excluded.
inline nn::TrainHistory train_compressed_decoder(CompressedDecoder& cd, const Matrix& latents, const Matrix& targets,
                                                 const nn::TrainConfig& cfg) {
  if (latents.rows() != static_cast<Eigen::Index>(kLatentDim) || latents.cols() != targets.cols() ||
      targets.rows() != static_cast<Eigen::Index>(cd.output_dim())) {
    throw ShapeError("train_compressed_decoder: data shapes do not match the decoder");
  }
  std::vector<Index> keep;
  for (Eigen::Index j = 0; j < targets.cols(); ++j)
    if (targets.col(j).squaredNorm() > 0.0) keep.push_back(static_cast<Index>(j));
  if (keep.size() < static_cast<std::size_t>(targets.cols())) log::warn("train_compressed_decoder: excluded zero-norm targets");
  if (keep.empty()) throw ConfigError("train_compressed_decoder: no usable targets");
  const Index D = cd.output_dim(), sh = cd.s_h();
  auto params = cd.params();
  std::vector<char> mask;
  auto hist = nn::train_loop(params, keep.size(), cfg, [&](const std::vector<Index>& batch) {
    const Index B = batch.size();
    nn::Tensor z(B, {kLatentDim, 1, 1});
    for (Index i = 0; i < B; ++i) std::copy_n(latents.col(static_cast<Eigen::Index>(keep[batch[i]])).data(), kLatentDim, z.sample(i));
    nn::Tensor y = detail::run_ts_heads(cd, z, true);
    nn::Tensor dy(B, y.shape);
    double loss = 0.0;
    for (Index i = 0; i < B; ++i) {
      std::span<double> u{y.sample(i), D};
      detail::to_physical(u, cd.stats, cd.positive, &mask);
      const auto t = targets.col(static_cast<Eigen::Index>(keep[batch[i]]));
      const double den = t.squaredNorm();
      double num = 0.0;
      for (Index j = 0; j < D; ++j) {
        const double e = u[j] - t[static_cast<Eigen::Index>(j)];
        num += e * e;
        dy.sample(i)[j] = mask[j] ? 2.0 * e / den / static_cast<double>(B) / cd.stats.scale(j / sh) : 0.0;
      }
      loss += num / den;
    }
    for (auto& h : cd.heads) {
      nn::Tensor dh(B, {h.channels.size() * sh, 1, 1});
      for (Index i = 0; i < B; ++i)
        for (Index k = 0; k < h.channels.size(); ++k)
          std::copy_n(dy.sample(i) + h.channels[k] * sh, sh, dh.sample(i) + k * sh);
      h.net.backward(dh);
    }
    return loss / static_cast<double>(B);
  });
  if (hist.aborted) log::warn("train_compressed_decoder: " + hist.message);
  return hist;
}

/// Encoder latents of the training snapshots and their halo restrictions.
inline nn::TrainHistory train_compressed_decoder(CompressedDecoder& cd, CaeModel& cae, const SnapshotSet& train,
                                                 const SubmeshProjector& proj, const nn::TrainConfig& cfg) {
  const Matrix latents = encode_batch(cae, train.data);
  Matrix targets(static_cast<Eigen::Index>(cd.output_dim()), train.data.cols());
  for (Eigen::Index j = 0; j < train.data.cols(); ++j) {
    const auto r = restrict_field(train.column(static_cast<Index>(j)), train.channels, proj, Target::halo);
    targets.col(j) = Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
  }
  return train_compressed_decoder(cd, latents, targets, cfg);
}

inline void save_compressed_decoder(CompressedDecoder& cd, const std::filesystem::path& path) {
  nn::Checkpoint ck;
  ck.meta["kind"] = "compressed-decoder";
  ck.meta["problem"] = cd.problem;
  ck.meta["heads"] = std::to_string(cd.heads.size());
  for (Index i = 0; i < cd.heads.size(); ++i) {
    auto& l0 = static_cast<nn::Linear&>(cd.heads[i].net.layer(0));
    ck.meta["hidden" + std::to_string(i)] = std::to_string(l0.out());
  }
  std::vector<double> halo(cd.halo.begin(), cd.halo.end());
  ck.add("halo", halo);
  ck.add_all(cd.params());
  add_stats(ck, cd.stats, "stats.");
  nn::save_checkpoint(ck, path);
}

inline CompressedDecoder load_compressed_decoder(const std::filesystem::path& path, const Grid& grid,
                                                 std::span<const Index> magic, int layers) {
  const auto ck = nn::load_checkpoint(path);
  if (ck.meta_at("kind") != "compressed-decoder") throw FormatError(path.string() + ": not a compressed decoder");
  const auto proj = build_submesh(grid, magic, layers);
  std::vector<Index> halo;
  for (double v : ck.get("halo").data) halo.push_back(static_cast<Index>(v));
  if (halo != proj.halo()) throw FormatError(path.string() + ": halo does not match the magic points");
  CompressedDecoder cd;
  cd.problem = ck.meta_at("problem");
  cd.channels = cd.problem == "ncl" ? 2 : 3;
  cd.positive = cd.problem == "ncl" ? std::vector<bool>{true, true} : std::vector<bool>{false, false, true};
  cd.halo = halo;
  cd.stats = read_stats(ck, "stats.", cd.channels);
  const Index sh = halo.size();
  auto head = [&](Index i, const std::string& tag, std::vector<Index> chans) {
    const Index hidden = std::stoul(ck.meta_at("hidden" + std::to_string(i)));
    nn::Network net({kLatentDim, 1, 1});
    net.add(nn::Linear(kLatentDim, hidden, "ts" + tag + ".l0"));
    net.add_activation(nn::Activation::elu);
    net.add(nn::Linear(hidden, chans.size() * sh, "ts" + tag + ".l1"));
    cd.heads.push_back({std::move(net), std::move(chans)});
  };
  if (cd.problem == "ncl") {
    head(0, "", {0, 1});
  } else {
    head(0, "h", {2});
    head(1, "U", {0, 1});
  }
  ck.load_into(cd.params());
  return cd;
}

}  // namespace nmrom
