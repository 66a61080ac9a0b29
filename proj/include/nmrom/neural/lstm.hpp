#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/neural/rng.hpp"
#include "nmrom/neural/tensor.hpp"

namespace nmrom::nn {

/// Batch of sequences: data[b][t][f], stored in a Tensor with shape (T, F, 1).
inline Tensor make_sequence(Index batch, Index steps, Index features, double fill = 0.0) {
  return Tensor(batch, {steps, features, 1}, fill);
}

/// Stacked LSTM (sigmoid gates, tanh cell) with zero initial state.
/// Gate order in the weight rows: input, forget, cell, output.
class Lstm {
 public:
  Lstm(Index input, Index hidden, Index layers) : input_(input), hidden_(hidden) {
    if (layers == 0 || hidden == 0 || input == 0) throw ShapeError("lstm: sizes must be positive");
    for (Index l = 0; l < layers; ++l) {
      const Index in = l == 0 ? input : hidden;
      const std::string p = "lstm.l" + std::to_string(l);
      cells_.push_back({Param(p + ".w_ih", {4 * hidden, in}), Param(p + ".w_hh", {4 * hidden, hidden}),
                        Param(p + ".bias", {4 * hidden}), in});
    }
  }

  [[nodiscard]] Index input_size() const noexcept { return input_; }
  [[nodiscard]] Index hidden_size() const noexcept { return hidden_; }
  [[nodiscard]] Index layers() const noexcept { return cells_.size(); }

  void init(Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(hidden_));
    for (auto& c : cells_)
      for (Param* p : {&c.w_ih, &c.w_hh, &c.bias})
        for (double& v : p->value) v = rng.uniform(-b, b);
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& c : cells_) {
      out.push_back(&c.w_ih);
      out.push_back(&c.w_hh);
      out.push_back(&c.bias);
    }
    return out;
  }

  /// Hidden states of the top layer, shape (T, hidden, 1) per sequence.
  Tensor forward(const Tensor& seq, bool cache = false) {
    const Index B = seq.n, T = seq.shape.c;
    if (T == 0) throw ShapeError("lstm: empty sequence");
    if (seq.shape.h != input_ || seq.shape.w != 1) throw ShapeError("lstm: input feature dimension mismatch");
    const Index H = hidden_;
    std::vector<Eigen::MatrixXd> xs(T);
    for (Index t = 0; t < T; ++t) {
      xs[t].resize(static_cast<Eigen::Index>(input_), static_cast<Eigen::Index>(B));
      for (Index b = 0; b < B; ++b)
        for (Index f = 0; f < input_; ++f) xs[t](f, b) = seq.data[(b * T + t) * input_ + f];
    }
    if (cache) {
      caches_.assign(cells_.size(), {});
      batch_ = B;
    }
    for (Index l = 0; l < cells_.size(); ++l) {
      auto& cell = cells_[l];
      RowMap Wih(cell.w_ih.value.data(), 4 * H, cell.in);
      RowMap Whh(cell.w_hh.value.data(), 4 * H, H);
      Eigen::Map<const Eigen::VectorXd> bias(cell.bias.value.data(), 4 * H);
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(H, B), c = Eigen::MatrixXd::Zero(H, B);
      std::vector<Eigen::MatrixXd> hs(T);
      LayerCache lc;
      for (Index t = 0; t < T; ++t) {
        Eigen::MatrixXd gates = Wih * xs[t] + Whh * h;
        gates.colwise() += bias;
        activate(gates, H);
        Eigen::MatrixXd c_prev = c;
        c = gates.middleRows(H, H).cwiseProduct(c) + gates.topRows(H).cwiseProduct(gates.middleRows(2 * H, H));
        Eigen::MatrixXd tc = c.array().tanh().matrix();
        Eigen::MatrixXd h_prev = h;
        h = gates.bottomRows(H).cwiseProduct(tc);
        if (cache) {
          lc.x.push_back(xs[t]);
          lc.gates.push_back(std::move(gates));
          lc.c_prev.push_back(std::move(c_prev));
          lc.tanh_c.push_back(std::move(tc));
          lc.h_prev.push_back(std::move(h_prev));
        }
        hs[t] = h;
      }
      if (cache) caches_[l] = std::move(lc);
      xs = std::move(hs);
    }
    Tensor out = make_sequence(B, T, H);
    for (Index t = 0; t < T; ++t)
      for (Index b = 0; b < B; ++b)
        for (Index f = 0; f < H; ++f) out.data[(b * T + t) * H + f] = xs[t](f, b);
    return out;
  }

  /// Gradient w.r.t. the input sequence given d(loss)/d(top hidden states).
  Tensor backward(const Tensor& dout) {
    const Index B = batch_, H = hidden_;
    const Index T = dout.shape.c;
    std::vector<Eigen::MatrixXd> dh_in(T);  // gradient arriving at each layer's outputs
    for (Index t = 0; t < T; ++t) {
      dh_in[t].resize(static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(B));
      for (Index b = 0; b < B; ++b)
        for (Index f = 0; f < H; ++f) dh_in[t](f, b) = dout.data[(b * T + t) * H + f];
    }
    for (Index l = cells_.size(); l-- > 0;) {
      auto& cell = cells_[l];
      auto& lc = caches_[l];
      RowMap Wih(cell.w_ih.value.data(), 4 * H, cell.in);
      RowMap Whh(cell.w_hh.value.data(), 4 * H, H);
      RowMutMap dWih(cell.w_ih.grad.data(), 4 * H, cell.in);
      RowMutMap dWhh(cell.w_hh.grad.data(), 4 * H, H);
      Eigen::Map<Eigen::VectorXd> dbias(cell.bias.grad.data(), 4 * H);
      Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(H, B), dc_next = Eigen::MatrixXd::Zero(H, B);
      std::vector<Eigen::MatrixXd> dx(T);
      for (Index t = T; t-- > 0;) {
        const auto& g = lc.gates[t];
        const Eigen::MatrixXd dh = dh_in[t] + dh_next;
        const auto i = g.topRows(H), f = g.middleRows(H, H), gg = g.middleRows(2 * H, H), o = g.bottomRows(H);
        const auto& tc = lc.tanh_c[t];
        Eigen::MatrixXd dc = dc_next + dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix());
        Eigen::MatrixXd dgates(4 * H, B);
        dgates.topRows(H) = (dc.cwiseProduct(gg).array() * i.array() * (1.0 - i.array())).matrix();
        dgates.middleRows(H, H) = (dc.cwiseProduct(lc.c_prev[t]).array() * f.array() * (1.0 - f.array())).matrix();
        dgates.middleRows(2 * H, H) = (dc.cwiseProduct(i).array() * (1.0 - gg.array().square())).matrix();
        dgates.bottomRows(H) = (dh.cwiseProduct(tc).array() * o.array() * (1.0 - o.array())).matrix();
        dWih.noalias() += dgates * lc.x[t].transpose();
        dWhh.noalias() += dgates * lc.h_prev[t].transpose();
        dbias += dgates.rowwise().sum();
        dx[t].noalias() = Wih.transpose() * dgates;
        dh_next.noalias() = Whh.transpose() * dgates;
        dc_next = dc.cwiseProduct(f);
      }
      dh_in = std::move(dx);
    }
    Tensor dseq = make_sequence(B, T, input_);
    for (Index t = 0; t < T; ++t)
      for (Index b = 0; b < B; ++b)
        for (Index f = 0; f < input_; ++f) dseq.data[(b * T + t) * input_ + f] = dh_in[t](f, b);
    return dseq;
  }

 private:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowMap = Eigen::Map<const RowMatrix>;
  using RowMutMap = Eigen::Map<RowMatrix>;

  struct Cell {
    Param w_ih, w_hh, bias;
    Index in;
  };
  struct LayerCache {
    std::vector<Eigen::MatrixXd> x, gates, c_prev, tanh_c, h_prev;
  };

  static void activate(Eigen::MatrixXd& gates, Index H) {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    gates.topRows(2 * H) = gates.topRows(2 * H).unaryExpr(sig);
    gates.middleRows(2 * H, H) = gates.middleRows(2 * H, H).array().tanh().matrix();
    gates.bottomRows(H) = gates.bottomRows(H).unaryExpr(sig);
  }

  Index input_, hidden_;
  std::vector<Cell> cells_;
  std::vector<LayerCache> caches_;
  Index batch_ = 0;
};

}  // namespace nmrom::nn
