#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/neural/rng.hpp"
#include "nmrom/neural/tensor.hpp"

namespace nmrom::nn {

using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

inline constexpr double kEluAlpha = 1.0;

inline double elu(double x) { return x > 0.0 ? x : kEluAlpha * std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : kEluAlpha * std::exp(x); }

/// Output length of a strided convolution.
inline Index conv_out(Index in, Index k, Index pad, Index stride) {
  if (in + 2 * pad < k) throw ShapeError("convolution kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

/// Output length of a transposed convolution: (n - 1) s - 2 p + k.
inline Index convtr_out(Index in, Index k, Index pad, Index stride) {
  const long v = static_cast<long>((in - 1) * stride + k) - 2 * static_cast<long>(pad);
  if (v < 1) throw ShapeError("transposed convolution output would be empty");
  return static_cast<Index>(v);
}

struct ConvGeometry {
  Index channels, h, w;  // the image side
  Index k, pad, stride;
  Index oh, ow;          // the patch-grid side
  [[nodiscard]] Index patch() const noexcept { return channels * k * k; }
  [[nodiscard]] Index positions() const noexcept { return oh * ow; }
};

/// cols(patch, position) column-major, patch = (c, ky, kx).
inline void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const Index K = g.patch();
  for (Index oy = 0; oy < g.oh; ++oy) {
    for (Index ox = 0; ox < g.ow; ++ox) {
      double* col = cols + (oy * g.ow + ox) * K;
      for (Index c = 0; c < g.channels; ++c) {
        for (Index ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (Index kx = 0; kx < g.k; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && iy < static_cast<long>(g.h) && ix >= 0 && ix < static_cast<long>(g.w);
            *col++ = inside ? img[(c * g.h + static_cast<Index>(iy)) * g.w + static_cast<Index>(ix)] : 0.0;
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-adds columns into the image.
inline void col2im(const double* cols, const ConvGeometry& g, double* img) {
  const Index K = g.patch();
  for (Index oy = 0; oy < g.oh; ++oy) {
    for (Index ox = 0; ox < g.ow; ++ox) {
      const double* col = cols + (oy * g.ow + ox) * K;
      for (Index c = 0; c < g.channels; ++c) {
        for (Index ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (Index kx = 0; kx < g.k; ++kx, ++col) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy >= 0 && iy < static_cast<long>(g.h) && ix >= 0 && ix < static_cast<long>(g.w)) {
              img[(c * g.h + static_cast<Index>(iy)) * g.w + static_cast<Index>(ix)] += *col;
            }
          }
        }
      }
    }
  }
}

class Layer {
 public:
  virtual ~Layer() = default;
  [[nodiscard]] virtual std::string kind() const = 0;
  [[nodiscard]] virtual Shape output_shape(const Shape& in) const = 0;
  /// Caches what backward needs when `cache` is set.
  virtual Tensor forward(const Tensor& x, bool cache) = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Param*> params() { return {}; }
  virtual void init(Rng&) {}
  [[nodiscard]] virtual std::unique_ptr<Layer> clone() const = 0;
};

namespace detail {
inline void kaiming_uniform(Param& w, Param& b, Index fan_in, Rng& rng) {
  const double bw = std::sqrt(6.0 / static_cast<double>(fan_in));
  const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : w.value) v = rng.uniform(-bw, bw);
  for (double& v : b.value) v = rng.uniform(-bb, bb);
}

inline void check_input(const Tensor& x, const Shape& expect, const char* who) {
  if (x.shape != expect) throw ShapeError(std::string(who) + ": input shape " + x.shape.str() + " != " + expect.str());
}
}  // namespace detail

/// y = x W + b with W stored [in, out].
class Linear final : public Layer {
 public:
  Linear(Index in, Index out, std::string name = "linear")
      : in_(in), out_(out), w_(name + ".weight", {in, out}), b_(name + ".bias", {out}) {}

  [[nodiscard]] std::string kind() const override { return "linear"; }
  [[nodiscard]] Shape output_shape(const Shape& in) const override {
    if (in.size() != in_) throw ShapeError("linear: expected " + std::to_string(in_) + " features");
    return {out_, 1, 1};
  }
  Tensor forward(const Tensor& x, bool cache) override {
    if (x.sample_size() != in_) throw ShapeError("linear: input feature mismatch");
    Tensor y(x.n, {out_, 1, 1});
    ConstMatrixMap W(w_.value.data(), out_, in_);
    ConstMatrixMap X(x.data.data(), in_, x.n);
    MatrixMap Y(y.data.data(), out_, x.n);
    Y.noalias() = W * X;
    Y.colwise() += Eigen::Map<const Eigen::VectorXd>(b_.value.data(), out_);
    if (cache) x_ = x;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    ConstMatrixMap dY(dy.data.data(), out_, dy.n);
    ConstMatrixMap X(x_.data.data(), in_, x_.n);
    MatrixMap(w_.grad.data(), out_, in_).noalias() += dY * X.transpose();
    Eigen::Map<Eigen::VectorXd>(b_.grad.data(), out_) += dY.rowwise().sum();
    Tensor dx(dy.n, x_.shape);
    MatrixMap(dx.data.data(), in_, dy.n).noalias() = ConstMatrixMap(w_.value.data(), out_, in_).transpose() * dY;
    return dx;
  }
  std::vector<Param*> params() override { return {&w_, &b_}; }
  void init(Rng& rng) override { detail::kaiming_uniform(w_, b_, in_, rng); }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

  [[nodiscard]] Index in() const noexcept { return in_; }
  [[nodiscard]] Index out() const noexcept { return out_; }
  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  Index in_, out_;
  Param w_, b_;
  Tensor x_;
};

/// Cross-correlation with symmetric zero padding; weight [out, in, k, k].
class Conv2d final : public Layer {
 public:
  Conv2d(Index in, Index out, Index k, Index pad, Index stride = 2, std::string name = "conv")
      : cin_(in), cout_(out), k_(k), pad_(pad), stride_(stride), w_(name + ".weight", {out, in, k, k}),
        b_(name + ".bias", {out}) {}

  [[nodiscard]] std::string kind() const override { return "conv2d"; }
  [[nodiscard]] Shape output_shape(const Shape& in) const override {
    if (in.c != cin_) throw ShapeError("conv2d: expected " + std::to_string(cin_) + " input channels");
    return {cout_, conv_out(in.h, k_, pad_, stride_), conv_out(in.w, k_, pad_, stride_)};
  }
  Tensor forward(const Tensor& x, bool cache) override {
    const Shape os = output_shape(x.shape);
    const ConvGeometry g{cin_, x.shape.h, x.shape.w, k_, pad_, stride_, os.h, os.w};
    Tensor y(x.n, os);
    const Index K = g.patch(), P = g.positions();
    std::vector<double> cols(K * P);
    ConstMatrixMap W(w_.value.data(), K, cout_);
    if (cache) {
      cols_.assign(x.n * K * P, 0.0);
      in_shape_ = x.shape;
    }
    for (Index i = 0; i < x.n; ++i) {
      double* c = cache ? cols_.data() + i * K * P : cols.data();
      im2col(x.sample(i), g, c);
      MatrixMap Y(y.sample(i), P, cout_);
      Y.noalias() = ConstMatrixMap(c, K, P).transpose() * W;
      for (Index o = 0; o < cout_; ++o) Y.col(o).array() += b_.value[o];
    }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    const ConvGeometry g{cin_, in_shape_.h, in_shape_.w, k_, pad_, stride_, dy.shape.h, dy.shape.w};
    const Index K = g.patch(), P = g.positions();
    Tensor dx(dy.n, in_shape_);
    MatrixMap dW(w_.grad.data(), K, cout_);
    ConstMatrixMap W(w_.value.data(), K, cout_);
    Eigen::MatrixXd dcols(K, P);
    for (Index i = 0; i < dy.n; ++i) {
      ConstMatrixMap dY(dy.sample(i), P, cout_);
      ConstMatrixMap C(cols_.data() + i * K * P, K, P);
      dW.noalias() += C * dY;
      for (Index o = 0; o < cout_; ++o) b_.grad[o] += dY.col(o).sum();
      dcols.noalias() = W * dY.transpose();
      col2im(dcols.data(), g, dx.sample(i));
    }
    return dx;
  }
  std::vector<Param*> params() override { return {&w_, &b_}; }
  void init(Rng& rng) override { detail::kaiming_uniform(w_, b_, cin_ * k_ * k_, rng); }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  Index cin_, cout_, k_, pad_, stride_;
  Param w_, b_;
  std::vector<double> cols_;
  Shape in_shape_;
};

/// Transposed convolution, the adjoint of Conv2d; weight [in, out, k, k].
class ConvTr2d final : public Layer {
 public:
  ConvTr2d(Index in, Index out, Index k, Index pad, Index stride = 2, std::string name = "convtr")
      : cin_(in), cout_(out), k_(k), pad_(pad), stride_(stride), w_(name + ".weight", {in, out, k, k}),
        b_(name + ".bias", {out}) {}

  [[nodiscard]] std::string kind() const override { return "convtr2d"; }
  [[nodiscard]] Shape output_shape(const Shape& in) const override {
    if (in.c != cin_) throw ShapeError("convtr2d: expected " + std::to_string(cin_) + " input channels");
    return {cout_, convtr_out(in.h, k_, pad_, stride_), convtr_out(in.w, k_, pad_, stride_)};
  }
  Tensor forward(const Tensor& x, bool cache) override {
    const Shape os = output_shape(x.shape);
    const ConvGeometry g = geometry(x.shape, os);
    const Index K = g.patch(), P = g.positions();
    Tensor y(x.n, os);
    ConstMatrixMap W(w_.value.data(), K, cin_);
    Eigen::MatrixXd cols(K, P);
    for (Index i = 0; i < x.n; ++i) {
      cols.noalias() = W * ConstMatrixMap(x.sample(i), P, cin_).transpose();
      double* out = y.sample(i);
      col2im(cols.data(), g, out);
      const Index plane = os.h * os.w;
      for (Index o = 0; o < cout_; ++o)
        for (Index q = 0; q < plane; ++q) out[o * plane + q] += b_.value[o];
    }
    if (cache) x_ = x;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    const ConvGeometry g = geometry(x_.shape, dy.shape);
    const Index K = g.patch(), P = g.positions();
    Tensor dx(dy.n, x_.shape);
    ConstMatrixMap W(w_.value.data(), K, cin_);
    MatrixMap dW(w_.grad.data(), K, cin_);
    Eigen::MatrixXd dcols(K, P);
    const Index plane = dy.shape.h * dy.shape.w;
    for (Index i = 0; i < dy.n; ++i) {
      const double* d = dy.sample(i);
      for (Index o = 0; o < cout_; ++o)
        for (Index q = 0; q < plane; ++q) b_.grad[o] += d[o * plane + q];
      im2col(d, g, dcols.data());
      MatrixMap(dx.sample(i), P, cin_).noalias() = dcols.transpose() * W;
      dW.noalias() += dcols * ConstMatrixMap(x_.sample(i), P, cin_);
    }
    return dx;
  }
  std::vector<Param*> params() override { return {&w_, &b_}; }
  void init(Rng& rng) override { detail::kaiming_uniform(w_, b_, cin_ * k_ * k_, rng); }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTr2d>(*this); }
  Param& weight() { return w_; }
  Param& bias() { return b_; }
  [[nodiscard]] Index pad() const noexcept { return pad_; }

 private:
  [[nodiscard]] ConvGeometry geometry(const Shape& in, const Shape& out) const {
    return {cout_, out.h, out.w, k_, pad_, stride_, in.h, in.w};
  }

  Index cin_, cout_, k_, pad_, stride_;
  Param w_, b_;
  Tensor x_;
};

enum class Activation { none, elu, relu };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::elu: return "elu";
    case Activation::relu: return "relu";
  }
  return "?";
}

class ActivationLayer final : public Layer {
 public:
  explicit ActivationLayer(Activation a) : act_(a) {}
  [[nodiscard]] std::string kind() const override { return activation_name(act_); }
  [[nodiscard]] Shape output_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x, bool cache) override {
    Tensor y = x;
    if (act_ == Activation::elu)
      for (double& v : y.data) v = elu(v);
    else if (act_ == Activation::relu)
      for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    if (cache) x_ = x;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx = dy;
    if (act_ == Activation::elu)
      for (Index i = 0; i < dx.data.size(); ++i) dx.data[i] *= elu_grad(x_.data[i]);
    else if (act_ == Activation::relu)
      for (Index i = 0; i < dx.data.size(); ++i) dx.data[i] = x_.data[i] > 0.0 ? dx.data[i] : 0.0;
    return dx;
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<ActivationLayer>(*this); }
  [[nodiscard]] Activation activation() const noexcept { return act_; }

 private:
  Activation act_;
  Tensor x_;
};

class Reshape final : public Layer {
 public:
  explicit Reshape(Shape to) : to_(to) {}
  [[nodiscard]] std::string kind() const override { return "reshape"; }
  [[nodiscard]] Shape output_shape(const Shape& in) const override {
    if (in.size() != to_.size()) throw ShapeError("reshape: size mismatch " + in.str() + " -> " + to_.str());
    return to_;
  }
  Tensor forward(const Tensor& x, bool cache) override {
    Tensor y = x;
    y.shape = output_shape(x.shape);
    if (cache) from_ = x.shape;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx = dy;
    dx.shape = from_;
    return dx;
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }

 private:
  Shape to_;
  Shape from_;
};

/// Transposed convolution summed with a skip tensor, then ELU.
inline Tensor convtr2d_rec_forward(ConvTr2d& layer, const Tensor& x, const Tensor& skip, bool cache) {
  Tensor y = layer.forward(x, cache);
  if (y.shape != skip.shape || y.n != skip.n) throw ShapeError("convtr2d_rec: skip shape mismatch");
  for (Index i = 0; i < y.data.size(); ++i) y.data[i] = elu(y.data[i] + skip.data[i]);
  return y;
}

/// A transposed-convolution layer paired with a recurrent one that reads the
/// same input and adds the first layer's activated output as skip:
///   a = elu(T_a x),  out = elu(T_rec x + a).
class RecurrentPair final : public Layer {
 public:
  RecurrentPair(ConvTr2d first, ConvTr2d rec) : first_(std::move(first)), rec_(std::move(rec)) {}
  [[nodiscard]] std::string kind() const override { return "convtr2d_rec_pair"; }
  [[nodiscard]] Shape output_shape(const Shape& in) const override {
    const Shape a = first_.output_shape(in);
    if (rec_.output_shape(in) != a) throw ShapeError("recurrent pair: branch shapes differ");
    return a;
  }
  Tensor forward(const Tensor& x, bool cache) override {
    Tensor pre_a = first_.forward(x, cache);
    Tensor a = pre_a;
    for (double& v : a.data) v = elu(v);
    Tensor pre = rec_.forward(x, cache);
    for (Index i = 0; i < pre.data.size(); ++i) pre.data[i] += a.data[i];
    Tensor y = pre;
    for (double& v : y.data) v = elu(v);
    if (cache) {
      pre_a_ = std::move(pre_a);
      pre_ = std::move(pre);
    }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dz = dy;
    for (Index i = 0; i < dz.data.size(); ++i) dz.data[i] *= elu_grad(pre_.data[i]);
    Tensor dx = rec_.backward(dz);
    for (Index i = 0; i < dz.data.size(); ++i) dz.data[i] *= elu_grad(pre_a_.data[i]);
    Tensor dx2 = first_.backward(dz);
    for (Index i = 0; i < dx.data.size(); ++i) dx.data[i] += dx2.data[i];
    return dx;
  }
  std::vector<Param*> params() override {
    auto p = first_.params();
    auto q = rec_.params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
  void init(Rng& rng) override {
    first_.init(rng);
    rec_.init(rng);
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<RecurrentPair>(*this); }
  ConvTr2d& first() { return first_; }
  ConvTr2d& recurrent() { return rec_; }

 private:
  ConvTr2d first_, rec_;
  Tensor pre_a_, pre_;
};

}  // namespace nmrom::nn
