#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nmrom/neural/layers.hpp"

namespace nmrom::nn {

/// Feed-forward chain of layers with a fixed per-sample input shape.
class Network {
 public:
  Network() = default;
  explicit Network(Shape input) : input_(input) {}

  Network(const Network& other) : input_(other.input_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& other) {
    if (this != &other) {
      Network tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  template <class L>
  L& add(L layer) {
    // Validate the chain as it grows.
    (void)layer.output_shape(output_shape());
    layers_.push_back(std::make_unique<L>(std::move(layer)));
    return static_cast<L&>(*layers_.back());
  }
  void add_activation(Activation a) {
    if (a != Activation::none) add(ActivationLayer(a));
  }

  [[nodiscard]] Shape input_shape() const noexcept { return input_; }
  [[nodiscard]] Shape output_shape() const {
    Shape s = input_;
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
  }
  /// Per-sample shape after each layer, starting with the input.
  [[nodiscard]] std::vector<Shape> shape_chain() const {
    std::vector<Shape> out{input_};
    for (const auto& l : layers_) out.push_back(l->output_shape(out.back()));
    return out;
  }

  Tensor forward(const Tensor& x, bool cache = false) {
    if (x.shape.size() != input_.size()) {
      throw ShapeError("network: input " + x.shape.str() + " does not match " + input_.str());
    }
    Tensor h = x;
    h.shape = input_;
    for (auto& l : layers_) h = l->forward(h, cache);
    return h;
  }

  /// Back-propagates through the cached forward pass; returns d(loss)/d(input).
  Tensor backward(const Tensor& dy) {
    Tensor g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& l : layers_) {
      auto p = l->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
  [[nodiscard]] std::vector<const Param*> params() const {
    std::vector<const Param*> out;
    for (auto* p : const_cast<Network*>(this)->params()) out.push_back(p);
    return out;
  }
  [[nodiscard]] Index parameter_count() const {
    Index n = 0;
    for (const auto* p : params()) n += p->size();
    return n;
  }
  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
  void init(Rng& rng) {
    for (auto& l : layers_) l->init(rng);
  }

  [[nodiscard]] std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  [[nodiscard]] const Layer& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  Shape input_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace nmrom::nn
