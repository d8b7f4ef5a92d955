#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "msfuse/nn/tensor.hpp"

namespace msfuse::nn {

enum class LayerKind {
  conv,
  relu,
  maxpool2x2,
  fully_connected,
  softmax,
  concat_channels,
  nin,
  roi_pool,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view text);

/// A trainable tensor and its accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.fill(0.0f); }
};

/// Single-input layer. forward() is const so a frozen model can serve
/// concurrent inference; backward() recomputes what it needs from the saved
/// input/output and accumulates parameter gradients.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual LayerKind kind() const = 0;
  /// Throws ContractViolation when the input shape is unusable.
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual Tensor backward(const Tensor& x, const Tensor& y, const Tensor& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  virtual std::vector<const Param*> params() const { return {}; }
  /// "key=value" pairs, space separated; empty for parameter-free layers.
  virtual std::string hyperparameters() const { return {}; }

 private:
  std::string name_;
};

/// Square-kernel convolution. With kernel 1 it is the NIN layer used after a
/// fusion junction.
class Conv2d : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t pad, LayerKind kind = LayerKind::conv);

  LayerKind kind() const override { return kind_; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::vector<const Param*> params() const override { return {&weight_, &bias_}; }
  std::string hyperparameters() const override;

  std::size_t in_channels() const { return weight_.value.shape().c; }
  std::size_t out_channels() const { return weight_.value.shape().n; }
  std::size_t kernel() const { return weight_.value.shape().h; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  LayerKind kind_;
  std::size_t stride_;
  std::size_t pad_;
  Param weight_;
  Param bias_;
};

/// 1x1 convolution mixing the concatenated branch features.
std::unique_ptr<Conv2d> make_nin(std::string name, std::size_t in_channels,
                                 std::size_t out_channels);

class Relu : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const override { return LayerKind::relu; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& grad_out) override;
};

class MaxPool2x2 : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const override { return LayerKind::maxpool2x2; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& grad_out) override;
};

class FullyConnected : public Layer {
 public:
  FullyConnected(std::string name, std::size_t in_features, std::size_t out_features);

  LayerKind kind() const override { return LayerKind::fully_connected; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::vector<const Param*> params() const override { return {&weight_, &bias_}; }

  std::size_t in_features() const { return weight_.value.shape().c; }
  std::size_t out_features() const { return weight_.value.shape().n; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  Param weight_;
  Param bias_;
};

class Softmax : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const override { return LayerKind::softmax; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& grad_out) override;
};

/// Chain of layers. forward() returns every activation, input first, so the
/// caller owns the trace that backward() consumes.
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L>
  L& add(std::unique_ptr<L> layer) {
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  bool empty() const { return layers_.empty(); }
  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }
  Layer& layer(std::size_t i) { return *layers_[i]; }

  /// Shape after every layer; throws naming the first layer that rejects its input.
  Shape output_shape(const Shape& input) const;
  std::vector<Tensor> forward(const Tensor& x) const;
  /// Gradient with respect to the input of the chain.
  Tensor backward(const std::vector<Tensor>& activations, const Tensor& grad_out);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Zero-mean Gaussian weights, zero bias.
void init_gaussian(Param& weight, Param& bias, double stddev, std::mt19937_64& rng);

}  // namespace msfuse::nn
