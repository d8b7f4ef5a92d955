#include "msfuse/nn/layers.hpp"

#include <array>
#include <utility>

#include "msfuse/nn/ops.hpp"

namespace msfuse::nn {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 8> kKindNames{{
    {LayerKind::conv, "conv"},
    {LayerKind::relu, "relu"},
    {LayerKind::maxpool2x2, "maxpool2x2"},
    {LayerKind::fully_connected, "fully_connected"},
    {LayerKind::softmax, "softmax"},
    {LayerKind::concat_channels, "concat_channels"},
    {LayerKind::nin, "nin"},
    {LayerKind::roi_pool, "roi_pool"},
}};

void add_to(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void add_to(Tensor& dst, const std::vector<float>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) return k;
  }
  throw ContractViolation("unknown layer kind '" + std::string(text) + "'");
}

// --- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t stride, std::size_t pad, LayerKind kind)
    : Layer(std::move(name)),
      kind_(kind),
      stride_(stride),
      pad_(pad),
      weight_(this->name() + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias_(this->name() + ".bias", {1, out_channels, 1, 1}) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
    throw ConfigError("conv layer " + this->name() + ": channels, kernel and stride must be positive");
  }
  if (kind == LayerKind::nin && (kernel != 1 || pad != 0 || stride != 1)) {
    throw ConfigError("nin layer " + this->name() + " must be a 1x1 convolution");
  }
}

Shape Conv2d::output_shape(const Shape& input) const {
  return conv2d_output_shape(input, weight_.value.shape(), stride_, pad_);
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight_.value, bias_.value.values(), stride_, pad_);
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& grad_out) {
  auto g = conv2d_backward(x, weight_.value, stride_, pad_, grad_out);
  add_to(weight_.grad, g.weight);
  add_to(bias_.grad, g.bias);
  return std::move(g.input);
}

std::string Conv2d::hyperparameters() const {
  return "kernel=" + std::to_string(kernel()) + " stride=" + std::to_string(stride_) +
         " pad=" + std::to_string(pad_);
}

std::unique_ptr<Conv2d> make_nin(std::string name, std::size_t in_channels,
                                 std::size_t out_channels) {
  return std::make_unique<Conv2d>(std::move(name), in_channels, out_channels, 1, 1, 0,
                                  LayerKind::nin);
}

// --- elementwise / pooling -------------------------------------------------

Tensor Relu::forward(const Tensor& x) const { return relu(x); }

Tensor Relu::backward(const Tensor& x, const Tensor&, const Tensor& grad_out) {
  return relu_backward(x, grad_out);
}

Shape MaxPool2x2::output_shape(const Shape& input) const { return maxpool2x2_output_shape(input); }

Tensor MaxPool2x2::forward(const Tensor& x) const { return maxpool2x2(x); }

Tensor MaxPool2x2::backward(const Tensor& x, const Tensor&, const Tensor& grad_out) {
  return maxpool2x2_backward(x, grad_out);
}

Tensor Softmax::forward(const Tensor& x) const { return softmax(x); }

Tensor Softmax::backward(const Tensor&, const Tensor& y, const Tensor& grad_out) {
  return softmax_backward(y, grad_out);
}

// --- FullyConnected --------------------------------------------------------

FullyConnected::FullyConnected(std::string name, std::size_t in_features,
                               std::size_t out_features)
    : Layer(std::move(name)),
      weight_(this->name() + ".weight", {out_features, in_features, 1, 1}),
      bias_(this->name() + ".bias", {1, out_features, 1, 1}) {
  if (in_features == 0 || out_features == 0) {
    throw ConfigError("fully_connected layer " + this->name() + ": sizes must be positive");
  }
}

Shape FullyConnected::output_shape(const Shape& input) const {
  return fully_connected_output_shape(input, weight_.value.shape());
}

Tensor FullyConnected::forward(const Tensor& x) const {
  return fully_connected(x, weight_.value, bias_.value.values());
}

Tensor FullyConnected::backward(const Tensor& x, const Tensor&, const Tensor& grad_out) {
  auto g = fully_connected_backward(x, weight_.value, grad_out);
  add_to(weight_.grad, g.weight);
  add_to(bias_.grad, g.bias);
  return std::move(g.input);
}

// --- Sequential ------------------------------------------------------------

Shape Sequential::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& layer : layers_) {
    try {
      s = layer->output_shape(s);
    } catch (const ContractViolation& e) {
      throw ContractViolation("layer " + layer->name() + ": " + e.what());
    }
  }
  return s;
}

std::vector<Tensor> Sequential::forward(const Tensor& x) const {
  std::vector<Tensor> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(x);
  for (const auto& layer : layers_) acts.push_back(layer->forward(acts.back()));
  return acts;
}

Tensor Sequential::backward(const std::vector<Tensor>& activations, const Tensor& grad_out) {
  if (activations.size() != layers_.size() + 1) {
    throw ContractViolation("Sequential::backward: activation trace has " +
                            std::to_string(activations.size()) + " entries, expected " +
                            std::to_string(layers_.size() + 1));
  }
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(activations[i], activations[i + 1], g);
  }
  return g;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& layer : layers_) {
    for (Param* p : layer->params()) out.push_back(p);
  }
  return out;
}

std::vector<const Param*> Sequential::params() const {
  std::vector<const Param*> out;
  for (const auto& layer : layers_) {
    for (const Param* p : std::as_const(*layer).params()) out.push_back(p);
  }
  return out;
}

void init_gaussian(Param& weight, Param& bias, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& v : weight.value.values()) v = static_cast<float>(dist(rng));
  bias.value.fill(0.0f);
}

}  // namespace msfuse::nn
