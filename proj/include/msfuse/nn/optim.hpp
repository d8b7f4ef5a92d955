#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "msfuse/nn/layers.hpp"
#include "msfuse/nn/tensor.hpp"

namespace msfuse::nn {

/// Gradients keyed by parameter name, plus gradients of the inputs of the
/// differentiated fragment (when the caller asked for them).
struct GradientTape {
  std::map<std::string, Tensor> params;
  std::vector<Tensor> inputs;
};

/// Snapshot of the accumulated gradients of `params`.
GradientTape collect_gradients(std::span<Param* const> params);

/// Plain SGD: w <- w - lr * g for every parameter. Throws ContractViolation
/// when a parameter has no gradient or the gradient shape differs.
void sgd_step(std::span<Param* const> params, const GradientTape& grads, float lr);

/// SGD with heavy-ball momentum: v <- mu * v + g, w <- w - lr * v.
/// momentum = 0 reduces to sgd_step.
class MomentumSgd {
 public:
  explicit MomentumSgd(float momentum = 0.9f) : momentum_(momentum) {}

  void step(std::span<Param* const> params, const GradientTape& grads, float lr);
  float momentum() const { return momentum_; }

 private:
  float momentum_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace msfuse::nn
