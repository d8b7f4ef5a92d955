#include "msfuse/nn/optim.hpp"

namespace msfuse::nn {

namespace {

const Tensor& gradient_for(const Param& p, const GradientTape& grads) {
  auto it = grads.params.find(p.name);
  if (it == grads.params.end()) {
    throw ContractViolation("sgd: missing gradient for trainable parameter '" + p.name + "'");
  }
  if (it->second.shape() != p.value.shape()) {
    throw ContractViolation("sgd: gradient shape " + it->second.shape().str() +
                            " for parameter '" + p.name + "' does not match " +
                            p.value.shape().str());
  }
  return it->second;
}

}  // namespace

GradientTape collect_gradients(std::span<Param* const> params) {
  GradientTape tape;
  for (const Param* p : params) tape.params.emplace(p->name, p->grad);
  return tape;
}

void sgd_step(std::span<Param* const> params, const GradientTape& grads, float lr) {
  for (const Param* p : params) gradient_for(*p, grads);
  for (Param* p : params) {
    const Tensor& g = gradient_for(*p, grads);
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * g[i];
  }
}

void MomentumSgd::step(std::span<Param* const> params, const GradientTape& grads, float lr) {
  for (const Param* p : params) gradient_for(*p, grads);
  for (Param* p : params) {
    const Tensor& g = gradient_for(*p, grads);
    auto [it, inserted] = velocity_.try_emplace(p->name, p->value.shape());
    Tensor& v = it->second;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i];
      p->value[i] -= lr * v[i];
    }
  }
}

}  // namespace msfuse::nn
