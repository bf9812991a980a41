#include "ddrnet/nn/optim.hpp"

#include <cmath>
#include <sstream>

namespace ddrnet::nn {

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum,
              double weight_decay, const std::string& what) {
  check_same_shape(param, grad, "sgd_step");
  check_same_shape(param, velocity, "sgd_step");
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      std::ostringstream msg;
      msg << "sgd_step: non-finite gradient " << grad[i] << " in " << what << " at element " << i
          << " (param " << param[i] << ", velocity " << velocity[i] << ")";
      throw NumericalError(msg.str());
    }
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + weight_decay * param[i];
    velocity[i] = momentum * velocity[i] + g;
    param[i] -= lr * velocity[i];
  }
}

Sgd::Sgd(const ParameterStore& store, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : store.parameters()) velocities_.emplace_back(p.var->value.shape());
}

void Sgd::step(ParameterStore& store, double lr) {
  const auto& params = store.parameters();
  if (params.size() != velocities_.size()) throw StateError("Sgd: parameter store changed size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Node& node = *params[i].var;
    const Tensor grad = node.has_grad() ? node.grad : Tensor(node.value.shape());
    sgd_step(node.value, grad, velocities_[i], lr, momentum_, weight_decay_, params[i].name);
  }
}

}  // namespace ddrnet::nn
