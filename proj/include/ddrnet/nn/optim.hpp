#pragma once

#include <vector>

#include "ddrnet/nn/layers.hpp"

namespace ddrnet::nn {

// g' = grad + weight_decay * param; v = momentum * v + g'; param -= lr * v.
// Throws NumericalError (naming `what`) on a non-finite gradient.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum,
              double weight_decay, const std::string& what = "parameter");

/// Momentum SGD over a ParameterStore. Velocity buffers follow the store's
/// parameter order and start at zero.
class Sgd {
 public:
  Sgd(const ParameterStore& store, double momentum, double weight_decay);

  // Parameters without an accumulated gradient are treated as zero-grad.
  void step(ParameterStore& store, double lr);

  std::vector<Tensor>& velocities() { return velocities_; }
  const std::vector<Tensor>& velocities() const { return velocities_; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocities_;
};

}  // namespace ddrnet::nn
