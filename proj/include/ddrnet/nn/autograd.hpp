#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ddrnet/nn/kernels.hpp"
#include "ddrnet/tensor.hpp"

namespace ddrnet::nn {

/// One recorded operation of a forward pass.
///
/// A node owns its output value, a gradient accumulator and links to the
/// nodes it was computed from. The backward closure captures whatever the
/// operation cached during forward (inputs, pooling winners, ...) and adds
/// this node's gradient contribution into its parents' accumulators.
struct Node {
  std::string kind;
  Tensor value;
  Tensor grad;  // empty until something is accumulated
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  void accumulate_grad(const Tensor& g);
  void zero_grad() { grad = Tensor(); }
  bool has_grad() const { return !grad.empty(); }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value, std::string kind = "input");
Var variable(Tensor value, std::string kind = "leaf");

// Reverse-mode sweep from root. Nodes are visited in reverse topological
// order so every node's accumulator is complete before it propagates.
// Accumulators are never cleared here; leaves keep summing across calls.
void backward(const Var& root, const Tensor& seed);
void backward(const Var& root);

Var conv(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var maxpool(const Var& x, std::vector<std::size_t> window, std::vector<std::size_t> stride);
// y[n,c,...] = scale[c] * x[n,c,...] + shift[c]
Var channel_affine(const Var& x, const Var& scale, const Var& shift);
// Scalar sum(x * coeffs); used to scalarize outputs for gradient checks.
Var weighted_sum(const Var& x, const Tensor& coeffs);
// Scalar masked, class-weighted softmax cross entropy (see softmax_ce_loss).
Var softmax_ce(const Var& logits, const Tensor& labels, const LossWeights& weights);

}  // namespace ddrnet::nn
