#include "ddrnet/nn/autograd.hpp"

#include <unordered_set>

#include "ddrnet/nn/instrument.hpp"

namespace ddrnet::nn {

namespace {

Var make_node(std::string kind, Tensor value, std::vector<Var> parents) {
  auto node = std::make_shared<Node>();
  node->kind = std::move(kind);
  node->value = std::move(value);
  for (const Var& p : parents) node->requires_grad = node->requires_grad || (p && p->requires_grad);
  node->parents = std::move(parents);
  return node;
}

void push_grad(const Var& target, const Tensor& g) {
  if (target && target->requires_grad) target->accumulate_grad(g);
}

}  // namespace

void Node::accumulate_grad(const Tensor& g) {
  if (grad.empty()) {
    check_same_shape(value, g, "accumulate_grad");
    grad = g;
  } else {
    accumulate(grad, g);
  }
}

Var constant(Tensor value, std::string kind) { return make_node(std::move(kind), std::move(value), {}); }

Var variable(Tensor value, std::string kind) {
  Var v = make_node(std::move(kind), std::move(value), {});
  v->requires_grad = true;
  return v;
}

void backward(const Var& root, const Tensor& seed) {
  if (!root) throw StateError("backward on null node");
  check_same_shape(root->value, seed, "backward seed");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior accumulators belong to this sweep only; leaves keep summing.
  for (Node* node : order) {
    if (node->backward_fn) node->zero_grad();
  }
  root->accumulate_grad(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
}

void backward(const Var& root) {
  Tensor seed(root->value.shape(), 1.0);
  backward(root, seed);
}

Var conv(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
  const Tensor* b = bias ? &bias->value : nullptr;
  Tensor out = active_counter() ? conv_forward_reference(x->value, spec, weight->value, b)
                                : conv_forward(x->value, spec, weight->value, b);
  Var node = make_node(spec.spatial_dims == 2 ? "conv2d" : "conv3d", std::move(out), {x, weight, bias});
  node->backward_fn = [spec](Node& self) {
    const Var& in = self.parents[0];
    const Var& w = self.parents[1];
    const Var& b = self.parents[2];
    ConvGrads g = conv_backward(in->value, spec, w->value, self.grad);
    push_grad(in, g.input);
    push_grad(w, g.weight);
    if (b && g.bias) push_grad(b, *g.bias);
  };
  return node;
}

Var relu(const Var& x) {
  Var node = make_node("relu", relu_forward(x->value), {x});
  node->backward_fn = [](Node& self) {
    const Var& in = self.parents[0];
    push_grad(in, relu_backward(in->value, self.grad));
  };
  return node;
}

Var add(const Var& a, const Var& b) {
  Tensor out = elementwise_add(a->value, b->value);
  if (OpCounter* counter = active_counter()) counter->elementwise += out.size();
  Var node = make_node("add", std::move(out), {a, b});
  node->backward_fn = [](Node& self) {
    push_grad(self.parents[0], self.grad);
    push_grad(self.parents[1], self.grad);
  };
  return node;
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p->value);
  Tensor out = concat_channels(values, axis);
  if (OpCounter* counter = active_counter()) counter->elementwise += out.size();
  Var node = make_node("concat", std::move(out), parts);
  node->backward_fn = [axis](Node& self) {
    std::size_t begin = 0;
    for (const Var& p : self.parents) {
      const std::size_t count = p->value.dim(axis);
      if (p->requires_grad) push_grad(p, slice_axis(self.grad, axis, begin, count));
      begin += count;
    }
  };
  return node;
}

Var maxpool(const Var& x, std::vector<std::size_t> window, std::vector<std::size_t> stride) {
  PoolResult pooled = maxpool_forward(x->value, window, stride);
  Var node = make_node("maxpool", std::move(pooled.values), {x});
  node->backward_fn = [argmax = std::move(pooled.argmax)](Node& self) {
    const Var& in = self.parents[0];
    push_grad(in, maxpool_backward(self.grad, argmax, in->value.shape()));
  };
  return node;
}

Var channel_affine(const Var& x, const Var& scale, const Var& shift) {
  const Tensor& in = x->value;
  if (in.rank() < 2) throw ShapeError("channel_affine: input must be [N,C,...]");
  const std::size_t batch = in.dim(0), channels = in.dim(1);
  if (scale->value.size() != channels || shift->value.size() != channels) {
    throw ShapeError("channel_affine: scale/shift length must equal channel count");
  }
  const std::size_t inner = in.size() / (batch * channels);
  Tensor out(in.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        out[base + i] = scale->value[c] * in[base + i] + shift->value[c];
      }
    }
  }
  if (OpCounter* counter = active_counter()) counter->elementwise += 2 * out.size();
  Var node = make_node("affine", std::move(out), {x, scale, shift});
  node->backward_fn = [batch, channels, inner](Node& self) {
    const Tensor& xin = self.parents[0]->value;
    const Tensor& sc = self.parents[1]->value;
    Tensor gx(xin.shape());
    Tensor gs(sc.shape());
    Tensor gb(sc.shape());
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double g = self.grad[base + i];
          gx[base + i] = sc[c] * g;
          gs[c] += g * xin[base + i];
          gb[c] += g;
        }
      }
    }
    push_grad(self.parents[0], gx);
    push_grad(self.parents[1], gs);
    push_grad(self.parents[2], gb);
  };
  return node;
}

Var weighted_sum(const Var& x, const Tensor& coeffs) {
  check_same_shape(x->value, coeffs, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) s += x->value[i] * coeffs[i];
  Var node = make_node("weighted_sum", Tensor(Shape{1}, s), {x});
  node->backward_fn = [coeffs](Node& self) {
    Tensor g(coeffs.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = coeffs[i] * self.grad[0];
    push_grad(self.parents[0], g);
  };
  return node;
}

Var softmax_ce(const Var& logits, const Tensor& labels, const LossWeights& weights) {
  LossResult r = softmax_ce_loss(logits->value, labels, weights);
  Var node = make_node("softmax_ce", Tensor(Shape{1}, r.loss), {logits});
  node->backward_fn = [grad = std::move(r.grad_logits)](Node& self) {
    Tensor g = grad;
    const double seed = self.grad[0];
    if (seed != 1.0) {
      for (double& v : g.data()) v *= seed;
    }
    push_grad(self.parents[0], g);
  };
  return node;
}

}  // namespace ddrnet::nn
