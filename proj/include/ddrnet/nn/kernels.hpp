#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "ddrnet/tensor.hpp"

namespace ddrnet::nn {

using Triple = std::array<std::size_t, 3>;

/// Convolution geometry. Axes are always (depth, height, width); a 2D
/// convolution is the special case spatial_dims == 2 with depth extent 1,
/// and its tensors omit the depth axis ([N,C,H,W], weights [O,I,kh,kw]).
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple dilation{1, 1, 1};
  Triple padding{0, 0, 0};
  bool has_bias = false;
  int spatial_dims = 3;

  Shape weight_shape() const;
  std::size_t weight_count() const;
  std::size_t param_count() const { return weight_count() + (has_bias ? out_channels : 0); }
  std::size_t taps() const { return kernel[0] * kernel[1] * kernel[2]; }

  // floor((in + 2 pad - dil (k - 1) - 1) / stride) + 1 per axis; throws if < 1.
  Triple output_size(const Triple& in) const;
  Shape output_shape(const Shape& input_shape) const;
  void validate() const;

  // Stride-1 convolution whose output keeps the input's spatial size.
  static ConvSpec same(int spatial_dims, std::size_t in, std::size_t out, Triple kernel,
                       std::size_t dilation, bool bias);
  static ConvSpec pointwise(int spatial_dims, std::size_t in, std::size_t out, bool bias,
                            std::size_t stride = 1);
};

// Spatial extent of an [N,C,...] tensor viewed as (D,H,W) for the given
// dimensionality.
Triple spatial_extent(const Shape& shape, int spatial_dims);

Tensor conv_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                    const Tensor* bias);

struct ConvGrads {
  Tensor input;
  Tensor weight;
  std::optional<Tensor> bias;
};

ConvGrads conv_backward(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                        const Tensor& grad_out);

// Textbook loop over every (output, tap) pair, reading zero padding
// explicitly. Ticks the active OpCounter for every multiply and add it
// executes. Numerically equivalent to conv_forward up to summation order.
Tensor conv_forward_reference(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                              const Tensor* bias);

inline Tensor conv3d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                             const Tensor* bias) {
  return conv_forward(input, spec, weight, bias);
}
inline Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                             const Tensor* bias) {
  return conv_forward(input, spec, weight, bias);
}

/// Cached convolution node: remembers its forward operands so that
/// backward can be issued later. Backward before forward is a StateError.
class ConvLayerNode {
 public:
  explicit ConvLayerNode(ConvSpec spec);

  Tensor forward(const Tensor& input, const Tensor& weight, const Tensor* bias);
  ConvGrads backward(const Tensor& grad_out) const;
  const ConvSpec& spec() const { return spec_; }
  bool has_forward() const { return input_.has_value(); }

 private:
  ConvSpec spec_;
  std::optional<Tensor> input_;
  std::optional<Tensor> weight_;
};

struct PoolResult {
  Tensor values;
  // Flat input offset of the winner for every output element.
  std::vector<std::size_t> argmax;
};

// Max pooling over the trailing window.size() axes (leading axes are
// carried through). Ties go to the lowest flat input index.
PoolResult maxpool_forward(const Tensor& input, const std::vector<std::size_t>& window,
                           const std::vector<std::size_t>& stride);
Tensor maxpool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax,
                        const Shape& input_shape);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

/// Per-class loss weights plus a per-voxel inclusion mask.
struct LossWeights {
  std::vector<double> class_weights;
  // Shape of the labels tensor; 1 = voxel contributes, 0 = ignored.
  Tensor mask;
};

struct LossResult {
  double loss = 0.0;           // weighted_sum / weight_total (0 if nothing included)
  double weighted_sum = 0.0;   // sum of w_label * -log p_label over included voxels
  double weight_total = 0.0;   // sum of w_label over included voxels
  Tensor grad_logits;          // d loss / d logits
};

// logits [N,K,spatial...], labels [N,spatial...] holding class ids.
LossResult softmax_ce_loss(const Tensor& logits, const Tensor& labels, const LossWeights& weights);

}  // namespace ddrnet::nn
