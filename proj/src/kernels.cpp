#include "ddrnet/nn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ddrnet/nn/instrument.hpp"

namespace ddrnet::nn {

namespace {

struct Range {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive
};

// Output positions o in [0, out) with 0 <= o*stride - pad + offset < in.
Range valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t pad,
                  std::size_t offset) {
  const long long s = static_cast<long long>(stride);
  const long long shift = static_cast<long long>(offset) - static_cast<long long>(pad);
  long long lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  long long top = static_cast<long long>(in) - 1 - shift;
  if (top < 0) return {0, 0};
  long long hi = std::min(static_cast<long long>(out), top / s + 1);
  if (lo >= hi) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvGeometry {
  std::size_t batch, cin, cout;
  Triple in, out;
  std::size_t in_vol, out_vol;
};

ConvGeometry geometry(const Tensor& input, const ConvSpec& spec, const Tensor& weight) {
  spec.validate();
  const std::size_t rank = static_cast<std::size_t>(spec.spatial_dims) + 2;
  if (input.rank() != rank) {
    throw ShapeError("conv: expected rank-" + std::to_string(rank) + " input, got " +
                     shape_to_string(input.shape()));
  }
  if (input.dim(1) != spec.in_channels) {
    throw ShapeError("conv: input has " + std::to_string(input.dim(1)) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv: weight shape " + shape_to_string(weight.shape()) + " does not match " +
                     shape_to_string(spec.weight_shape()));
  }
  ConvGeometry g;
  g.batch = input.dim(0);
  g.cin = spec.in_channels;
  g.cout = spec.out_channels;
  g.in = spatial_extent(input.shape(), spec.spatial_dims);
  g.out = spec.output_size(g.in);
  g.in_vol = g.in[0] * g.in[1] * g.in[2];
  g.out_vol = g.out[0] * g.out[1] * g.out[2];
  return g;
}

// Calls fn(out_offset, in_offset, count) for every output row segment that
// kernel tap (a, b, c) touches; along the row the input advances by stride.
template <typename Fn>
void for_each_tap_row(const ConvSpec& spec, const ConvGeometry& g, std::size_t a, std::size_t b,
                      std::size_t c, Fn&& fn) {
  const Range rd = valid_range(g.out[0], g.in[0], spec.stride[0], spec.padding[0], a * spec.dilation[0]);
  const Range rh = valid_range(g.out[1], g.in[1], spec.stride[1], spec.padding[1], b * spec.dilation[1]);
  const Range rw = valid_range(g.out[2], g.in[2], spec.stride[2], spec.padding[2], c * spec.dilation[2]);
  if (rd.lo >= rd.hi || rh.lo >= rh.hi || rw.lo >= rw.hi) return;
  const std::size_t count = rw.hi - rw.lo;
  const std::size_t iw0 = rw.lo * spec.stride[2] + c * spec.dilation[2] - spec.padding[2];
  for (std::size_t od = rd.lo; od < rd.hi; ++od) {
    const std::size_t id = od * spec.stride[0] + a * spec.dilation[0] - spec.padding[0];
    for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
      const std::size_t ih = oh * spec.stride[1] + b * spec.dilation[1] - spec.padding[1];
      const std::size_t out_off = (od * g.out[1] + oh) * g.out[2] + rw.lo;
      const std::size_t in_off = (id * g.in[1] + ih) * g.in[2] + iw0;
      fn(out_off, in_off, count);
    }
  }
}

}  // namespace

Shape ConvSpec::weight_shape() const {
  if (spatial_dims == 2) return {out_channels, in_channels, kernel[1], kernel[2]};
  return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
}

std::size_t ConvSpec::weight_count() const { return out_channels * in_channels * taps(); }

void ConvSpec::validate() const {
  if (spatial_dims != 2 && spatial_dims != 3) throw ShapeError("conv: spatial_dims must be 2 or 3");
  if (in_channels == 0 || out_channels == 0) throw ShapeError("conv: channel counts must be positive");
  for (int k = 0; k < 3; ++k) {
    if (kernel[k] == 0 || stride[k] == 0 || dilation[k] == 0) {
      throw ShapeError("conv: kernel, stride and dilation must be positive");
    }
  }
  if (spatial_dims == 2 && (kernel[0] != 1 || stride[0] != 1 || dilation[0] != 1 || padding[0] != 0)) {
    throw ShapeError("conv: 2D spec must have a trivial depth axis");
  }
}

Triple ConvSpec::output_size(const Triple& in) const {
  Triple out{};
  for (int k = 0; k < 3; ++k) {
    const long long span = static_cast<long long>(dilation[k] * (kernel[k] - 1) + 1);
    const long long avail = static_cast<long long>(in[k] + 2 * padding[k]);
    if (avail < span) {
      throw ShapeError("conv: non-positive output size on spatial axis " + std::to_string(k));
    }
    out[k] = static_cast<std::size_t>((avail - span) / static_cast<long long>(stride[k])) + 1;
  }
  return out;
}

Shape ConvSpec::output_shape(const Shape& input_shape) const {
  Triple out = output_size(spatial_extent(input_shape, spatial_dims));
  if (spatial_dims == 2) return {input_shape.at(0), out_channels, out[1], out[2]};
  return {input_shape.at(0), out_channels, out[0], out[1], out[2]};
}

ConvSpec ConvSpec::same(int spatial_dims, std::size_t in, std::size_t out, Triple kernel,
                        std::size_t dilation, bool bias) {
  ConvSpec s;
  s.spatial_dims = spatial_dims;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.has_bias = bias;
  for (int k = 0; k < 3; ++k) {
    if (kernel[k] % 2 == 0) throw ShapeError("conv: 'same' padding needs odd kernels");
    const std::size_t d = kernel[k] > 1 ? dilation : 1;
    s.dilation[k] = d;
    s.padding[k] = d * (kernel[k] - 1) / 2;
  }
  s.validate();
  return s;
}

ConvSpec ConvSpec::pointwise(int spatial_dims, std::size_t in, std::size_t out, bool bias,
                             std::size_t stride) {
  ConvSpec s;
  s.spatial_dims = spatial_dims;
  s.in_channels = in;
  s.out_channels = out;
  s.has_bias = bias;
  s.stride = {spatial_dims == 3 ? stride : 1, stride, stride};
  s.validate();
  return s;
}

Triple spatial_extent(const Shape& shape, int spatial_dims) {
  if (spatial_dims == 2) {
    if (shape.size() != 4) throw ShapeError("expected [N,C,H,W], got " + shape_to_string(shape));
    return {1, shape[2], shape[3]};
  }
  if (shape.size() != 5) throw ShapeError("expected [N,C,D,H,W], got " + shape_to_string(shape));
  return {shape[2], shape[3], shape[4]};
}

Tensor conv_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                    const Tensor* bias) {
  const ConvGeometry g = geometry(input, spec, weight);
  if (spec.has_bias && (bias == nullptr || bias->size() != spec.out_channels)) {
    throw ShapeError("conv: bias missing or of wrong length");
  }
  Tensor out(spec.output_shape(input.shape()));
  const std::size_t kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const double* w = weight.raw();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* o = out.raw() + (n * g.cout + co) * g.out_vol;
      if (spec.has_bias) std::fill_n(o, g.out_vol, (*bias)[co]);
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* x = input.raw() + (n * g.cin + ci) * g.in_vol;
        const double* wk = w + (co * g.cin + ci) * kd * kh * kw;
        for (std::size_t a = 0; a < kd; ++a) {
          for (std::size_t b = 0; b < kh; ++b) {
            for (std::size_t c = 0; c < kw; ++c) {
              const double wv = wk[(a * kh + b) * kw + c];
              const std::size_t sw = spec.stride[2];
              for_each_tap_row(spec, g, a, b, c, [&](std::size_t oo, std::size_t io, std::size_t count) {
                double* orow = o + oo;
                const double* xrow = x + io;
                for (std::size_t i = 0; i < count; ++i) orow[i] += wv * xrow[i * sw];
              });
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv_backward(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                        const Tensor& grad_out) {
  const ConvGeometry g = geometry(input, spec, weight);
  if (grad_out.shape() != spec.output_shape(input.shape())) {
    throw ShapeError("conv backward: grad shape " + shape_to_string(grad_out.shape()) +
                     " does not match forward output");
  }
  ConvGrads grads{Tensor(input.shape()), Tensor(weight.shape()), std::nullopt};
  if (spec.has_bias) grads.bias = Tensor(Shape{spec.out_channels});
  const std::size_t kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const std::size_t sw = spec.stride[2];
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* go = grad_out.raw() + (n * g.cout + co) * g.out_vol;
      if (grads.bias) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.out_vol; ++i) s += go[i];
        (*grads.bias)[co] += s;
      }
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* x = input.raw() + (n * g.cin + ci) * g.in_vol;
        double* gx = grads.input.raw() + (n * g.cin + ci) * g.in_vol;
        const std::size_t wbase = (co * g.cin + ci) * kd * kh * kw;
        for (std::size_t a = 0; a < kd; ++a) {
          for (std::size_t b = 0; b < kh; ++b) {
            for (std::size_t c = 0; c < kw; ++c) {
              const std::size_t widx = wbase + (a * kh + b) * kw + c;
              const double wv = weight[widx];
              double gw = 0.0;
              for_each_tap_row(spec, g, a, b, c, [&](std::size_t oo, std::size_t io, std::size_t count) {
                const double* grow = go + oo;
                const double* xrow = x + io;
                double* gxrow = gx + io;
                for (std::size_t i = 0; i < count; ++i) {
                  gw += grow[i] * xrow[i * sw];
                  gxrow[i * sw] += wv * grow[i];
                }
              });
              grads.weight[widx] += gw;
            }
          }
        }
      }
    }
  }
  return grads;
}

Tensor conv_forward_reference(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                              const Tensor* bias) {
  const ConvGeometry g = geometry(input, spec, weight);
  if (spec.has_bias && (bias == nullptr || bias->size() != spec.out_channels)) {
    throw ShapeError("conv: bias missing or of wrong length");
  }
  OpCounter* counter = active_counter();
  Tensor out(spec.output_shape(input.shape()));
  const std::size_t kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  auto read = [&](const double* x, long long d, long long h, long long w) -> double {
    if (d < 0 || h < 0 || w < 0 || d >= static_cast<long long>(g.in[0]) ||
        h >= static_cast<long long>(g.in[1]) || w >= static_cast<long long>(g.in[2])) {
      return 0.0;
    }
    return x[(static_cast<std::size_t>(d) * g.in[1] + static_cast<std::size_t>(h)) * g.in[2] +
             static_cast<std::size_t>(w)];
  };
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      for (std::size_t od = 0; od < g.out[0]; ++od) {
        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
          for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
            double acc = 0.0;
            for (std::size_t ci = 0; ci < g.cin; ++ci) {
              const double* x = input.raw() + (n * g.cin + ci) * g.in_vol;
              for (std::size_t a = 0; a < kd; ++a) {
                for (std::size_t b = 0; b < kh; ++b) {
                  for (std::size_t c = 0; c < kw; ++c) {
                    const long long d = static_cast<long long>(od * spec.stride[0] + a * spec.dilation[0]) -
                                        static_cast<long long>(spec.padding[0]);
                    const long long h = static_cast<long long>(oh * spec.stride[1] + b * spec.dilation[1]) -
                                        static_cast<long long>(spec.padding[1]);
                    const long long w = static_cast<long long>(ow * spec.stride[2] + c * spec.dilation[2]) -
                                        static_cast<long long>(spec.padding[2]);
                    const double wv = weight[((co * g.cin + ci) * kd + a) * kh * kw + b * kw + c];
                    acc += wv * read(x, d, h, w);
                    if (counter) {
                      ++counter->multiplies;
                      ++counter->adds;
                    }
                  }
                }
              }
            }
            if (spec.has_bias) {
              acc += (*bias)[co];
              if (counter) ++counter->adds;
            }
            out[((n * g.cout + co) * g.out[0] + od) * g.out[1] * g.out[2] + oh * g.out[2] + ow] = acc;
          }
        }
      }
    }
  }
  return out;
}

ConvLayerNode::ConvLayerNode(ConvSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Tensor ConvLayerNode::forward(const Tensor& input, const Tensor& weight, const Tensor* bias) {
  Tensor out = conv_forward(input, spec_, weight, bias);
  input_ = input;
  weight_ = weight;
  return out;
}

ConvGrads ConvLayerNode::backward(const Tensor& grad_out) const {
  if (!input_) throw StateError("conv backward called before forward");
  return conv_backward(*input_, spec_, *weight_, grad_out);
}

PoolResult maxpool_forward(const Tensor& input, const std::vector<std::size_t>& window,
                           const std::vector<std::size_t>& stride) {
  const std::size_t ns = window.size();
  if (ns == 0 || ns > 3 || stride.size() != ns) throw ShapeError("maxpool: window/stride must have 1-3 axes");
  if (input.rank() < ns) throw ShapeError("maxpool: input rank smaller than window rank");
  Triple in{1, 1, 1}, win{1, 1, 1}, str{1, 1, 1}, out{1, 1, 1};
  const std::size_t lead = input.rank() - ns;
  for (std::size_t k = 0; k < ns; ++k) {
    in[3 - ns + k] = input.dim(lead + k);
    win[3 - ns + k] = window[k];
    str[3 - ns + k] = stride[k];
  }
  for (int k = 0; k < 3; ++k) {
    if (win[k] == 0 || str[k] == 0) throw ShapeError("maxpool: window and stride must be positive");
    if (win[k] > in[k]) throw ShapeError("maxpool: window larger than input");
    out[k] = (in[k] - win[k]) / str[k] + 1;
  }
  Shape out_shape(input.shape().begin(), input.shape().begin() + static_cast<long>(lead));
  for (std::size_t k = 0; k < ns; ++k) out_shape.push_back(out[3 - ns + k]);
  std::size_t outer = 1;
  for (std::size_t k = 0; k < lead; ++k) outer *= input.dim(k);
  const std::size_t in_vol = in[0] * in[1] * in[2];
  const std::size_t out_vol = out[0] * out[1] * out[2];

  PoolResult r{Tensor(out_shape), std::vector<std::size_t>(outer * out_vol)};
  for (std::size_t o = 0; o < outer; ++o) {
    const double* x = input.raw() + o * in_vol;
    for (std::size_t od = 0; od < out[0]; ++od) {
      for (std::size_t oh = 0; oh < out[1]; ++oh) {
        for (std::size_t ow = 0; ow < out[2]; ++ow) {
          // Scan in increasing flat order with strict '>' so ties keep the lowest index.
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = std::numeric_limits<std::size_t>::max();
          for (std::size_t a = 0; a < win[0]; ++a) {
            for (std::size_t b = 0; b < win[1]; ++b) {
              for (std::size_t c = 0; c < win[2]; ++c) {
                const std::size_t idx =
                    ((od * str[0] + a) * in[1] + (oh * str[1] + b)) * in[2] + (ow * str[2] + c);
                if (best_idx == std::numeric_limits<std::size_t>::max() || x[idx] > best) {
                  best = x[idx];
                  best_idx = idx;
                }
              }
            }
          }
          const std::size_t oidx = o * out_vol + (od * out[1] + oh) * out[2] + ow;
          r.values[oidx] = best;
          r.argmax[oidx] = o * in_vol + best_idx;
        }
      }
    }
  }
  if (OpCounter* counter = active_counter()) counter->elementwise += r.values.size();
  if (KinkRecorder* rec = active_recorder()) {
    for (std::size_t idx : r.argmax) rec->record(idx);
  }
  return r;
}

Tensor maxpool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax,
                        const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool backward: argmax/grad size mismatch");
  Tensor grad_in(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad_in[argmax[i]] += grad_out[i];
  return grad_in;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  if (OpCounter* counter = active_counter()) counter->elementwise += out.size();
  if (KinkRecorder* rec = active_recorder()) {
    std::vector<std::uint8_t> bits(input.size());
    for (std::size_t i = 0; i < input.size(); ++i) bits[i] = input[i] > 0.0 ? 1 : 0;
    rec->record_bits(bits);
  }
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  check_same_shape(input, grad_out, "relu backward");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

LossResult softmax_ce_loss(const Tensor& logits, const Tensor& labels, const LossWeights& weights) {
  if (logits.rank() < 2) throw ShapeError("softmax_ce_loss: logits must be [N,K,...]");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  Shape expected{batch};
  for (std::size_t k = 2; k < logits.rank(); ++k) expected.push_back(logits.dim(k));
  if (labels.shape() != expected) {
    throw ShapeError("softmax_ce_loss: labels shape " + shape_to_string(labels.shape()) +
                     " does not match logits " + shape_to_string(logits.shape()));
  }
  if (weights.mask.shape() != expected) throw ShapeError("softmax_ce_loss: mask shape mismatch");
  if (weights.class_weights.size() != classes) {
    throw ShapeError("softmax_ce_loss: expected " + std::to_string(classes) + " class weights");
  }
  for (double w : weights.class_weights) {
    if (!(w >= 0.0)) throw ConfigError("softmax_ce_loss: class weights must be non-negative");
  }
  const std::size_t spatial = labels.size() / batch;

  LossResult r;
  r.grad_logits = Tensor(logits.shape());
  std::vector<double> prob(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double lv = labels[i];
    if (!(lv >= 0.0) || lv >= static_cast<double>(classes) || lv != std::floor(lv)) {
      throw ShapeError("softmax_ce_loss: label " + std::to_string(lv) + " out of range [0," +
                       std::to_string(classes) + ")");
    }
    if (weights.mask[i] > 0.0) r.weight_total += weights.class_weights[static_cast<std::size_t>(lv)];
  }
  if (r.weight_total <= 0.0) return r;

  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t s = 0; s < spatial; ++s) {
      const std::size_t li = n * spatial + s;
      if (!(weights.mask[li] > 0.0)) continue;
      const auto label = static_cast<std::size_t>(labels[li]);
      const double w = weights.class_weights[label];
      const double* z = logits.raw() + n * classes * spatial + s;
      double zmax = z[0];
      for (std::size_t k = 1; k < classes; ++k) zmax = std::max(zmax, z[k * spatial]);
      double denom = 0.0;
      for (std::size_t k = 0; k < classes; ++k) {
        prob[k] = std::exp(z[k * spatial] - zmax);
        denom += prob[k];
      }
      const double nll = std::log(denom) - (z[label * spatial] - zmax);
      r.weighted_sum += w * nll;
      double* g = r.grad_logits.raw() + n * classes * spatial + s;
      const double scale = w / r.weight_total;
      for (std::size_t k = 0; k < classes; ++k) {
        g[k * spatial] = scale * (prob[k] / denom - (k == label ? 1.0 : 0.0));
      }
    }
  }
  r.loss = r.weighted_sum / r.weight_total;
  return r;
}

}  // namespace ddrnet::nn
