#include "ddrnet/ddr.hpp"

#include <algorithm>
#include <string>

namespace ddrnet {

namespace {

const char* axis_suffix(int axis) {
  switch (axis) {
    case 0: return "d";
    case 1: return "h";
    default: return "w";
  }
}

std::vector<int> active_axes(const DDRBlockConfig& cfg) {
  std::vector<int> axes;
  for (int a : cfg.order) {
    if (cfg.spatial_dims == 2 && a == 0) continue;
    axes.push_back(a);
  }
  return axes;
}

}  // namespace

void DDRBlockConfig::validate(bool bottleneck) const {
  if (channels == 0) throw ConfigError("DDR block: channels must be positive");
  if (dilation == 0) throw ConfigError("DDR block: dilation must be >= 1");
  if (kernel % 2 == 0) throw ConfigError("DDR block: kernel size must be odd");
  if (spatial_dims != 2 && spatial_dims != 3) throw ConfigError("DDR block: spatial_dims must be 2 or 3");
  std::array<int, 3> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::array<int, 3>{0, 1, 2}) throw ConfigError("DDR block: order must permute {0,1,2}");
  if (bottleneck && (reduction == 0 || channels % reduction != 0)) {
    throw ConfigError("DDR block: channels " + std::to_string(channels) + " not divisible by reduction " +
                      std::to_string(reduction));
  }
}

nn::ConvSpec decomposed_spec(const DDRBlockConfig& cfg, int axis, std::size_t in, std::size_t out) {
  nn::Triple kernel{1, 1, 1};
  kernel[static_cast<std::size_t>(axis)] = cfg.kernel;
  return nn::ConvSpec::same(cfg.spatial_dims, in, out, kernel, cfg.dilation, cfg.bias);
}

BasicDDR::BasicDDR(nn::ParameterStore& store, const std::string& name, const DDRBlockConfig& cfg,
                   nn::Rng& rng, nn::Init init)
    : cfg_(cfg) {
  cfg_.validate(false);
  for (int axis : active_axes(cfg_)) {
    convs_.emplace_back(store, name + ".conv_" + axis_suffix(axis),
                        decomposed_spec(cfg_, axis, cfg_.channels, cfg_.channels), rng, init);
  }
}

Var BasicDDR::forward(const Var& x) const {
  if (x->value.dim(1) != cfg_.channels) {
    throw ShapeError("BasicDDR: input has " + std::to_string(x->value.dim(1)) + " channels, block expects " +
                     std::to_string(cfg_.channels));
  }
  Var h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i](h);
    if (cfg_.activation && i + 1 < convs_.size()) h = nn::relu(h);
  }
  return nn::add(x, h);
}

BottleneckDDR::BottleneckDDR(nn::ParameterStore& store, const std::string& name, const DDRBlockConfig& cfg,
                             nn::Rng& rng, nn::Init init)
    : cfg_(cfg) {
  cfg_.validate(true);
  const std::size_t inner = cfg_.channels / cfg_.reduction;
  reduce_ = nn::Conv(store, name + ".reduce", nn::ConvSpec::pointwise(cfg_.spatial_dims, cfg_.channels, inner, cfg_.bias),
                     rng, init);
  for (int axis : active_axes(cfg_)) {
    convs_.emplace_back(store, name + ".conv_" + axis_suffix(axis), decomposed_spec(cfg_, axis, inner, inner),
                        rng, init);
  }
  restore_ = nn::Conv(store, name + ".restore",
                      nn::ConvSpec::pointwise(cfg_.spatial_dims, inner, cfg_.channels, cfg_.bias), rng, init);
}

Var BottleneckDDR::forward(const Var& x) const {
  if (x->value.dim(1) != cfg_.channels) {
    throw ShapeError("BottleneckDDR: input has " + std::to_string(x->value.dim(1)) +
                     " channels, block expects " + std::to_string(cfg_.channels));
  }
  Var h = reduce_(x);
  if (cfg_.activation) h = nn::relu(h);
  for (const nn::Conv& conv : convs_) {
    h = nn::add(h, conv(h));
    if (cfg_.activation) h = nn::relu(h);
  }
  return nn::add(x, restore_(h));
}

DownsampleBlock::DownsampleBlock(nn::ParameterStore& store, const std::string& name, std::size_t in_channels,
                                 std::size_t out_channels, bool bias, bool activation, nn::Rng& rng,
                                 nn::Init init)
    : in_channels_(in_channels), out_channels_(out_channels), activation_(activation) {
  if (out_channels <= in_channels) {
    throw ConfigError("down-sample block: out_channels (" + std::to_string(out_channels) +
                      ") must exceed in_channels (" + std::to_string(in_channels) + ")");
  }
  conv_ = nn::Conv(store, name + ".conv", nn::ConvSpec::pointwise(3, in_channels, out_channels - in_channels, bias, 2),
                   rng, init);
}

Var DownsampleBlock::forward(const Var& x) const {
  const Shape& s = x->value.shape();
  if (s.size() != 5 || s[1] != in_channels_) {
    throw ShapeError("down-sample block: expected [N," + std::to_string(in_channels_) + ",D,H,W], got " +
                     shape_to_string(s));
  }
  for (std::size_t k = 2; k < 5; ++k) {
    if (s[k] % 2 != 0) throw ShapeError("down-sample block: odd spatial size " + shape_to_string(s));
  }
  Var pooled = nn::maxpool(x, {2, 2, 2}, {2, 2, 2});
  Var projected = conv_(x);
  if (activation_) projected = nn::relu(projected);
  return nn::concat({pooled, projected}, 1);
}

LwAspp::LwAspp(nn::ParameterStore& store, const std::string& name, const LwAsppConfig& cfg, nn::Rng& rng,
               nn::Init init)
    : cfg_(cfg) {
  if (cfg_.rates.empty()) throw ConfigError("LW-ASPP: rate list is empty");
  for (std::size_t i = 0; i < cfg_.rates.size(); ++i) {
    DDRBlockConfig block;
    block.channels = cfg_.channels;
    block.reduction = cfg_.reduction;
    block.dilation = cfg_.rates[i];
    block.kernel = cfg_.kernel;
    block.bias = cfg_.block_bias;
    block.activation = cfg_.activation;
    branches_.emplace_back(store, name + ".rate" + std::to_string(cfg_.rates[i]) + "_" + std::to_string(i),
                           block, rng, init);
  }
  fusion_ = nn::Conv(store, name + ".fusion",
                     nn::ConvSpec::pointwise(3, cfg_.channels * cfg_.rates.size(), cfg_.out_channels, cfg_.fusion_bias),
                     rng, init);
}

Var LwAspp::forward(const Var& x) const {
  const std::size_t max_rate = *std::max_element(cfg_.rates.begin(), cfg_.rates.end());
  const Shape& s = x->value.shape();
  if (s.size() != 5) throw ShapeError("LW-ASPP: expected [N,C,D,H,W], got " + shape_to_string(s));
  for (std::size_t k = 2; k < 5; ++k) {
    if (s[k] < 2 * max_rate + 1) {
      throw ShapeError("LW-ASPP: rate " + std::to_string(max_rate) + " too large for input " +
                       shape_to_string(s));
    }
  }
  std::vector<Var> outs;
  outs.reserve(branches_.size());
  for (const BottleneckDDR& b : branches_) outs.push_back(b.forward(x));
  return fusion_(nn::concat(outs, 1));
}

}  // namespace ddrnet
