#pragma once

#include <array>
#include <string>
#include <vector>

#include "ddrnet/nn/layers.hpp"

namespace ddrnet {

using nn::Var;

struct DDRBlockConfig {
  std::size_t channels = 4;
  std::size_t reduction = 4;  // bottleneck only
  std::size_t dilation = 1;
  int spatial_dims = 3;
  std::size_t kernel = 3;
  bool bias = false;
  bool activation = true;
  // Spatial axes (0 = depth, 1 = height, 2 = width) in the order the 1-D
  // convolutions are applied. Default width, height, depth: (1,1,k) ->
  // (1,k,1) -> (k,1,1). 2D blocks ignore the depth entry.
  std::array<int, 3> order{2, 1, 0};

  void validate(bool bottleneck) const;
};

// The 1-D "same" convolution along `axis` with the block's kernel/dilation.
nn::ConvSpec decomposed_spec(const DDRBlockConfig& cfg, int axis, std::size_t in, std::size_t out);

/// Residual block whose branch is the chain of one-dimensional
/// convolutions covering every spatial axis: y = x + F(x).
class BasicDDR {
 public:
  BasicDDR(nn::ParameterStore& store, const std::string& name, const DDRBlockConfig& cfg, nn::Rng& rng,
           nn::Init init = nn::Init::HeNormal);

  Var forward(const Var& x) const;
  const std::vector<nn::Conv>& convs() const { return convs_; }
  const DDRBlockConfig& config() const { return cfg_; }

 private:
  DDRBlockConfig cfg_;
  std::vector<nn::Conv> convs_;
};

/// Bottleneck DDR. Pointwise reduce to c/r channels, then each 1-D
/// convolution wrapped in its own identity shortcut, then pointwise restore:
///   a  = PW_reduce(x)
///   h1 = a  + Conv_w(a);  h2 = h1 + Conv_h(h1);  h3 = h2 + Conv_d(h2)
///   y  = x  + PW_restore(h3)
class BottleneckDDR {
 public:
  BottleneckDDR(nn::ParameterStore& store, const std::string& name, const DDRBlockConfig& cfg,
                nn::Rng& rng, nn::Init init = nn::Init::HeNormal);

  Var forward(const Var& x) const;
  const DDRBlockConfig& config() const { return cfg_; }
  const nn::Conv& reduce() const { return reduce_; }
  const nn::Conv& restore() const { return restore_; }
  const std::vector<nn::Conv>& convs() const { return convs_; }

 private:
  DDRBlockConfig cfg_;
  nn::Conv reduce_;
  std::vector<nn::Conv> convs_;
  nn::Conv restore_;
};

/// Halves every spatial axis: [maxpool 2/2 of x, stride-2 pointwise conv of x].
class DownsampleBlock {
 public:
  DownsampleBlock(nn::ParameterStore& store, const std::string& name, std::size_t in_channels,
                  std::size_t out_channels, bool bias, bool activation, nn::Rng& rng,
                  nn::Init init = nn::Init::HeNormal);

  Var forward(const Var& x) const;
  const nn::Conv& conv() const { return conv_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return out_channels_; }

 private:
  std::size_t in_channels_;
  std::size_t out_channels_;
  bool activation_;
  nn::Conv conv_;
};

struct LwAsppConfig {
  std::size_t channels = 8;
  std::vector<std::size_t> rates{1, 2, 3};
  std::size_t out_channels = 8;
  std::size_t reduction = 4;
  std::size_t kernel = 3;
  bool block_bias = false;
  bool fusion_bias = true;
  bool activation = true;
};

/// Light-weight ASPP: one dilated bottleneck DDR per rate, channel concat in
/// rate order, pointwise fusion to out_channels. The fused output is linear;
/// callers apply their own activation.
class LwAspp {
 public:
  LwAspp(nn::ParameterStore& store, const std::string& name, const LwAsppConfig& cfg, nn::Rng& rng,
         nn::Init init = nn::Init::HeNormal);

  Var forward(const Var& x) const;
  const std::vector<BottleneckDDR>& branches() const { return branches_; }
  const nn::Conv& fusion() const { return fusion_; }
  const LwAsppConfig& config() const { return cfg_; }

 private:
  LwAsppConfig cfg_;
  std::vector<BottleneckDDR> branches_;
  nn::Conv fusion_;
};

}  // namespace ddrnet
