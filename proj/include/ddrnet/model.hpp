#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ddrnet/ddr.hpp"
#include "ddrnet/projection.hpp"

namespace ddrnet {

enum class Modality { RGBD, Depth, RGB };

const char* modality_name(Modality m);
Modality parse_modality(const std::string& name);

/// Declarative architecture description. Everything the network and the
/// cost analyzer need is derived from this.
struct NetworkConfig {
  std::string preset = "desk";
  std::size_t num_classes = 12;  // empty + 11 semantic classes
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t channels_2d = 4;
  std::array<std::size_t, 2> channels_3d{16, 32};
  std::vector<std::size_t> aspp_rates{1, 2, 3};
  std::size_t aspp_channels = 32;
  std::size_t head_channels = 32;
  std::size_t reduction = 4;
  std::size_t kernel = 3;
  VoxelGridSpec grid{{0.0, 0.0, 0.0}, 0.125, {32, 32, 32}};
  Modality modality = Modality::RGBD;
  bool bias = true;         // pointwise stems, down-sample, ASPP fusion, head
  bool block_bias = false;  // convolutions inside DDR blocks
  bool activation = true;   // relu (false: purely linear network)
  bool affine = false;      // per-channel scale/shift after every 3D DDR block
  std::array<int, 3> decomposition_order{2, 1, 0};
  std::uint64_t init_seed = 1;
  bool zero_init_residual = true;  // no normalization layers, so start every residual at identity

  bool uses_depth() const { return modality != Modality::RGB; }
  bool uses_rgb() const { return modality != Modality::Depth; }
  std::size_t aspp_input_channels() const { return channels_3d[0] + channels_3d[1]; }
  VoxelGridSpec output_grid() const { return grid.coarsened(4); }

  // Throws ConfigError naming the first inconsistent edge.
  void validate() const;
};

NetworkConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

// Structured-text form. Parsing starts from `preset` (default "desk") and
// overrides only the keys present.
std::string config_to_json(const NetworkConfig& cfg);
NetworkConfig config_from_json(const std::string& text);
NetworkConfig load_config(const std::string& path);

/// One modality's extractor: 2D pointwise stem, two 2D basic DDR blocks,
/// projection, then (down-sample -> 3D bottleneck DDR) twice.
struct Branch {
  std::string name;
  nn::Conv stem;
  std::vector<BasicDDR> ddr2d;
  std::vector<DownsampleBlock> down;
  std::vector<BottleneckDDR> ddr3d;
  std::vector<std::pair<nn::Var, nn::Var>> affine;  // (scale, shift) per 3D level
};

struct ForwardTrace {
  nn::Var logits;
  // Per-branch projected volume (before the first down-sample), for inspection.
  std::vector<nn::Var> projected;
};

class Network {
 public:
  explicit Network(const NetworkConfig& cfg);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  // rgb [3,H,W] in [0,1], depth [H,W] in meters. Returns logits
  // [1,K,X/4,Y/4,Z/4]. Aborts with NumericalError naming the stage if any
  // activation turns non-finite.
  nn::Var forward(const Tensor& rgb, const Tensor& depth, const CameraIntrinsics& intr) const;
  ForwardTrace forward_traced(const Tensor& rgb, const Tensor& depth, const CameraIntrinsics& intr) const;

  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  const NetworkConfig& config() const { return cfg_; }
  const std::vector<Branch>& branches() const { return branches_; }

 private:
  nn::Var run_branch(const Branch& b, const Tensor& image, const ProjectionTable& table,
                     std::vector<nn::Var>& levels, std::vector<nn::Var>* projected) const;

  NetworkConfig cfg_;
  nn::ParameterStore store_;
  std::vector<Branch> branches_;
  std::unique_ptr<LwAspp> aspp_;
  std::vector<nn::Conv> head_;
};

// ---------------------------------------------------------------------------
// Cost analysis

struct Fraction {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  bool operator==(const Fraction&) const = default;
  std::string str() const;
};
Fraction reduced(std::uint64_t num, std::uint64_t den);

struct LayerCost {
  std::string name;
  std::string kind;   // conv2d, conv3d, relu, add, concat, maxpool, projection, affine
  std::string group;  // e.g. "depth/3d-ddr", "aspp", "head"
  std::size_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  Shape output;
  std::uint64_t activation_bytes = 0;
};

/// Decomposed-vs-full comparison for one DDR block's 1-D convolution chain.
struct BlockCost {
  std::string name;
  std::size_t kernel = 3;
  std::size_t decomposed_params = 0;  // the 1-D chain, bias excluded
  std::size_t full_params = 0;        // one k^3 (or k^2 in 2D) conv with the same channels
  Fraction param_ratio;
  std::uint64_t decomposed_macs = 0;
  std::uint64_t full_macs = 0;
  Fraction mac_ratio;
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::vector<BlockCost> blocks;
  std::size_t total_params = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t total_flops = 0;  // 2 * MACs + bias adds + 1 per elementwise output
  std::uint64_t activation_bytes = 0;

  std::map<std::string, std::size_t> params_by_group() const;
  std::size_t params_with_prefix(const std::string& prefix) const;
  // Parameters of every 3D residual block (extractor levels and ASPP branches).
  std::size_t block3d_params() const;
  // Parameters of the 2D DDR blocks of one branch ("depth" / "rgb").
  std::size_t ddr2d_params(const std::string& branch) const;

  std::string to_text() const;
  std::string to_json() const;
};

// Which 3D residual unit the analyzer assumes. Only DDRBottleneck is a
// trainable path; the other two exist for cost comparison.
enum class Residual3d {
  DDRBottleneck,   // pointwise reduce, three 1-D convs with shortcuts, restore
  FullBottleneck,  // pointwise reduce, one k^3 conv, restore
  FullBasic,       // two k^3 convs at full width
};
enum class AsppKind { Light, Full };  // Full: one dilated k^3 conv per rate

struct AnalyzerOptions {
  Residual3d residual = Residual3d::DDRBottleneck;
  AsppKind aspp = AsppKind::Light;
};

CostReport analyze(const NetworkConfig& cfg, const AnalyzerOptions& options = {});
CostReport count_params(const Network& net);
CostReport count_flops(const Network& net, std::size_t image_height, std::size_t image_width);

// Cost of a k-sized 1-D triplet (c -> c) against one full k^3 conv at a
// given output volume, bias excluded.
BlockCost decomposition_cost(std::size_t channels, std::size_t kernel, std::uint64_t volume,
                             int spatial_dims = 3);

}  // namespace ddrnet
