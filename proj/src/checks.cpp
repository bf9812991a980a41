#include "ddrnet/checks.hpp"

#include <chrono>
#include <functional>
#include <map>

#include "ddrnet/ddr.hpp"
#include "ddrnet/errors.hpp"
#include "ddrnet/model.hpp"
#include "ddrnet/projection.hpp"

namespace ddrnet {

using nn::ConvSpec;
using nn::GradcheckOptions;
using nn::GradcheckResult;
using nn::NamedParameter;
using nn::ParameterStore;
using nn::Rng;
using nn::random_tensor;
using nn::scalarize;
using nn::variable;

namespace {

// Parameters of `store` plus the free inputs.
std::vector<NamedParameter> with_inputs(const ParameterStore& store, std::vector<NamedParameter> inputs) {
  std::vector<NamedParameter> all = store.parameters();
  all.insert(all.end(), inputs.begin(), inputs.end());
  return all;
}

GradcheckResult conv3d_case(Rng& rng, const GradcheckOptions& opt) {
  ParameterStore store;
  nn::Conv conv(store, "conv", ConvSpec::same(3, 2, 3, {3, 3, 3}, 2, true), rng);
  Var x = variable(random_tensor({1, 2, 5, 4, 5}, rng));
  return gradcheck([&] { return scalarize(conv(x), 1); }, with_inputs(store, {{"x", x}}), opt);
}

GradcheckResult conv2d_case(Rng& rng, const GradcheckOptions& opt) {
  ParameterStore store;
  nn::Conv conv(store, "conv", ConvSpec::same(2, 3, 2, {1, 3, 1}, 1, true), rng);
  nn::Conv strided(store, "strided", ConvSpec::pointwise(2, 2, 2, true, 2), rng);
  Var x = variable(random_tensor({1, 3, 6, 4}, rng));
  return gradcheck([&] { return scalarize(strided(conv(x)), 2); }, with_inputs(store, {{"x", x}}), opt);
}

GradcheckResult relu_case(Rng& rng, const GradcheckOptions& opt) {
  Var x = variable(random_tensor({2, 3, 5, 4}, rng));
  return gradcheck([&] { return scalarize(nn::relu(x), 3); }, {{"x", x}}, opt);
}

GradcheckResult add_concat_case(Rng& rng, const GradcheckOptions& opt) {
  Var a = variable(random_tensor({1, 2, 4, 5}, rng));
  Var b = variable(random_tensor({1, 2, 4, 5}, rng));
  Var c = variable(random_tensor({1, 1, 4, 5}, rng));
  auto fwd = [&] { return scalarize(nn::concat({nn::add(a, b), c, a}, 1), 4); };
  return gradcheck(fwd, {{"a", a}, {"b", b}, {"c", c}}, opt);
}

GradcheckResult maxpool_case(Rng& rng, const GradcheckOptions& opt) {
  Var x = variable(random_tensor({1, 2, 4, 4, 6}, rng));
  return gradcheck([&] { return scalarize(nn::maxpool(x, {2, 2, 2}, {2, 2, 2}), 5); }, {{"x", x}}, opt);
}

GradcheckResult affine_case(Rng& rng, const GradcheckOptions& opt) {
  ParameterStore store;
  Var scale = store.create("scale", random_tensor({3}, rng));
  Var shift = store.create("shift", random_tensor({3}, rng));
  Var x = variable(random_tensor({1, 3, 4, 3, 2}, rng));
  auto fwd = [&] { return scalarize(nn::channel_affine(x, scale, shift), 6); };
  return gradcheck(fwd, with_inputs(store, {{"x", x}}), opt);
}

GradcheckResult loss_case(Rng& rng, const GradcheckOptions& opt) {
  Var logits = variable(random_tensor({2, 4, 2, 3, 2}, rng, -2.0, 2.0));
  Tensor labels({2, 2, 3, 2});
  nn::LossWeights w;
  w.class_weights = {0.3, 1.0, 0.7, 1.5};
  w.mask = Tensor(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<double>(rng.index(4));
    w.mask[i] = rng.index(4) == 0 ? 0.0 : 1.0;
  }
  return gradcheck([&] { return nn::softmax_ce(logits, labels, w); }, {{"logits", logits}}, opt);
}

GradcheckResult basic_ddr_case(Rng& rng, const GradcheckOptions& opt) {
  // Both dimensionalities in one scalar.
  ParameterStore store;
  DDRBlockConfig c3;
  c3.channels = 3;
  c3.dilation = 2;
  c3.bias = true;
  DDRBlockConfig c2 = c3;
  c2.spatial_dims = 2;
  BasicDDR b3(store, "basic3d", c3, rng);
  BasicDDR b2(store, "basic2d", c2, rng);
  Var x3 = variable(random_tensor({1, 3, 4, 5, 4}, rng));
  Var x2 = variable(random_tensor({1, 3, 6, 5}, rng));
  auto fwd = [&] { return nn::add(scalarize(b3.forward(x3), 7), scalarize(b2.forward(x2), 8)); };
  return gradcheck(fwd, with_inputs(store, {{"x3", x3}, {"x2", x2}}), opt);
}

GradcheckResult bottleneck_ddr_case(Rng& rng, const GradcheckOptions& opt) {
  ParameterStore store;
  DDRBlockConfig cfg;
  cfg.channels = 8;
  cfg.reduction = 4;
  cfg.dilation = 2;
  cfg.bias = true;
  BottleneckDDR block(store, "bottleneck", cfg, rng);
  Var x = variable(random_tensor({1, 8, 5, 5, 5}, rng));
  return gradcheck([&] { return scalarize(block.forward(x), 9); }, with_inputs(store, {{"x", x}}), opt);
}

GradcheckResult downsample_case(Rng& rng, const GradcheckOptions& opt) {
  ParameterStore store;
  DownsampleBlock down(store, "down", 2, 5, true, true, rng);
  Var x = variable(random_tensor({1, 2, 4, 4, 4}, rng));
  return gradcheck([&] { return scalarize(down.forward(x), 10); }, with_inputs(store, {{"x", x}}), opt);
}

GradcheckResult aspp_case(Rng& rng, const GradcheckOptions& opt) {
  ParameterStore store;
  LwAsppConfig cfg;
  cfg.channels = 4;
  cfg.rates = {1, 2};
  cfg.out_channels = 3;
  LwAspp aspp(store, "aspp", cfg, rng);
  Var x = variable(random_tensor({1, 4, 5, 5, 5}, rng));
  return gradcheck([&] { return scalarize(aspp.forward(x), 11); }, with_inputs(store, {{"x", x}}), opt);
}

// Camera at the middle of the grid's z = 0 face looking along +z.
CameraIntrinsics facing(const VoxelGridSpec& grid, std::size_t h, std::size_t w) {
  CameraIntrinsics intr;
  const double extent = grid.voxel_size * static_cast<double>(grid.dims[0]);
  intr.fx = static_cast<double>(w);
  intr.fy = static_cast<double>(h);
  intr.cx = (static_cast<double>(w) - 1.0) / 2.0;
  intr.cy = (static_cast<double>(h) - 1.0) / 2.0;
  intr.translation = {grid.origin[0] + extent / 2, grid.origin[1] + extent / 2, grid.origin[2]};
  return intr;
}

GradcheckResult projection_case(Rng& rng, const GradcheckOptions& opt) {
  const VoxelGridSpec grid{{0, 0, 0}, 0.5, {6, 6, 6}};
  const Tensor depth = random_tensor({10, 10}, rng, 0.2, 2.8);
  const ProjectionTable table = build_projection_table(depth, facing(grid, 10, 10), grid);
  Var f = variable(random_tensor({1, 2, 10, 10}, rng));
  return gradcheck([&] { return scalarize(project(f, table, grid), 12); }, {{"features", f}}, opt);
}

GradcheckResult network_case(Rng& rng, const GradcheckOptions& opt) {
  NetworkConfig cfg = preset_config("desk");
  cfg.grid = VoxelGridSpec{{0, 0, 0}, 0.25, {16, 16, 16}};
  cfg.image_height = 16;
  cfg.image_width = 16;
  cfg.aspp_rates = {1};  // a 4^3 output admits only rate 1
  cfg.zero_init_residual = false;
  cfg.init_seed = rng.index(1u << 30);
  Network net(cfg);
  // Non-zero biases keep relus off exact zeros in empty space.
  for (const NamedParameter& p : net.params().parameters()) {
    if (p.name.find(".bias") != std::string::npos) p.var->value = random_tensor(p.var->value.shape(), rng, -0.1, 0.1);
  }
  const double extent = cfg.grid.voxel_size * 16.0;
  const Tensor rgb = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  const Tensor depth = random_tensor({16, 16}, rng, 0.05 * extent, 0.95 * extent);
  const CameraIntrinsics intr = facing(cfg.grid, 16, 16);
  auto fwd = [&] { return scalarize(net.forward(rgb, depth, intr), 13); };
  return gradcheck(fwd, net.params().parameters(), opt);
}

using CaseFn = std::function<GradcheckResult(Rng&, const GradcheckOptions&)>;

const std::vector<std::pair<std::string, CaseFn>>& cases() {
  static const std::vector<std::pair<std::string, CaseFn>> all{
      {"conv3d", conv3d_case},
      {"conv2d", conv2d_case},
      {"relu", relu_case},
      {"add-concat", add_concat_case},
      {"maxpool", maxpool_case},
      {"affine", affine_case},
      {"softmax-ce", loss_case},
      {"basic-ddr", basic_ddr_case},
      {"bottleneck-ddr", bottleneck_ddr_case},
      {"downsample", downsample_case},
      {"lw-aspp", aspp_case},
      {"projection", projection_case},
      {"network", network_case},
  };
  return all;
}

}  // namespace

std::vector<std::string> gradcheck_targets() {
  std::vector<std::string> names;
  for (const auto& c : cases()) names.push_back(c.first);
  return names;
}

TargetResult run_gradcheck_target(const std::string& target, std::uint64_t seed, const GradcheckOptions& options) {
  for (const auto& [name, fn] : cases()) {
    if (name != target) continue;
    Rng rng(seed);
    const auto start = std::chrono::steady_clock::now();
    GradcheckResult r = fn(rng, options);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {name, r, seconds};
  }
  throw ConfigError("unknown gradcheck target '" + target + "'");
}

}  // namespace ddrnet
