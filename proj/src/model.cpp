#include "ddrnet/model.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace ddrnet {

using json = nlohmann::json;

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Depth: return "depth";
    case Modality::RGB: return "rgb";
    default: return "rgbd";
  }
}

Modality parse_modality(const std::string& name) {
  if (name == "rgbd") return Modality::RGBD;
  if (name == "depth") return Modality::Depth;
  if (name == "rgb") return Modality::RGB;
  throw ConfigError("unknown modality '" + name + "' (expected rgbd, depth or rgb)");
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("network config: " + msg); };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (image_height == 0 || image_width == 0) fail("image size must be positive");
  if (channels_2d == 0) fail("channels_2d must be positive");
  if (channels_3d[0] <= channels_2d) {
    fail("down-sample 2d->3d level 1: channels_3d[0]=" + std::to_string(channels_3d[0]) +
         " must exceed channels_2d=" + std::to_string(channels_2d));
  }
  if (channels_3d[1] <= channels_3d[0]) {
    fail("down-sample level 1->2: channels_3d[1]=" + std::to_string(channels_3d[1]) +
         " must exceed channels_3d[0]=" + std::to_string(channels_3d[0]));
  }
  if (reduction == 0) fail("reduction must be positive");
  for (std::size_t i = 0; i < 2; ++i) {
    if (channels_3d[i] % reduction != 0) {
      fail("3d level " + std::to_string(i + 1) + ": channels " + std::to_string(channels_3d[i]) +
           " not divisible by reduction " + std::to_string(reduction));
    }
  }
  if (aspp_input_channels() % reduction != 0) {
    fail("aspp input: channels " + std::to_string(aspp_input_channels()) + " not divisible by reduction " +
         std::to_string(reduction));
  }
  if (kernel == 0 || kernel % 2 == 0) fail("kernel must be odd");
  if (aspp_rates.empty()) fail("aspp_rates is empty");
  if (aspp_channels == 0 || head_channels == 0) fail("aspp/head channels must be positive");
  std::array<int, 3> sorted = decomposition_order;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::array<int, 3>{0, 1, 2}) fail("decomposition_order must permute {0,1,2}");
  grid.validate();
  for (std::size_t d : grid.dims) {
    if (d % 4 != 0) fail("grid dims must be divisible by 4, got " + std::to_string(d));
  }
  const std::size_t max_rate = *std::max_element(aspp_rates.begin(), aspp_rates.end());
  if (std::find(aspp_rates.begin(), aspp_rates.end(), 0u) != aspp_rates.end()) fail("aspp rate 0");
  for (std::size_t d : grid.dims) {
    if (d / 4 < 2 * max_rate + 1) {
      fail("aspp rate " + std::to_string(max_rate) + " too large for output size " + std::to_string(d / 4));
    }
  }
}

std::vector<std::string> preset_names() { return {"desk", "depth-only", "rgb-only", "paper-scale"}; }

NetworkConfig preset_config(const std::string& name) {
  NetworkConfig cfg;
  cfg.preset = name;
  if (name == "desk") return cfg;
  if (name == "depth-only") {
    cfg.modality = Modality::Depth;
    return cfg;
  }
  if (name == "rgb-only") {
    cfg.modality = Modality::RGB;
    return cfg;
  }
  if (name == "paper-scale") {
    // 640x480 input, 240x144x240 grid at 2 cm, 60x36x60 output.
    cfg.image_height = 480;
    cfg.image_width = 640;
    cfg.channels_2d = 8;
    cfg.channels_3d = {48, 96};
    cfg.aspp_channels = 128;
    cfg.head_channels = 144;
    cfg.grid = VoxelGridSpec{{-2.4, -1.44, 0.0}, 0.02, {240, 144, 240}};
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::string config_to_json(const NetworkConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["num_classes"] = cfg.num_classes;
  j["image"] = {cfg.image_height, cfg.image_width};
  j["channels_2d"] = cfg.channels_2d;
  j["channels_3d"] = cfg.channels_3d;
  j["aspp_rates"] = cfg.aspp_rates;
  j["aspp_channels"] = cfg.aspp_channels;
  j["head_channels"] = cfg.head_channels;
  j["reduction"] = cfg.reduction;
  j["kernel"] = cfg.kernel;
  j["grid"] = {{"origin", cfg.grid.origin}, {"voxel_size", cfg.grid.voxel_size}, {"dims", cfg.grid.dims}};
  j["modality"] = modality_name(cfg.modality);
  j["bias"] = cfg.bias;
  j["block_bias"] = cfg.block_bias;
  j["activation"] = cfg.activation ? "relu" : "none";
  j["affine"] = cfg.affine;
  j["decomposition_order"] = cfg.decomposition_order;
  j["init_seed"] = cfg.init_seed;
  j["zero_init_residual"] = cfg.zero_init_residual;
  return j.dump(2) + "\n";
}

NetworkConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  NetworkConfig cfg = preset_config(j.value("preset", std::string("desk")));
  const std::string* key = nullptr;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      key = &it.key();
      const json& v = it.value();
      if (*key == "preset") continue;
      else if (*key == "num_classes") cfg.num_classes = v.get<std::size_t>();
      else if (*key == "image") {
        auto hw = v.get<std::array<std::size_t, 2>>();
        cfg.image_height = hw[0];
        cfg.image_width = hw[1];
      } else if (*key == "channels_2d") cfg.channels_2d = v.get<std::size_t>();
      else if (*key == "channels_3d") cfg.channels_3d = v.get<std::array<std::size_t, 2>>();
      else if (*key == "aspp_rates") cfg.aspp_rates = v.get<std::vector<std::size_t>>();
      else if (*key == "aspp_channels") cfg.aspp_channels = v.get<std::size_t>();
      else if (*key == "head_channels") cfg.head_channels = v.get<std::size_t>();
      else if (*key == "reduction") cfg.reduction = v.get<std::size_t>();
      else if (*key == "kernel") cfg.kernel = v.get<std::size_t>();
      else if (*key == "grid") {
        if (v.contains("origin")) cfg.grid.origin = v.at("origin").get<std::array<double, 3>>();
        if (v.contains("voxel_size")) cfg.grid.voxel_size = v.at("voxel_size").get<double>();
        if (v.contains("dims")) cfg.grid.dims = v.at("dims").get<std::array<std::size_t, 3>>();
      } else if (*key == "modality") cfg.modality = parse_modality(v.get<std::string>());
      else if (*key == "bias") cfg.bias = v.get<bool>();
      else if (*key == "block_bias") cfg.block_bias = v.get<bool>();
      else if (*key == "activation") {
        const std::string a = v.get<std::string>();
        if (a != "relu" && a != "none") throw ConfigError("config: activation must be relu or none");
        cfg.activation = a == "relu";
      } else if (*key == "affine") cfg.affine = v.get<bool>();
      else if (*key == "decomposition_order") cfg.decomposition_order = v.get<std::array<int, 3>>();
      else if (*key == "init_seed") cfg.init_seed = v.get<std::uint64_t>();
      else if (*key == "zero_init_residual") cfg.zero_init_residual = v.get<bool>();
      else throw ConfigError("config: unknown key '" + *key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + (key ? *key : std::string("?")) + "': " + e.what());
  }
  cfg.validate();
  return cfg;
}

NetworkConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Network

namespace {

Var checked(Var v, const std::string& stage) {
  if (!all_finite(v->value)) throw NumericalError("non-finite activation after " + stage);
  return v;
}

DDRBlockConfig block_config(const NetworkConfig& cfg, std::size_t channels, int dims) {
  DDRBlockConfig b;
  b.channels = channels;
  b.reduction = cfg.reduction;
  b.spatial_dims = dims;
  b.kernel = cfg.kernel;
  b.bias = cfg.block_bias;
  b.activation = cfg.activation;
  b.order = cfg.decomposition_order;
  return b;
}

}  // namespace

Network::Network(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(cfg_.init_seed);
  std::vector<std::pair<std::string, std::size_t>> inputs;
  if (cfg_.uses_depth()) inputs.emplace_back("depth", 1);
  if (cfg_.uses_rgb()) inputs.emplace_back("rgb", 3);
  for (const auto& [name, in_channels] : inputs) {
    Branch b;
    b.name = name;
    b.stem = nn::Conv(store_, name + ".stem", nn::ConvSpec::pointwise(2, in_channels, cfg_.channels_2d, cfg_.bias),
                      rng);
    for (std::size_t i = 0; i < 2; ++i) {
      b.ddr2d.emplace_back(store_, name + ".ddr2d_" + std::to_string(i), block_config(cfg_, cfg_.channels_2d, 2),
                           rng);
      if (cfg_.zero_init_residual) b.ddr2d.back().convs().back().weight()->value.fill(0.0);
    }
    std::size_t prev = cfg_.channels_2d;
    for (std::size_t i = 0; i < 2; ++i) {
      const std::size_t c = cfg_.channels_3d[i];
      const std::string level = std::to_string(i);
      b.down.emplace_back(store_, name + ".down_" + level, prev, c, cfg_.bias, cfg_.activation, rng);
      b.ddr3d.emplace_back(store_, name + ".ddr3d_" + level, block_config(cfg_, c, 3), rng);
      if (cfg_.zero_init_residual) b.ddr3d.back().restore().weight()->value.fill(0.0);
      if (cfg_.affine) {
        b.affine.emplace_back(store_.create(name + ".affine_" + level + ".scale", Tensor(Shape{c}, 1.0)),
                              store_.create(name + ".affine_" + level + ".shift", Tensor(Shape{c}, 0.0)));
      }
      prev = c;
    }
    branches_.push_back(std::move(b));
  }
  LwAsppConfig acfg;
  acfg.channels = cfg_.aspp_input_channels();
  acfg.rates = cfg_.aspp_rates;
  acfg.out_channels = cfg_.aspp_channels;
  acfg.reduction = cfg_.reduction;
  acfg.kernel = cfg_.kernel;
  acfg.block_bias = cfg_.block_bias;
  acfg.fusion_bias = cfg_.bias;
  acfg.activation = cfg_.activation;
  aspp_ = std::make_unique<LwAspp>(store_, "aspp", acfg, rng);
  if (cfg_.zero_init_residual) {
    for (const BottleneckDDR& br : aspp_->branches()) br.restore().weight()->value.fill(0.0);
  }
  const std::size_t widths[] = {cfg_.aspp_channels, cfg_.head_channels, cfg_.head_channels, cfg_.num_classes};
  for (std::size_t i = 0; i < 3; ++i) {
    head_.emplace_back(store_, "head_" + std::to_string(i),
                       nn::ConvSpec::pointwise(3, widths[i], widths[i + 1], cfg_.bias), rng);
  }
}

Var Network::run_branch(const Branch& b, const Tensor& image, const ProjectionTable& table,
                        std::vector<Var>& levels, std::vector<Var>* projected) const {
  Var h = b.stem(nn::constant(image));
  if (cfg_.activation) h = nn::relu(h);
  h = checked(h, b.name + ".stem");
  for (std::size_t i = 0; i < b.ddr2d.size(); ++i) {
    h = checked(b.ddr2d[i].forward(h), b.name + ".ddr2d_" + std::to_string(i));
  }
  h = project(h, table, cfg_.grid);
  if (projected) projected->push_back(h);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string level = std::to_string(i);
    h = checked(b.down[i].forward(h), b.name + ".down_" + level);
    h = b.ddr3d[i].forward(h);
    if (cfg_.affine) h = nn::channel_affine(h, b.affine[i].first, b.affine[i].second);
    h = checked(h, b.name + ".ddr3d_" + level);
    levels.push_back(h);
  }
  return h;
}

ForwardTrace Network::forward_traced(const Tensor& rgb, const Tensor& depth, const CameraIntrinsics& intr) const {
  const std::size_t H = cfg_.image_height, W = cfg_.image_width;
  if (depth.shape() != Shape{H, W}) {
    throw ShapeError("network: depth must be " + shape_to_string({H, W}) + ", got " + shape_to_string(depth.shape()));
  }
  if (cfg_.uses_rgb() && rgb.shape() != Shape{3, H, W}) {
    throw ShapeError("network: rgb must be " + shape_to_string({3, H, W}) + ", got " + shape_to_string(rgb.shape()));
  }
  const ProjectionTable table = build_projection_table(depth, intr, cfg_.grid);

  ForwardTrace trace;
  std::vector<Var> fused;
  for (const Branch& b : branches_) {
    const Tensor image = b.name == "depth" ? depth.reshaped({1, 1, H, W}) : rgb.reshaped({1, 3, H, W});
    std::vector<Var> levels;
    run_branch(b, image, table, levels, &trace.projected);
    if (fused.empty()) {
      fused = levels;
    } else {
      for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = nn::add(fused[i], levels[i]);
    }
  }
  Var x = nn::concat({nn::maxpool(fused[0], {2, 2, 2}, {2, 2, 2}), fused[1]}, 1);
  x = aspp_->forward(x);
  if (cfg_.activation) x = nn::relu(x);
  x = checked(x, "aspp");
  for (std::size_t i = 0; i < head_.size(); ++i) {
    x = head_[i](x);
    if (cfg_.activation && i + 1 < head_.size()) x = nn::relu(x);
    x = checked(x, head_[i].name());
  }
  trace.logits = x;
  return trace;
}

Var Network::forward(const Tensor& rgb, const Tensor& depth, const CameraIntrinsics& intr) const {
  return forward_traced(rgb, depth, intr).logits;
}

// ---------------------------------------------------------------------------
// Cost analysis

Fraction reduced(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw ConfigError("fraction with zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  return {num / (g ? g : 1), den / (g ? g : 1)};
}

std::string Fraction::str() const { return std::to_string(num) + "/" + std::to_string(den); }

BlockCost decomposition_cost(std::size_t channels, std::size_t kernel, std::uint64_t volume, int spatial_dims) {
  BlockCost b;
  b.kernel = kernel;
  const std::size_t dims = static_cast<std::size_t>(spatial_dims);
  std::size_t full_taps = 1;
  for (std::size_t i = 0; i < dims; ++i) full_taps *= kernel;
  b.decomposed_params = dims * kernel * channels * channels;
  b.full_params = full_taps * channels * channels;
  b.param_ratio = reduced(b.decomposed_params, b.full_params);
  b.decomposed_macs = b.decomposed_params * volume;
  b.full_macs = b.full_params * volume;
  b.mac_ratio = reduced(b.decomposed_macs, b.full_macs);
  return b;
}

namespace {

class CostBuilder {
 public:
  CostReport report;

  Shape conv(const std::string& name, const std::string& group, const nn::ConvSpec& spec, const Shape& in) {
    const Shape out = spec.output_shape(in);
    LayerCost l{name, spec.spatial_dims == 2 ? "conv2d" : "conv3d", group, spec.param_count(), 0, 0, out, 0};
    const std::uint64_t n = shape_volume(out);
    l.macs = n * spec.in_channels * spec.taps();
    l.flops = 2 * l.macs + (spec.has_bias ? n : 0);
    push(std::move(l));
    return out;
  }

  Shape op(const std::string& name, const std::string& kind, const std::string& group, const Shape& out,
           std::uint64_t per_element = 1, std::size_t params = 0) {
    LayerCost l{name, kind, group, params, 0, shape_volume(out) * per_element, out, 0};
    push(std::move(l));
    return out;
  }

 private:
  void push(LayerCost l) {
    l.activation_bytes = shape_volume(l.output) * sizeof(double);
    report.total_params += l.params;
    report.total_macs += l.macs;
    report.total_flops += l.flops;
    report.activation_bytes += l.activation_bytes;
    report.layers.push_back(std::move(l));
  }
};

Shape with_channels(Shape s, std::size_t c) {
  s[1] = c;
  return s;
}

nn::Triple axis_kernel(int axis, std::size_t k) {
  nn::Triple t{1, 1, 1};
  t[static_cast<std::size_t>(axis)] = k;
  return t;
}

struct Analyzer {
  const NetworkConfig& cfg;
  const AnalyzerOptions& opt;
  CostBuilder b;

  std::vector<int> axes(int dims) const {
    std::vector<int> out;
    for (int a : cfg.decomposition_order) {
      if (dims == 2 && a == 0) continue;
      out.push_back(a);
    }
    return out;
  }

  void relu(const std::string& name, const std::string& group, const Shape& s) {
    if (cfg.activation) b.op(name, "relu", group, s);
  }

  void basic2d(const std::string& name, const std::string& group, const Shape& in) {
    const std::size_t c = in[1];
    const auto ax = axes(2);
    for (std::size_t i = 0; i < ax.size(); ++i) {
      const std::string conv_name = name + ".conv_" + (ax[i] == 1 ? "h" : "w");
      b.conv(conv_name, group, nn::ConvSpec::same(2, c, c, axis_kernel(ax[i], cfg.kernel), 1, cfg.block_bias), in);
      if (i + 1 < ax.size()) relu(conv_name + ".relu", group, in);
    }
    b.op(name + ".add", "add", group, in);
    BlockCost bc = decomposition_cost(c, cfg.kernel, shape_volume(in) / c, 2);
    bc.name = name;
    b.report.blocks.push_back(bc);
  }

  void residual3d(const std::string& name, const std::string& group, const Shape& in, std::size_t dilation) {
    const std::size_t c = in[1];
    const std::size_t inner = c / cfg.reduction;
    const Shape mid = with_channels(in, inner);
    const nn::Triple cube{cfg.kernel, cfg.kernel, cfg.kernel};
    const std::uint64_t vol = shape_volume(in) / c;
    if (opt.residual == Residual3d::FullBasic) {
      b.conv(name + ".conv_0", group, nn::ConvSpec::same(3, c, c, cube, dilation, cfg.block_bias), in);
      relu(name + ".conv_0.relu", group, in);
      b.conv(name + ".conv_1", group, nn::ConvSpec::same(3, c, c, cube, dilation, cfg.block_bias), in);
      b.op(name + ".add", "add", group, in);
      return;
    }
    b.conv(name + ".reduce", group, nn::ConvSpec::pointwise(3, c, inner, cfg.block_bias), in);
    relu(name + ".reduce.relu", group, mid);
    if (opt.residual == Residual3d::FullBottleneck) {
      b.conv(name + ".conv", group, nn::ConvSpec::same(3, inner, inner, cube, dilation, cfg.block_bias), mid);
      relu(name + ".conv.relu", group, mid);
    } else {
      for (int a : axes(3)) {
        const std::string conv_name = name + ".conv_" + (a == 0 ? "d" : a == 1 ? "h" : "w");
        b.conv(conv_name, group, nn::ConvSpec::same(3, inner, inner, axis_kernel(a, cfg.kernel), dilation, cfg.block_bias),
               mid);
        b.op(conv_name + ".add", "add", group, mid);
        relu(conv_name + ".relu", group, mid);
      }
      BlockCost bc = decomposition_cost(inner, cfg.kernel, vol, 3);
      bc.name = name;
      b.report.blocks.push_back(bc);
    }
    b.conv(name + ".restore", group, nn::ConvSpec::pointwise(3, inner, c, cfg.block_bias), mid);
    b.op(name + ".add", "add", group, in);
  }

  Shape branch(const std::string& name, std::size_t in_channels) {
    const Shape image{1, in_channels, cfg.image_height, cfg.image_width};
    Shape s = b.conv(name + ".stem", name + "/2d-stem", nn::ConvSpec::pointwise(2, in_channels, cfg.channels_2d, cfg.bias),
                     image);
    relu(name + ".stem.relu", name + "/2d-stem", s);
    for (std::size_t i = 0; i < 2; ++i) basic2d(name + ".ddr2d_" + std::to_string(i), name + "/2d-ddr", s);
    s = b.op(name + ".projection", "projection", name + "/projection",
             Shape{1, cfg.channels_2d, cfg.grid.dims[0], cfg.grid.dims[1], cfg.grid.dims[2]});
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string level = std::to_string(i);
      const std::string down = name + ".down_" + level;
      const std::size_t c = cfg.channels_3d[i];
      Shape half = s;
      for (std::size_t k = 2; k < 5; ++k) half[k] /= 2;
      b.op(down + ".pool", "maxpool", name + "/3d-down", half);
      const Shape conv_out =
          b.conv(down + ".conv", name + "/3d-down", nn::ConvSpec::pointwise(3, s[1], c - s[1], cfg.bias, 2), s);
      relu(down + ".conv.relu", name + "/3d-down", conv_out);
      s = b.op(down + ".concat", "concat", name + "/3d-down", with_channels(half, c));
      residual3d(name + ".ddr3d_" + level, name + "/3d-ddr", s, 1);
      if (cfg.affine) b.op(name + ".affine_" + level, "affine", name + "/affine", s, 2, 2 * c);
    }
    return s;
  }

  CostReport run() {
    cfg.validate();
    std::size_t branches = 0;
    Shape level1, level2;
    for (const auto& [name, ch] : {std::pair<std::string, std::size_t>{"depth", 1}, {"rgb", 3}}) {
      if ((name == "depth" && !cfg.uses_depth()) || (name == "rgb" && !cfg.uses_rgb())) continue;
      level2 = branch(name, ch);
      level1 = with_channels(level2, cfg.channels_3d[0]);
      for (std::size_t k = 2; k < 5; ++k) level1[k] *= 2;
      ++branches;
    }
    if (branches == 2) {
      b.op("fusion.level_0", "add", "fusion", level1);
      b.op("fusion.level_1", "add", "fusion", level2);
    }
    b.op("fusion.pool", "maxpool", "fusion", with_channels(level2, cfg.channels_3d[0]));
    const std::size_t ca = cfg.aspp_input_channels();
    Shape x = b.op("fusion.concat", "concat", "fusion", with_channels(level2, ca));

    for (std::size_t i = 0; i < cfg.aspp_rates.size(); ++i) {
      const std::size_t r = cfg.aspp_rates[i];
      const std::string name = "aspp.rate" + std::to_string(r) + "_" + std::to_string(i);
      if (opt.aspp == AsppKind::Full) {
        const nn::Triple cube{cfg.kernel, cfg.kernel, cfg.kernel};
        b.conv(name + ".conv", "aspp", nn::ConvSpec::same(3, ca, ca, cube, r, cfg.block_bias), x);
      } else {
        residual3d(name, "aspp", x, r);
      }
    }
    const std::size_t rates = cfg.aspp_rates.size();
    b.op("aspp.concat", "concat", "aspp", with_channels(x, ca * rates));
    x = b.conv("aspp.fusion", "aspp", nn::ConvSpec::pointwise(3, ca * rates, cfg.aspp_channels, cfg.bias),
               with_channels(x, ca * rates));
    relu("aspp.relu", "aspp", x);
    const std::size_t widths[] = {cfg.aspp_channels, cfg.head_channels, cfg.head_channels, cfg.num_classes};
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string name = "head_" + std::to_string(i);
      x = b.conv(name, "head", nn::ConvSpec::pointwise(3, widths[i], widths[i + 1], cfg.bias), x);
      if (i < 2) relu(name + ".relu", "head", x);
    }
    return std::move(b.report);
  }
};

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

CostReport analyze(const NetworkConfig& cfg, const AnalyzerOptions& options) {
  Analyzer a{cfg, options, {}};
  return a.run();
}

CostReport count_params(const Network& net) { return analyze(net.config()); }

CostReport count_flops(const Network& net, std::size_t image_height, std::size_t image_width) {
  NetworkConfig cfg = net.config();
  cfg.image_height = image_height;
  cfg.image_width = image_width;
  return analyze(cfg);
}

std::map<std::string, std::size_t> CostReport::params_by_group() const {
  std::map<std::string, std::size_t> out;
  for (const LayerCost& l : layers) out[l.group] += l.params;
  return out;
}

std::size_t CostReport::params_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const LayerCost& l : layers) {
    if (starts_with(l.name, prefix)) n += l.params;
  }
  return n;
}

std::size_t CostReport::block3d_params() const {
  std::size_t n = 0;
  for (const LayerCost& l : layers) {
    if (l.group == "aspp" && starts_with(l.name, "aspp.rate")) n += l.params;
    if (l.group.size() > 7 && l.group.compare(l.group.size() - 7, 7, "/3d-ddr") == 0) n += l.params;
  }
  return n;
}

std::size_t CostReport::ddr2d_params(const std::string& branch) const {
  std::size_t n = 0;
  for (const LayerCost& l : layers) {
    if (l.group == branch + "/2d-ddr") n += l.params;
  }
  return n;
}

std::string CostReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(30) << "layer" << std::setw(11) << "kind" << std::setw(20) << "output" << std::right
     << std::setw(10) << "params" << std::setw(16) << "MACs" << std::setw(16) << "FLOPs" << std::setw(14) << "act_bytes"
     << "\n";
  for (const LayerCost& l : layers) {
    os << std::left << std::setw(30) << l.name << std::setw(11) << l.kind << std::setw(20) << shape_to_string(l.output)
       << std::right << std::setw(10) << l.params << std::setw(16) << l.macs << std::setw(16) << l.flops
       << std::setw(14) << l.activation_bytes << "\n";
  }
  if (!blocks.empty()) {
    os << "\n" << std::left << std::setw(30) << "ddr block (1-D chain vs full kernel)" << std::right << std::setw(4)
       << "k" << std::setw(12) << "decomposed" << std::setw(12) << "full" << std::setw(12) << "ratio" << "\n";
    for (const BlockCost& b : blocks) {
      os << std::left << std::setw(30) << b.name << std::right << std::setw(4) << b.kernel << std::setw(12)
         << b.decomposed_params << std::setw(12) << b.full_params << std::setw(12) << b.param_ratio.str() << "\n";
    }
  }
  os << "\nsubtotals (params)\n";
  for (const auto& [group, n] : params_by_group()) {
    os << "  " << std::left << std::setw(28) << group << std::right << std::setw(12) << n << "\n";
  }
  os << "  " << std::left << std::setw(28) << "3d residual blocks" << std::right << std::setw(12) << block3d_params()
     << "\n";
  os << "\ntotal params " << total_params << "\ntotal MACs " << total_macs << "\ntotal FLOPs " << total_flops
     << "\nactivation bytes " << activation_bytes << "\n";
  return os.str();
}

std::string CostReport::to_json() const {
  json j;
  j["layers"] = json::array();
  for (const LayerCost& l : layers) {
    j["layers"].push_back({{"name", l.name},
                           {"kind", l.kind},
                           {"group", l.group},
                           {"params", l.params},
                           {"macs", l.macs},
                           {"flops", l.flops},
                           {"output", l.output},
                           {"activation_bytes", l.activation_bytes}});
  }
  j["blocks"] = json::array();
  for (const BlockCost& b : blocks) {
    j["blocks"].push_back({{"name", b.name},
                           {"kernel", b.kernel},
                           {"decomposed_params", b.decomposed_params},
                           {"full_params", b.full_params},
                           {"param_ratio", b.param_ratio.str()},
                           {"decomposed_macs", b.decomposed_macs},
                           {"full_macs", b.full_macs},
                           {"mac_ratio", b.mac_ratio.str()}});
  }
  j["subtotals"] = params_by_group();
  j["block3d_params"] = block3d_params();
  j["total_params"] = total_params;
  j["total_macs"] = total_macs;
  j["total_flops"] = total_flops;
  j["activation_bytes"] = activation_bytes;
  return j.dump(2) + "\n";
}

}  // namespace ddrnet
