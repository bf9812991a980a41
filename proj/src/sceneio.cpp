#include "ddrnet/sceneio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ddrnet/nn/layers.hpp"

namespace ddrnet {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::array<const char*, kSemanticClasses + 1>& class_names() {
  static const std::array<const char*, kSemanticClasses + 1> names{
      "empty", "ceil.", "floor", "wall", "win.", "chair", "bed", "sofa", "table", "tvs", "furn.", "objs."};
  return names;
}

void GenConfig::validate() const {
  if (image_height == 0 || image_width == 0) throw ConfigError("scene generator: image size must be positive");
  label_grid.validate();
  for (std::size_t d : label_grid.dims) {
    if (d < 4) throw ConfigError("scene generator: label grid needs at least 4 voxels per axis");
  }
  if (min_objects > max_objects) throw ConfigError("scene generator: min_objects > max_objects");
  if (!(horizontal_fov_deg > 1.0 && horizontal_fov_deg < 170.0)) {
    throw ConfigError("scene generator: horizontal_fov_deg out of range");
  }
}

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return {a[0] / n, a[1] / n, a[2] / n};
}

struct Cells {
  std::array<std::size_t, 3> lo;
  std::array<std::size_t, 3> hi;  // exclusive

  bool overlaps(const Cells& o) const {
    for (std::size_t k = 0; k < 3; ++k) {
      if (hi[k] <= o.lo[k] || o.hi[k] <= lo[k]) return false;
    }
    return true;
  }
};

Box cell_box(const VoxelGridSpec& g, const Cells& c, std::uint8_t label) {
  Box b;
  for (std::size_t k = 0; k < 3; ++k) {
    b.lo[k] = g.origin[k] + static_cast<double>(c.lo[k]) * g.voxel_size;
    b.hi[k] = g.origin[k] + static_cast<double>(c.hi[k]) * g.voxel_size;
  }
  b.label = label;
  return b;
}

struct ObjectShape {
  std::uint8_t label;
  std::array<std::size_t, 3> min_size;
  std::array<std::size_t, 3> max_size;
};

const std::vector<ObjectShape>& object_shapes() {
  static const std::vector<ObjectShape> shapes{
      {kChair, {1, 1, 2}, {1, 1, 2}}, {kBed, {2, 3, 1}, {3, 4, 1}},       {kSofa, {1, 2, 1}, {2, 3, 2}},
      {kTable, {1, 1, 1}, {2, 2, 1}}, {kTvs, {1, 1, 1}, {1, 1, 1}},       {kFurniture, {1, 1, 2}, {2, 1, 3}},
      {kObjects, {1, 1, 1}, {1, 1, 1}},
  };
  return shapes;
}

// Base albedo per class; index = class id.
const std::array<Vec3, kSemanticClasses + 1> kPalette{{
    {0.0, 0.0, 0.0},
    {0.92, 0.92, 0.88},
    {0.55, 0.38, 0.22},
    {0.80, 0.78, 0.70},
    {0.55, 0.75, 0.95},
    {0.85, 0.25, 0.20},
    {0.30, 0.35, 0.80},
    {0.25, 0.60, 0.30},
    {0.75, 0.55, 0.30},
    {0.10, 0.10, 0.12},
    {0.60, 0.30, 0.60},
    {0.95, 0.80, 0.20},
}};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  std::size_t box = 0;
  std::size_t axis = 0;
};

// Slab test. Only entries in front of the origin count; the camera is never
// inside a box.
bool intersect(const Vec3& o, const Vec3& d, const Box& b, double& t_near, std::size_t& axis) {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < 3; ++k) {
    if (d[k] == 0.0) {
      if (o[k] < b.lo[k] || o[k] > b.hi[k]) return false;
      continue;
    }
    double t1 = (b.lo[k] - o[k]) / d[k];
    double t2 = (b.hi[k] - o[k]) / d[k];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > lo) {
      lo = t1;
      axis = k;
    }
    hi = std::min(hi, t2);
  }
  if (lo > hi || lo <= 0.0) return false;
  t_near = lo;
  return true;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(v); }

}  // namespace

SceneLayout generate_layout(std::uint64_t seed, const GenConfig& cfg) {
  cfg.validate();
  nn::Rng rng(seed);
  const VoxelGridSpec& g = cfg.label_grid;
  const std::size_t X = g.dims[0], Y = g.dims[1], Z = g.dims[2];
  SceneLayout layout;
  auto& boxes = layout.boxes;
  boxes.push_back(cell_box(g, {{0, 0, 0}, {X, Y, 1}}, kFloor));
  boxes.push_back(cell_box(g, {{0, 0, 1}, {1, Y, Z}}, kWall));
  boxes.push_back(cell_box(g, {{0, 0, 1}, {X, 1, Z}}, kWall));
  if (cfg.ceiling) boxes.push_back(cell_box(g, {{0, 0, Z - 1}, {X, Y, Z}}, kCeiling));
  if (cfg.windows && rng.uniform(0.0, 1.0) < 0.7) {
    const std::size_t y0 = 1 + rng.index(Y - 3);
    const std::size_t z0 = 2 + rng.index(Z - 3);
    const std::size_t w = std::min<std::size_t>(1 + rng.index(2), Y - 1 - y0);
    boxes.push_back(cell_box(g, {{0, y0, z0}, {1, y0 + w, z0 + 1}}, kWindow));
  }

  // Objects rest on the floor and keep the last row/column (camera corner) free.
  const std::size_t top = cfg.ceiling ? Z - 1 : Z;
  const std::size_t count = cfg.min_objects + rng.index(cfg.max_objects - cfg.min_objects + 1);
  std::vector<Cells> placed;
  for (std::size_t i = 0; i < count; ++i) {
    bool ok = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
      const ObjectShape& shape = object_shapes()[rng.index(object_shapes().size())];
      std::array<std::size_t, 3> size;
      for (std::size_t k = 0; k < 3; ++k) size[k] = shape.min_size[k] + rng.index(shape.max_size[k] - shape.min_size[k] + 1);
      if (rng.index(2)) std::swap(size[0], size[1]);
      if (size[0] + 2 > X || size[1] + 2 > Y || size[2] + 1 > top) continue;
      Cells c;
      c.lo = {1 + rng.index(X - size[0] - 1), 1 + rng.index(Y - size[1] - 1), 1};
      c.hi = {c.lo[0] + size[0], c.lo[1] + size[1], 1 + size[2]};
      if (c.hi[0] > X - 1 || c.hi[1] > Y - 1) continue;
      if (std::any_of(placed.begin(), placed.end(), [&](const Cells& p) { return p.overlaps(c); })) continue;
      placed.push_back(c);
      boxes.push_back(cell_box(g, c, shape.label));
      ok = true;
    }
    if (!ok) {
      throw GenerationError("scene generator: could not place object " + std::to_string(i + 1) + " of " +
                            std::to_string(count) + " after " + std::to_string(cfg.max_retries) + " attempts");
    }
  }

  // Camera in the free corner, looking at the wall corner.
  const double s = g.voxel_size;
  const Vec3 eye{g.origin[0] + (static_cast<double>(X) - 0.5) * s - rng.uniform(0.0, 0.2) * s,
                 g.origin[1] + (static_cast<double>(Y) - 0.5) * s - rng.uniform(0.0, 0.2) * s,
                 g.origin[2] + 0.45 * static_cast<double>(Z) * s + rng.uniform(-0.1, 0.1) * s};
  const Vec3 target{g.origin[0] + 0.3 * static_cast<double>(X) * s + rng.uniform(-0.3, 0.3) * s,
                    g.origin[1] + 0.3 * static_cast<double>(Y) * s + rng.uniform(-0.3, 0.3) * s,
                    g.origin[2] + 0.2 * static_cast<double>(Z) * s};
  const Vec3 forward = normalized(sub(target, eye));
  const Vec3 right = normalized(cross(forward, {0.0, 0.0, 1.0}));
  const Vec3 down = cross(forward, right);
  CameraIntrinsics& cam = layout.camera;
  const double pi = std::acos(-1.0);
  cam.fx = static_cast<double>(cfg.image_width) / 2.0 / std::tan(cfg.horizontal_fov_deg * pi / 360.0);
  cam.fy = cam.fx;
  cam.cx = (static_cast<double>(cfg.image_width) - 1.0) / 2.0;
  cam.cy = (static_cast<double>(cfg.image_height) - 1.0) / 2.0;
  cam.rotation = {right[0], down[0], forward[0], right[1], down[1], forward[1], right[2], down[2], forward[2]};
  cam.translation = eye;
  return layout;
}

Tensor voxelize_labels(const std::vector<Box>& boxes, const VoxelGridSpec& grid) {
  Tensor labels(Shape{grid.dims[0], grid.dims[1], grid.dims[2]}, 0.0, DType::UInt8);
  for (std::size_t x = 0; x < grid.dims[0]; ++x) {
    for (std::size_t y = 0; y < grid.dims[1]; ++y) {
      for (std::size_t z = 0; z < grid.dims[2]; ++z) {
        const Vec3 c = grid.center(x, y, z);
        for (const Box& b : boxes) {
          if (c[0] > b.lo[0] && c[0] < b.hi[0] && c[1] > b.lo[1] && c[1] < b.hi[1] && c[2] > b.lo[2] && c[2] < b.hi[2]) {
            labels[grid.flat(x, y, z)] = b.label;
          }
        }
      }
    }
  }
  return labels;
}

SceneSample render_layout(const SceneLayout& layout, const GenConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.image_height, W = cfg.image_width;
  const CameraIntrinsics& cam = layout.camera;
  SceneSample s;
  s.intrinsics = cam;
  s.rgb = Tensor(Shape{3, H, W});
  s.depth = Tensor(Shape{H, W});
  s.labels = voxelize_labels(layout.boxes, cfg.label_grid);
  const Vec3 light = normalized({0.3, 0.5, 0.8});
  const Vec3 origin = cam.translation;
  for (std::size_t v = 0; v < H; ++v) {
    for (std::size_t u = 0; u < W; ++u) {
      const Vec3 dc{(static_cast<double>(u) - cam.cx) / cam.fx, (static_cast<double>(v) - cam.cy) / cam.fy, 1.0};
      const Vec3 d = sub(cam.camera_to_world(dc), origin);
      Hit hit;
      for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
        double t = 0.0;
        std::size_t axis = 0;
        if (intersect(origin, d, layout.boxes[i], t, axis) && t < hit.t) hit = {t, i, axis};
      }
      if (!std::isfinite(hit.t)) continue;
      // The ray parameter is the z-depth because the camera-frame direction has unit z.
      s.depth[v * W + u] = hit.t;
      const double shade = 0.6 + 0.4 * std::abs(light[hit.axis]);
      const Vec3& albedo = kPalette[layout.boxes[hit.box].label];
      for (std::size_t c = 0; c < 3; ++c) s.rgb[(c * H + v) * W + u] = albedo[c] * shade;
    }
  }
  s.masks = compute_masks(s.depth, cam, cfg.label_grid);
  // Observed-empty must carry the empty label; a labelled voxel seen in front
  // of the surface is a grazing-angle surface voxel.
  for (std::size_t i = 0; i < s.masks.size(); ++i) {
    if (s.masks[i] == static_cast<double>(VoxelState::ObservedEmpty) && to_u8(s.labels[i]) != kEmpty) {
      s.masks[i] = static_cast<double>(VoxelState::ObservedSurface);
    }
  }
  return s;
}

SceneSample generate_scene(std::uint64_t seed, const GenConfig& cfg) {
  return render_layout(generate_layout(seed, cfg), cfg);
}

Tensor compute_masks(const Tensor& depth, const CameraIntrinsics& intr, const VoxelGridSpec& grid) {
  if (depth.rank() != 2) throw ShapeError("compute_masks: depth must be [H,W], got " + shape_to_string(depth.shape()));
  intr.validate();
  grid.validate();
  const std::size_t H = depth.dim(0), W = depth.dim(1);
  const double half = grid.voxel_size / 2.0;
  Tensor masks(Shape{grid.dims[0], grid.dims[1], grid.dims[2]}, static_cast<double>(VoxelState::OutsideView),
               DType::UInt8);
  for (std::size_t x = 0; x < grid.dims[0]; ++x) {
    for (std::size_t y = 0; y < grid.dims[1]; ++y) {
      for (std::size_t z = 0; z < grid.dims[2]; ++z) {
        const Vec3 p = intr.world_to_camera(grid.center(x, y, z));
        if (p[2] <= 0.0) continue;
        const double u = std::round(intr.fx * p[0] / p[2] + intr.cx);
        const double v = std::round(intr.fy * p[1] / p[2] + intr.cy);
        if (u < 0.0 || v < 0.0 || u >= static_cast<double>(W) || v >= static_cast<double>(H)) continue;
        const double d = depth[static_cast<std::size_t>(v) * W + static_cast<std::size_t>(u)];
        if (d <= 0.0) continue;
        VoxelState state = VoxelState::Occluded;
        if (p[2] < d - half) {
          state = VoxelState::ObservedEmpty;
        } else if (p[2] <= d + half) {
          state = VoxelState::ObservedSurface;
        }
        masks[grid.flat(x, y, z)] = static_cast<double>(state);
      }
    }
  }
  return masks;
}

nn::LossWeights loss_weights(const Tensor& labels, const Tensor& masks, double empty_weight, std::size_t num_classes) {
  check_same_shape(labels, masks, "loss_weights");
  nn::LossWeights w;
  w.class_weights.assign(num_classes, 1.0);
  w.class_weights[0] = empty_weight;
  w.mask = Tensor(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto state = static_cast<VoxelState>(to_u8(masks[i]));
    const bool include = state != VoxelState::OutsideView && (to_u8(labels[i]) != kEmpty || state == VoxelState::Occluded);
    w.mask[i] = include ? 1.0 : 0.0;
  }
  return w;
}

Tensor predict_labels(const Tensor& logits) {
  if (logits.rank() != 5 || logits.dim(0) != 1) {
    throw ShapeError("predict_labels: expected [1,K,X,Y,Z], got " + shape_to_string(logits.shape()));
  }
  const std::size_t K = logits.dim(1);
  const Shape out_shape{logits.dim(2), logits.dim(3), logits.dim(4)};
  const std::size_t vol = shape_volume(out_shape);
  Tensor out(out_shape, 0.0, DType::UInt8);
  for (std::size_t i = 0; i < vol; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (logits[k * vol + i] > logits[best * vol + i]) best = k;
    }
    out[i] = static_cast<double>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

void check_metric_inputs(const Tensor& pred, const Tensor& gt, const Tensor& masks) {
  check_same_shape(pred, gt, "metrics: prediction vs truth");
  check_same_shape(gt, masks, "metrics: truth vs masks");
}

double ratio(std::uint64_t num, std::uint64_t den, bool& flag) {
  if (den == 0) {
    flag = true;
    return 1.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

void MetricsAccumulator::add(const Tensor& pred, const Tensor& gt, const Tensor& masks) {
  check_metric_inputs(pred, gt, masks);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto state = static_cast<VoxelState>(to_u8(masks[i]));
    const auto p = to_u8(pred[i]);
    const auto g = to_u8(gt[i]);
    if (state == VoxelState::Occluded) {
      tp_ += p != kEmpty && g != kEmpty;
      fp_ += p != kEmpty && g == kEmpty;
      fn_ += p == kEmpty && g != kEmpty;
    }
    if (state == VoxelState::Occluded || state == VoxelState::ObservedSurface) {
      for (std::size_t c = 1; c <= kSemanticClasses; ++c) {
        const bool pc = p == c, gc = g == c;
        inter_[c - 1] += pc && gc;
        uni_[c - 1] += pc || gc;
      }
    }
  }
}

MetricsReport MetricsAccumulator::report() const {
  MetricsReport r;
  r.sc.precision = ratio(tp_, tp_ + fp_, r.sc.empty_denominator);
  r.sc.recall = ratio(tp_, tp_ + fn_, r.sc.empty_denominator);
  r.sc.iou = ratio(tp_, tp_ + fp_ + fn_, r.sc.empty_denominator);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < kSemanticClasses; ++c) {
    bool absent = false;
    r.ssc.iou[c] = ratio(inter_[c], uni_[c], absent);
    r.ssc.absent[c] = absent;
    if (!absent) {
      total += r.ssc.iou[c];
      ++present;
    }
  }
  r.ssc.average = ratio(0, 0, r.ssc.empty_denominator);
  if (present > 0) {
    r.ssc.average = total / static_cast<double>(present);
    r.ssc.empty_denominator = false;
  }
  return r;
}

ScMetrics sc_metrics(const Tensor& pred, const Tensor& gt, const Tensor& masks) {
  MetricsAccumulator acc;
  acc.add(pred, gt, masks);
  return acc.report().sc;
}

SscMetrics ssc_metrics(const Tensor& pred, const Tensor& gt, const Tensor& masks) {
  MetricsAccumulator acc;
  acc.add(pred, gt, masks);
  return acc.report().ssc;
}

MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& masks) {
  MetricsAccumulator acc;
  acc.add(pred, gt, masks);
  return acc.report();
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "prec\trecall\tIoU";
  for (std::size_t c = 1; c <= kSemanticClasses; ++c) os << '\t' << class_names()[c];
  os << "\tavg\n";
  os << sc.precision << '\t' << sc.recall << '\t' << sc.iou;
  for (std::size_t c = 0; c < kSemanticClasses; ++c) {
    if (ssc.absent[c]) {
      os << "\t-";
    } else {
      os << '\t' << ssc.iou[c];
    }
  }
  os << '\t' << ssc.average << '\n';
  if (sc.empty_denominator) os << "warning: empty SC denominator reported as 1.0\n";
  if (ssc.empty_denominator) os << "warning: no semantic class present; SSC average reported as 1.0\n";
  return os.str();
}

std::string MetricsReport::to_json() const {
  json j;
  j["sc"] = {{"precision", sc.precision}, {"recall", sc.recall}, {"iou", sc.iou}, {"empty_denominator", sc.empty_denominator}};
  json classes = json::object();
  for (std::size_t c = 0; c < kSemanticClasses; ++c) {
    classes[class_names()[c + 1]] = ssc.absent[c] ? json(nullptr) : json(ssc.iou[c]);
  }
  j["ssc"] = {{"iou", classes}, {"average", ssc.average}, {"empty_denominator", ssc.empty_denominator}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Files

void write_sample(const std::string& dir, const SceneSample& sample) {
  fs::create_directories(dir);
  const fs::path p(dir);
  save_tnsr((p / "rgb.tnsr").string(), sample.rgb);
  save_tnsr((p / "depth.tnsr").string(), sample.depth);
  save_tnsr((p / "labels.tnsr").string(), sample.labels);
  save_tnsr((p / "masks.tnsr").string(), sample.masks);
  save_intrinsics((p / "intrinsics.json").string(), sample.intrinsics);
}

SceneSample read_sample(const std::string& dir) {
  const fs::path p(dir);
  SceneSample s;
  s.rgb = load_tnsr((p / "rgb.tnsr").string());
  s.depth = load_tnsr((p / "depth.tnsr").string());
  s.labels = load_tnsr((p / "labels.tnsr").string());
  s.masks = load_tnsr((p / "masks.tnsr").string());
  s.intrinsics = load_intrinsics((p / "intrinsics.json").string());
  if (s.depth.rank() != 2 || s.rgb.shape() != Shape{3, s.depth.dim(0), s.depth.dim(1)}) {
    throw FormatError("sample " + dir + ": rgb " + shape_to_string(s.rgb.shape()) + " does not match depth " +
                      shape_to_string(s.depth.shape()));
  }
  if (s.labels.rank() != 3 || s.masks.shape() != s.labels.shape()) {
    throw FormatError("sample " + dir + ": labels/masks must be matching [X,Y,Z] grids");
  }
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (s.labels[i] > kSemanticClasses || s.masks[i] > static_cast<double>(VoxelState::OutsideView)) {
      throw FormatError("sample " + dir + ": label or mask value out of range at voxel " + std::to_string(i));
    }
  }
  return s;
}

std::vector<ManifestEntry> Manifest::split(const std::string& tag) const {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : samples) {
    if (e.split == tag) out.push_back(e);
  }
  return out;
}

void write_manifest(const std::string& dir, const Manifest& m) {
  json j;
  j["format"] = "ddrnet-dataset";
  j["version"] = 1;
  j["samples"] = json::array();
  for (const ManifestEntry& e : m.samples) j["samples"].push_back({{"path", e.path}, {"split", e.split}, {"seed", e.seed}});
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << j.dump(2) << "\n";
  if (!out) throw FormatError("cannot write manifest in " + dir);
}

Manifest read_manifest(const std::string& dir) {
  const fs::path path = fs::path(dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  Manifest m;
  try {
    const json j = json::parse(in);
    if (j.at("format") != "ddrnet-dataset" || j.at("version") != 1) {
      throw FormatError(path.string() + ": unsupported format or version");
    }
    for (const json& e : j.at("samples")) {
      m.samples.push_back({e.at("path").get<std::string>(), e.at("split").get<std::string>(), e.value("seed", 0ull)});
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

Manifest generate_dataset(const std::string& dir, std::size_t count, std::uint64_t seed, const GenConfig& cfg,
                          std::size_t val_count) {
  if (val_count > count) throw ConfigError("gen-data: more validation samples than samples");
  Manifest m;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    const std::uint64_t s = seed + i;
    write_sample((fs::path(dir) / name).string(), generate_scene(s, cfg));
    m.samples.push_back({name, i + val_count >= count ? "val" : "train", s});
  }
  write_manifest(dir, m);
  return m;
}

}  // namespace ddrnet
