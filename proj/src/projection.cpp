#include "ddrnet/projection.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ddrnet/nn/instrument.hpp"

namespace ddrnet {

using json = nlohmann::json;

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("intrinsics: fx and fy must be positive");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw ConfigError("intrinsics: non-finite principal point");
  // R^T R == I
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += rotation[k * 3 + i] * rotation[k * 3 + j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-9) {
        throw ConfigError("intrinsics: rotation is not orthonormal");
      }
    }
  }
}

std::array<double, 3> CameraIntrinsics::camera_to_world(const std::array<double, 3>& p) const {
  std::array<double, 3> w{};
  for (int r = 0; r < 3; ++r) {
    w[r] = rotation[r * 3] * p[0] + rotation[r * 3 + 1] * p[1] + rotation[r * 3 + 2] * p[2] + translation[r];
  }
  return w;
}

std::array<double, 3> CameraIntrinsics::world_to_camera(const std::array<double, 3>& p) const {
  const std::array<double, 3> d{p[0] - translation[0], p[1] - translation[1], p[2] - translation[2]};
  std::array<double, 3> c{};
  for (int r = 0; r < 3; ++r) c[r] = rotation[r] * d[0] + rotation[3 + r] * d[1] + rotation[6 + r] * d[2];
  return c;
}

std::string intrinsics_to_json(const CameraIntrinsics& intr) {
  json j;
  j["fx"] = intr.fx;
  j["fy"] = intr.fy;
  j["cx"] = intr.cx;
  j["cy"] = intr.cy;
  j["rotation"] = intr.rotation;
  j["translation"] = intr.translation;
  // Shortest round-trip number formatting keeps every double exact.
  return j.dump(2);
}

CameraIntrinsics intrinsics_from_json(const std::string& text) {
  CameraIntrinsics intr;
  try {
    const json j = json::parse(text);
    intr.fx = j.at("fx").get<double>();
    intr.fy = j.at("fy").get<double>();
    intr.cx = j.at("cx").get<double>();
    intr.cy = j.at("cy").get<double>();
    intr.rotation = j.at("rotation").get<std::array<double, 9>>();
    intr.translation = j.at("translation").get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("intrinsics: ") + e.what());
  }
  intr.validate();
  return intr;
}

void save_intrinsics(const std::string& path, const CameraIntrinsics& intr) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << intrinsics_to_json(intr) << "\n";
}

CameraIntrinsics load_intrinsics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return intrinsics_from_json(ss.str());
}

void VoxelGridSpec::validate() const {
  if (!(voxel_size > 0.0)) throw ConfigError("voxel grid: voxel_size must be positive");
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("voxel grid: dims must be >= 1");
  }
}

std::array<double, 3> VoxelGridSpec::center(std::size_t x, std::size_t y, std::size_t z) const {
  return {origin[0] + (static_cast<double>(x) + 0.5) * voxel_size,
          origin[1] + (static_cast<double>(y) + 0.5) * voxel_size,
          origin[2] + (static_cast<double>(z) + 0.5) * voxel_size};
}

std::optional<std::size_t> VoxelGridSpec::locate(const std::array<double, 3>& world) const {
  std::array<std::size_t, 3> idx{};
  for (int k = 0; k < 3; ++k) {
    const double f = std::floor((world[k] - origin[k]) / voxel_size);
    if (!(f >= 0.0) || f >= static_cast<double>(dims[k])) return std::nullopt;
    idx[k] = static_cast<std::size_t>(f);
  }
  return flat(idx[0], idx[1], idx[2]);
}

VoxelGridSpec VoxelGridSpec::coarsened(std::size_t factor) const {
  VoxelGridSpec g = *this;
  for (auto& d : g.dims) {
    if (d % factor != 0) throw ConfigError("voxel grid: dims not divisible by " + std::to_string(factor));
    d /= factor;
  }
  g.voxel_size *= static_cast<double>(factor);
  return g;
}

std::size_t ProjectionTable::valid_pixels() const {
  std::size_t n = 0;
  for (std::size_t v : pixel_voxel) n += v != kOutside;
  return n;
}

ProjectionTable build_projection_table(const Tensor& depth, const CameraIntrinsics& intr,
                                       const VoxelGridSpec& grid) {
  if (depth.rank() != 2) throw ShapeError("projection: depth must be [H,W], got " + shape_to_string(depth.shape()));
  intr.validate();
  grid.validate();
  ProjectionTable table;
  table.height = depth.dim(0);
  table.width = depth.dim(1);
  table.dims = grid.dims;
  table.pixel_voxel.assign(depth.size(), ProjectionTable::kOutside);
  for (std::size_t v = 0; v < table.height; ++v) {
    for (std::size_t u = 0; u < table.width; ++u) {
      const std::size_t pix = v * table.width + u;
      const double d = depth[pix];
      if (!std::isfinite(d) || d < 0.0) {
        throw NumericalError("projection: invalid depth " + std::to_string(d) + " at pixel (" +
                             std::to_string(u) + "," + std::to_string(v) + ")");
      }
      if (d == 0.0) continue;
      const std::array<double, 3> cam{(static_cast<double>(u) - intr.cx) * d / intr.fx,
                                      (static_cast<double>(v) - intr.cy) * d / intr.fy, d};
      if (auto voxel = grid.locate(intr.camera_to_world(cam))) table.pixel_voxel[pix] = *voxel;
    }
  }
  return table;
}

Tensor project_forward(const Tensor& features, ProjectionTable& table, const VoxelGridSpec& grid) {
  if (features.rank() != 3 || features.dim(1) != table.height || features.dim(2) != table.width) {
    throw ShapeError("projection: features " + shape_to_string(features.shape()) + " do not match table [C," +
                     std::to_string(table.height) + "," + std::to_string(table.width) + "]");
  }
  if (grid.dims != table.dims) throw ShapeError("projection: grid dims differ from table dims");
  const std::size_t channels = features.dim(0);
  const std::size_t pixels = table.height * table.width;
  const std::size_t voxels = grid.volume();
  Tensor out(Shape{channels, grid.dims[0], grid.dims[1], grid.dims[2]});
  table.channels = channels;
  table.winners.assign(channels * voxels, ProjectionTable::kOutside);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* f = features.raw() + c * pixels;
    double* o = out.raw() + c * voxels;
    std::size_t* win = table.winners.data() + c * voxels;
    // Pixels visited in increasing order; strict '>' keeps the lowest index on ties.
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::size_t vox = table.pixel_voxel[p];
      if (vox == ProjectionTable::kOutside) continue;
      if (win[vox] == ProjectionTable::kOutside || f[p] > o[vox]) {
        o[vox] = f[p];
        win[vox] = p;
      }
    }
  }
  if (nn::OpCounter* counter = nn::active_counter()) counter->elementwise += out.size();
  if (nn::KinkRecorder* rec = nn::active_recorder()) {
    for (std::size_t w : table.winners) rec->record(w);
  }
  return out;
}

Tensor project_backward(const Tensor& grad3d, const ProjectionTable& table) {
  if (!table.has_winners()) throw StateError("projection backward called before forward");
  const std::size_t voxels = table.dims[0] * table.dims[1] * table.dims[2];
  if (grad3d.size() != table.channels * voxels) {
    throw ShapeError("projection backward: gradient " + shape_to_string(grad3d.shape()) +
                     " does not match recorded forward");
  }
  const std::size_t pixels = table.height * table.width;
  Tensor grad2d(Shape{table.channels, table.height, table.width});
  for (std::size_t c = 0; c < table.channels; ++c) {
    for (std::size_t v = 0; v < voxels; ++v) {
      const std::size_t w = table.winners[c * voxels + v];
      if (w != ProjectionTable::kOutside) grad2d[c * pixels + w] += grad3d[c * voxels + v];
    }
  }
  return grad2d;
}

nn::Var project(const nn::Var& features, const ProjectionTable& table, const VoxelGridSpec& grid) {
  const Shape& s = features->value.shape();
  if (s.size() != 4 || s[0] != 1) throw ShapeError("project: expected [1,C,H,W], got " + shape_to_string(s));
  auto local = std::make_shared<ProjectionTable>(table);
  Tensor out = project_forward(features->value.reshaped({s[1], s[2], s[3]}), *local, grid);
  out = out.reshaped({1, s[1], grid.dims[0], grid.dims[1], grid.dims[2]});

  auto node = std::make_shared<nn::Node>();
  node->kind = "projection";
  node->value = std::move(out);
  node->parents = {features};
  node->requires_grad = features->requires_grad;
  node->backward_fn = [local, s](nn::Node& self) {
    const nn::Var& in = self.parents[0];
    if (!in->requires_grad) return;
    in->accumulate_grad(project_backward(self.grad, *local).reshaped(s));
  };
  return node;
}

}  // namespace ddrnet
