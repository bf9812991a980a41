#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ddrnet/nn/autograd.hpp"
#include "ddrnet/tensor.hpp"

namespace ddrnet {

/// Pinhole intrinsics plus camera-to-world pose (meters).
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, camera -> world
  std::array<double, 3> translation{0, 0, 0};

  void validate() const;
  std::array<double, 3> camera_to_world(const std::array<double, 3>& p) const;
  std::array<double, 3> world_to_camera(const std::array<double, 3>& p) const;

  bool operator==(const CameraIntrinsics&) const = default;
};

std::string intrinsics_to_json(const CameraIntrinsics& intr);
CameraIntrinsics intrinsics_from_json(const std::string& text);
void save_intrinsics(const std::string& path, const CameraIntrinsics& intr);
CameraIntrinsics load_intrinsics(const std::string& path);

struct VoxelGridSpec {
  std::array<double, 3> origin{0, 0, 0};
  double voxel_size = 1.0;
  std::array<std::size_t, 3> dims{1, 1, 1};

  void validate() const;
  std::size_t volume() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t flat(std::size_t x, std::size_t y, std::size_t z) const {
    return (x * dims[1] + y) * dims[2] + z;
  }
  std::array<double, 3> center(std::size_t x, std::size_t y, std::size_t z) const;
  // Half-open cells [i, i+1) * voxel_size; nullopt outside the grid.
  std::optional<std::size_t> locate(const std::array<double, 3>& world) const;
  // Same extent with each axis divided by `factor` and voxels `factor` times larger.
  VoxelGridSpec coarsened(std::size_t factor) const;
};

/// Pixel -> voxel assignment for one depth image, plus the per-channel
/// winners recorded by the last project_forward (used by backward).
struct ProjectionTable {
  static constexpr std::size_t kOutside = std::numeric_limits<std::size_t>::max();

  std::size_t height = 0;
  std::size_t width = 0;
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<std::size_t> pixel_voxel;  // per pixel: flat voxel index or kOutside

  std::size_t channels = 0;
  std::vector<std::size_t> winners;  // [channel][voxel]: winning pixel or kOutside

  bool has_winners() const { return !winners.empty(); }
  std::size_t valid_pixels() const;
  bool operator==(const ProjectionTable&) const = default;
};

// Back-projects every valid pixel (depth > 0) to world space and records
// its voxel. Non-finite or negative depth is an error.
ProjectionTable build_projection_table(const Tensor& depth, const CameraIntrinsics& intr,
                                       const VoxelGridSpec& grid);

// features [C,H,W] -> [C,X,Y,Z]; per channel, each voxel takes the max over
// its source pixels (ties: lowest pixel index), unsourced voxels are zero.
Tensor project_forward(const Tensor& features, ProjectionTable& table, const VoxelGridSpec& grid);

// Routes voxel gradients to the recorded winners only.
Tensor project_backward(const Tensor& grad3d, const ProjectionTable& table);

// Autograd wrapper over [1,C,H,W] -> [1,C,X,Y,Z]. The table is copied into
// the node so one table may serve several forwards.
nn::Var project(const nn::Var& features, const ProjectionTable& table, const VoxelGridSpec& grid);

}  // namespace ddrnet
