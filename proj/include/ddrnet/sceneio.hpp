#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ddrnet/nn/kernels.hpp"
#include "ddrnet/projection.hpp"
#include "ddrnet/tensor.hpp"

namespace ddrnet {

// Class ids: 0 empty, then the 11 semantic classes in evaluation-table order.
enum SceneClass : std::uint8_t {
  kEmpty = 0,
  kCeiling = 1,
  kFloor = 2,
  kWall = 3,
  kWindow = 4,
  kChair = 5,
  kBed = 6,
  kSofa = 7,
  kTable = 8,
  kTvs = 9,
  kFurniture = 10,
  kObjects = 11,
};
constexpr std::size_t kSemanticClasses = 11;
const std::array<const char*, kSemanticClasses + 1>& class_names();

// Exactly one per voxel.
enum class VoxelState : std::uint8_t { ObservedSurface = 0, ObservedEmpty = 1, Occluded = 2, OutsideView = 3 };

/// Axis-aligned world box with a class id. Later boxes override earlier
/// ones where they overlap in the label grid.
struct Box {
  std::array<double, 3> lo{};
  std::array<double, 3> hi{};
  std::uint8_t label = kEmpty;
};

struct GenConfig {
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  // Label (output) resolution; the room fills its extent, z is up.
  VoxelGridSpec label_grid{{0, 0, 0}, 0.5, {8, 8, 8}};
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  bool ceiling = false;
  bool windows = true;
  double horizontal_fov_deg = 70.0;
  std::size_t max_retries = 200;

  void validate() const;
};

struct SceneLayout {
  std::vector<Box> boxes;
  CameraIntrinsics camera;
};

struct SceneSample {
  Tensor rgb;    // [3,H,W] in [0,1]
  Tensor depth;  // [H,W] z-depth in meters, 0 = no return
  CameraIntrinsics intrinsics;
  Tensor labels;  // [X,Y,Z] class ids (UInt8)
  Tensor masks;   // [X,Y,Z] VoxelState (UInt8)

  bool operator==(const SceneSample& o) const {
    return rgb == o.rgb && depth == o.depth && intrinsics == o.intrinsics && labels == o.labels && masks == o.masks;
  }
};

// Deterministic in (seed, cfg). Throws GenerationError when objects cannot be
// placed within the retry budget.
SceneLayout generate_layout(std::uint64_t seed, const GenConfig& cfg);
SceneSample render_layout(const SceneLayout& layout, const GenConfig& cfg);
SceneSample generate_scene(std::uint64_t seed, const GenConfig& cfg);

// Label of every voxel whose center lies in a box (last box wins).
Tensor voxelize_labels(const std::vector<Box>& boxes, const VoxelGridSpec& grid);

// Per-voxel state from the depth image. Voxel centers are projected to the
// nearest pixel; z-depth within half a voxel of the surface is observed
// surface, nearer is observed empty, farther is occluded. Off-image, behind
// the camera or at a pixel with no depth return is outside the view.
Tensor compute_masks(const Tensor& depth, const CameraIntrinsics& intr, const VoxelGridSpec& grid);

// Training mask: non-empty or occluded voxels inside the view.
nn::LossWeights loss_weights(const Tensor& labels, const Tensor& masks, double empty_weight,
                             std::size_t num_classes = kSemanticClasses + 1);

// Argmax over classes of logits [1,K,X,Y,Z] (ties: lowest class) -> [X,Y,Z].
Tensor predict_labels(const Tensor& logits);

struct ScMetrics {
  double precision = 1.0;
  double recall = 1.0;
  double iou = 1.0;
  bool empty_denominator = false;  // some ratio was 0/0 and reported as 1
};

struct SscMetrics {
  std::array<double, kSemanticClasses> iou{};  // index c-1 for class c
  std::array<bool, kSemanticClasses> absent{};  // absent from both prediction and truth
  double average = 1.0;                          // mean over present classes
  bool empty_denominator = false;
};

struct MetricsReport {
  ScMetrics sc;
  SscMetrics ssc;
  std::string to_text() const;
  std::string to_json() const;
};

// Binary occupancy on occluded voxels.
ScMetrics sc_metrics(const Tensor& pred, const Tensor& gt, const Tensor& masks);
// Per-class IoU on observed-surface and occluded voxels.
SscMetrics ssc_metrics(const Tensor& pred, const Tensor& gt, const Tensor& masks);
MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& masks);

// Pools raw counts over several samples before forming ratios.
class MetricsAccumulator {
 public:
  void add(const Tensor& pred, const Tensor& gt, const Tensor& masks);
  MetricsReport report() const;

 private:
  std::uint64_t tp_ = 0, fp_ = 0, fn_ = 0;
  std::array<std::uint64_t, kSemanticClasses> inter_{};
  std::array<std::uint64_t, kSemanticClasses> uni_{};
};

// Directory layout: rgb.tnsr, depth.tnsr, labels.tnsr, masks.tnsr, intrinsics.json.
void write_sample(const std::string& dir, const SceneSample& sample);
SceneSample read_sample(const std::string& dir);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  std::string split;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::vector<ManifestEntry> samples;
  std::vector<ManifestEntry> split(const std::string& tag) const;
};

void write_manifest(const std::string& dir, const Manifest& m);
Manifest read_manifest(const std::string& dir);

// Writes `count` samples (seeds seed, seed+1, ...) plus manifest.json. The
// last `val_count` samples are tagged "val", the rest "train".
Manifest generate_dataset(const std::string& dir, std::size_t count, std::uint64_t seed, const GenConfig& cfg,
                          std::size_t val_count = 0);

}  // namespace ddrnet
