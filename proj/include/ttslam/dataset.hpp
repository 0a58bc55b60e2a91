// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats.
//
// Dataset directory:
//   frame_%06d.png      8-bit RGB
//   depth_%06d.bin      optional, little-endian float32 meters, row-major
//   poses_gt.txt        optional, "index tx ty tz qx qy qz qw" per line
//   intrinsics.txt      "fx fy cx cy width height"
//   bounds.txt          optional, "xmin ymin zmin xmax ymax zmax"
//
// Checkpoint (little-endian): magic "TTSLAMCK", u32 version, u32 level count,
// bounds as 6 f64, then per level u32 dims[3], f64 voxel_size, f64 origin[3].
// Feature arrays follow in level order as f32 (vertex-major, 4 channels,
// x fastest). Then the opacity and color decoders, each as u32 input, u32
// output, u32 parameter count, f64 tau, u8 frozen and f32 parameters in layer
// order. The file ends with u8 has_o_init and f64 o_init.
#pragma once

#include "ttslam/decoders.hpp"
#include "ttslam/feature_grid.hpp"
#include "ttslam/geometry.hpp"
#include "ttslam/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ttslam {

struct Dataset {
  Intrinsics intrinsics;
  std::vector<Image> images;
  std::vector<Pose> gt_poses;     // empty when unavailable
  std::vector<DepthMap> depths;   // empty when unavailable
  std::optional<Box3> bounds;

  [[nodiscard]] int frame_count() const { return static_cast<int>(images.size()); }
  [[nodiscard]] bool has_gt_poses() const { return !gt_poses.empty(); }
  [[nodiscard]] bool has_depth() const { return !depths.empty(); }
};

[[nodiscard]] std::string frame_name(int index);
[[nodiscard]] std::string depth_name(int index);

/// Throws std::runtime_error with the offending path on missing or malformed files.
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

void write_intrinsics(const std::filesystem::path& path, const Intrinsics& k);
[[nodiscard]] Intrinsics read_intrinsics(const std::filesystem::path& path);
void write_bounds(const std::filesystem::path& path, const Box3& box);
[[nodiscard]] Box3 read_bounds(const std::filesystem::path& path);

/// Pose files: one line per pose, "index tx ty tz qx qy qz qw".
void write_poses(const std::filesystem::path& path, const std::vector<Pose>& poses);
[[nodiscard]] std::vector<Pose> read_poses(const std::filesystem::path& path);

/// Bounding box of everything observed by GT depth, grown by `margin`.
[[nodiscard]] Box3 bounds_from_depth(const Dataset& dataset, double margin);

struct MapCheckpoint {
  FeatureGrids grids;
  Decoders decoders;
};

void save_checkpoint(const std::filesystem::path& path, const FeatureGrids& grids, const Decoders& decoders);
[[nodiscard]] MapCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ttslam
