// SPDX-License-Identifier: Apache-2.0
//
// Every tunable of a run, with key=value text serialization. Unknown keys are
// rejected so typos do not silently fall back to defaults.
#pragma once

#include "ttslam/losses.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ttslam {

struct RunConfig {
  std::uint64_t seed = 7;

  // Frame grouping and sampling sizes.
  int n0 = 15;                  // initialization frames
  int group_size = 10;          // N
  int tracking_points = 10000;  // P
  int ba_pixels = 3000;         // Q, rgb pixels per frame per iteration
  int warp_pixels = 64;         // warping patch centers per frame per iteration
  int tracking_window = 5;      // frames of the previous group feeding the tracking cloud
  int keyframe_every = 5;       // H
  int keyframe_max = 10;        // L
  double keyframe_overlap = 0.1;  // R
  int overlap_lattice = 32;
  int min_valid_reprojections = 5;

  // Iteration budgets.
  int init_iters = 1500;
  int init_warp_only_iters = 500;
  int init_pose_start = 150;
  int tracking_iters = 200;
  int ba_iters = 300;

  // Map and decoders.
  std::vector<double> voxel_sizes{0.64, 0.48, 0.32, 0.24, 0.16, 0.12, 0.08};
  double tau_opacity = 10.0;
  double tau_color = 10.0;

  // Rays.
  int samples = 64;
  bool stratified = true;
  double near = 0.1;
  double far = 0.0;  // <= 0: scene-box diagonal
  double transmittance_cutoff = 1e-4;

  // Losses.
  LossWeights loss;
  bool init_depth_supervision = false;
  double init_depth_weight = 0.1;

  // Optimizer.
  double lr_grid = 1e-2;
  double lr_decoder = 1e-3;
  double lr_pose_tracking = 1e-3;
  double lr_pose_ba = 5e-4;
  double pose_clip = 10.0;

  // Ablations.
  bool tt_enabled = true;
  bool ho_enabled = true;

  int workers = 0;  // 0: hardware concurrency

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;

  /// Effective temperatures (1 when TT is disabled).
  [[nodiscard]] double effective_tau_opacity() const { return tt_enabled ? tau_opacity : 1.0; }
  [[nodiscard]] double effective_tau_color() const { return tt_enabled ? tau_color : 1.0; }
};

[[nodiscard]] std::vector<std::string> preset_names();
/// "default", "desk", "replica" or "7scenes". Throws on unknown names.
[[nodiscard]] RunConfig preset(const std::string& name);

/// Overrides fields of `config` from key=value lines; '#' starts a comment.
void parse_config(std::istream& is, RunConfig& config);
void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value);
[[nodiscard]] RunConfig load_config(const std::string& path, RunConfig base = {});
void write_config(std::ostream& os, const RunConfig& config);
[[nodiscard]] std::string to_string(const RunConfig& config);

}  // namespace ttslam
