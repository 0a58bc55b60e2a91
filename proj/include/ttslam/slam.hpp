// SPDX-License-Identifier: Apache-2.0
//
// The SLAM pipeline. Frames are indexed from 0.
//
//   group 0       frames [0, n0)                    initialization
//   group m >= 1  frames [n0 + (m-1)N, n0 + mN)     last group may be short
//
// Initialization trains grids, both decoders and the poses of frames 2..n0-1
// (frames 0 and 1 keep their GT poses), then freezes the decoders. Each later
// group is tracked frame by frame against a point cloud rendered from the
// last frames of the previous group, without touching the map, and then
// refined jointly with the map by bundle adjustment over the group plus a
// selection of earlier keyframes whose poses stay fixed.
#pragma once

#include "ttslam/config.hpp"
#include "ttslam/dataset.hpp"
#include "ttslam/decoders.hpp"
#include "ttslam/feature_grid.hpp"
#include "ttslam/losses.hpp"
#include "ttslam/optim.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ttslam {

/// Number of groups after group 0.
[[nodiscard]] int group_count(int frame_count, int n0, int group_size);
/// Frame indices of group m (clipped to the frame count).
[[nodiscard]] std::vector<int> group_frames(int m, int n0, int group_size, int frame_count);
/// The last `window` frames of group m-1; these feed the tracking cloud of group m.
[[nodiscard]] std::vector<int> tracking_set(int m, int n0, int group_size, int window);
/// Global keyframes available to group m: every `every`-th frame before it.
[[nodiscard]] std::vector<int> keyframe_candidates(int m, int n0, int group_size, int every);

struct LossRecord {
  std::string stage;  // init, ba, track
  int group = 0;
  int frame = -1;  // tracking only
  int iteration = 0;
  double rgb = 0.0;
  double warping = 0.0;
  double total = 0.0;
};

struct SlamState {
  FeatureGrids grids;
  Decoders decoders;
  std::vector<Pose> poses;
  std::vector<bool> estimated;
  std::vector<bool> lost;
  std::vector<LossRecord> log;
  /// Decoder optimizers; only used while the decoders train.
  std::optional<DenseAdam> opacity_adam;
  std::optional<DenseAdam> color_adam;
  std::int64_t skipped_steps = 0;
  int groups_done = 0;
};

/// Ties dataset, configuration and derived settings together.
class Slam {
 public:
  Slam(const Dataset& dataset, RunConfig config);

  [[nodiscard]] const RunConfig& config() const { return config_; }
  [[nodiscard]] const Box3& bounds() const { return bounds_; }
  [[nodiscard]] const RaySettings& ray_settings() const { return rays_; }
  [[nodiscard]] const Dataset& dataset() const { return dataset_; }

  /// Fresh map and decoders plus the starting poses of group 0.
  [[nodiscard]] SlamState make_state() const;
  void initialize(SlamState& state) const;

  [[nodiscard]] TrackingPointCloud build_tracking_cloud(const SlamState& state, const std::vector<int>& frames,
                                                        int point_count, std::uint64_t seed) const;

  struct TrackResult {
    Pose pose;
    double loss = 0.0;
    bool lost = false;
  };
  [[nodiscard]] TrackResult track_frame(const TrackingPointCloud& cloud, int frame, const Pose& prev2,
                                        const Pose& prev1, int iterations, SlamState* log_state = nullptr,
                                        int group = 0) const;

  /// Fraction of a lattice of keyframe pixels that, lifted with rendered
  /// depth, land inside the target view in front of the camera.
  [[nodiscard]] double overlap_ratio(const SlamState& state, int keyframe, const Pose& target) const;
  [[nodiscard]] std::vector<int> select_keyframes(const SlamState& state, const std::vector<int>& candidates,
                                                  int last_frame, std::uint64_t seed) const;

  void bundle_adjust(SlamState& state, const std::vector<int>& group, const std::vector<int>& keyframes, int m) const;

  /// Tracks and bundle-adjusts every group after initialization.
  void run_groups(SlamState& state) const;
  /// Processes group m only (tracking, keyframes, bundle adjustment).
  void process_group(SlamState& state, int m) const;

  /// Optional progress callback (stage name, detail).
  std::function<void(const std::string&)> progress;

 private:
  void report(const std::string& msg) const {
    if (progress) progress(msg);
  }

  const Dataset& dataset_;
  RunConfig config_;
  Box3 bounds_;
  RaySettings rays_;
};

/// Full pipeline: initialize then run all groups.
[[nodiscard]] SlamState run_slam(const Dataset& dataset, const RunConfig& config,
                                 std::function<void(const std::string&)> progress = {});

/// trajectory_est.txt, checkpoint.bin, flags.txt, config.txt, intrinsics.txt
/// and loss CSVs.
void save_run(const std::filesystem::path& out_dir, const SlamState& state, const RunConfig& config,
              const Intrinsics& intrinsics);
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log, const std::string& stage);

/// Scene bounds for a dataset: bounds.txt when present, otherwise the GT
/// depth extent.
[[nodiscard]] Box3 dataset_bounds(const Dataset& dataset);

}  // namespace ttslam
