// SPDX-License-Identifier: Apache-2.0
//
// Adam variants for the three parameter groups: dense vectors (decoder
// weights), sparse voxel features and camera poses.
#pragma once

#include "ttslam/feature_grid.hpp"
#include "ttslam/geometry.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ttslam {

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Shared bookkeeping: the step counter used for bias correction and the
/// number of steps skipped because of non-finite gradients.
struct AdamCounters {
  std::int64_t step = 0;
  std::int64_t skipped = 0;
};

class DenseAdam {
 public:
  DenseAdam() = default;
  DenseAdam(std::size_t size, AdamParams params);

  /// Returns false (and leaves everything untouched) when `grad` has a
  /// non-finite entry.
  bool step(std::span<double> values, std::span<const double> grad);
  void reset();

  [[nodiscard]] const AdamCounters& counters() const { return counters_; }
  [[nodiscard]] const AdamParams& params() const { return params_; }
  [[nodiscard]] std::span<const double> first_moment() const { return m_; }
  [[nodiscard]] std::span<const double> second_moment() const { return v_; }

 private:
  AdamParams params_;
  AdamCounters counters_;
  std::vector<double> m_;
  std::vector<double> v_;
};

/// Adam over voxel features. Only vertices present in the gradient are
/// updated; the moments of every other vertex are left as they are.
class SparseGridAdam {
 public:
  SparseGridAdam() = default;
  SparseGridAdam(const FeatureGrids& grids, AdamParams params);

  bool step(FeatureGrids& grids, const GridGradient& grad);
  void reset();

  [[nodiscard]] const AdamCounters& counters() const { return counters_; }
  [[nodiscard]] double first_moment(int level, std::size_t feature) const {
    return m_[static_cast<std::size_t>(level)][feature];
  }
  [[nodiscard]] double second_moment(int level, std::size_t feature) const {
    return v_[static_cast<std::size_t>(level)][feature];
  }

 private:
  AdamParams params_;
  AdamCounters counters_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Adam over a set of camera poses. Each step computes a local delta
/// (omega, nu) from the moment estimates and applies it to the pose, so the
/// linearization point moves with the pose while the moments persist.
class PoseAdam {
 public:
  static constexpr double kDefaultClipNorm = 10.0;

  PoseAdam() = default;
  PoseAdam(std::size_t pose_count, AdamParams params, double clip_norm = kDefaultClipNorm);

  /// Poses with `trainable[i] == false` are neither updated nor counted in
  /// the clipping norm. An empty `trainable` means all poses train.
  bool step(std::span<Pose> poses, std::span<const Vec6> grads, const std::vector<bool>& trainable = {});
  void reset();

  [[nodiscard]] const AdamCounters& counters() const { return counters_; }
  [[nodiscard]] double clip_norm() const { return clip_norm_; }

 private:
  AdamParams params_;
  AdamCounters counters_;
  double clip_norm_ = kDefaultClipNorm;
  std::vector<Vec6> m_;
  std::vector<Vec6> v_;
};

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::span<Vec6> grads, double max_norm);

}  // namespace ttslam
