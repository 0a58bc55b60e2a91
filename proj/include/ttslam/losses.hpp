// SPDX-License-Identifier: Apache-2.0
//
// Losses used by tracking and bundle adjustment:
//   * tracking_loss: L1 color error of a cached point cloud reprojected into
//     a new frame; depends on the frame pose only.
//   * rgb_loss: L1 between observed and volume-rendered pixel colors.
//   * warping_loss: patches are lifted to 3-D with rendered depth, reprojected
//     into the other frames and compared with single-window SSIM.
#pragma once

#include "ttslam/decoders.hpp"
#include "ttslam/feature_grid.hpp"
#include "ttslam/geometry.hpp"
#include "ttslam/image.hpp"
#include "ttslam/renderer.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace ttslam {

struct LossWeights {
  double alpha_rgb = 1.0;
  double alpha_warping = 0.5;
  /// Patch size -> weight. Sizes must be odd.
  std::map<int, double> alpha_z{{1, 1.0 / 3.0}, {7, 1.0 / 3.0}, {11, 1.0 / 3.0}};

  void validate() const;
  [[nodiscard]] int max_patch_size() const;
};

struct Patch {
  Vec2 center = Vec2::Zero();
  int size = 1;
  int source_frame = 0;
};

/// World points with reference colors, rendered from reference frames.
struct TrackingPointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;
  std::vector<int> source_frames;

  [[nodiscard]] std::size_t size() const { return points.size(); }
};

struct TrackingLossResult {
  double loss = 0.0;                    // mean over valid points of the per-point L1
  Vec6 gradient = Vec6::Zero();         // dloss/d(omega, nu)
  std::size_t valid_points = 0;
  [[nodiscard]] bool lost() const { return valid_points == 0; }
};

[[nodiscard]] TrackingLossResult tracking_loss(const TrackingPointCloud& cloud, const Image& frame,
                                               const Pose& pose, const Intrinsics& k);

/// A frame taking part in bundle adjustment.
struct FrameView {
  int id = 0;
  const Image* image = nullptr;
  Pose pose;
  bool trainable = false;
};

/// Ray sampling parameters shared by all rendering losses.
struct RaySettings {
  int samples = 64;
  bool stratified = true;
  double near = 0.1;
  double far = 10.0;
  double transmittance_cutoff = 0.0;
  /// Rays stop where they leave this box (typically the grid bounds).
  Box3 clip;
};

[[nodiscard]] RayBatch make_rays(std::span<const Vec2> pixels, const Pose& pose, const Intrinsics& k,
                                 const RaySettings& settings);

/// Gradient sinks for bundle-adjustment losses. Any member may be null.
struct LossGradients {
  GridGradient* grid = nullptr;
  DecoderGradients* decoders = nullptr;
  std::vector<Vec6>* poses = nullptr;  // one per view, dL/d(omega, nu)
  /// Multiplies every gradient written to the sinks (the loss weight).
  double scale = 1.0;
};

/// Mean over all pixels of the per-pixel L1 color error (summed over channels).
double rgb_loss(std::span<const FrameView> views, std::span<const std::vector<Vec2>> pixels,
                const FeatureGrids& grids, const Decoders& decoders, const Intrinsics& k,
                const RaySettings& rays, std::uint64_t seed, const LossGradients& grads = {});

/// Single-window SSIM, averaged over the three channels.
[[nodiscard]] double ssim(std::span<const Vec3> a, std::span<const Vec3> b);
/// SSIM together with dSSIM/db.
double ssim_with_gradient(std::span<const Vec3> a, std::span<const Vec3> b, std::span<Vec3> d_b);

struct WarpingStats {
  std::size_t patches_used = 0;
  std::size_t patches_dropped = 0;
  std::size_t reprojections = 0;
};

/// Mean over patch centers of sum_z alpha_z sum_{j != i} (1 - SSIM) / 2.
/// `centers[v]` are integer pixel centers in view v whose largest patch lies
/// inside the image. Patches with fewer than `min_valid` valid target frames
/// contribute nothing.
double warping_loss(std::span<const FrameView> views, std::span<const std::vector<Vec2>> centers,
                    const FeatureGrids& grids, const Decoders& decoders, const Intrinsics& k,
                    const LossWeights& weights, const RaySettings& rays, std::uint64_t seed,
                    const LossGradients& grads = {}, int min_valid = 5, WarpingStats* stats = nullptr);

[[nodiscard]] double ba_total(double rgb, double warping, const LossWeights& weights);

}  // namespace ttslam
