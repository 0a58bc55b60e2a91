// SPDX-License-Identifier: Apache-2.0
//
// Volumetric rendering of color and depth along camera rays.
//
// Each sample's decoded opacity is used directly as its alpha:
//   w_i  = o_i * prod_{j<i} (1 - o_j)
//   rgb  = sum_i w_i * c_i
//   depth = sum_i w_i * D_i
// Depth is not renormalized by the accumulated weight.
#pragma once

#include "ttslam/decoders.hpp"
#include "ttslam/feature_grid.hpp"
#include "ttslam/geometry.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace ttslam {

/// Ordered sample depths for a batch of rays; every ray has the same count.
struct RaySamples {
  int per_ray = 0;
  std::vector<double> depths;  // rays x per_ray, camera depth
  std::vector<Vec3> points;    // world positions

  [[nodiscard]] std::size_t ray_count() const {
    return per_ray == 0 ? 0 : depths.size() / static_cast<std::size_t>(per_ray);
  }
  [[nodiscard]] double depth(std::size_t ray, int i) const {
    return depths[ray * static_cast<std::size_t>(per_ray) + static_cast<std::size_t>(i)];
  }
};

/// Samples `count` depths in [near, far] for ray `ray_index` of `rays`.
/// Non-stratified samples are evenly spaced including both ends; stratified
/// samples are jittered uniformly within `count` equal bins.
[[nodiscard]] RaySamples sample_ray(const RayBatch& rays, std::size_t ray_index, int count,
                                    bool stratified, std::uint64_t rng_seed);
/// All rays of the batch; one RNG stream seeded with `rng_seed`.
[[nodiscard]] RaySamples sample_rays(const RayBatch& rays, int count, bool stratified,
                                     std::uint64_t rng_seed);

/// w_i = o_i * prod_{j<i}(1 - o_j).
[[nodiscard]] std::vector<double> compute_weights(std::span<const double> opacities);

struct RenderSettings {
  /// Samples whose transmittance falls below this value are dropped from the
  /// color/depth sums and from the backward pass. Zero keeps every sample.
  double transmittance_cutoff = 0.0;
  bool compute_color = true;
  bool keep_cache = true;
};

struct RenderCache {
  MlpCache opacity;
  MlpCache color;
  std::vector<double> color_values;  // 3 x active, packed per ray
};

struct RenderOutput {
  int samples_per_ray = 0;
  std::vector<Vec3> rgb;
  std::vector<double> depth;
  std::vector<double> opacities;     // rays x samples
  std::vector<double> weights;       // rays x samples
  std::vector<double> transmittance; // rays x samples
  std::vector<int> active;           // per ray, samples that contribute
  std::vector<std::size_t> active_offset;  // per ray, first packed active column
  std::optional<RenderCache> cache;
  bool has_color = false;

  [[nodiscard]] std::size_t ray_count() const { return depth.size(); }
  [[nodiscard]] double accumulated_weight(std::size_t ray) const;
};

[[nodiscard]] RenderOutput render(const FeatureGrids& grids, const Decoders& decoders,
                                  const RayBatch& rays, const RaySamples& samples,
                                  const RenderSettings& settings = {});

/// Gradients of a ray's outputs w.r.t. its camera pose, before conversion to
/// the local pose parameterization: d_origin = sum_i dL/dX_i and
/// d_moment = sum_i (X_i - origin) x dL/dX_i.
struct RayPoseGradient {
  Vec3 d_origin = Vec3::Zero();
  Vec3 d_moment = Vec3::Zero();

  RayPoseGradient& operator+=(const RayPoseGradient& o) {
    d_origin += o.d_origin;
    d_moment += o.d_moment;
    return *this;
  }
};

/// dL/d(delta) at delta = 0 for a camera with rotation `rotation`.
[[nodiscard]] Vec6 to_pose_delta_gradient(const Mat3& rotation, const RayPoseGradient& g);

struct DecoderGradients {
  ParamVector opacity;
  ParamVector color;

  static DecoderGradients zeros_like(const Decoders& decoders);
  void clear();
  [[nodiscard]] bool all_finite() const;
};

struct RenderBackwardTargets {
  GridGradient* grid = nullptr;
  DecoderGradients* decoders = nullptr;  // ignored for frozen nets
  std::vector<RayPoseGradient>* rays = nullptr;  // resized to the ray count
};

/// Chain rule through compositing, decoders and interpolation. `d_rgb` may
/// be empty when only depth gradients are present.
void render_backward(const FeatureGrids& grids, const Decoders& decoders, const RayBatch& rays,
                     const RaySamples& samples, const RenderOutput& out, std::span<const Vec3> d_rgb,
                     std::span<const double> d_depth, const RenderBackwardTargets& targets);

struct SampleProfile {
  double depth = 0.0;
  double opacity = 0.0;
  double weight = 0.0;
};

[[nodiscard]] std::vector<SampleProfile> ray_diagnostics(const RenderOutput& out,
                                                         const RaySamples& samples,
                                                         std::size_t ray_index);
void write_profile_csv(std::ostream& os, std::span<const SampleProfile> profile);

/// Ray batch far limits clipped to where each ray leaves `box`.
void clip_rays_to_box(RayBatch& rays, const Box3& box);

}  // namespace ttslam
