// SPDX-License-Identifier: Apache-2.0
#include "ttslam/losses.hpp"

#include "ttslam/random.hpp"

#include <cmath>
#include <stdexcept>

namespace ttslam {

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// d pixel / d camera point.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& pc, const Intrinsics& k) {
  const double iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
  return j;
}

}  // namespace

void LossWeights::validate() const {
  if (alpha_rgb < 0.0 || alpha_warping < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
  if (!(alpha_rgb > 0.0 || alpha_warping > 0.0)) {
    throw std::invalid_argument("at least one of alpha_rgb, alpha_warping must be positive");
  }
  for (const auto& [z, a] : alpha_z) {
    if (z < 1 || z % 2 == 0) throw std::invalid_argument("patch sizes must be odd and positive");
    if (a < 0.0) throw std::invalid_argument("patch weights must be nonnegative");
  }
}

int LossWeights::max_patch_size() const { return alpha_z.empty() ? 1 : alpha_z.rbegin()->first; }

TrackingLossResult tracking_loss(const TrackingPointCloud& cloud, const Image& frame, const Pose& pose,
                                 const Intrinsics& k) {
  TrackingLossResult result;
  const Mat3 rt = pose.rotation.transpose();
  Vec3 g_omega = Vec3::Zero();
  Vec3 g_cam_nu = Vec3::Zero();
  double total = 0.0;
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    const Vec3 pc = rt * (cloud.points[p] - pose.translation);
    if (pc.z() <= kMinProjectionDepth) continue;
    const Vec2 px(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    const auto sample = sample_bilinear(frame, px);
    if (!sample) continue;
    ++result.valid_points;
    const Vec3 residual = sample->color - cloud.colors[p];
    total += residual.cwiseAbs().sum();
    const Vec3 d_color(sign(residual.x()), sign(residual.y()), sign(residual.z()));
    const Eigen::RowVector2d d_px = d_color.transpose() * sample->jacobian;
    const Vec3 d_pc = (d_px * projection_jacobian(pc, k)).transpose();
    // pc(omega, nu) = exp(-[omega]x) R^T (X - t - nu)
    g_omega += d_pc.cross(pc);
    g_cam_nu += d_pc;
  }
  if (result.valid_points == 0) return result;
  const double inv = 1.0 / static_cast<double>(result.valid_points);
  result.loss = total * inv;
  result.gradient << g_omega * inv, -(pose.rotation * g_cam_nu) * inv;
  return result;
}

RayBatch make_rays(std::span<const Vec2> pixels, const Pose& pose, const Intrinsics& k,
                   const RaySettings& settings) {
  RayBatch rays = generate_rays(pixels, pose, k, settings.near, settings.far);
  if ((settings.clip.max.array() > settings.clip.min.array()).all()) clip_rays_to_box(rays, settings.clip);
  return rays;
}

double rgb_loss(std::span<const FrameView> views, std::span<const std::vector<Vec2>> pixels,
                const FeatureGrids& grids, const Decoders& decoders, const Intrinsics& k,
                const RaySettings& ray_settings, std::uint64_t seed, const LossGradients& grads) {
  if (views.size() != pixels.size()) throw std::invalid_argument("rgb_loss: one pixel set per view expected");
  std::size_t count = 0;
  for (const auto& p : pixels) count += p.size();
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  const double grad_scale = inv * grads.scale;
  const bool want_grad = grads.grid != nullptr || grads.decoders != nullptr || grads.poses != nullptr;

  double total = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (pixels[v].empty()) continue;
    const FrameView& view = views[v];
    const RayBatch rays = make_rays(pixels[v], view.pose, k, ray_settings);
    const RaySamples samples =
        sample_rays(rays, ray_settings.samples, ray_settings.stratified, mix_seed(seed, view.id));
    RenderSettings rs;
    rs.transmittance_cutoff = ray_settings.transmittance_cutoff;
    rs.keep_cache = want_grad;
    const RenderOutput out = render(grids, decoders, rays, samples, rs);
    std::vector<Vec3> d_rgb(rays.size());
    for (std::size_t r = 0; r < rays.size(); ++r) {
      const Vec2& px = pixels[v][r];
      const Vec3 residual = out.rgb[r] - view.image->at(static_cast<int>(px.x()), static_cast<int>(px.y()));
      total += residual.cwiseAbs().sum();
      d_rgb[r] = Vec3(sign(residual.x()), sign(residual.y()), sign(residual.z())) * grad_scale;
    }
    if (!want_grad) continue;
    std::vector<RayPoseGradient> ray_grads;
    const bool pose_grad = grads.poses != nullptr && view.trainable;
    render_backward(grids, decoders, rays, samples, out, d_rgb, {},
                    {grads.grid, grads.decoders, pose_grad ? &ray_grads : nullptr});
    if (pose_grad) {
      RayPoseGradient sum;
      for (const auto& g : ray_grads) sum += g;
      (*grads.poses)[v] += to_pose_delta_gradient(view.pose.rotation, sum);
    }
  }
  return total * inv;
}

double ssim_with_gradient(std::span<const Vec3> a, std::span<const Vec3> b, std::span<Vec3> d_b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("ssim: patches must have equal, nonzero size");
  const bool want_grad = !d_b.empty();
  if (want_grad && d_b.size() != b.size()) throw std::invalid_argument("ssim: gradient buffer size mismatch");
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      mx += a[i][c];
      my += b[i][c];
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cxy = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double dx = a[i][c] - mx;
      const double dy = b[i][c] - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    const double a1 = 2.0 * mx * my + kSsimC1;
    const double a2 = 2.0 * cxy + kSsimC2;
    const double b1 = mx * mx + my * my + kSsimC1;
    const double b2 = vx + vy + kSsimC2;
    const double s = (a1 * a2) / (b1 * b2);
    total += s;
    if (!want_grad) continue;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double da1 = 2.0 * mx / n;
      const double da2 = 2.0 * (a[i][c] - mx) / n;
      const double db1 = 2.0 * my / n;
      const double db2 = 2.0 * (b[i][c] - my) / n;
      d_b[i][c] = s * (da1 / a1 + da2 / a2 - db1 / b1 - db2 / b2) / 3.0;
    }
  }
  return total / 3.0;
}

double ssim(std::span<const Vec3> a, std::span<const Vec3> b) { return ssim_with_gradient(a, b, {}); }

double warping_loss(std::span<const FrameView> views, std::span<const std::vector<Vec2>> centers,
                    const FeatureGrids& grids, const Decoders& decoders, const Intrinsics& k,
                    const LossWeights& weights, const RaySettings& ray_settings, std::uint64_t seed,
                    const LossGradients& grads, int min_valid, WarpingStats* stats) {
  if (views.size() != centers.size()) throw std::invalid_argument("warping_loss: one center set per view expected");
  std::size_t center_count = 0;
  for (const auto& c : centers) center_count += c.size();
  if (center_count == 0 || views.size() < 2) return 0.0;
  const double inv_centers = 1.0 / static_cast<double>(center_count);
  const bool want_grad = grads.grid != nullptr || grads.decoders != nullptr || grads.poses != nullptr;

  const int zmax = weights.max_patch_size();
  const int half = zmax / 2;
  const std::size_t patch_pixels = static_cast<std::size_t>(zmax) * zmax;

  std::vector<Vec2> pixels(patch_pixels);
  std::vector<Vec3> points(patch_pixels);
  std::vector<Vec3> cam_dirs(patch_pixels);
  std::vector<double> d_depth(patch_pixels);
  std::vector<Vec3> d_point(patch_pixels);
  std::vector<Vec3> reference;
  std::vector<Vec3> warped;
  std::vector<Vec3> d_warped;
  std::vector<Vec2> projected;
  std::vector<Vec3> cam_points;
  std::vector<Eigen::Matrix<double, 3, 2>> image_jac;
  std::vector<std::size_t> sub_index;

  struct PendingWarp {
    std::size_t target;
    double loss;
    std::vector<Vec3> d_point;  // per sub-patch pixel, dL/dX (without alpha)
    Vec6 d_target_pose;
  };

  double total = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const FrameView& src = views[v];
    // Samples are keyed by frame id and center index, so view order does not matter.
    std::uint64_t patch_counter = 0;
    for (const Vec2& center : centers[v]) {
      const int cx = static_cast<int>(center.x());
      const int cy = static_cast<int>(center.y());
      if (cx - half < 0 || cy - half < 0 || cx + half >= k.width || cy + half >= k.height) {
        throw std::invalid_argument("warping_loss: patch center too close to the image border");
      }
      for (int dy = -half, idx = 0; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx, ++idx) pixels[static_cast<std::size_t>(idx)] = Vec2(cx + dx, cy + dy);
      }
      const RayBatch rays = make_rays(pixels, src.pose, k, ray_settings);
      const RaySamples samples = sample_rays(rays, ray_settings.samples, ray_settings.stratified,
                                             mix_seed(seed, (static_cast<std::uint64_t>(src.id) << 32) + patch_counter++));
      RenderSettings rs;
      rs.transmittance_cutoff = ray_settings.transmittance_cutoff;
      rs.compute_color = false;
      rs.keep_cache = want_grad;
      const RenderOutput out = render(grids, decoders, rays, samples, rs);
      bool depth_ok = true;
      for (std::size_t p = 0; p < patch_pixels; ++p) {
        cam_dirs[p] = k.back_project(pixels[p]);
        points[p] = src.pose.rotation * (cam_dirs[p] * out.depth[p]) + src.pose.translation;
        depth_ok = depth_ok && out.depth[p] > 0.0;
        d_point[p] = Vec3::Zero();
      }
      if (!depth_ok) {
        if (stats) stats->patches_dropped += weights.alpha_z.size();
        continue;
      }

      bool any_contribution = false;
      Vec6 d_src_pose_direct = Vec6::Zero();
      for (const auto& [z, alpha] : weights.alpha_z) {
        const int zh = z / 2;
        sub_index.clear();
        reference.clear();
        for (int dy = -zh; dy <= zh; ++dy) {
          for (int dx = -zh; dx <= zh; ++dx) {
            const std::size_t idx = static_cast<std::size_t>((dy + half) * zmax + (dx + half));
            sub_index.push_back(idx);
            reference.push_back(src.image->at(cx + dx, cy + dy));
          }
        }
        const std::size_t np = sub_index.size();
        std::vector<PendingWarp> pending;
        for (std::size_t t = 0; t < views.size(); ++t) {
          if (t == v) continue;
          const FrameView& dst = views[t];
          const Mat3 rt = dst.pose.rotation.transpose();
          warped.resize(np);
          projected.resize(np);
          cam_points.resize(np);
          image_jac.resize(np);
          bool valid = true;
          for (std::size_t p = 0; p < np && valid; ++p) {
            const Vec3 pc = rt * (points[sub_index[p]] - dst.pose.translation);
            if (pc.z() <= kMinProjectionDepth) {
              valid = false;
              break;
            }
            const Vec2 px(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
            const auto s = sample_bilinear(*dst.image, px);
            if (!s) {
              valid = false;
              break;
            }
            cam_points[p] = pc;
            warped[p] = s->color;
            image_jac[p] = s->jacobian;
          }
          if (!valid) continue;
          PendingWarp w;
          w.target = t;
          d_warped.assign(np, Vec3::Zero());
          const double s = ssim_with_gradient(reference, warped, want_grad ? std::span<Vec3>(d_warped) : std::span<Vec3>{});
          w.loss = 0.5 * (1.0 - s);
          w.d_target_pose = Vec6::Zero();
          if (want_grad) {
            w.d_point.resize(np);
            Vec3 g_omega = Vec3::Zero();
            Vec3 g_cam_nu = Vec3::Zero();
            for (std::size_t p = 0; p < np; ++p) {
              // dL/dwarped = -0.5 dSSIM/dwarped
              const Eigen::RowVector2d d_px = (-0.5 * d_warped[p]).transpose() * image_jac[p];
              const Vec3 d_pc = (d_px * projection_jacobian(cam_points[p], k)).transpose();
              w.d_point[p] = dst.pose.rotation * d_pc;
              g_omega += d_pc.cross(cam_points[p]);
              g_cam_nu += d_pc;
            }
            w.d_target_pose << g_omega, -(dst.pose.rotation * g_cam_nu);
          }
          pending.push_back(std::move(w));
        }
        if (stats) stats->reprojections += pending.size();
        if (static_cast<int>(pending.size()) < min_valid) {
          if (stats) ++stats->patches_dropped;
          continue;
        }
        if (stats) ++stats->patches_used;
        any_contribution = true;
        const double scale = alpha * inv_centers;
        const double grad_scale = scale * grads.scale;
        for (const PendingWarp& w : pending) {
          total += scale * w.loss;
          if (!want_grad) continue;
          for (std::size_t p = 0; p < np; ++p) d_point[sub_index[p]] += grad_scale * w.d_point[p];
          if (grads.poses && views[w.target].trainable) (*grads.poses)[w.target] += grad_scale * w.d_target_pose;
        }
      }
      if (!want_grad || !any_contribution) continue;

      // X = t + R K^-1 [x, 1] D
      Vec3 g_nu = Vec3::Zero();
      Vec3 g_moment = Vec3::Zero();
      for (std::size_t p = 0; p < patch_pixels; ++p) {
        d_depth[p] = (src.pose.rotation * cam_dirs[p]).dot(d_point[p]);
        g_nu += d_point[p];
        g_moment += (points[p] - src.pose.translation).cross(d_point[p]);
      }
      d_src_pose_direct << src.pose.rotation.transpose() * g_moment, g_nu;
      const bool pose_grad = grads.poses != nullptr && src.trainable;
      std::vector<RayPoseGradient> ray_grads;
      render_backward(grids, decoders, rays, samples, out, {}, d_depth,
                      {grads.grid, grads.decoders, pose_grad ? &ray_grads : nullptr});
      if (pose_grad) {
        RayPoseGradient sum;
        for (const auto& g : ray_grads) sum += g;
        (*grads.poses)[v] += d_src_pose_direct + to_pose_delta_gradient(src.pose.rotation, sum);
      }
    }
  }
  return total;
}

double ba_total(double rgb, double warping, const LossWeights& weights) {
  return weights.alpha_rgb * rgb + weights.alpha_warping * warping;
}

}  // namespace ttslam
