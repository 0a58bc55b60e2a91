// SPDX-License-Identifier: Apache-2.0
#include "ttslam/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ttslam {

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::operator*(const Pose& rhs) const {
  return {rotation * rhs.rotation, rotation * rhs.translation + translation};
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: image size must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
    throw std::invalid_argument("intrinsics: principal point outside the image");
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0.0, -v.z(),  v.y(),
         v.z(),    0.0, -v.x(),
        -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const Mat3 w = skew(omega);
  if (theta2 < 1e-16) {
    return Mat3::Identity() + w + 0.5 * w * w;
  }
  const double theta = std::sqrt(theta2);
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / theta2;
  return Mat3::Identity() + a * w + b * w * w;
}

Vec3 so3_log(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(c);
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < 1e-8) return 0.5 * v;
  return theta / (2.0 * std::sin(theta)) * v;
}

Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

Vec3 unproject(const Vec2& pixel, double depth, const Pose& pose, const Intrinsics& k) {
  if (!(depth > 0.0)) throw std::domain_error("unproject: depth must be positive");
  return pose.rotation * (k.back_project(pixel) * depth) + pose.translation;
}

Projection project(const Vec3& point, const Pose& pose, const Intrinsics& k) {
  const Vec3 pc = pose.to_camera(point);
  Projection out;
  out.depth = pc.z();
  if (pc.z() <= kMinProjectionDepth) return out;
  out.pixel = {k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
  out.valid = true;
  return out;
}

Pose apply_delta(const Pose& pose, const PoseDelta& delta) {
  if (delta.omega.isZero(0.0) && delta.nu.isZero(0.0)) return pose;
  Pose out;
  out.rotation = orthonormalize(pose.rotation * so3_exp(delta.omega));
  out.translation = pose.translation + delta.nu;
  return out;
}

Pose constant_velocity_predict(const Pose& prev2, const Pose& prev1) {
  const Pose relative = prev2.inverse() * prev1;
  Pose out = prev1 * relative;
  out.rotation = orthonormalize(out.rotation);
  return out;
}

void RayBatch::reserve(std::size_t n) {
  origins.reserve(n);
  directions.reserve(n);
  depth_directions.reserve(n);
  near.reserve(n);
  far.reserve(n);
}

void RayBatch::push_back(const Vec3& origin, const Vec3& depth_direction, double near_depth,
                         double far_depth) {
  origins.push_back(origin);
  depth_directions.push_back(depth_direction);
  directions.push_back(depth_direction.normalized());
  near.push_back(near_depth);
  far.push_back(far_depth);
}

void RayBatch::append(const RayBatch& other) {
  origins.insert(origins.end(), other.origins.begin(), other.origins.end());
  directions.insert(directions.end(), other.directions.begin(), other.directions.end());
  depth_directions.insert(depth_directions.end(), other.depth_directions.begin(),
                          other.depth_directions.end());
  near.insert(near.end(), other.near.begin(), other.near.end());
  far.insert(far.end(), other.far.begin(), other.far.end());
}

RayBatch generate_rays(std::span<const Vec2> pixels, const Pose& pose, const Intrinsics& k,
                       double near, double far) {
  RayBatch rays;
  rays.reserve(pixels.size());
  for (const Vec2& px : pixels) {
    rays.push_back(pose.translation, pose.rotation * k.back_project(px), near, far);
  }
  return rays;
}

double Box3::exit_distance(const Vec3& origin, const Vec3& direction) const {
  double t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double d = direction[a];
    if (d > 0.0) {
      t_exit = std::min(t_exit, (max[a] - origin[a]) / d);
    } else if (d < 0.0) {
      t_exit = std::min(t_exit, (min[a] - origin[a]) / d);
    }
  }
  return std::max(t_exit, 0.0);
}

}  // namespace ttslam
