// SPDX-License-Identifier: Apache-2.0
//
// Camera model, rigid-body poses and ray generation.
//
// Conventions used throughout the library:
//   * Poses are camera-to-world: X_world = R * X_cam + t.
//   * Column-vector math.
//   * Integer pixel coordinates address pixel centers; x is the column, y the row.
//   * "Depth" is the camera-frame z coordinate, never the distance along a ray.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace ttslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Camera-to-world rigid transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }

  [[nodiscard]] Pose inverse() const;
  [[nodiscard]] Pose operator*(const Pose& rhs) const;
  [[nodiscard]] Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  /// World point to camera frame.
  [[nodiscard]] Vec3 to_camera(const Vec3& world) const {
    return rotation.transpose() * (world - translation);
  }
};

[[nodiscard]] inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
[[nodiscard]] inline Pose inverse(const Pose& p) { return p.inverse(); }

/// Pinhole intrinsics. No distortion.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  [[nodiscard]] bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1 && px.y() <= height - 1;
  }
  /// K^-1 [x, 1]^T, the camera-frame direction with unit z.
  [[nodiscard]] Vec3 back_project(const Vec2& px) const {
    return {(px.x() - cx) / fx, (px.y() - cy) / fy, 1.0};
  }
};

/// Local perturbation: rotation is right-multiplied by exp([omega]x),
/// translation is offset by nu in world coordinates.
struct PoseDelta {
  Vec3 omega = Vec3::Zero();
  Vec3 nu = Vec3::Zero();

  static PoseDelta zero() { return {}; }
  static PoseDelta from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }
  [[nodiscard]] Vec6 as_vector() const {
    Vec6 v;
    v << omega, nu;
    return v;
  }
};

inline constexpr double kMinProjectionDepth = 1e-6;

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool valid = false;
};

[[nodiscard]] Mat3 skew(const Vec3& v);
/// Rodrigues formula.
[[nodiscard]] Mat3 so3_exp(const Vec3& omega);
/// Inverse of so3_exp for rotation angles in [0, pi).
[[nodiscard]] Vec3 so3_log(const Mat3& rotation);
/// Nearest rotation (SVD polar factor with det = +1).
[[nodiscard]] Mat3 orthonormalize(const Mat3& m);

/// X = R K^-1 [x, 1]^T depth + t. Throws std::domain_error for depth <= 0.
[[nodiscard]] Vec3 unproject(const Vec2& pixel, double depth, const Pose& pose, const Intrinsics& k);

/// Perspective projection. Points with camera z <= kMinProjectionDepth are
/// flagged invalid; bounds checking is left to the caller.
[[nodiscard]] Projection project(const Vec3& point, const Pose& pose, const Intrinsics& k);

[[nodiscard]] Pose apply_delta(const Pose& pose, const PoseDelta& delta);

/// Replays the relative motion prev2 -> prev1 once more.
[[nodiscard]] Pose constant_velocity_predict(const Pose& prev2, const Pose& prev1);

/// A batch of camera rays. Each ray carries both its unit direction and the
/// world-space direction scaled so that its camera-frame z component is one;
/// a sample at depth D lies at origin + depth_direction * D.
struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;
  std::vector<Vec3> depth_directions;
  std::vector<double> near;
  std::vector<double> far;

  [[nodiscard]] std::size_t size() const { return origins.size(); }
  void reserve(std::size_t n);
  void push_back(const Vec3& origin, const Vec3& depth_direction, double near_depth, double far_depth);
  void append(const RayBatch& other);
};

/// Rays through the given pixel centers. near/far are camera depths.
[[nodiscard]] RayBatch generate_rays(std::span<const Vec2> pixels, const Pose& pose,
                                     const Intrinsics& k, double near, double far);

/// Axis-aligned box.
struct Box3 {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  [[nodiscard]] Vec3 extent() const { return max - min; }
  [[nodiscard]] double diagonal() const { return extent().norm(); }
  [[nodiscard]] bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  /// Parameter t >= 0 at which a ray starting inside the box leaves it.
  [[nodiscard]] double exit_distance(const Vec3& origin, const Vec3& direction) const;
};

}  // namespace ttslam
