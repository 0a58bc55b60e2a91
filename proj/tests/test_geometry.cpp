#include "ttslam/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace ttslam {
namespace {

Intrinsics test_camera() {
  Intrinsics k;
  k.fx = 100.0;
  k.fy = 110.0;
  k.cx = 63.5;
  k.cy = 47.5;
  k.width = 128;
  k.height = 96;
  return k;
}

Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 axis(n(rng), n(rng), n(rng));
  std::uniform_real_distribution<double> angle(0.0, 3.0);
  return {so3_exp(axis.normalized() * angle(rng)), Vec3(n(rng), n(rng), n(rng))};
}

TEST(Geometry, UnprojectPrincipalRay) {
  const Intrinsics k = test_camera();
  const Vec3 x = unproject({k.cx, k.cy}, 3.5, Pose::identity(), k);
  EXPECT_NEAR((x - Vec3(0, 0, 3.5)).norm(), 0.0, 1e-15);
}

TEST(Geometry, UnprojectHandEvaluated) {
  // One focal length to the right of the principal point at depth 2.
  const Intrinsics k = test_camera();
  const Vec3 x = unproject({k.cx + k.fx, k.cy}, 2.0, Pose::identity(), k);
  EXPECT_NEAR((x - Vec3(2, 0, 2)).norm(), 0.0, 1e-12);
}

TEST(Geometry, UnprojectRejectsNonPositiveDepth) {
  const Intrinsics k = test_camera();
  EXPECT_THROW((void)unproject({10, 10}, 0.0, Pose::identity(), k), std::domain_error);
  EXPECT_THROW((void)unproject({10, 10}, -1.0, Pose::identity(), k), std::domain_error);
}

TEST(Geometry, ProjectBasics) {
  const Intrinsics k = test_camera();
  const Projection p = project({0, 0, 1}, Pose::identity(), k);
  ASSERT_TRUE(p.valid);
  EXPECT_DOUBLE_EQ(p.pixel.x(), k.cx);
  EXPECT_DOUBLE_EQ(p.pixel.y(), k.cy);
  EXPECT_DOUBLE_EQ(p.depth, 1.0);
  EXPECT_FALSE(project({0, 0, -1}, Pose::identity(), k).valid);
  EXPECT_FALSE(project({0.1, 0, 0}, Pose::identity(), k).valid);
}

TEST(Geometry, ProjectUnprojectRoundTrip) {
  const Intrinsics k = test_camera();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(0.0, k.width - 1), uy(0.0, k.height - 1), ud(0.2, 8.0);
  for (int i = 0; i < 2000; ++i) {
    const Pose pose = random_pose(rng);
    const Vec2 px(ux(rng), uy(rng));
    const double d = ud(rng);
    const Projection p = project(unproject(px, d, pose, k), pose, k);
    ASSERT_TRUE(p.valid);
    EXPECT_LT((p.pixel - px).norm() / px.norm(), 1e-9);
    EXPECT_LT(std::abs(p.depth - d) / d, 1e-9);
  }
}

TEST(Geometry, PoseInverseComposesToIdentity) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Pose p = random_pose(rng);
    const Pose e = compose(inverse(p), p);
    EXPECT_LT((e.rotation - Mat3::Identity()).norm(), 1e-9);
    EXPECT_LT(e.translation.norm(), 1e-9);
    EXPECT_LT((p.rotation.transpose() * p.rotation - Mat3::Identity()).norm(), 1e-9);
    EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-9);
  }
}

TEST(Geometry, RodriguesQuarterTurn) {
  const Pose p = apply_delta(Pose::identity(), {Vec3(0, 0, std::numbers::pi / 2), Vec3::Zero()});
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((p.rotation - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Geometry, ZeroDeltaIsExact) {
  std::mt19937_64 rng(9);
  const Pose p = random_pose(rng);
  const Pose q = apply_delta(p, PoseDelta::zero());
  EXPECT_TRUE(q.rotation == p.rotation);
  EXPECT_TRUE(q.translation == p.translation);
}

TEST(Geometry, SmallDeltasComposeToFirstOrder) {
  std::mt19937_64 rng(11);
  const Pose p = random_pose(rng);
  for (double s : {1e-2, 1e-3}) {
    const PoseDelta a{Vec3(0.3, -0.2, 0.5) * s, Vec3(1, 2, -1) * s};
    const PoseDelta b{Vec3(-0.1, 0.4, 0.2) * s, Vec3(-2, 0.5, 1) * s};
    const Pose two = apply_delta(apply_delta(p, a), b);
    const Pose sum = apply_delta(p, {a.omega + b.omega, a.nu + b.nu});
    // Second order in the step size.
    EXPECT_LT((two.rotation - sum.rotation).norm(), 0.2 * s * s);
    EXPECT_LT((two.translation - sum.translation).norm(), 1e-12);
  }
}

TEST(Geometry, RepeatedDeltasStayOrthonormal) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 0.05);
  Pose p;
  for (int i = 0; i < 10000; ++i) p = apply_delta(p, {Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))});
  EXPECT_LT((p.rotation.transpose() * p.rotation - Mat3::Identity()).norm(), 1e-9);
  EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-9);
}

TEST(Geometry, SoLogInvertsExp) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Vec3 w(n(rng), n(rng), n(rng));
    w = w.normalized() * std::fmod(w.norm(), 3.0);
    EXPECT_LT((so3_log(so3_exp(w)) - w).norm(), 1e-9);
  }
}

TEST(Geometry, ConstantVelocity) {
  const Pose id = Pose::identity();
  const Pose a = constant_velocity_predict(id, id);
  EXPECT_LT((a.rotation - Mat3::Identity()).norm(), 1e-15);
  EXPECT_LT(a.translation.norm(), 1e-15);

  const Pose b = constant_velocity_predict(id, Pose::from_translation({1, 0, 0}));
  EXPECT_LT((b.translation - Vec3(2, 0, 0)).norm(), 1e-15);

  const double deg = std::numbers::pi / 180.0;
  const Pose r10{so3_exp(Vec3(0, 10 * deg, 0)), Vec3::Zero()};
  const Pose r20{so3_exp(Vec3(0, 20 * deg, 0)), Vec3::Zero()};
  const Pose c = constant_velocity_predict(id, r10);
  EXPECT_LT((c.rotation - r20.rotation).norm(), 1e-12);
}

TEST(Geometry, ConstantVelocityLeftEquivariance) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 50; ++i) {
    const Pose g = random_pose(rng), a = random_pose(rng), b = random_pose(rng);
    const Pose lhs = constant_velocity_predict(g * a, g * b);
    const Pose rhs = g * constant_velocity_predict(a, b);
    EXPECT_LT((lhs.rotation - rhs.rotation).norm(), 1e-9);
    EXPECT_LT((lhs.translation - rhs.translation).norm(), 1e-9);
  }
}

TEST(Geometry, GenerateRays) {
  const Intrinsics k = test_camera();
  std::mt19937_64 rng(23);
  const Pose pose = random_pose(rng);
  const std::vector<Vec2> px{{k.cx, k.cy}, {0, 0}, {k.width - 1.0, k.height - 1.0}, {12.25, 80.5}};
  const RayBatch centered = generate_rays(std::span(px).first(1), Pose::identity(), k, 0.1, 5.0);
  EXPECT_LT((centered.directions[0] - Vec3(0, 0, 1)).norm(), 1e-15);

  const RayBatch rays = generate_rays(px, pose, k, 0.1, 5.0);
  ASSERT_EQ(rays.size(), px.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    EXPECT_NEAR(rays.directions[i].norm(), 1.0, 1e-12);
    EXPECT_EQ(rays.origins[i], pose.translation);
    const Vec3 expected = pose.rotation * k.back_project(px[i]).normalized();
    EXPECT_LT((rays.directions[i] - expected).norm(), 1e-12);
    // A point at depth D along the depth direction has camera z = D.
    const Vec3 x = rays.origins[i] + rays.depth_directions[i] * 2.5;
    EXPECT_NEAR(pose.to_camera(x).z(), 2.5, 1e-12);
  }
}

TEST(Geometry, IntrinsicsValidation) {
  Intrinsics k = test_camera();
  EXPECT_NO_THROW(k.validate());
  k.fx = 0.0;
  EXPECT_THROW(k.validate(), std::invalid_argument);
  k = test_camera();
  k.cx = k.width;
  EXPECT_THROW(k.validate(), std::invalid_argument);
}

TEST(Geometry, BoxExitDistance) {
  const Box3 box{Vec3(-1, -1, -1), Vec3(1, 2, 3)};
  EXPECT_NEAR(box.exit_distance(Vec3::Zero(), Vec3(0, 0, 1)), 3.0, 1e-15);
  EXPECT_NEAR(box.exit_distance(Vec3::Zero(), Vec3(-1, 0, 0)), 1.0, 1e-15);
  EXPECT_NEAR(box.diagonal(), std::sqrt(4.0 + 9.0 + 16.0), 1e-15);
}

}  // namespace
}  // namespace ttslam
