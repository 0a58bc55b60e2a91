#include "test_util.hpp"
#include "ttslam/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace ttslam {
namespace {

SceneSpec empty_room() {
  SceneSpec s;
  s.textures.push_back(Texture{});
  return s;
}

GenerateSpec tiny_spec() {
  GenerateSpec g = default_generate_spec();
  g.camera.width = 48;
  g.camera.height = 40;
  g.trajectory.frame_count = 6;
  g.trajectory.arc_degrees = 8.0;
  g.trajectory.height_amplitude = 0.0;
  return g;
}

TEST(IntersectSphere, MatchesQuadraticFormula) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  int hits = 0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 o(u(rng), u(rng), u(rng)), c(u(rng), u(rng), u(rng));
    const Vec3 d = Vec3(u(rng), u(rng), u(rng)).normalized();
    const double r = 0.2 + 0.5 * std::abs(u(rng));
    // |o + t d - c|^2 = r^2 with |d| = 1
    const Vec3 oc = o - c;
    const double b = oc.dot(d), cc = oc.squaredNorm() - r * r, disc = b * b - cc;
    std::optional<double> want;
    if (disc >= 0) {
      const double t0 = -b - std::sqrt(disc), t1 = -b + std::sqrt(disc);
      if (t0 > 1e-9) want = t0;
      else if (t1 > 1e-9) want = t1;
    }
    const auto got = intersect_sphere(o, d, c, r);
    ASSERT_EQ(got.has_value(), want.has_value()) << i;
    if (got) {
      EXPECT_NEAR(*got, *want, 1e-9);
      ++hits;
    }
  }
  EXPECT_GT(hits, 100);
}

TEST(Raycast, HitsWallAtKnownDistance) {
  const SceneSpec s = empty_room();
  const auto hit = raycast(s, Vec3(0, 0, 1.5), Vec3(1, 0, 0));
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->t, 2.0, 1e-12);
  EXPECT_NEAR(hit->normal.dot(Vec3(-1, 0, 0)), 1.0, 1e-12);
}

TEST(Raycast, PrimitiveOccludesWall) {
  SceneSpec s = empty_room();
  s.primitives.push_back({PrimitiveKind::sphere, Vec3(1.0, 0, 1.5), Vec3(0.25, 0, 0), 0});
  s.primitives.push_back({PrimitiveKind::box, Vec3(0, 1.0, 1.5), Vec3(0.1, 0.2, 0.3), 0});
  EXPECT_NEAR(raycast(s, Vec3(0, 0, 1.5), Vec3(1, 0, 0))->t, 0.75, 1e-12);
  EXPECT_NEAR(raycast(s, Vec3(0, 0, 1.5), Vec3(0, 1, 0))->t, 0.8, 1e-12);
}

TEST(RaytraceFrame, CenterPixelDepth) {
  const SceneSpec s = empty_room();
  const Intrinsics k = testing::small_camera(33, 33);
  const RenderedFrame f = raytrace_frame(s, look_at(Vec3(0, 0, 1.5), Vec3(1, 0, 1.5)), k);
  EXPECT_NEAR(f.depth.at(16, 16), 2.0, 1e-6);
  // Camera-frame z to a plane facing the camera is constant.
  for (int y = 10; y < 23; ++y)
    for (int x = 0; x < 33; ++x) EXPECT_NEAR(f.depth.at(x, y), 2.0, 1e-6);
}

TEST(RaytraceFrame, ColorsStayInUnitRange) {
  const GenerateSpec g = tiny_spec();
  const Dataset d = generate_dataset(g);
  for (const Image& img : d.images)
    for (double v : img.data) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
}

TEST(LookAt, AxesPointWhereExpected) {
  const Vec3 eye(0.3, -1.0, 1.2), target(0.1, 0.5, 0.7);
  const Pose p = look_at(eye, target);
  EXPECT_LT((p.rotation.transpose() * p.rotation - Mat3::Identity()).norm(), 1e-12);
  EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-12);
  const Vec3 c = p.to_camera(target);
  EXPECT_NEAR(c.x(), 0.0, 1e-12);
  EXPECT_NEAR(c.y(), 0.0, 1e-12);
  EXPECT_GT(c.z(), 0.0);
  EXPECT_NEAR(p.rotation.col(0).z(), 0.0, 1e-12);  // no roll
  EXPECT_GT(p.rotation.col(1).dot(Vec3(0, 0, -1)), 0.0);  // image y points down
}

TEST(Trajectory, RespectsStepLimits) {
  const TrajectorySpec spec = default_generate_spec().trajectory;
  const auto poses = trajectory_poses(spec);
  ASSERT_EQ(static_cast<int>(poses.size()), spec.frame_count);
  for (std::size_t i = 1; i < poses.size(); ++i) {
    EXPECT_LE((poses[i].translation - poses[i - 1].translation).norm(), spec.max_step_m);
    const double deg = so3_log(poses[i - 1].rotation.transpose() * poses[i].rotation).norm() * 180.0 / M_PI;
    EXPECT_LE(deg, spec.max_step_deg);
  }
}

TEST(Trajectory, FastMotionIsRejected) {
  TrajectorySpec spec = default_generate_spec().trajectory;
  spec.kind = TrajectoryKind::orbit;
  EXPECT_THROW((void)trajectory_poses(spec), std::invalid_argument);
  spec.frame_count = 1;
  EXPECT_THROW((void)trajectory_poses(spec), std::invalid_argument);
}

TEST(Generate, Deterministic) {
  const GenerateSpec g = tiny_spec();
  const Dataset a = generate_dataset(g), b = generate_dataset(g);
  ASSERT_EQ(a.frame_count(), b.frame_count());
  for (int i = 0; i < a.frame_count(); ++i) {
    EXPECT_EQ(a.images[static_cast<std::size_t>(i)].data, b.images[static_cast<std::size_t>(i)].data);
    EXPECT_EQ(a.depths[static_cast<std::size_t>(i)].data, b.depths[static_cast<std::size_t>(i)].data);
  }
  ASSERT_TRUE(a.bounds);
  EXPECT_NEAR((a.bounds->min - (g.scene.room.min - Vec3::Constant(kBoundsMargin))).norm(), 0.0, 1e-12);
}

TEST(Generate, NeighbouringFramesAreWarpConsistent) {
  // Full resolution; smaller images alias the textures.
  GenerateSpec g = tiny_spec();
  g.camera = default_generate_spec().camera;
  const Dataset d = generate_dataset(g);
  for (int i = 0; i + 1 < d.frame_count(); ++i) {
    const WarpConsistency w = warp_consistency(d, i, i + 1);
    EXPECT_GT(w.checked, 100u);
    EXPECT_GE(w.fraction(), 0.95) << "frames " << i << " and " << i + 1;
  }
}

TEST(Texture, CheckerHasTwoColorsAndSoftEdges) {
  Texture t;
  t.kind = TextureKind::checker;
  t.color_a = Vec3(0.1, 0.1, 0.1);
  t.color_b = Vec3(0.9, 0.9, 0.9);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 c = t.color(Vec3(u(rng), u(rng), u(rng)));
    EXPECT_TRUE((c - t.color_a).norm() < 1e-12 || (c - t.color_b).norm() < 1e-12);
  }
  // Soft edges give a continuous ramp: tiny moves give tiny changes.
  t.softness = 0.2;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    worst = std::max(worst, (t.color(p + Vec3(1e-5, 0, 0)) - t.color(p)).norm());
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Texture, NoiseStaysBetweenEndpointColors) {
  Texture t;
  t.color_a = Vec3(0.2, 0.3, 0.1);
  t.color_b = Vec3(0.7, 0.9, 0.5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 c = t.color(Vec3(u(rng), u(rng), u(rng)));
    for (int ch = 0; ch < 3; ++ch) {
      EXPECT_GE(c[ch], std::min(t.color_a[ch], t.color_b[ch]) - 1e-12);
      EXPECT_LE(c[ch], std::max(t.color_a[ch], t.color_b[ch]) + 1e-12);
    }
  }
}

TEST(SceneSpec, Validation) {
  SceneSpec s = default_generate_spec().scene;
  EXPECT_NO_THROW(s.validate());
  s.primitives.push_back({PrimitiveKind::sphere, Vec3(1.9, 0, 1), Vec3(0.3, 0, 0), 0});
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = default_generate_spec().scene;
  s.wall_texture = 99;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(GenerateSpec, JsonRoundTrip) {
  const GenerateSpec g = default_generate_spec();
  const GenerateSpec back = parse_generate_spec(generate_spec_to_json(g));
  EXPECT_EQ(generate_spec_to_json(back), generate_spec_to_json(g));
  EXPECT_EQ(back.scene.primitives.size(), g.scene.primitives.size());
  EXPECT_THROW((void)parse_generate_spec("{\"camera\": {\"width\": \"wide\"}}"), std::exception);
}

}  // namespace
}  // namespace ttslam
