// SPDX-License-Identifier: Apache-2.0
//
// Procedural scenes with exact ground truth. A scene is a closed room with
// textured boxes and spheres inside, shaded Lambertian under one directional
// light plus ambient, so appearance does not depend on the viewing direction.
// Textures are solid (functions of the 3-D surface point).
#pragma once

#include "ttslam/dataset.hpp"
#include "ttslam/geometry.hpp"
#include "ttslam/image.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ttslam {

enum class TextureKind { checker, stripes, noise };

struct Texture {
  TextureKind kind = TextureKind::noise;
  double scale = 0.5;  // period or lattice spacing, meters
  Vec3 color_a{0.2, 0.2, 0.2};
  Vec3 color_b{0.8, 0.8, 0.8};
  /// Checker edge width as a fraction of the period; 0 gives hard edges.
  double softness = 0.0;
  /// Stripe direction (normalized on use).
  Vec3 axis{1.0, 0.0, 0.0};
  std::uint64_t seed = 1;

  [[nodiscard]] Vec3 color(const Vec3& p) const;
};

enum class PrimitiveKind { box, sphere };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::box;
  Vec3 center = Vec3::Zero();
  Vec3 half_size{0.1, 0.1, 0.1};  // spheres use x as the radius
  int texture = 0;
};

struct SceneSpec {
  Box3 room{Vec3(-2.0, -2.0, 0.0), Vec3(2.0, 2.0, 3.0)};
  std::vector<Texture> textures;
  int wall_texture = 0;
  int floor_texture = 0;
  int ceiling_texture = 0;
  std::vector<Primitive> primitives;
  Vec3 light_direction{-0.4, -0.3, -1.0};  // direction the light travels
  double ambient = 0.45;
  double diffuse = 0.55;

  /// Throws std::invalid_argument when a primitive leaves the room or a
  /// texture index is out of range.
  void validate() const;
};

enum class TrajectoryKind { orbit, arc, lissajous };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::arc;
  Vec3 center{0.0, 0.0, 0.0};
  double radius = 1.25;
  double height = 1.3;
  int frame_count = 60;
  Vec3 look_at{0.0, 0.0, 0.75};
  double start_degrees = -60.0;
  double arc_degrees = 100.0;   // ignored for full orbits
  double height_amplitude = 0.08;
  double speed_modulation = 0.2;   // relative speed variation along the path
  double max_step_m = 0.05;
  double max_step_deg = 3.0;
};

struct CameraSpec {
  int width = 128;
  int height = 128;
  double fov_degrees = 65.0;

  [[nodiscard]] Intrinsics intrinsics() const;
};

struct GenerateSpec {
  SceneSpec scene;
  TrajectorySpec trajectory;
  CameraSpec camera;
};

/// The desk-scale scene used by the tests and the acceptance suite.
[[nodiscard]] GenerateSpec default_generate_spec();
[[nodiscard]] GenerateSpec load_generate_spec(const std::filesystem::path& path);
[[nodiscard]] GenerateSpec parse_generate_spec(const std::string& json_text);
[[nodiscard]] std::string generate_spec_to_json(const GenerateSpec& spec);

struct Hit {
  double t = 0.0;  // along the given direction
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  int texture = 0;
};

/// Closest hit of origin + t * direction, t > 0. Origins must lie inside the room.
[[nodiscard]] std::optional<Hit> raycast(const SceneSpec& scene, const Vec3& origin, const Vec3& direction);
/// Ray/sphere intersection: smallest t > eps, if any.
[[nodiscard]] std::optional<double> intersect_sphere(const Vec3& origin, const Vec3& direction, const Vec3& center,
                                                     double radius);
[[nodiscard]] Vec3 shade(const SceneSpec& scene, const Hit& hit);

struct RenderedFrame {
  Image image;
  DepthMap depth;
};

[[nodiscard]] RenderedFrame raytrace_frame(const SceneSpec& scene, const Pose& pose, const Intrinsics& k);

/// Camera looking from `eye` at `target` with world z up.
[[nodiscard]] Pose look_at(const Vec3& eye, const Vec3& target);
/// Throws std::invalid_argument when consecutive poses violate the step limits.
[[nodiscard]] std::vector<Pose> trajectory_poses(const TrajectorySpec& spec);

/// Map bounds written with generated data: the room grown on every side so
/// that walls sit inside the grid rather than on its boundary.
inline constexpr double kBoundsMargin = 0.2;

/// Renders the sequence in memory.
[[nodiscard]] Dataset generate_dataset(const GenerateSpec& spec);
Dataset generate_sequence(const GenerateSpec& spec, const std::filesystem::path& out_dir);

struct WarpConsistency {
  std::size_t checked = 0;
  std::size_t consistent = 0;
  [[nodiscard]] double fraction() const {
    return checked == 0 ? 1.0 : static_cast<double>(consistent) / static_cast<double>(checked);
  }
};

/// Unprojects pixels of frame i with GT depth, reprojects them into frame j
/// and compares colors. Points occluded in j (depth mismatch above
/// `depth_tolerance`) are skipped.
[[nodiscard]] WarpConsistency warp_consistency(const Dataset& dataset, int i, int j, double color_tolerance = 0.02,
                                               int stride = 2, double depth_tolerance = 0.02);

}  // namespace ttslam
