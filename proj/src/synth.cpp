// SPDX-License-Identifier: Apache-2.0
#include "ttslam/synth.hpp"

#include "ttslam/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ttslam {

namespace {

using json = nlohmann::json;

constexpr double kHitEps = 1e-9;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double lattice_value(std::uint64_t seed, std::int64_t i, std::int64_t j, std::int64_t k) {
  std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(i));
  h = mix_seed(h, static_cast<std::uint64_t>(j));
  h = mix_seed(h, static_cast<std::uint64_t>(k));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, const Vec3& p) {
  const Vec3 f = p.array().floor();
  const Vec3 r = p - f;
  const auto i = static_cast<std::int64_t>(f.x());
  const auto j = static_cast<std::int64_t>(f.y());
  const auto k = static_cast<std::int64_t>(f.z());
  const double u = smoothstep(r.x()), v = smoothstep(r.y()), w = smoothstep(r.z());
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double wt = (dx ? u : 1 - u) * (dy ? v : 1 - v) * (dz ? w : 1 - w);
    acc += wt * lattice_value(seed, i + dx, j + dy, k + dz);
  }
  return acc;
}

double square_wave(double u, double softness) {
  const double s = std::sin(std::numbers::pi * u);
  if (softness <= 0.0) return s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0);
  return std::clamp(s / softness, -1.0, 1.0);
}

std::optional<double> intersect_box_outside(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi,
                                            int* axis_out) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a];
    double tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= kHitEps) return std::nullopt;
  *axis_out = axis;
  return t0;
}

Vec3 to_vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json from_vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
void read_opt_vec(const json& j, const char* key, Vec3& out) {
  if (j.contains(key)) out = to_vec3(j.at(key));
}

const char* texture_kind_name(TextureKind k) {
  switch (k) {
    case TextureKind::checker: return "checker";
    case TextureKind::stripes: return "stripes";
    case TextureKind::noise: return "noise";
  }
  return "noise";
}

TextureKind texture_kind(const std::string& s) {
  if (s == "checker") return TextureKind::checker;
  if (s == "stripes") return TextureKind::stripes;
  if (s == "noise") return TextureKind::noise;
  throw std::invalid_argument("unknown texture kind '" + s + "'");
}

const char* trajectory_kind_name(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::orbit: return "orbit";
    case TrajectoryKind::arc: return "arc";
    case TrajectoryKind::lissajous: return "lissajous";
  }
  return "arc";
}

TrajectoryKind trajectory_kind(const std::string& s) {
  if (s == "orbit") return TrajectoryKind::orbit;
  if (s == "arc") return TrajectoryKind::arc;
  if (s == "lissajous") return TrajectoryKind::lissajous;
  throw std::invalid_argument("unknown trajectory kind '" + s + "'");
}

}  // namespace

Vec3 Texture::color(const Vec3& p) const {
  double t = 0.5;
  switch (kind) {
    case TextureKind::checker: {
      const Vec3 u = p / scale + Vec3::Constant(0.2537);
      t = 0.5 + 0.5 * square_wave(u.x(), softness) * square_wave(u.y(), softness) * square_wave(u.z(), softness);
      break;
    }
    case TextureKind::stripes:
      t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * axis.normalized().dot(p) / scale);
      break;
    case TextureKind::noise:
      t = 0.65 * value_noise(seed, p / scale) + 0.35 * value_noise(seed ^ 0x5bd1e995ULL, 2.0 * p / scale);
      break;
  }
  return color_a + t * (color_b - color_a);
}

void SceneSpec::validate() const {
  if (!(room.max.array() > room.min.array()).all()) throw std::invalid_argument("scene: empty room");
  const int n = static_cast<int>(textures.size());
  auto check_tex = [n](int t) {
    if (t < 0 || t >= n) throw std::invalid_argument("scene: texture index out of range");
  };
  check_tex(wall_texture);
  check_tex(floor_texture);
  check_tex(ceiling_texture);
  for (const Texture& t : textures) {
    if (!(t.scale > 0.0)) throw std::invalid_argument("scene: texture scale must be positive");
  }
  for (const Primitive& p : primitives) {
    check_tex(p.texture);
    const Vec3 half = p.kind == PrimitiveKind::sphere ? Vec3::Constant(p.half_size.x()) : p.half_size;
    if (!(half.array() > 0.0).all()) throw std::invalid_argument("scene: primitive sizes must be positive");
    if (!room.contains(p.center - half) || !room.contains(p.center + half)) {
      throw std::invalid_argument("scene: primitive leaves the room");
    }
  }
  if (!(light_direction.norm() > 0.0)) throw std::invalid_argument("scene: zero light direction");
}

Intrinsics CameraSpec::intrinsics() const {
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = k.fy = 0.5 * width / std::tan(0.5 * fov_degrees * std::numbers::pi / 180.0);
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  k.validate();
  return k;
}

GenerateSpec default_generate_spec() {
  GenerateSpec s;
  SceneSpec& sc = s.scene;
  auto tex = [](TextureKind kind, double scale, Vec3 a, Vec3 b, std::uint64_t seed) {
    Texture t;
    t.kind = kind;
    t.scale = scale;
    t.color_a = a;
    t.color_b = b;
    t.seed = seed;
    return t;
  };
  sc.textures.push_back(tex(TextureKind::noise, 0.45, {0.25, 0.35, 0.55}, {0.85, 0.8, 0.6}, 11));   // walls
  sc.textures.push_back(tex(TextureKind::noise, 0.35, {0.35, 0.25, 0.15}, {0.8, 0.65, 0.45}, 12));  // floor
  sc.textures.push_back(tex(TextureKind::noise, 0.6, {0.6, 0.6, 0.6}, {0.9, 0.9, 0.85}, 13));      // ceiling
  Texture stripes = tex(TextureKind::stripes, 0.3, {0.7, 0.2, 0.2}, {0.95, 0.85, 0.3}, 14);
  stripes.axis = Vec3(1.0, 0.6, 0.3);
  sc.textures.push_back(stripes);
  Texture checker = tex(TextureKind::checker, 0.25, {0.15, 0.45, 0.25}, {0.8, 0.9, 0.7}, 15);
  checker.softness = 0.5;
  sc.textures.push_back(checker);
  sc.textures.push_back(tex(TextureKind::noise, 0.2, {0.1, 0.2, 0.6}, {0.6, 0.85, 0.95}, 16));
  sc.wall_texture = 0;
  sc.floor_texture = 1;
  sc.ceiling_texture = 2;
  sc.primitives.push_back({PrimitiveKind::box, Vec3(0.0, 0.0, 0.35), Vec3(0.5, 0.35, 0.35), 3});
  sc.primitives.push_back({PrimitiveKind::sphere, Vec3(0.15, 0.05, 0.95), Vec3(0.25, 0.25, 0.25), 5});
  sc.primitives.push_back({PrimitiveKind::box, Vec3(-0.28, -0.12, 0.85), Vec3(0.12, 0.12, 0.15), 4});
  sc.primitives.push_back({PrimitiveKind::box, Vec3(1.4, -1.3, 0.4), Vec3(0.3, 0.3, 0.4), 4});
  sc.primitives.push_back({PrimitiveKind::sphere, Vec3(-1.2, 1.3, 0.5), Vec3(0.4, 0.4, 0.4), 3});
  return s;
}

GenerateSpec parse_generate_spec(const std::string& json_text) {
  GenerateSpec s = default_generate_spec();
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed scene spec: ") + e.what());
  }
  try {
    if (j.contains("scene")) {
      const json& js = j.at("scene");
      SceneSpec& sc = s.scene;
      if (js.contains("room")) {
        sc.room.min = to_vec3(js.at("room").at("min"));
        sc.room.max = to_vec3(js.at("room").at("max"));
      }
      if (js.contains("textures")) {
        sc.textures.clear();
        for (const json& jt : js.at("textures")) {
          Texture t;
          t.kind = texture_kind(jt.at("kind").get<std::string>());
          read_opt(jt, "scale", t.scale);
          read_opt_vec(jt, "color_a", t.color_a);
          read_opt_vec(jt, "color_b", t.color_b);
          read_opt(jt, "softness", t.softness);
          read_opt_vec(jt, "axis", t.axis);
          read_opt(jt, "seed", t.seed);
          sc.textures.push_back(t);
        }
      }
      read_opt(js, "wall_texture", sc.wall_texture);
      read_opt(js, "floor_texture", sc.floor_texture);
      read_opt(js, "ceiling_texture", sc.ceiling_texture);
      if (js.contains("primitives")) {
        sc.primitives.clear();
        for (const json& jp : js.at("primitives")) {
          Primitive p;
          const std::string kind = jp.at("kind").get<std::string>();
          if (kind == "box") {
            p.kind = PrimitiveKind::box;
            p.half_size = to_vec3(jp.at("half_size"));
          } else if (kind == "sphere") {
            p.kind = PrimitiveKind::sphere;
            p.half_size = Vec3::Constant(jp.at("radius").get<double>());
          } else {
            throw std::invalid_argument("unknown primitive kind '" + kind + "'");
          }
          p.center = to_vec3(jp.at("center"));
          read_opt(jp, "texture", p.texture);
          sc.primitives.push_back(p);
        }
      }
      read_opt_vec(js, "light_direction", sc.light_direction);
      read_opt(js, "ambient", sc.ambient);
      read_opt(js, "diffuse", sc.diffuse);
    }
    if (j.contains("trajectory")) {
      const json& jt = j.at("trajectory");
      TrajectorySpec& t = s.trajectory;
      if (jt.contains("kind")) t.kind = trajectory_kind(jt.at("kind").get<std::string>());
      read_opt_vec(jt, "center", t.center);
      read_opt(jt, "radius", t.radius);
      read_opt(jt, "height", t.height);
      read_opt(jt, "frame_count", t.frame_count);
      read_opt_vec(jt, "look_at", t.look_at);
      read_opt(jt, "start_degrees", t.start_degrees);
      read_opt(jt, "arc_degrees", t.arc_degrees);
      read_opt(jt, "height_amplitude", t.height_amplitude);
      read_opt(jt, "speed_modulation", t.speed_modulation);
      read_opt(jt, "max_step_m", t.max_step_m);
      read_opt(jt, "max_step_deg", t.max_step_deg);
    }
    if (j.contains("camera")) {
      const json& jc = j.at("camera");
      read_opt(jc, "width", s.camera.width);
      read_opt(jc, "height", s.camera.height);
      read_opt(jc, "fov_degrees", s.camera.fov_degrees);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed scene spec: ") + e.what());
  }
  s.scene.validate();
  return s;
}

GenerateSpec load_generate_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open scene spec " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_generate_spec(ss.str());
}

std::string generate_spec_to_json(const GenerateSpec& s) {
  json j;
  json& js = j["scene"];
  js["room"] = {{"min", from_vec3(s.scene.room.min)}, {"max", from_vec3(s.scene.room.max)}};
  js["textures"] = json::array();
  for (const Texture& t : s.scene.textures) {
    js["textures"].push_back({{"kind", texture_kind_name(t.kind)},
                              {"scale", t.scale},
                              {"color_a", from_vec3(t.color_a)},
                              {"color_b", from_vec3(t.color_b)},
                              {"softness", t.softness},
                              {"axis", from_vec3(t.axis)},
                              {"seed", t.seed}});
  }
  js["wall_texture"] = s.scene.wall_texture;
  js["floor_texture"] = s.scene.floor_texture;
  js["ceiling_texture"] = s.scene.ceiling_texture;
  js["primitives"] = json::array();
  for (const Primitive& p : s.scene.primitives) {
    json jp = {{"center", from_vec3(p.center)}, {"texture", p.texture}};
    if (p.kind == PrimitiveKind::box) {
      jp["kind"] = "box";
      jp["half_size"] = from_vec3(p.half_size);
    } else {
      jp["kind"] = "sphere";
      jp["radius"] = p.half_size.x();
    }
    js["primitives"].push_back(jp);
  }
  js["light_direction"] = from_vec3(s.scene.light_direction);
  js["ambient"] = s.scene.ambient;
  js["diffuse"] = s.scene.diffuse;
  const TrajectorySpec& t = s.trajectory;
  j["trajectory"] = {{"kind", trajectory_kind_name(t.kind)},
                     {"center", from_vec3(t.center)},
                     {"radius", t.radius},
                     {"height", t.height},
                     {"frame_count", t.frame_count},
                     {"look_at", from_vec3(t.look_at)},
                     {"start_degrees", t.start_degrees},
                     {"arc_degrees", t.arc_degrees},
                     {"height_amplitude", t.height_amplitude},
                     {"speed_modulation", t.speed_modulation},
                     {"max_step_m", t.max_step_m},
                     {"max_step_deg", t.max_step_deg}};
  j["camera"] = {{"width", s.camera.width}, {"height", s.camera.height}, {"fov_degrees", s.camera.fov_degrees}};
  return j.dump(2);
}

std::optional<double> intersect_sphere(const Vec3& origin, const Vec3& direction, const Vec3& center,
                                       double radius) {
  const Vec3 oc = origin - center;
  const double a = direction.squaredNorm();
  const double b = oc.dot(direction);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  // Numerically stable roots.
  const double q = b >= 0.0 ? -(b + sq) : -(b - sq);
  double t0 = q / a;
  double t1 = q != 0.0 ? c / q : t0;
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > kHitEps) return t0;
  if (t1 > kHitEps) return t1;
  return std::nullopt;
}

std::optional<Hit> raycast(const SceneSpec& scene, const Vec3& origin, const Vec3& direction) {
  Hit best;
  best.t = std::numeric_limits<double>::infinity();
  // Room shell, seen from inside.
  for (int a = 0; a < 3; ++a) {
    if (std::abs(direction[a]) < 1e-300) continue;
    const bool positive = direction[a] > 0.0;
    const double plane = positive ? scene.room.max[a] : scene.room.min[a];
    const double t = (plane - origin[a]) / direction[a];
    if (t > kHitEps && t < best.t) {
      best.t = t;
      best.normal = Vec3::Zero();
      best.normal[a] = positive ? -1.0 : 1.0;
      best.texture = a == 2 ? (positive ? scene.ceiling_texture : scene.floor_texture) : scene.wall_texture;
    }
  }
  for (const Primitive& p : scene.primitives) {
    if (p.kind == PrimitiveKind::sphere) {
      const auto t = intersect_sphere(origin, direction, p.center, p.half_size.x());
      if (t && *t < best.t) {
        best.t = *t;
        best.normal = (origin + *t * direction - p.center).normalized();
        best.texture = p.texture;
      }
    } else {
      int axis = 0;
      const auto t = intersect_box_outside(origin, direction, p.center - p.half_size, p.center + p.half_size, &axis);
      if (t && *t < best.t) {
        best.t = *t;
        best.normal = Vec3::Zero();
        best.normal[axis] = direction[axis] > 0.0 ? -1.0 : 1.0;
        best.texture = p.texture;
      }
    }
  }
  if (!std::isfinite(best.t)) return std::nullopt;
  best.point = origin + best.t * direction;
  return best;
}

Vec3 shade(const SceneSpec& scene, const Hit& hit) {
  const Vec3 albedo = scene.textures[static_cast<std::size_t>(hit.texture)].color(hit.point);
  const double lambert = std::max(0.0, hit.normal.dot(-scene.light_direction.normalized()));
  return (albedo * (scene.ambient + scene.diffuse * lambert)).cwiseMax(0.0).cwiseMin(1.0);
}

RenderedFrame raytrace_frame(const SceneSpec& scene, const Pose& pose, const Intrinsics& k) {
  RenderedFrame f;
  f.image = Image(k.width, k.height);
  f.depth.width = k.width;
  f.depth.height = k.height;
  f.depth.data.assign(static_cast<std::size_t>(k.width) * k.height, 0.0f);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      // Camera-frame z of origin + t * d equals t because d has unit camera z.
      const Vec3 d = pose.rotation * k.back_project(Vec2(x, y));
      const auto hit = raycast(scene, pose.translation, d);
      if (!hit) throw std::logic_error("ray escaped the room; is the camera inside it?");
      f.image.set(x, y, shade(scene, *hit));
      f.depth.data[static_cast<std::size_t>(y) * k.width + x] = static_cast<float>(hit->t);
    }
  }
  return f;
}

Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 fwd = (target - eye).normalized();
  const Vec3 up(0.0, 0.0, 1.0);
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right);
  Pose p;
  p.rotation.col(0) = right;
  p.rotation.col(1) = down;
  p.rotation.col(2) = fwd;
  p.translation = eye;
  return p;
}

std::vector<Pose> trajectory_poses(const TrajectorySpec& spec) {
  if (spec.frame_count < 2) throw std::invalid_argument("trajectory needs at least two frames");
  const double deg = std::numbers::pi / 180.0;
  std::vector<Pose> poses;
  for (int i = 0; i < spec.frame_count; ++i) {
    const double u = static_cast<double>(i) / (spec.frame_count - 1);
    // Non-uniform progress: velocity varies so that constant-velocity
    // prediction is never exact.
    const double s = u + spec.speed_modulation / (2.0 * std::numbers::pi) * std::sin(2.0 * std::numbers::pi * u);
    Vec3 eye;
    const double z = spec.center.z() + spec.height + spec.height_amplitude * std::sin(3.0 * std::numbers::pi * u);
    switch (spec.kind) {
      case TrajectoryKind::orbit:
      case TrajectoryKind::arc: {
        const double sweep = spec.kind == TrajectoryKind::orbit ? 360.0 : spec.arc_degrees;
        const double theta = (spec.start_degrees + sweep * s) * deg;
        eye = Vec3(spec.center.x() + spec.radius * std::cos(theta), spec.center.y() + spec.radius * std::sin(theta), z);
        break;
      }
      case TrajectoryKind::lissajous: {
        const double phase = 2.0 * std::numbers::pi * s;
        eye = Vec3(spec.center.x() + spec.radius * std::sin(phase),
                   spec.center.y() + 0.5 * spec.radius * std::sin(2.0 * phase), z);
        break;
      }
    }
    poses.push_back(look_at(eye, spec.look_at));
  }
  for (std::size_t i = 1; i < poses.size(); ++i) {
    const Pose rel = poses[i - 1].inverse() * poses[i];
    const double step = rel.translation.norm();
    const double angle = so3_log(rel.rotation).norm() / deg;
    if (step > spec.max_step_m + 1e-12 || angle > spec.max_step_deg + 1e-12) {
      throw std::invalid_argument("trajectory step " + std::to_string(i) + " moves " + std::to_string(step) +
                                  " m / " + std::to_string(angle) + " deg, above the configured limit");
    }
  }
  return poses;
}

Dataset generate_dataset(const GenerateSpec& spec) {
  spec.scene.validate();
  Dataset d;
  d.intrinsics = spec.camera.intrinsics();
  d.gt_poses = trajectory_poses(spec.trajectory);
  for (const Pose& pose : d.gt_poses) {
    if (!spec.scene.room.contains(pose.translation)) throw std::invalid_argument("camera leaves the room");
    RenderedFrame f = raytrace_frame(spec.scene, pose, d.intrinsics);
    d.images.push_back(std::move(f.image));
    d.depths.push_back(std::move(f.depth));
  }
  d.bounds = Box3{spec.scene.room.min.array() - kBoundsMargin, spec.scene.room.max.array() + kBoundsMargin};
  return d;
}

Dataset generate_sequence(const GenerateSpec& spec, const std::filesystem::path& out_dir) {
  Dataset d = generate_dataset(spec);
  save_dataset(out_dir, d);
  std::ofstream(out_dir / "scene.json") << generate_spec_to_json(spec) << "\n";
  return d;
}

WarpConsistency warp_consistency(const Dataset& dataset, int i, int j, double color_tolerance, int stride,
                                 double depth_tolerance) {
  if (!dataset.has_depth() || !dataset.has_gt_poses()) throw std::invalid_argument("warp check needs GT");
  const Intrinsics& k = dataset.intrinsics;
  const auto& src_img = dataset.images[static_cast<std::size_t>(i)];
  const auto& dst_img = dataset.images[static_cast<std::size_t>(j)];
  const auto& src_depth = dataset.depths[static_cast<std::size_t>(i)];
  const auto& dst_depth = dataset.depths[static_cast<std::size_t>(j)];
  const Pose& src_pose = dataset.gt_poses[static_cast<std::size_t>(i)];
  const Pose& dst_pose = dataset.gt_poses[static_cast<std::size_t>(j)];
  WarpConsistency out;
  for (int y = 0; y < k.height; y += stride) {
    for (int x = 0; x < k.width; x += stride) {
      const Vec3 p = unproject(Vec2(x, y), src_depth.at(x, y), src_pose, k);
      const Projection pr = project(p, dst_pose, k);
      if (!pr.valid || !k.contains(pr.pixel)) continue;
      const int x0 = std::min(static_cast<int>(pr.pixel.x()), k.width - 2);
      const int y0 = std::min(static_cast<int>(pr.pixel.y()), k.height - 2);
      // Co-visibility: every bilinear neighbor must see the same surface.
      bool covisible = true;
      for (int c = 0; c < 4 && covisible; ++c) {
        const double dz = dst_depth.at(x0 + (c & 1), y0 + (c >> 1));
        covisible = std::abs(dz - pr.depth) < depth_tolerance + 0.05 * pr.depth;
      }
      if (!covisible) continue;
      const auto s = sample_bilinear(dst_img, pr.pixel);
      ++out.checked;
      if ((s->color - src_img.at(x, y)).cwiseAbs().maxCoeff() <= color_tolerance) ++out.consistent;
    }
  }
  return out;
}

}  // namespace ttslam
