// SPDX-License-Identifier: Apache-2.0
#include "ttslam/dataset.hpp"

#include <Eigen/Geometry>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ttslam {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace fs = std::filesystem;

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d.png", index);
  return buf;
}

std::string depth_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "depth_%06d.bin", index);
  return buf;
}

void write_intrinsics(const fs::path& path, const Intrinsics& k) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17) << k.fx << " " << k.fy << " " << k.cx << " " << k.cy << " " << k.width << " "
     << k.height << "\n";
}

Intrinsics read_intrinsics(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing intrinsics file " + path.string());
  Intrinsics k;
  if (!(is >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
    throw std::runtime_error("malformed intrinsics file " + path.string());
  }
  k.validate();
  return k;
}

void write_bounds(const fs::path& path, const Box3& box) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17) << box.min.x() << " " << box.min.y() << " " << box.min.z() << " " << box.max.x()
     << " " << box.max.y() << " " << box.max.z() << "\n";
}

Box3 read_bounds(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  Box3 b;
  if (!(is >> b.min.x() >> b.min.y() >> b.min.z() >> b.max.x() >> b.max.y() >> b.max.z()) ||
      !(b.max.array() > b.min.array()).all()) {
    throw std::runtime_error("malformed bounds file " + path.string());
  }
  return b;
}

void write_poses(const fs::path& path, const std::vector<Pose>& poses) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Eigen::Quaterniond q(poses[i].rotation);
    const Vec3& t = poses[i].translation;
    os << i << " " << t.x() << " " << t.y() << " " << t.z() << " " << q.x() << " " << q.y() << " " << q.z() << " "
       << q.w() << "\n";
  }
}

std::vector<Pose> read_poses(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open pose file " + path.string());
  std::vector<Pose> poses;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    long index = 0;
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> index >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw std::runtime_error("malformed pose line in " + path.string() + ": " + line);
    }
    if (index != static_cast<long>(poses.size())) {
      throw std::runtime_error("pose indices in " + path.string() + " must be contiguous from 0");
    }
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (!(q.norm() > 0.0)) throw std::runtime_error("zero quaternion in " + path.string());
    q.normalize();
    poses.push_back({q.toRotationMatrix(), Vec3(tx, ty, tz)});
  }
  return poses;
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory " + dir.string() + " does not exist");
  Dataset d;
  d.intrinsics = read_intrinsics(dir / "intrinsics.txt");
  for (int i = 0;; ++i) {
    const fs::path p = dir / frame_name(i);
    if (!fs::exists(p)) break;
    d.images.push_back(read_png(p));
    const Image& img = d.images.back();
    if (img.width != d.intrinsics.width || img.height != d.intrinsics.height) {
      throw std::runtime_error(p.string() + " does not match the intrinsics image size");
    }
  }
  if (d.images.empty()) throw std::runtime_error("no frames found in " + dir.string());
  if (fs::exists(dir / "poses_gt.txt")) {
    d.gt_poses = read_poses(dir / "poses_gt.txt");
    if (d.gt_poses.size() != d.images.size()) {
      throw std::runtime_error("poses_gt.txt has " + std::to_string(d.gt_poses.size()) + " poses for " +
                               std::to_string(d.images.size()) + " frames");
    }
  }
  if (fs::exists(dir / depth_name(0))) {
    for (int i = 0; i < d.frame_count(); ++i) {
      d.depths.push_back(read_depth(dir / depth_name(i), d.intrinsics.width, d.intrinsics.height));
    }
  }
  if (fs::exists(dir / "bounds.txt")) d.bounds = read_bounds(dir / "bounds.txt");
  return d;
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  write_intrinsics(dir / "intrinsics.txt", dataset.intrinsics);
  for (int i = 0; i < dataset.frame_count(); ++i) write_png(dir / frame_name(i), dataset.images[static_cast<std::size_t>(i)]);
  if (dataset.has_gt_poses()) write_poses(dir / "poses_gt.txt", dataset.gt_poses);
  for (std::size_t i = 0; i < dataset.depths.size(); ++i) write_depth(dir / depth_name(static_cast<int>(i)), dataset.depths[i]);
  if (dataset.bounds) write_bounds(dir / "bounds.txt", *dataset.bounds);
}

Box3 bounds_from_depth(const Dataset& dataset, double margin) {
  if (!dataset.has_depth() || !dataset.has_gt_poses()) {
    throw std::runtime_error("scene bounds need bounds.txt or GT depth with GT poses");
  }
  Box3 b;
  b.min = Vec3::Constant(std::numeric_limits<double>::infinity());
  b.max = -b.min;
  const Intrinsics& k = dataset.intrinsics;
  for (int i = 0; i < dataset.frame_count(); ++i) {
    const DepthMap& depth = dataset.depths[static_cast<std::size_t>(i)];
    const Pose& pose = dataset.gt_poses[static_cast<std::size_t>(i)];
    b.min = b.min.cwiseMin(pose.translation);
    b.max = b.max.cwiseMax(pose.translation);
    for (int y = 0; y < k.height; y += 4) {
      for (int x = 0; x < k.width; x += 4) {
        const double z = depth.at(x, y);
        if (!(z > 0.0) || !std::isfinite(z)) continue;
        const Vec3 p = unproject(Vec2(x, y), z, pose, k);
        b.min = b.min.cwiseMin(p);
        b.max = b.max.cwiseMax(p);
      }
    }
  }
  b.min.array() -= margin;
  b.max.array() += margin;
  return b;
}

namespace {

constexpr char kMagic[8] = {'T', 'T', 'S', 'L', 'A', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const fs::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint " + path.string() + " is truncated");
  return v;
}

void put_net(std::ostream& os, const DecoderNet& net) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(net.input_dim()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(net.output_dim()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(net.parameter_count()));
  put<double>(os, net.activation().tau);
  put<std::uint8_t>(os, net.frozen() ? 1 : 0);
  for (double p : net.parameters()) put<float>(os, static_cast<float>(p));
}

DecoderNet get_net(std::istream& is, const fs::path& path) {
  const auto in = get<std::uint32_t>(is, path);
  const auto out = get<std::uint32_t>(is, path);
  const auto count = get<std::uint32_t>(is, path);
  const auto tau = get<double>(is, path);
  const bool frozen = get<std::uint8_t>(is, path) != 0;
  if (in == 0 || in > 4096 || out == 0 || out > 4096 || !(tau > 0.0)) {
    throw std::runtime_error("checkpoint " + path.string() + " has an invalid decoder header");
  }
  DecoderNet net = DecoderNet::zeros(static_cast<int>(in), static_cast<int>(out), tau);
  if (count != net.parameter_count()) throw std::runtime_error("checkpoint decoder size mismatch");
  std::vector<double> values(count);
  for (auto& v : values) v = get<float>(is, path);
  net.restore(values, frozen);
  return net;
}

}  // namespace

void save_checkpoint(const fs::path& path, const FeatureGrids& grids, const Decoders& decoders) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(grids.levels().size()));
  for (int a = 0; a < 3; ++a) put<double>(os, grids.bounds().min[a]);
  for (int a = 0; a < 3; ++a) put<double>(os, grids.bounds().max[a]);
  for (const GridLevel& level : grids.levels()) {
    for (int d : level.dims) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    put<double>(os, level.voxel_size);
    for (int a = 0; a < 3; ++a) put<double>(os, level.origin[a]);
  }
  for (const GridLevel& level : grids.levels()) {
    for (double v : level.values) put<float>(os, static_cast<float>(v));
  }
  put_net(os, decoders.opacity);
  put_net(os, decoders.color);
  put<std::uint8_t>(os, decoders.o_init ? 1 : 0);
  put<double>(os, decoders.o_init ? decoders.o_init->value : 0.0);
  if (!os) throw std::runtime_error("failed to write " + path.string());
}

MapCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  if (get<std::uint32_t>(is, path) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto levels = get<std::uint32_t>(is, path);
  if (levels != static_cast<std::uint32_t>(kLevels)) throw std::runtime_error("checkpoint level count mismatch");
  Box3 bounds;
  for (int a = 0; a < 3; ++a) bounds.min[a] = get<double>(is, path);
  for (int a = 0; a < 3; ++a) bounds.max[a] = get<double>(is, path);
  std::vector<std::array<int, 3>> dims(levels);
  std::vector<double> sizes(levels);
  std::vector<Vec3> origins(levels);
  for (std::uint32_t l = 0; l < levels; ++l) {
    for (int a = 0; a < 3; ++a) dims[l][static_cast<std::size_t>(a)] = static_cast<int>(get<std::uint32_t>(is, path));
    sizes[l] = get<double>(is, path);
    for (int a = 0; a < 3; ++a) origins[l][a] = get<double>(is, path);
  }
  MapCheckpoint ck{FeatureGrids(bounds, sizes), {}};
  for (std::uint32_t l = 0; l < levels; ++l) {
    GridLevel& level = ck.grids.level(static_cast<int>(l));
    if (level.dims != dims[l] || level.origin != origins[l]) {
      throw std::runtime_error("checkpoint grid layout is inconsistent with its bounds");
    }
    for (double& v : level.values) v = get<float>(is, path);
  }
  ck.decoders.opacity = get_net(is, path);
  ck.decoders.color = get_net(is, path);
  const bool has_oinit = get<std::uint8_t>(is, path) != 0;
  get<double>(is, path);
  if (has_oinit) {
    // Parameters were stored in single precision; re-derive o_init so that
    // untouched space decodes to exactly the recorded value.
    ck.decoders.o_init = OInit{decode_opacity(ck.decoders.opacity, OpacityFeatures::Zero())};
  }
  return ck;
}

}  // namespace ttslam
