// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ttslam/geometry.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace ttslam {

/// Row-major RGB image with values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // height x width x 3

  Image() = default;
  Image(int w, int h, const Vec3& fill = Vec3::Zero());

  [[nodiscard]] Vec3 at(int x, int y) const {
    const double* p = data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, const Vec3& c) {
    double* p = data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    p[0] = c.x();
    p[1] = c.y();
    p[2] = c.z();
  }
};

/// Row-major depth map in meters.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  [[nodiscard]] float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

struct BilinearSample {
  Vec3 color = Vec3::Zero();
  /// d color / d pixel (columns: x, y).
  Eigen::Matrix<double, 3, 2> jacobian = Eigen::Matrix<double, 3, 2>::Zero();
};

/// Bilinear interpolation between pixel centers. Returns nothing outside
/// [0, width-1] x [0, height-1].
[[nodiscard]] std::optional<BilinearSample> sample_bilinear(const Image& image, const Vec2& pixel);

/// 8-bit RGB PNG; values are quantized with rounding.
void write_png(const std::filesystem::path& path, const Image& image);
[[nodiscard]] Image read_png(const std::filesystem::path& path);

/// Little-endian float32, row-major.
void write_depth(const std::filesystem::path& path, const DepthMap& depth);
[[nodiscard]] DepthMap read_depth(const std::filesystem::path& path, int width, int height);

}  // namespace ttslam
