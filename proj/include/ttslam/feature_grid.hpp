// SPDX-License-Identifier: Apache-2.0
//
// Multi-resolution dense voxel feature grids.
//
// Every level stores kChannels features per voxel vertex: three color
// channels followed by one opacity channel. Grids are vertex-centered, so a
// level with voxel size s and origin o has its vertex (i, j, k) at
// o + s * (i, j, k). All features start at zero and only change through
// explicit optimizer updates; a point whose surrounding vertices were never
// updated interpolates to the all-zero feature vector.
#pragma once

#include "ttslam/geometry.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ttslam {

inline constexpr int kLevels = 7;
inline constexpr int kChannels = 4;
inline constexpr int kColorChannels = 3;
inline constexpr int kOpacityChannel = 3;
inline constexpr int kOpacityFeatures = kLevels;
inline constexpr int kColorFeatures = kLevels * kColorChannels;

using OpacityFeatures = Eigen::Matrix<double, kOpacityFeatures, 1>;
using ColorFeatures = Eigen::Matrix<double, kColorFeatures, 1>;

/// Features gathered from all levels at one point, coarse level first.
struct FeatureVector {
  OpacityFeatures opacity = OpacityFeatures::Zero();
  ColorFeatures color = ColorFeatures::Zero();

  static FeatureVector zero() { return {}; }
  [[nodiscard]] bool is_zero() const { return opacity.isZero(0.0) && color.isZero(0.0); }
};

struct GridLevel {
  double voxel_size = 1.0;
  Vec3 origin = Vec3::Zero();
  std::array<int, 3> dims{2, 2, 2};
  std::vector<double> values;  // dims[0]*dims[1]*dims[2]*kChannels, x fastest

  [[nodiscard]] std::size_t vertex_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  [[nodiscard]] std::size_t vertex_index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  [[nodiscard]] double* vertex(std::size_t index) { return values.data() + index * kChannels; }
  [[nodiscard]] const double* vertex(std::size_t index) const {
    return values.data() + index * kChannels;
  }
};

/// Trilinear stencil of one point on one level.
struct Stencil {
  std::array<std::uint32_t, 8> vertices{};
  std::array<double, 8> weights{};
  /// Derivative of each weight w.r.t. the point, per axis (zero on clamped axes).
  std::array<std::array<double, 3>, 8> weight_gradients{};
};

class FeatureGrids {
 public:
  FeatureGrids() = default;
  /// Builds levels covering `bounds` with the given voxel sizes (coarse to
  /// fine, strictly decreasing). All features are initialized to zero.
  FeatureGrids(const Box3& bounds, std::span<const double> voxel_sizes);

  [[nodiscard]] const Box3& bounds() const { return bounds_; }
  [[nodiscard]] const std::vector<GridLevel>& levels() const { return levels_; }
  [[nodiscard]] std::vector<GridLevel>& levels() { return levels_; }
  [[nodiscard]] const GridLevel& level(int l) const { return levels_[static_cast<std::size_t>(l)]; }
  [[nodiscard]] GridLevel& level(int l) { return levels_[static_cast<std::size_t>(l)]; }

  /// Stencil of `point` on level `l`; the point is clamped into the level.
  [[nodiscard]] Stencil stencil(int l, const Vec3& point) const;

  /// Total stored features over all levels.
  [[nodiscard]] std::size_t feature_count() const;

 private:
  Box3 bounds_;
  std::vector<GridLevel> levels_;
};

/// Sparse gradient w.r.t. voxel features. Storage is dense per level; the set
/// of touched vertices is tracked separately so clearing and iteration cost
/// only scale with the number of touched vertices.
class GridGradient {
 public:
  GridGradient() = default;
  explicit GridGradient(const FeatureGrids& grids);

  void add(int level, std::uint32_t vertex, const double* grad4);
  void merge(const GridGradient& other);
  void clear();
  void scale(double s);

  [[nodiscard]] bool empty() const;
  [[nodiscard]] std::size_t touched_count() const;
  /// Touched vertices of a level, sorted ascending.
  [[nodiscard]] std::vector<std::uint32_t> touched(int level) const;
  [[nodiscard]] const double* values(int level, std::uint32_t vertex) const {
    return levels_[static_cast<std::size_t>(level)].values.data() +
           static_cast<std::size_t>(vertex) * kChannels;
  }
  [[nodiscard]] bool is_touched(int level, std::uint32_t vertex) const {
    return levels_[static_cast<std::size_t>(level)].flags[vertex] != 0;
  }
  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] double squared_norm() const;
  [[nodiscard]] int level_count() const { return static_cast<int>(levels_.size()); }

 private:
  struct Level {
    std::vector<double> values;
    std::vector<std::uint8_t> flags;
    std::vector<std::uint32_t> list;
  };
  std::vector<Level> levels_;
};

[[nodiscard]] FeatureVector interpolate(const FeatureGrids& grids, const Vec3& point);

/// Scatters `upstream` (dL/dfeatures at `point`) to the voxel vertices.
void interpolate_backward(const FeatureGrids& grids, const Vec3& point, const FeatureVector& upstream,
                          GridGradient& out);

/// dL/dpoint for dL/dfeatures = upstream. Zero along clamped axes.
[[nodiscard]] Vec3 point_gradient(const FeatureGrids& grids, const Vec3& point,
                                  const FeatureVector& upstream);

/// interpolate_backward and point_gradient in one stencil pass. `out` may be null.
Vec3 feature_backward(const FeatureGrids& grids, const Vec3& point, const FeatureVector& upstream,
                      GridGradient* out, bool want_point_gradient);

/// Pointer-based variants used by the batched renderer. `opacity` receives
/// kOpacityFeatures values and `color` kColorFeatures values.
void interpolate_into(const FeatureGrids& grids, const Vec3& point, double* opacity, double* color);
Vec3 feature_backward_raw(const FeatureGrids& grids, const Vec3& point, const double* d_opacity,
                          const double* d_color, GridGradient* out, bool want_point_gradient);

}  // namespace ttslam
