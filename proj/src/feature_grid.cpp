// SPDX-License-Identifier: Apache-2.0
#include "ttslam/feature_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ttslam {

FeatureGrids::FeatureGrids(const Box3& bounds, std::span<const double> voxel_sizes) : bounds_(bounds) {
  if (voxel_sizes.size() != static_cast<std::size_t>(kLevels)) {
    throw std::invalid_argument("feature grids: expected " + std::to_string(kLevels) + " levels");
  }
  if (!((bounds.max.array() > bounds.min.array()).all())) {
    throw std::invalid_argument("feature grids: empty bounds");
  }
  for (std::size_t l = 0; l < voxel_sizes.size(); ++l) {
    const double s = voxel_sizes[l];
    if (!(s > 0.0)) throw std::invalid_argument("feature grids: voxel size must be positive");
    if (l > 0 && !(s < voxel_sizes[l - 1])) {
      throw std::invalid_argument("feature grids: voxel sizes must be strictly decreasing");
    }
    GridLevel level;
    level.voxel_size = s;
    level.origin = bounds.min;
    const Vec3 extent = bounds.extent();
    for (int a = 0; a < 3; ++a) {
      level.dims[static_cast<std::size_t>(a)] = std::max(2, static_cast<int>(std::ceil(extent[a] / s - 1e-9)) + 1);
    }
    level.values.assign(level.vertex_count() * kChannels, 0.0);
    levels_.push_back(std::move(level));
  }
}

std::size_t FeatureGrids::feature_count() const {
  std::size_t n = 0;
  for (const auto& level : levels_) n += level.values.size();
  return n;
}

Stencil FeatureGrids::stencil(int l, const Vec3& point) const {
  const GridLevel& level = levels_[static_cast<std::size_t>(l)];
  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  std::array<bool, 3> clamped{};
  for (int a = 0; a < 3; ++a) {
    const int n = level.dims[static_cast<std::size_t>(a)];
    double g = (point[a] - level.origin[a]) / level.voxel_size;
    clamped[a] = g < 0.0 || g > n - 1;
    g = std::clamp(g, 0.0, static_cast<double>(n - 1));
    const int i0 = std::min(static_cast<int>(std::floor(g)), n - 2);
    base[a] = i0;
    frac[a] = g - i0;
  }
  Stencil st;
  const double inv = 1.0 / level.voxel_size;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double wx = dx ? frac[0] : 1.0 - frac[0];
    const double wy = dy ? frac[1] : 1.0 - frac[1];
    const double wz = dz ? frac[2] : 1.0 - frac[2];
    st.vertices[c] = static_cast<std::uint32_t>(level.vertex_index(base[0] + dx, base[1] + dy, base[2] + dz));
    st.weights[c] = wx * wy * wz;
    const double sx = clamped[0] ? 0.0 : (dx ? inv : -inv);
    const double sy = clamped[1] ? 0.0 : (dy ? inv : -inv);
    const double sz = clamped[2] ? 0.0 : (dz ? inv : -inv);
    st.weight_gradients[c] = {sx * wy * wz, wx * sy * wz, wx * wy * sz};
  }
  return st;
}

GridGradient::GridGradient(const FeatureGrids& grids) {
  for (const auto& level : grids.levels()) {
    Level g;
    g.values.assign(level.values.size(), 0.0);
    g.flags.assign(level.vertex_count(), 0);
    levels_.push_back(std::move(g));
  }
}

void GridGradient::add(int level, std::uint32_t vertex, const double* grad4) {
  Level& g = levels_[static_cast<std::size_t>(level)];
  double* dst = g.values.data() + static_cast<std::size_t>(vertex) * kChannels;
  for (int c = 0; c < kChannels; ++c) dst[c] += grad4[c];
  if (!g.flags[vertex]) {
    g.flags[vertex] = 1;
    g.list.push_back(vertex);
  }
}

void GridGradient::merge(const GridGradient& other) {
  for (std::size_t l = 0; l < other.levels_.size(); ++l) {
    std::vector<std::uint32_t> list = other.levels_[l].list;
    std::sort(list.begin(), list.end());
    for (std::uint32_t v : list) {
      add(static_cast<int>(l), v, other.levels_[l].values.data() + static_cast<std::size_t>(v) * kChannels);
    }
  }
}

void GridGradient::clear() {
  for (auto& g : levels_) {
    for (std::uint32_t v : g.list) {
      g.flags[v] = 0;
      std::fill_n(g.values.data() + static_cast<std::size_t>(v) * kChannels, kChannels, 0.0);
    }
    g.list.clear();
  }
}

void GridGradient::scale(double s) {
  for (auto& g : levels_) {
    for (std::uint32_t v : g.list) {
      double* p = g.values.data() + static_cast<std::size_t>(v) * kChannels;
      for (int c = 0; c < kChannels; ++c) p[c] *= s;
    }
  }
}

bool GridGradient::empty() const { return touched_count() == 0; }

std::size_t GridGradient::touched_count() const {
  std::size_t n = 0;
  for (const auto& g : levels_) n += g.list.size();
  return n;
}

std::vector<std::uint32_t> GridGradient::touched(int level) const {
  std::vector<std::uint32_t> list = levels_[static_cast<std::size_t>(level)].list;
  std::sort(list.begin(), list.end());
  return list;
}

bool GridGradient::all_finite() const {
  for (const auto& g : levels_) {
    for (std::uint32_t v : g.list) {
      const double* p = g.values.data() + static_cast<std::size_t>(v) * kChannels;
      for (int c = 0; c < kChannels; ++c) {
        if (!std::isfinite(p[c])) return false;
      }
    }
  }
  return true;
}

double GridGradient::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    for (std::uint32_t v : touched(static_cast<int>(l))) {
      const double* p = values(static_cast<int>(l), v);
      for (int c = 0; c < kChannels; ++c) s += p[c] * p[c];
    }
  }
  return s;
}

void interpolate_into(const FeatureGrids& grids, const Vec3& point, double* opacity, double* color) {
  // Same clamping as FeatureGrids::stencil, without the weight gradients.
  for (int l = 0; l < kLevels; ++l) {
    const GridLevel& level = grids.level(l);
    const double inv = 1.0 / level.voxel_size;
    int base[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
      const int n = level.dims[static_cast<std::size_t>(a)];
      const double g = std::clamp((point[a] - level.origin[a]) * inv, 0.0, static_cast<double>(n - 1));
      base[a] = std::min(static_cast<int>(g), n - 2);
      f[a] = g - base[a];
    }
    const std::size_t sx = kChannels;
    const std::size_t sy = static_cast<std::size_t>(level.dims[0]) * kChannels;
    const std::size_t sz = sy * static_cast<std::size_t>(level.dims[1]);
    const double* v = level.vertex(level.vertex_index(base[0], base[1], base[2]));
    double acc[kChannels];
    for (int ch = 0; ch < kChannels; ++ch) {
      const double c00 = v[ch] + f[0] * (v[sx + ch] - v[ch]);
      const double c10 = v[sy + ch] + f[0] * (v[sy + sx + ch] - v[sy + ch]);
      const double c01 = v[sz + ch] + f[0] * (v[sz + sx + ch] - v[sz + ch]);
      const double c11 = v[sz + sy + ch] + f[0] * (v[sz + sy + sx + ch] - v[sz + sy + ch]);
      const double c0 = c00 + f[1] * (c10 - c00);
      const double c1 = c01 + f[1] * (c11 - c01);
      acc[ch] = c0 + f[2] * (c1 - c0);
    }
    for (int ch = 0; ch < kColorChannels; ++ch) color[l * kColorChannels + ch] = acc[ch];
    opacity[l] = acc[kOpacityChannel];
  }
}

FeatureVector interpolate(const FeatureGrids& grids, const Vec3& point) {
  FeatureVector f;
  interpolate_into(grids, point, f.opacity.data(), f.color.data());
  return f;
}

Vec3 feature_backward_raw(const FeatureGrids& grids, const Vec3& point, const double* d_opacity,
                          const double* d_color, GridGradient* out, bool want_point_gradient) {
  Vec3 dp = Vec3::Zero();
  for (int l = 0; l < kLevels; ++l) {
    double up[kChannels];
    for (int ch = 0; ch < kColorChannels; ++ch) up[ch] = d_color[l * kColorChannels + ch];
    up[kOpacityChannel] = d_opacity[l];
    if (up[0] == 0.0 && up[1] == 0.0 && up[2] == 0.0 && up[3] == 0.0) continue;
    const Stencil st = grids.stencil(l, point);
    const GridLevel& level = grids.level(l);
    for (int c = 0; c < 8; ++c) {
      if (out != nullptr && st.weights[c] != 0.0) {
        double g[kChannels];
        for (int ch = 0; ch < kChannels; ++ch) g[ch] = st.weights[c] * up[ch];
        out->add(l, st.vertices[c], g);
      }
      if (want_point_gradient) {
        const double* v = level.vertex(st.vertices[c]);
        double dot = 0.0;
        for (int ch = 0; ch < kChannels; ++ch) dot += v[ch] * up[ch];
        for (int a = 0; a < 3; ++a) dp[a] += st.weight_gradients[c][static_cast<std::size_t>(a)] * dot;
      }
    }
  }
  return dp;
}

Vec3 feature_backward(const FeatureGrids& grids, const Vec3& point, const FeatureVector& upstream,
                      GridGradient* out, bool want_point_gradient) {
  return feature_backward_raw(grids, point, upstream.opacity.data(), upstream.color.data(), out,
                              want_point_gradient);
}

void interpolate_backward(const FeatureGrids& grids, const Vec3& point, const FeatureVector& upstream,
                          GridGradient& out) {
  feature_backward(grids, point, upstream, &out, false);
}

Vec3 point_gradient(const FeatureGrids& grids, const Vec3& point, const FeatureVector& upstream) {
  return feature_backward(grids, point, upstream, nullptr, true);
}

}  // namespace ttslam
