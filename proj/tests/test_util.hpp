// Shared fixtures for the unit tests.
#pragma once

#include "ttslam/decoders.hpp"
#include "ttslam/feature_grid.hpp"
#include "ttslam/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace ttslam::testing {

inline constexpr std::array<double, kLevels> kTestVoxels{0.64, 0.48, 0.32, 0.24, 0.16, 0.12, 0.08};

inline FeatureGrids small_grids(const Box3& box = {Vec3(-1, -1, -1), Vec3(1, 1, 1)}) {
  return FeatureGrids(box, kTestVoxels);
}

/// Fills every feature with uniform noise in [-a, a].
inline void randomize(FeatureGrids& grids, std::uint64_t seed, double a = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& level : grids.levels()) {
    for (double& v : level.values) v = u(rng);
  }
}

/// Symmetric relative error with an absolute floor for tiny values.
inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Intrinsics small_camera(int w = 32, int h = 32) {
  Intrinsics k;
  k.width = w;
  k.height = h;
  k.fx = k.fy = 0.9 * w;
  k.cx = (w - 1) / 2.0;
  k.cy = (h - 1) / 2.0;
  return k;
}

/// A decoder whose output pre-activation equals feature `index` of its input:
/// two ReLU units carry the positive and negative parts through every layer.
inline DecoderNet passthrough_net(int input_dim, int output_dim, std::array<int, 3> indices, double tau) {
  DecoderNet net = DecoderNet::zeros(input_dim, output_dim, tau);
  std::vector<double> p(net.parameters().begin(), net.parameters().end());
  const std::array<int, 5> dims{input_dim, kHiddenWidth, kHiddenWidth, kHiddenWidth, output_dim};
  std::size_t off = 0;
  for (int l = 0; l <= kHiddenLayers; ++l) {
    const int in = dims[static_cast<std::size_t>(l)];
    const auto w = [&](int row, int col) -> double& { return p[off + static_cast<std::size_t>(row) * in + col]; };
    for (int o = 0; o < output_dim; ++o) {
      const int pos = 2 * o, neg = 2 * o + 1;
      if (l == 0) {
        w(pos, indices[static_cast<std::size_t>(o)]) = 1.0;
        w(neg, indices[static_cast<std::size_t>(o)]) = -1.0;
      } else if (l < kHiddenLayers) {
        w(pos, pos) = 1.0;
        w(neg, neg) = 1.0;
      } else {
        w(o, pos) = 1.0;
        w(o, neg) = -1.0;
      }
    }
    off += static_cast<std::size_t>(dims[static_cast<std::size_t>(l) + 1]) * (in + 1);
  }
  net.load_parameters(p);
  return net;
}

/// Opacity = sigma(tau * opacity feature of `level`), color channel c =
/// sigma(tau * color feature c of `level`).
inline Decoders passthrough_decoders(int level, double tau) {
  Decoders d;
  d.opacity = passthrough_net(kOpacityFeatures, 1, {level, 0, 0}, tau);
  const int c = level * kColorChannels;
  d.color = passthrough_net(kColorFeatures, 3, {c, c + 1, c + 2}, tau);
  return d;
}

}  // namespace ttslam::testing
