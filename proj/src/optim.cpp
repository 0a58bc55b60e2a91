// SPDX-License-Identifier: Apache-2.0
#include "ttslam/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ttslam {

namespace {

struct BiasCorrection {
  double c1;
  double c2;
};

BiasCorrection bias_correction(const AdamParams& p, std::int64_t step) {
  const double t = static_cast<double>(step);
  return {1.0 - std::pow(p.beta1, t), 1.0 - std::pow(p.beta2, t)};
}

/// One Adam update of a scalar; returns the increment to add to the value.
inline double adam_increment(const AdamParams& p, const BiasCorrection& bc, double g, double& m, double& v) {
  m = p.beta1 * m + (1.0 - p.beta1) * g;
  v = p.beta2 * v + (1.0 - p.beta2) * g * g;
  const double m_hat = m / bc.c1;
  const double v_hat = v / bc.c2;
  return -p.lr * m_hat / (std::sqrt(v_hat) + p.eps);
}

}  // namespace

void AdamParams::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

DenseAdam::DenseAdam(std::size_t size, AdamParams params) : params_(params), m_(size, 0.0), v_(size, 0.0) {
  params_.validate();
}

bool DenseAdam::step(std::span<double> values, std::span<const double> grad) {
  if (values.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("DenseAdam: size mismatch");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) {
      ++counters_.skipped;
      return false;
    }
  }
  ++counters_.step;
  const BiasCorrection bc = bias_correction(params_, counters_.step);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += adam_increment(params_, bc, grad[i], m_[i], v_[i]);
  return true;
}

void DenseAdam::reset() {
  std::fill(m_.begin(), m_.end(), 0.0);
  std::fill(v_.begin(), v_.end(), 0.0);
  counters_ = {};
}

SparseGridAdam::SparseGridAdam(const FeatureGrids& grids, AdamParams params) : params_(params) {
  params_.validate();
  for (const GridLevel& level : grids.levels()) {
    m_.emplace_back(level.values.size(), 0.0);
    v_.emplace_back(level.values.size(), 0.0);
  }
}

bool SparseGridAdam::step(FeatureGrids& grids, const GridGradient& grad) {
  if (grids.levels().size() != m_.size() || grad.level_count() != static_cast<int>(m_.size())) {
    throw std::invalid_argument("SparseGridAdam: grid layout mismatch");
  }
  if (!grad.all_finite()) {
    ++counters_.skipped;
    return false;
  }
  ++counters_.step;
  const BiasCorrection bc = bias_correction(params_, counters_.step);
  for (int l = 0; l < grad.level_count(); ++l) {
    GridLevel& level = grids.level(l);
    auto& m = m_[static_cast<std::size_t>(l)];
    auto& v = v_[static_cast<std::size_t>(l)];
    for (std::uint32_t vertex : grad.touched(l)) {
      const double* g = grad.values(l, vertex);
      double* value = level.vertex(vertex);
      const std::size_t base = static_cast<std::size_t>(vertex) * kChannels;
      for (int c = 0; c < kChannels; ++c) {
        value[c] += adam_increment(params_, bc, g[c], m[base + static_cast<std::size_t>(c)],
                                   v[base + static_cast<std::size_t>(c)]);
      }
    }
  }
  return true;
}

void SparseGridAdam::reset() {
  for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
  counters_ = {};
}

double clip_global_norm(std::span<Vec6> grads, double max_norm) {
  double sq = 0.0;
  for (const Vec6& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Vec6& g : grads) g *= s;
  }
  return norm;
}

PoseAdam::PoseAdam(std::size_t pose_count, AdamParams params, double clip_norm)
    : params_(params), clip_norm_(clip_norm), m_(pose_count, Vec6::Zero()), v_(pose_count, Vec6::Zero()) {
  params_.validate();
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
}

bool PoseAdam::step(std::span<Pose> poses, std::span<const Vec6> grads, const std::vector<bool>& trainable) {
  if (poses.size() != m_.size() || grads.size() != m_.size() || (!trainable.empty() && trainable.size() != m_.size())) {
    throw std::invalid_argument("PoseAdam: size mismatch");
  }
  auto trains = [&](std::size_t i) { return trainable.empty() || trainable[i]; };
  std::vector<Vec6> g;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!trains(i)) continue;
    if (!grads[i].allFinite()) {
      ++counters_.skipped;
      return false;
    }
    g.push_back(grads[i]);
    index.push_back(i);
  }
  clip_global_norm(g, clip_norm_);
  ++counters_.step;
  const BiasCorrection bc = bias_correction(params_, counters_.step);
  for (std::size_t n = 0; n < index.size(); ++n) {
    const std::size_t i = index[n];
    Vec6 delta;
    for (int c = 0; c < 6; ++c) delta[c] = adam_increment(params_, bc, g[n][c], m_[i][c], v_[i][c]);
    poses[i] = apply_delta(poses[i], PoseDelta::from_vector(delta));
  }
  return true;
}

void PoseAdam::reset() {
  std::fill(m_.begin(), m_.end(), Vec6::Zero());
  std::fill(v_.begin(), v_.end(), Vec6::Zero());
  counters_ = {};
}

}  // namespace ttslam
