// SPDX-License-Identifier: Apache-2.0
#include "ttslam/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

namespace ttslam {

namespace {

void fill_samples(const RayBatch& rays, std::size_t r, int count, bool stratified, std::mt19937_64& rng,
                  double* depths, Vec3* points) {
  const double near = rays.near[r];
  const double far = rays.far[r];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (stratified) {
    const double bin = (far - near) / count;
    for (int i = 0; i < count; ++i) depths[i] = near + (i + unit(rng)) * bin;
  } else {
    const double step = (far - near) / (count - 1);
    for (int i = 0; i < count; ++i) depths[i] = near + i * step;
    depths[count - 1] = far;
  }
  for (int i = 0; i < count; ++i) points[i] = rays.origins[r] + rays.depth_directions[r] * depths[i];
}

}  // namespace

RaySamples sample_ray(const RayBatch& rays, std::size_t ray_index, int count, bool stratified,
                      std::uint64_t rng_seed) {
  if (count < 2) throw std::invalid_argument("sample_ray: need at least two samples");
  RaySamples s;
  s.per_ray = count;
  s.depths.resize(static_cast<std::size_t>(count));
  s.points.resize(static_cast<std::size_t>(count));
  std::mt19937_64 rng(rng_seed);
  fill_samples(rays, ray_index, count, stratified, rng, s.depths.data(), s.points.data());
  return s;
}

RaySamples sample_rays(const RayBatch& rays, int count, bool stratified, std::uint64_t rng_seed) {
  if (count < 2) throw std::invalid_argument("sample_rays: need at least two samples");
  RaySamples s;
  s.per_ray = count;
  const std::size_t n = rays.size() * static_cast<std::size_t>(count);
  s.depths.resize(n);
  s.points.resize(n);
  std::mt19937_64 rng(rng_seed);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const std::size_t base = r * static_cast<std::size_t>(count);
    fill_samples(rays, r, count, stratified, rng, s.depths.data() + base, s.points.data() + base);
  }
  return s;
}

std::vector<double> compute_weights(std::span<const double> opacities) {
  std::vector<double> w(opacities.size());
  double transmittance = 1.0;
  for (std::size_t i = 0; i < opacities.size(); ++i) {
    w[i] = opacities[i] * transmittance;
    transmittance *= 1.0 - opacities[i];
  }
  return w;
}

double RenderOutput::accumulated_weight(std::size_t ray) const {
  double s = 0.0;
  const std::size_t base = ray * static_cast<std::size_t>(samples_per_ray);
  for (int i = 0; i < active[ray]; ++i) s += weights[base + static_cast<std::size_t>(i)];
  return s;
}

RenderOutput render(const FeatureGrids& grids, const Decoders& decoders, const RayBatch& rays,
                    const RaySamples& samples, const RenderSettings& settings) {
  const std::size_t n = rays.size();
  const int m = samples.per_ray;
  if (samples.depths.size() != n * static_cast<std::size_t>(m)) {
    throw std::invalid_argument("render: samples do not match the ray batch");
  }
  const std::size_t total = n * static_cast<std::size_t>(m);

  Matrix f_opacity(kOpacityFeatures, static_cast<Eigen::Index>(total));
  Matrix f_color;
  if (settings.compute_color) f_color.resize(kColorFeatures, static_cast<Eigen::Index>(total));
  double scratch[kColorFeatures];
  for (std::size_t s = 0; s < total; ++s) {
    double* color = settings.compute_color ? f_color.col(static_cast<Eigen::Index>(s)).data() : scratch;
    interpolate_into(grids, samples.points[s], f_opacity.col(static_cast<Eigen::Index>(s)).data(), color);
  }

  RenderOutput out;
  out.samples_per_ray = m;
  out.rgb.assign(n, Vec3::Zero());
  out.depth.assign(n, 0.0);
  out.opacities.resize(total);
  out.weights.resize(total);
  out.transmittance.resize(total);
  out.active.resize(n);
  out.active_offset.resize(n);
  out.has_color = settings.compute_color;

  MlpCache opacity_cache;
  const Matrix opacity = decoders.opacity.forward(f_opacity, settings.keep_cache ? &opacity_cache : nullptr);

  std::size_t active_total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * static_cast<std::size_t>(m);
    double t = 1.0;
    int active = 0;
    for (int i = 0; i < m; ++i) {
      const std::size_t s = base + static_cast<std::size_t>(i);
      const double o = opacity(0, static_cast<Eigen::Index>(s));
      out.opacities[s] = o;
      out.transmittance[s] = t;
      out.weights[s] = o * t;
      if (t >= settings.transmittance_cutoff && active == i) ++active;
      t *= 1.0 - o;
    }
    out.active[r] = active;
    out.active_offset[r] = active_total;
    active_total += static_cast<std::size_t>(active);
    double d = 0.0;
    for (int i = 0; i < active; ++i) d += out.weights[base + static_cast<std::size_t>(i)] * samples.depths[base + static_cast<std::size_t>(i)];
    out.depth[r] = d;
  }

  MlpCache color_cache;
  Matrix colors;
  if (settings.compute_color) {
    Matrix gathered(kColorFeatures, static_cast<Eigen::Index>(active_total));
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t base = r * static_cast<std::size_t>(m);
      for (int i = 0; i < out.active[r]; ++i) {
        gathered.col(static_cast<Eigen::Index>(out.active_offset[r] + static_cast<std::size_t>(i))) =
            f_color.col(static_cast<Eigen::Index>(base + static_cast<std::size_t>(i)));
      }
    }
    colors = decoders.color.forward(gathered, settings.keep_cache ? &color_cache : nullptr);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t base = r * static_cast<std::size_t>(m);
      Vec3 c = Vec3::Zero();
      for (int i = 0; i < out.active[r]; ++i) {
        c += out.weights[base + static_cast<std::size_t>(i)] *
             colors.col(static_cast<Eigen::Index>(out.active_offset[r] + static_cast<std::size_t>(i)));
      }
      out.rgb[r] = c;
    }
  }

  if (settings.keep_cache) {
    RenderCache cache;
    // Only active samples take part in the backward pass; compact the opacity cache.
    const bool all_active = active_total == total;
    if (all_active) {
      cache.opacity = std::move(opacity_cache);
    } else {
      const auto gather = [&](const Matrix& src) {
        Matrix dst(src.rows(), static_cast<Eigen::Index>(active_total));
        for (std::size_t r = 0; r < n; ++r) {
          const std::size_t base = r * static_cast<std::size_t>(m);
          const auto a = static_cast<Eigen::Index>(out.active[r]);
          dst.middleCols(static_cast<Eigen::Index>(out.active_offset[r]), a) =
              src.middleCols(static_cast<Eigen::Index>(base), a);
        }
        return dst;
      };
      cache.opacity.input = gather(opacity_cache.input);
      cache.opacity.output = gather(opacity_cache.output);
    }
    if (settings.compute_color) {
      cache.color = std::move(color_cache);
      cache.color_values.assign(colors.data(), colors.data() + colors.size());
    }
    out.cache = std::move(cache);
  }
  return out;
}

Vec6 to_pose_delta_gradient(const Mat3& rotation, const RayPoseGradient& g) {
  Vec6 v;
  v << rotation.transpose() * g.d_moment, g.d_origin;
  return v;
}

DecoderGradients DecoderGradients::zeros_like(const Decoders& decoders) {
  DecoderGradients g;
  g.opacity.assign(decoders.opacity.parameter_count(), 0.0);
  g.color.assign(decoders.color.parameter_count(), 0.0);
  return g;
}

void DecoderGradients::clear() {
  std::fill(opacity.begin(), opacity.end(), 0.0);
  std::fill(color.begin(), color.end(), 0.0);
}

bool DecoderGradients::all_finite() const {
  const auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(opacity.begin(), opacity.end(), finite) && std::all_of(color.begin(), color.end(), finite);
}

void render_backward(const FeatureGrids& grids, const Decoders& decoders, const RayBatch& rays,
                     const RaySamples& samples, const RenderOutput& out, std::span<const Vec3> d_rgb,
                     std::span<const double> d_depth, const RenderBackwardTargets& targets) {
  if (!out.cache) throw std::invalid_argument("render_backward: forward pass kept no cache");
  const std::size_t n = out.ray_count();
  const int m = out.samples_per_ray;
  const bool has_rgb_grad = !d_rgb.empty();
  if (has_rgb_grad && !out.has_color) throw std::invalid_argument("render_backward: color was not rendered");
  if ((has_rgb_grad && d_rgb.size() != n) || (!d_depth.empty() && d_depth.size() != n)) {
    throw std::invalid_argument("render_backward: upstream gradient size mismatch");
  }
  const RenderCache& cache = *out.cache;
  const std::size_t active_total = n == 0 ? 0 : out.active_offset[n - 1] + static_cast<std::size_t>(out.active[n - 1]);

  Matrix d_opacity(1, static_cast<Eigen::Index>(active_total));
  Matrix d_color;
  if (has_rgb_grad) d_color.resize(3, static_cast<Eigen::Index>(active_total));

  std::vector<double> a(static_cast<std::size_t>(m));
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * static_cast<std::size_t>(m);
    const std::size_t off = out.active_offset[r];
    const int active = out.active[r];
    const Vec3 g_rgb = has_rgb_grad ? d_rgb[r] : Vec3::Zero();
    const double g_d = d_depth.empty() ? 0.0 : d_depth[r];
    for (int i = 0; i < active; ++i) {
      const std::size_t s = base + static_cast<std::size_t>(i);
      double ai = g_d * samples.depths[s];
      if (has_rgb_grad) {
        const double* c = cache.color_values.data() + 3 * (off + static_cast<std::size_t>(i));
        ai += g_rgb.x() * c[0] + g_rgb.y() * c[1] + g_rgb.z() * c[2];
        d_color.col(static_cast<Eigen::Index>(off + static_cast<std::size_t>(i))) = out.weights[s] * g_rgb;
      }
      a[static_cast<std::size_t>(i)] = ai;
    }
    // U_k = sum_{i>k} a_i o_i prod_{k<j<i}(1 - o_j), accumulated back to front.
    double u = 0.0;
    for (int k = active - 1; k >= 0; --k) {
      const std::size_t s = base + static_cast<std::size_t>(k);
      const double o = out.opacities[s];
      d_opacity(0, static_cast<Eigen::Index>(off + static_cast<std::size_t>(k))) =
          out.transmittance[s] * (a[static_cast<std::size_t>(k)] - u);
      u = a[static_cast<std::size_t>(k)] * o + (1.0 - o) * u;
    }
  }

  const bool opacity_params = targets.decoders != nullptr && !decoders.opacity.frozen();
  const bool color_params = targets.decoders != nullptr && !decoders.color.frozen();
  const Matrix d_fo = decoders.opacity.backward(
      cache.opacity, d_opacity, opacity_params ? std::span<double>(targets.decoders->opacity) : std::span<double>{});
  Matrix d_fc;
  if (has_rgb_grad) {
    d_fc = decoders.color.backward(cache.color, d_color,
                                   color_params ? std::span<double>(targets.decoders->color) : std::span<double>{});
  }

  if (targets.rays) targets.rays->assign(n, RayPoseGradient{});
  const bool want_point = targets.rays != nullptr;
  if (targets.grid == nullptr && !want_point) return;
  static const double zero_color[kColorFeatures] = {};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * static_cast<std::size_t>(m);
    const std::size_t off = out.active_offset[r];
    RayPoseGradient rg;
    for (int i = 0; i < out.active[r]; ++i) {
      const auto col = static_cast<Eigen::Index>(off + static_cast<std::size_t>(i));
      const std::size_t s = base + static_cast<std::size_t>(i);
      const double* dc = has_rgb_grad ? d_fc.col(col).data() : zero_color;
      const Vec3 g = feature_backward_raw(grids, samples.points[s], d_fo.col(col).data(), dc, targets.grid, want_point);
      if (want_point) {
        rg.d_origin += g;
        rg.d_moment += (samples.points[s] - rays.origins[r]).cross(g);
      }
    }
    if (targets.rays) (*targets.rays)[r] = rg;
  }
}

std::vector<SampleProfile> ray_diagnostics(const RenderOutput& out, const RaySamples& samples,
                                           std::size_t ray_index) {
  if (ray_index >= out.ray_count()) throw std::out_of_range("ray_diagnostics: ray index out of range");
  std::vector<SampleProfile> profile;
  const std::size_t base = ray_index * static_cast<std::size_t>(out.samples_per_ray);
  for (int i = 0; i < out.active[ray_index]; ++i) {
    const std::size_t s = base + static_cast<std::size_t>(i);
    profile.push_back({samples.depths[s], out.opacities[s], out.weights[s]});
  }
  return profile;
}

void write_profile_csv(std::ostream& os, std::span<const SampleProfile> profile) {
  os << "depth_m,opacity,weight\n";
  os.precision(9);
  for (const auto& p : profile) os << p.depth << ',' << p.opacity << ',' << p.weight << '\n';
}

void clip_rays_to_box(RayBatch& rays, const Box3& box) {
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const double exit = box.exit_distance(rays.origins[r], rays.depth_directions[r]);
    rays.far[r] = std::max(std::min(rays.far[r], exit), rays.near[r] + 1e-3);
  }
}

}  // namespace ttslam
