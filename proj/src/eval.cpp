// SPDX-License-Identifier: Apache-2.0
#include "ttslam/eval.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <stdexcept>

namespace ttslam {

Similarity align_umeyama(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, bool with_scale) {
  if (est.size() != gt.size()) throw std::invalid_argument("umeyama: size mismatch");
  if (est.size() < 3) throw std::invalid_argument("umeyama: need at least 3 correspondences");
  const double n = static_cast<double>(est.size());
  Vec3 mx = Vec3::Zero(), my = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    mx += est[i];
    my += gt[i];
  }
  mx /= n;
  my /= n;
  Mat3 cov = Mat3::Zero();
  Mat3 scatter_x = Mat3::Zero();
  double var_x = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Vec3 dx = est[i] - mx;
    cov += (gt[i] - my) * dx.transpose();
    scatter_x += dx * dx.transpose();
    var_x += dx.squaredNorm();
  }
  cov /= n;
  var_x /= n;
  Eigen::JacobiSVD<Mat3> shape(scatter_x);
  const Vec3 sv = shape.singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) throw std::invalid_argument("umeyama: collinear input");

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  Similarity out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = with_scale ? (svd.singularValues().asDiagonal() * s).trace() / var_x : 1.0;
  out.translation = my - out.scale * out.rotation * mx;
  return out;
}

std::vector<Vec3> positions(const std::vector<Pose>& poses) {
  std::vector<Vec3> p;
  p.reserve(poses.size());
  for (const Pose& pose : poses) p.push_back(pose.translation);
  return p;
}

double ate_rmse_cm(const std::vector<Pose>& est, const std::vector<Pose>& gt, bool with_scale) {
  const auto pe = positions(est);
  const auto pg = positions(gt);
  const Similarity s = align_umeyama(pe, pg, with_scale);
  double sq = 0.0;
  for (std::size_t i = 0; i < pe.size(); ++i) sq += (s.apply(pe[i]) - pg[i]).squaredNorm();
  return 100.0 * std::sqrt(sq / static_cast<double>(pe.size()));
}

double trajectory_diameter(const std::vector<Pose>& poses) {
  double best = 0.0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (std::size_t j = i + 1; j < poses.size(); ++j) {
      best = std::max(best, (poses[i].translation - poses[j].translation).norm());
    }
  }
  return best;
}

namespace {

double lower_median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

DepthL1 depth_l1(const std::vector<std::vector<double>>& est, const std::vector<std::vector<double>>& gt,
                 double outlier_m) {
  if (est.size() != gt.size()) throw std::invalid_argument("depth_l1: frame count mismatch");
  std::vector<double> pooled_est, pooled_gt;
  for (std::size_t f = 0; f < est.size(); ++f) {
    if (est[f].size() != gt[f].size()) throw std::invalid_argument("depth_l1: pixel count mismatch");
    for (std::size_t i = 0; i < est[f].size(); ++i) {
      if (!(gt[f][i] > 0.0)) continue;
      pooled_est.push_back(est[f][i]);
      pooled_gt.push_back(gt[f][i]);
    }
  }
  DepthL1 out;
  if (pooled_gt.empty()) return out;
  const double med_est = lower_median(pooled_est);
  out.scale = med_est > 0.0 ? lower_median(pooled_gt) / med_est : 1.0;
  double total = 0.0;
  for (std::size_t f = 0; f < est.size(); ++f) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < est[f].size(); ++i) {
      if (!(gt[f][i] > 0.0)) continue;
      const double err = std::abs(out.scale * est[f][i] - gt[f][i]);
      if (err > outlier_m) continue;
      sum += err;
      ++n;
    }
    if (n == 0) {
      ++out.frames_excluded;
      continue;
    }
    total += sum / static_cast<double>(n);
    ++out.frames_used;
  }
  if (out.frames_used > 0) out.l1_cm = 100.0 * total / static_cast<double>(out.frames_used);
  return out;
}

double psnr_from_mse(double mse) {
  if (!(mse > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Image& est, const Image& gt) {
  if (est.width != gt.width || est.height != gt.height) throw std::invalid_argument("psnr: shape mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < est.data.size(); ++i) {
    const double d = est.data[i] - gt.data[i];
    sq += d * d;
  }
  return psnr_from_mse(sq / static_cast<double>(est.data.size()));
}

OpacityHistogram opacity_histogram(const FeatureGrids& grids, const Decoders& decoders, std::int64_t sample_count,
                                   std::uint64_t seed, double o_init, double eps) {
  OpacityHistogram h;
  h.o_init = o_init;
  h.eps = eps;
  for (int i = 0; i <= 100; ++i) h.bin_edges[static_cast<std::size_t>(i)] = i / 100.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Box3& b = grids.bounds();
  constexpr std::int64_t kBatch = 4096;
  std::int64_t near0 = 0, near1 = 0, near_init = 0, ternary = 0;
  for (std::int64_t start = 0; start < sample_count; start += kBatch) {
    const std::int64_t n = std::min(kBatch, sample_count - start);
    Matrix features(kOpacityFeatures, n);
    double color_scratch[kColorFeatures];
    for (std::int64_t s = 0; s < n; ++s) {
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = b.min[a] + unit(rng) * (b.max[a] - b.min[a]);
      interpolate_into(grids, p, features.col(s).data(), color_scratch);
    }
    const Matrix o = decoders.opacity.forward(features);
    for (std::int64_t s = 0; s < n; ++s) {
      const double v = o(0, s);
      const int bin = std::clamp(static_cast<int>(v * 100.0), 0, 99);
      ++h.counts[static_cast<std::size_t>(bin)];
      const bool a = v < eps, c = v > 1.0 - eps, m = std::abs(v - o_init) < eps;
      near0 += a;
      near1 += c;
      near_init += m;
      ternary += (a || c || m);
    }
  }
  h.sample_count = sample_count;
  if (sample_count > 0) {
    const double inv = 1.0 / static_cast<double>(sample_count);
    h.mass_near_0 = near0 * inv;
    h.mass_near_1 = near1 * inv;
    h.mass_near_oinit = near_init * inv;
    h.ternary_mass = ternary * inv;
  }
  return h;
}

void write_histogram_csv(std::ostream& os, const OpacityHistogram& h) {
  os << "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    os << h.bin_edges[i] << "," << h.bin_edges[i + 1] << "," << h.counts[i] << "\n";
  }
}

WeightConcentration weight_concentration(const RenderOutput& out, const RaySamples& samples,
                                         const std::vector<double>& gt_depth, double delta) {
  WeightConcentration wc;
  const std::size_t rays = out.ray_count();
  if (gt_depth.size() != rays) throw std::invalid_argument("weight_concentration: one GT depth per ray expected");
  const int m = out.samples_per_ray;
  for (std::size_t r = 0; r < rays; ++r) {
    const double gt = gt_depth[r];
    if (!(gt > 0.0)) continue;
    const double spacing = (samples.depth(r, m - 1) - samples.depth(r, 0)) / (m - 1);
    const double d = delta < 0.0 ? 2.0 * spacing : delta;
    double peak = 0.0, peak_near = 0.0, mass = 0.0;
    for (int i = 0; i < m; ++i) {
      const double w = out.weights[r * static_cast<std::size_t>(m) + static_cast<std::size_t>(i)];
      peak = std::max(peak, w);
      if (std::abs(samples.depth(r, i) - gt) <= d) {
        peak_near = std::max(peak_near, w);
        mass += w;
      }
    }
    wc.peak_weight += peak;
    wc.peak_near_depth += peak_near;
    wc.mass_within_delta += mass;
    ++wc.rays;
  }
  if (wc.rays > 0) {
    const double inv = 1.0 / static_cast<double>(wc.rays);
    wc.peak_weight *= inv;
    wc.peak_near_depth *= inv;
    wc.mass_within_delta *= inv;
  }
  return wc;
}

RenderedView render_view(const FeatureGrids& grids, const Decoders& decoders, const Intrinsics& k, const Pose& pose,
                         const RaySettings& ray_settings) {
  RenderedView view;
  view.rgb = Image(k.width, k.height);
  view.depth.assign(static_cast<std::size_t>(k.width) * k.height, 0.0);
  RenderSettings rs;
  rs.transmittance_cutoff = ray_settings.transmittance_cutoff;
  rs.keep_cache = false;
  std::vector<Vec2> pixels;
  for (int y = 0; y < k.height; ++y) {
    pixels.clear();
    for (int x = 0; x < k.width; ++x) pixels.emplace_back(x, y);
    const RayBatch rays = make_rays(pixels, pose, k, ray_settings);
    const RaySamples samples = sample_rays(rays, ray_settings.samples, false, 0);
    const RenderOutput out = render(grids, decoders, rays, samples, rs);
    for (int x = 0; x < k.width; ++x) {
      view.rgb.set(x, y, out.rgb[static_cast<std::size_t>(x)]);
      view.depth[static_cast<std::size_t>(y) * k.width + x] = out.depth[static_cast<std::size_t>(x)];
    }
  }
  return view;
}

RunEvaluation evaluate_run(const Dataset& dataset, const std::vector<Pose>& est, const FeatureGrids& grids,
                           const Decoders& decoders, const RaySettings& rays, const EvalOptions& options) {
  RunEvaluation e;
  const std::size_t n = std::min(est.size(), static_cast<std::size_t>(dataset.frame_count()));
  if (n == 0) throw std::invalid_argument("evaluate_run: empty trajectory");
  const Intrinsics& k = dataset.intrinsics;
  if (dataset.has_gt_poses() && n >= 3) {
    const std::vector<Pose> e_poses(est.begin(), est.begin() + static_cast<std::ptrdiff_t>(n));
    const std::vector<Pose> g_poses(dataset.gt_poses.begin(), dataset.gt_poses.begin() + static_cast<std::ptrdiff_t>(n));
    e.ate_cm = ate_rmse_cm(e_poses, g_poses, true);
    e.trajectory_diameter_m = trajectory_diameter(g_poses);
    if (e.trajectory_diameter_m > 0.0) e.ate_percent = e.ate_cm / e.trajectory_diameter_m;
  }
  e.room_diagonal_m = options.room_diagonal > 0.0 ? options.room_diagonal : grids.bounds().diagonal();

  RaySettings eval_rays = rays;
  eval_rays.stratified = false;
  std::vector<std::vector<double>> est_depth, gt_depth;
  double psnr_sum = 0.0;
  int psnr_frames = 0;
  for (std::size_t f = 0; f < n; f += static_cast<std::size_t>(std::max(1, options.frame_stride))) {
    const RenderedView v = render_view(grids, decoders, k, est[f], eval_rays);
    psnr_sum += psnr(v.rgb, dataset.images[f]);
    ++psnr_frames;
    if (dataset.has_depth()) {
      est_depth.push_back(v.depth);
      const DepthMap& d = dataset.depths[f];
      gt_depth.emplace_back(d.data.begin(), d.data.end());
    }
  }
  e.psnr_db = psnr_sum / psnr_frames;
  if (!est_depth.empty()) {
    e.depth = depth_l1(est_depth, gt_depth);
    e.depth_percent = e.depth.l1_cm / e.room_diagonal_m;
  }

  e.o_init = decoders.o_init ? decoders.o_init->value : decode_opacity(decoders.opacity, OpacityFeatures::Zero());
  e.histogram =
      opacity_histogram(grids, decoders, options.histogram_samples, options.seed, e.o_init, options.histogram_eps);

  if (dataset.has_depth() && options.concentration_rays > 0) {
    std::mt19937_64 rng(options.seed ^ 0xC0FFEEULL);
    std::uniform_int_distribution<std::size_t> uf(0, n - 1);
    std::uniform_int_distribution<int> ux(0, k.width - 1), uy(0, k.height - 1);
    RayBatch batch;
    std::vector<double> gt;
    for (int r = 0; r < options.concentration_rays; ++r) {
      const std::size_t f = uf(rng);
      const int x = ux(rng);
      const int y = uy(rng);
      const Vec2 px(x, y);
      batch.append(make_rays(std::span<const Vec2>(&px, 1), est[f], k, eval_rays));
      gt.push_back(dataset.depths[f].at(x, y));
    }
    const RaySamples samples = sample_rays(batch, eval_rays.samples, false, 0);
    RenderSettings rs;
    rs.transmittance_cutoff = eval_rays.transmittance_cutoff;
    rs.compute_color = false;
    rs.keep_cache = false;
    e.concentration = weight_concentration(render(grids, decoders, batch, samples, rs), samples, gt);
  }
  return e;
}

MetricReport to_report(const RunEvaluation& e) {
  return {
      {"ate_rmse_cm", e.ate_cm},
      {"trajectory_diameter_m", e.trajectory_diameter_m},
      {"ate_percent_of_diameter", e.ate_percent},
      {"depth_l1_cm", e.depth.l1_cm},
      {"depth_scale", e.depth.scale},
      {"depth_frames_excluded", static_cast<double>(e.depth.frames_excluded)},
      {"room_diagonal_m", e.room_diagonal_m},
      {"depth_percent_of_diagonal", e.depth_percent},
      {"psnr_db", e.psnr_db},
      {"o_init", e.o_init},
      {"opacity_mass_near_0", e.histogram.mass_near_0},
      {"opacity_mass_near_1", e.histogram.mass_near_1},
      {"opacity_mass_near_oinit", e.histogram.mass_near_oinit},
      {"opacity_ternary_mass", e.histogram.ternary_mass},
      {"weight_peak", e.concentration.peak_weight},
      {"weight_peak_near_depth", e.concentration.peak_near_depth},
      {"weight_mass_near_depth", e.concentration.mass_within_delta},
  };
}

void write_report_kv(std::ostream& os, const MetricReport& report) {
  os << std::setprecision(10);
  for (const auto& [k, v] : report) os << k << "=" << v << "\n";
}

void write_report_json(std::ostream& os, const MetricReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report) j[k] = v;
  os << j.dump(2) << "\n";
}

}  // namespace ttslam
