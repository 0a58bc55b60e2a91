// SPDX-License-Identifier: Apache-2.0
#include "ttslam/slam.hpp"

#include "ttslam/random.hpp"

#include <algorithm>
#include <array>
#include <iterator>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ttslam {

namespace {

// Stream tags for seed derivation. Every stochastic stage draws from its own
// stream so that stages can be rerun in isolation with identical results.
enum : std::uint64_t {
  kStreamInit = 1,
  kStreamCloud = 2,
  kStreamKeyframes = 3,
  kStreamBa = 4,
};

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed, stream), a), b);
}

std::vector<Vec2> sample_pixels(std::mt19937_64& rng, const Intrinsics& k, int count, int margin) {
  std::uniform_int_distribution<int> ux(margin, k.width - 1 - margin);
  std::uniform_int_distribution<int> uy(margin, k.height - 1 - margin);
  std::vector<Vec2> px;
  px.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int x = ux(rng);
    const int y = uy(rng);
    px.emplace_back(x, y);
  }
  return px;
}

/// Mean L1 between rendered and GT depth, gradient scaled by `weight`.
double depth_supervision(const FeatureGrids& grids, const Decoders& decoders, const Intrinsics& k,
                         const FrameView& view, const DepthMap& gt, const std::vector<Vec2>& pixels,
                         const RaySettings& settings, std::uint64_t seed, double weight, GridGradient* grid_grad,
                         DecoderGradients* decoder_grad) {
  if (pixels.empty()) return 0.0;
  const RayBatch rays = make_rays(pixels, view.pose, k, settings);
  const RaySamples samples = sample_rays(rays, settings.samples, settings.stratified, seed);
  RenderSettings rs;
  rs.transmittance_cutoff = settings.transmittance_cutoff;
  rs.compute_color = false;
  const RenderOutput out = render(grids, decoders, rays, samples, rs);
  const double inv = 1.0 / static_cast<double>(pixels.size());
  std::vector<double> d_depth(pixels.size());
  double total = 0.0;
  for (std::size_t r = 0; r < pixels.size(); ++r) {
    const double e = out.depth[r] - gt.at(static_cast<int>(pixels[r].x()), static_cast<int>(pixels[r].y()));
    total += std::abs(e);
    d_depth[r] = (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) * inv * weight;
  }
  render_backward(grids, decoders, rays, samples, out, {}, d_depth, {grid_grad, decoder_grad, nullptr});
  return total * inv;
}

}  // namespace

int group_count(int frame_count, int n0, int group_size) {
  if (frame_count <= n0) return 0;
  return (frame_count - n0 + group_size - 1) / group_size;
}

std::vector<int> group_frames(int m, int n0, int group_size, int frame_count) {
  std::vector<int> out;
  const int begin = m == 0 ? 0 : n0 + (m - 1) * group_size;
  const int end = std::min(frame_count, m == 0 ? n0 : n0 + m * group_size);
  for (int i = begin; i < end; ++i) out.push_back(i);
  return out;
}

std::vector<int> tracking_set(int m, int n0, int group_size, int window) {
  if (m < 1) throw std::invalid_argument("tracking set is defined for groups after initialization");
  const int last = n0 + (m - 1) * group_size - 1;  // last frame of group m-1
  const int first_of_prev = m == 1 ? 0 : n0 + (m - 2) * group_size;
  std::vector<int> out;
  for (int i = std::max(first_of_prev, last - window + 1); i <= last; ++i) out.push_back(i);
  return out;
}

std::vector<int> keyframe_candidates(int m, int n0, int group_size, int every) {
  const int first = m == 0 ? 0 : n0 + (m - 1) * group_size;
  std::vector<int> out;
  for (int i = 0; i < first; i += every) out.push_back(i);
  return out;
}

Box3 dataset_bounds(const Dataset& dataset) {
  if (dataset.bounds) return *dataset.bounds;
  return bounds_from_depth(dataset, 0.2);
}

Slam::Slam(const Dataset& dataset, RunConfig config) : dataset_(dataset), config_(std::move(config)) {
  config_.validate();
  if (dataset_.frame_count() < config_.n0) {
    throw std::invalid_argument("dataset has fewer frames than the initialization window");
  }
  if (!dataset_.has_gt_poses()) throw std::invalid_argument("GT poses of the first two frames are required");
  bounds_ = dataset_bounds(dataset_);
  rays_.samples = config_.samples;
  rays_.stratified = config_.stratified;
  rays_.near = config_.near;
  rays_.far = config_.far > 0.0 ? config_.far : bounds_.diagonal();
  rays_.transmittance_cutoff = config_.transmittance_cutoff;
  rays_.clip = bounds_;
}

SlamState Slam::make_state() const {
  SlamState s;
  s.grids = FeatureGrids(bounds_, config_.voxel_sizes);
  s.decoders = Decoders::create(config_.effective_tau_opacity(), config_.effective_tau_color(), config_.seed);
  const auto n = static_cast<std::size_t>(dataset_.frame_count());
  s.poses.assign(n, Pose::identity());
  s.estimated.assign(n, false);
  s.lost.assign(n, false);
  s.poses[0] = dataset_.gt_poses[0];
  s.poses[1] = dataset_.gt_poses[1];
  for (int i = 2; i < config_.n0; ++i) {
    s.poses[static_cast<std::size_t>(i)] =
        constant_velocity_predict(s.poses[static_cast<std::size_t>(i - 2)], s.poses[static_cast<std::size_t>(i - 1)]);
  }
  for (int i = 0; i < config_.n0; ++i) s.estimated[static_cast<std::size_t>(i)] = true;
  s.opacity_adam.emplace(s.decoders.opacity.parameter_count(), AdamParams{config_.lr_decoder});
  s.color_adam.emplace(s.decoders.color.parameter_count(), AdamParams{config_.lr_decoder});
  return s;
}

void Slam::initialize(SlamState& state) const {
  const RunConfig& c = config_;
  const Intrinsics& k = dataset_.intrinsics;
  const int n0 = c.n0;
  const int margin = c.loss.max_patch_size() / 2;
  SparseGridAdam grid_adam(state.grids, AdamParams{c.lr_grid});
  PoseAdam pose_adam(static_cast<std::size_t>(n0), AdamParams{c.lr_pose_ba}, c.pose_clip);
  GridGradient grid_grad(state.grids);
  DecoderGradients dec_grad = DecoderGradients::zeros_like(state.decoders);
  std::vector<Vec6> pose_grad(static_cast<std::size_t>(n0));
  std::vector<Pose> poses(state.poses.begin(), state.poses.begin() + n0);
  std::vector<bool> trainable(static_cast<std::size_t>(n0), false);
  const bool depth_sup = c.init_depth_supervision && dataset_.has_depth();

  for (int it = 0; it < c.init_iters; ++it) {
    std::mt19937_64 rng(stage_seed(c.seed, kStreamInit, static_cast<std::uint64_t>(it)));
    const bool with_rgb = it >= c.init_warp_only_iters;
    const bool train_poses = it >= c.init_pose_start;
    std::vector<FrameView> views;
    std::vector<std::vector<Vec2>> centers, pixels;
    for (int i = 0; i < n0; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      trainable[ui] = train_poses && i >= 2;
      views.push_back({i, &dataset_.images[ui], poses[ui], trainable[ui]});
      centers.push_back(sample_pixels(rng, k, c.warp_pixels, margin));
      pixels.push_back(with_rgb || depth_sup ? sample_pixels(rng, k, c.ba_pixels, 0) : std::vector<Vec2>{});
    }
    grid_grad.clear();
    dec_grad.clear();
    std::fill(pose_grad.begin(), pose_grad.end(), Vec6::Zero());
    const std::uint64_t render_seed = stage_seed(c.seed, kStreamInit, static_cast<std::uint64_t>(it), 1);
    LossGradients sinks{&grid_grad, &dec_grad, &pose_grad, c.loss.alpha_warping};
    const double warp = warping_loss(views, centers, state.grids, state.decoders, k, c.loss, rays_, render_seed,
                                     sinks, c.min_valid_reprojections);
    double rgb = 0.0;
    if (with_rgb) {
      sinks.scale = c.loss.alpha_rgb;
      rgb = rgb_loss(views, pixels, state.grids, state.decoders, k, rays_, render_seed ^ 0x1, sinks);
    }
    double depth = 0.0;
    if (depth_sup) {
      for (int i = 0; i < 2; ++i) {
        depth += depth_supervision(state.grids, state.decoders, k, views[static_cast<std::size_t>(i)],
                                   dataset_.depths[static_cast<std::size_t>(i)], pixels[static_cast<std::size_t>(i)],
                                   rays_, render_seed ^ (0x10 + static_cast<std::uint64_t>(i)), c.init_depth_weight,
                                   &grid_grad, &dec_grad);
      }
    }
    const double total = c.loss.alpha_warping * warp + (with_rgb ? c.loss.alpha_rgb * rgb : 0.0) +
                         c.init_depth_weight * depth;
    if (!std::isfinite(total)) {
      std::ostringstream msg;
      msg << "initialization diverged at iteration " << it << " (warping=" << warp << ", rgb=" << rgb
          << ", depth=" << depth << ")";
      throw std::runtime_error(msg.str());
    }
    state.log.push_back({"init", 0, -1, it, rgb, warp, total});
    if (!grid_adam.step(state.grids, grid_grad)) ++state.skipped_steps;
    if (!state.opacity_adam->step(state.decoders.opacity.mutable_parameters(), dec_grad.opacity)) ++state.skipped_steps;
    if (!state.color_adam->step(state.decoders.color.mutable_parameters(), dec_grad.color)) ++state.skipped_steps;
    if (train_poses && !pose_adam.step(poses, pose_grad, trainable)) ++state.skipped_steps;
    if (it % 100 == 0) {
      std::ostringstream msg;
      msg << "init " << it << "/" << c.init_iters << " warp=" << warp << " rgb=" << rgb;
      report(msg.str());
    }
  }
  std::copy(poses.begin(), poses.end(), state.poses.begin());
  if (c.tt_enabled) {
    state.decoders.o_init = freeze_and_record_oinit(state.decoders.opacity);
    state.decoders.color.freeze();
    state.opacity_adam.reset();
    state.color_adam.reset();
  }
}

TrackingPointCloud Slam::build_tracking_cloud(const SlamState& state, const std::vector<int>& frames, int point_count,
                                              std::uint64_t seed) const {
  TrackingPointCloud cloud;
  if (frames.empty()) return cloud;
  const Intrinsics& k = dataset_.intrinsics;
  std::mt19937_64 rng(seed);
  RaySettings settings = rays_;
  settings.stratified = false;
  RenderSettings rs;
  rs.transmittance_cutoff = rays_.transmittance_cutoff;
  rs.compute_color = false;
  rs.keep_cache = false;
  const int per_frame = point_count / static_cast<int>(frames.size());
  const int extra = point_count % static_cast<int>(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const int frame = frames[f];
    const int count = per_frame + (static_cast<int>(f) < extra ? 1 : 0);
    const std::vector<Vec2> pixels = sample_pixels(rng, k, count, 0);
    const Pose& pose = state.poses[static_cast<std::size_t>(frame)];
    const RayBatch rays = make_rays(pixels, pose, k, settings);
    const RaySamples samples = sample_rays(rays, settings.samples, false, 0);
    const RenderOutput out = render(state.grids, state.decoders, rays, samples, rs);
    for (std::size_t r = 0; r < pixels.size(); ++r) {
      if (!(out.depth[r] > 0.0)) continue;
      cloud.points.push_back(unproject(pixels[r], out.depth[r], pose, k));
      cloud.colors.push_back(
          dataset_.images[static_cast<std::size_t>(frame)].at(static_cast<int>(pixels[r].x()), static_cast<int>(pixels[r].y())));
      cloud.source_frames.push_back(frame);
    }
  }
  return cloud;
}

Slam::TrackResult Slam::track_frame(const TrackingPointCloud& cloud, int frame, const Pose& prev2, const Pose& prev1,
                                    int iterations, SlamState* log_state, int group) const {
  const Intrinsics& k = dataset_.intrinsics;
  const Image& image = dataset_.images[static_cast<std::size_t>(frame)];
  TrackResult best;
  best.pose = constant_velocity_predict(prev2, prev1);
  const TrackingLossResult first = tracking_loss(cloud, image, best.pose, k);
  best.loss = first.loss;
  if (first.lost() || first.gradient.isZero(0.0)) {
    // Nothing to align against: keep the motion-model pose and flag the frame.
    best.lost = true;
    return best;
  }
  PoseAdam adam(1, AdamParams{config_.lr_pose_tracking}, config_.pose_clip);
  Pose pose = best.pose;
  TrackingLossResult current = first;
  for (int it = 0; it < iterations; ++it) {
    if (log_state) log_state->log.push_back({"track", group, frame, it, current.loss, 0.0, current.loss});
    std::array<Pose, 1> p{pose};
    std::array<Vec6, 1> g{current.gradient};
    if (!adam.step(p, g) && log_state) ++log_state->skipped_steps;
    pose = p[0];
    current = tracking_loss(cloud, image, pose, k);
    if (!current.lost() && current.loss < best.loss) {
      best.loss = current.loss;
      best.pose = pose;
    }
  }
  return best;
}

double Slam::overlap_ratio(const SlamState& state, int keyframe, const Pose& target) const {
  const Intrinsics& k = dataset_.intrinsics;
  const int n = config_.overlap_lattice;
  std::vector<Vec2> pixels;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      pixels.emplace_back(std::floor((i + 0.5) * k.width / n), std::floor((j + 0.5) * k.height / n));
    }
  }
  const Pose& pose = state.poses[static_cast<std::size_t>(keyframe)];
  const RayBatch rays = make_rays(pixels, pose, k, rays_);
  const RaySamples samples = sample_rays(rays, rays_.samples, false, 0);
  RenderSettings rs;
  rs.transmittance_cutoff = rays_.transmittance_cutoff;
  rs.compute_color = false;
  rs.keep_cache = false;
  const RenderOutput out = render(state.grids, state.decoders, rays, samples, rs);
  std::size_t inside = 0;
  for (std::size_t r = 0; r < pixels.size(); ++r) {
    if (!(out.depth[r] > 0.0)) continue;
    const Projection p = project(unproject(pixels[r], out.depth[r], pose, k), target, k);
    if (p.valid && k.contains(p.pixel)) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(pixels.size());
}

std::vector<int> Slam::select_keyframes(const SlamState& state, const std::vector<int>& candidates, int last_frame,
                                        std::uint64_t seed) const {
  const Pose& target = state.poses[static_cast<std::size_t>(last_frame)];
  std::vector<int> passing;
  for (int h : candidates) {
    if (overlap_ratio(state, h, target) >= config_.keyframe_overlap) passing.push_back(h);
  }
  const auto limit = static_cast<std::size_t>(config_.keyframe_max);
  if (passing.empty()) {
    // No keyframe overlaps enough: fall back to the most recent ones.
    std::vector<int> recent(candidates.end() - static_cast<std::ptrdiff_t>(std::min(limit, candidates.size())),
                            candidates.end());
    return recent;
  }
  if (passing.size() <= limit) return passing;
  std::mt19937_64 rng(seed);
  std::vector<int> chosen;
  std::sample(passing.begin(), passing.end(), std::back_inserter(chosen), static_cast<std::ptrdiff_t>(limit), rng);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

void Slam::bundle_adjust(SlamState& state, const std::vector<int>& group, const std::vector<int>& keyframes,
                         int m) const {
  const RunConfig& c = config_;
  if (c.ba_iters == 0 || group.empty()) return;
  const Intrinsics& k = dataset_.intrinsics;
  const int margin = c.loss.max_patch_size() / 2;
  std::vector<int> members = group;
  members.insert(members.end(), keyframes.begin(), keyframes.end());
  const std::size_t nv = members.size();
  std::vector<Pose> poses;
  std::vector<bool> trainable;
  for (std::size_t v = 0; v < nv; ++v) {
    poses.push_back(state.poses[static_cast<std::size_t>(members[v])]);
    trainable.push_back(v < group.size());
  }
  SparseGridAdam grid_adam(state.grids, AdamParams{c.lr_grid});
  PoseAdam pose_adam(nv, AdamParams{c.lr_pose_ba}, c.pose_clip);
  GridGradient grid_grad(state.grids);
  const bool train_decoders = !state.decoders.opacity.frozen();
  DecoderGradients dec_grad = DecoderGradients::zeros_like(state.decoders);
  std::vector<Vec6> pose_grad(nv);

  for (int it = 0; it < c.ba_iters; ++it) {
    std::mt19937_64 rng(stage_seed(c.seed, kStreamBa, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(it)));
    std::vector<FrameView> views;
    std::vector<std::vector<Vec2>> centers, pixels;
    for (std::size_t v = 0; v < nv; ++v) {
      views.push_back({members[v], &dataset_.images[static_cast<std::size_t>(members[v])], poses[v], trainable[v]});
      centers.push_back(sample_pixels(rng, k, c.warp_pixels, margin));
      pixels.push_back(sample_pixels(rng, k, c.ba_pixels, 0));
    }
    grid_grad.clear();
    dec_grad.clear();
    std::fill(pose_grad.begin(), pose_grad.end(), Vec6::Zero());
    const std::uint64_t render_seed =
        stage_seed(c.seed, kStreamBa, static_cast<std::uint64_t>(m), (static_cast<std::uint64_t>(it) << 8) | 1);
    DecoderGradients* dg = train_decoders ? &dec_grad : nullptr;
    LossGradients sinks{&grid_grad, dg, &pose_grad, c.loss.alpha_rgb};
    const double rgb = c.loss.alpha_rgb > 0.0
                           ? rgb_loss(views, pixels, state.grids, state.decoders, k, rays_, render_seed, sinks)
                           : 0.0;
    sinks.scale = c.loss.alpha_warping;
    const double warp = c.loss.alpha_warping > 0.0
                            ? warping_loss(views, centers, state.grids, state.decoders, k, c.loss, rays_,
                                           render_seed ^ 0x2, sinks, c.min_valid_reprojections)
                            : 0.0;
    const double total = ba_total(rgb, warp, c.loss);
    state.log.push_back({"ba", m, -1, it, rgb, warp, total});
    if (!std::isfinite(total)) {
      ++state.skipped_steps;
      continue;
    }
    if (!grid_adam.step(state.grids, grid_grad)) ++state.skipped_steps;
    if (train_decoders) {
      if (!state.opacity_adam->step(state.decoders.opacity.mutable_parameters(), dec_grad.opacity)) ++state.skipped_steps;
      if (!state.color_adam->step(state.decoders.color.mutable_parameters(), dec_grad.color)) ++state.skipped_steps;
    }
    if (!pose_adam.step(poses, pose_grad, trainable)) ++state.skipped_steps;
  }
  for (std::size_t v = 0; v < group.size(); ++v) state.poses[static_cast<std::size_t>(members[v])] = poses[v];
}

void Slam::process_group(SlamState& state, int m) const {
  const RunConfig& c = config_;
  const std::vector<int> frames = group_frames(m, c.n0, c.group_size, dataset_.frame_count());
  if (frames.empty()) return;
  if (c.ho_enabled) {
    const TrackingPointCloud cloud =
        build_tracking_cloud(state, tracking_set(m, c.n0, c.group_size, c.tracking_window), c.tracking_points,
                             stage_seed(c.seed, kStreamCloud, static_cast<std::uint64_t>(m)));
    for (int f : frames) {
      const auto uf = static_cast<std::size_t>(f);
      const TrackResult r = track_frame(cloud, f, state.poses[uf - 2], state.poses[uf - 1], c.tracking_iters, &state, m);
      state.poses[uf] = r.pose;
      state.lost[uf] = r.lost;
      state.estimated[uf] = true;
    }
  } else {
    for (int f : frames) {
      const auto uf = static_cast<std::size_t>(f);
      state.poses[uf] = constant_velocity_predict(state.poses[uf - 2], state.poses[uf - 1]);
      state.estimated[uf] = true;
    }
  }
  const std::vector<int> keyframes =
      select_keyframes(state, keyframe_candidates(m, c.n0, c.group_size, c.keyframe_every), frames.back(),
                       stage_seed(c.seed, kStreamKeyframes, static_cast<std::uint64_t>(m)));
  {
    std::ostringstream msg;
    msg << "group " << m << ": frames " << frames.front() << ".." << frames.back() << ", " << keyframes.size()
        << " keyframes";
    report(msg.str());
  }
  bundle_adjust(state, frames, keyframes, m);
  state.groups_done = m;
}

void Slam::run_groups(SlamState& state) const {
  const int groups = group_count(dataset_.frame_count(), config_.n0, config_.group_size);
  for (int m = state.groups_done + 1; m <= groups; ++m) process_group(state, m);
}

SlamState run_slam(const Dataset& dataset, const RunConfig& config, std::function<void(const std::string&)> progress) {
  Slam slam(dataset, config);
  slam.progress = std::move(progress);
  SlamState state = slam.make_state();
  slam.initialize(state);
  slam.run_groups(state);
  return state;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log, const std::string& stage) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(10);
  if (stage == "track") {
    os << "group,frame,iteration,loss\n";
  } else {
    os << "group,iteration,rgb,warping,total\n";
  }
  for (const LossRecord& r : log) {
    if (r.stage != stage) continue;
    if (stage == "track") {
      os << r.group << "," << r.frame << "," << r.iteration << "," << r.total << "\n";
    } else {
      os << r.group << "," << r.iteration << "," << r.rgb << "," << r.warping << "," << r.total << "\n";
    }
  }
}

void save_run(const std::filesystem::path& out_dir, const SlamState& state, const RunConfig& config,
              const Intrinsics& intrinsics) {
  std::filesystem::create_directories(out_dir);
  write_intrinsics(out_dir / "intrinsics.txt", intrinsics);
  std::vector<Pose> estimated;
  for (std::size_t i = 0; i < state.poses.size() && state.estimated[i]; ++i) estimated.push_back(state.poses[i]);
  write_poses(out_dir / "trajectory_est.txt", estimated);
  save_checkpoint(out_dir / "checkpoint.bin", state.grids, state.decoders);
  {
    std::ofstream os(out_dir / "flags.txt");
    os << "# tracking-lost frames\n";
    for (std::size_t i = 0; i < state.lost.size(); ++i) {
      if (state.lost[i]) os << i << "\n";
    }
  }
  {
    std::ofstream os(out_dir / "config.txt");
    write_config(os, config);
  }
  write_loss_csv(out_dir / "losses_init.csv", state.log, "init");
  write_loss_csv(out_dir / "losses_ba.csv", state.log, "ba");
  write_loss_csv(out_dir / "losses_track.csv", state.log, "track");
}

}  // namespace ttslam
