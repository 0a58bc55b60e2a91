// SPDX-License-Identifier: Apache-2.0
//
// ttslam generate | run | eval | diag
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 threshold failure.

#include "ttslam/config.hpp"
#include "ttslam/dataset.hpp"
#include "ttslam/eval.hpp"
#include "ttslam/renderer.hpp"
#include "ttslam/slam.hpp"
#include "ttslam/synth.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace ttslam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitThreshold = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int cmd_generate(const std::string& spec_path, const std::string& out_dir, const std::string& dump_spec,
                 bool skip_check) {
  const GenerateSpec spec = spec_path.empty() ? default_generate_spec() : load_generate_spec(spec_path);
  if (!dump_spec.empty()) {
    std::ofstream(dump_spec) << generate_spec_to_json(spec) << "\n";
    if (out_dir.empty()) return kExitOk;
  }
  if (out_dir.empty()) throw UsageError("generate: --out is required");
  const Dataset d = generate_sequence(spec, out_dir);
  std::printf("wrote %d frames to %s\n", d.frame_count(), out_dir.c_str());
  if (skip_check) return kExitOk;
  WarpConsistency total;
  for (int i = 0; i + 3 < d.frame_count(); i += 5) {
    const WarpConsistency w = warp_consistency(d, i, i + 3);
    total.checked += w.checked;
    total.consistent += w.consistent;
  }
  std::printf("warp consistency: %.4f of %zu co-visible samples\n", total.fraction(), total.checked);
  if (total.fraction() < 0.95) {
    std::fprintf(stderr, "warp-consistency self-check failed\n");
    return kExitRuntime;
  }
  return kExitOk;
}

RunConfig build_config(const std::string& preset_name, const std::string& config_path,
                       const std::vector<std::string>& overrides, bool no_tt, bool no_ho, int workers) {
  RunConfig c = preset(preset_name);
  if (!config_path.empty()) c = load_config(config_path, c);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_config_entry(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (no_tt) c.tt_enabled = false;
  if (no_ho) c.ho_enabled = false;
  if (workers >= 0) c.workers = workers;
  c.validate();
  return c;
}

int cmd_run(const std::string& data_dir, const RunConfig& config, const std::string& out_dir, bool quiet) {
  const Dataset dataset = load_dataset(data_dir);
  Slam slam(dataset, config);
  const auto start = std::chrono::steady_clock::now();
  if (!quiet) {
    slam.progress = [start](const std::string& msg) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
    };
  }
  SlamState state = slam.make_state();
  try {
    slam.initialize(state);
    slam.run_groups(state);
  } catch (const std::exception& e) {
    // Emit whatever was estimated so far before reporting the failure.
    save_run(out_dir, state, config, dataset.intrinsics);
    throw;
  }
  save_run(out_dir, state, config, dataset.intrinsics);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::size_t lost = 0;
  for (bool l : state.lost) lost += l;
  std::printf("run finished in %.1f s: %d frames, %zu tracking-lost, %lld skipped steps -> %s\n", s,
              dataset.frame_count(), lost, static_cast<long long>(state.skipped_steps), out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, const std::string& data_dir, double max_ate_pct, double max_depth_pct,
             double min_psnr, int stride) {
  const Dataset dataset = load_dataset(data_dir);
  const RunConfig config = load_config((fs::path(run_dir) / "config.txt").string());
  const std::vector<Pose> est = read_poses(fs::path(run_dir) / "trajectory_est.txt");
  if (est.size() > static_cast<std::size_t>(dataset.frame_count())) {
    throw std::runtime_error("trajectory has more poses than the dataset has frames");
  }
  const MapCheckpoint ck = load_checkpoint(fs::path(run_dir) / "checkpoint.bin");
  const Slam slam(dataset, config);
  EvalOptions opts;
  opts.seed = config.seed;
  opts.frame_stride = stride;
  if (fs::exists(fs::path(data_dir) / "scene.json")) {
    opts.room_diagonal = load_generate_spec(fs::path(data_dir) / "scene.json").scene.room.diagonal();
  }
  const RunEvaluation e = evaluate_run(dataset, est, ck.grids, ck.decoders, slam.ray_settings(), opts);
  const MetricReport report = to_report(e);
  {
    std::ofstream kv(fs::path(run_dir) / "metrics.txt");
    write_report_kv(kv, report);
    std::ofstream js(fs::path(run_dir) / "metrics.json");
    write_report_json(js, report);
  }
  write_report_kv(std::cout, report);
  bool ok = true;
  if (max_ate_pct > 0.0 && !(e.ate_percent < max_ate_pct)) ok = false;
  if (max_depth_pct > 0.0 && !(e.depth_percent < max_depth_pct)) ok = false;
  if (min_psnr > 0.0 && !(e.psnr_db > min_psnr)) ok = false;
  if (!ok) {
    std::fprintf(stderr, "metrics below the requested thresholds\n");
    return kExitThreshold;
  }
  return kExitOk;
}

int cmd_diag(const std::string& run_dir, int ray_count, std::uint64_t seed, std::int64_t histogram_samples) {
  const fs::path dir(run_dir);
  const MapCheckpoint ck = load_checkpoint(dir / "checkpoint.bin");
  const RunConfig config = load_config((dir / "config.txt").string());
  const double o_init =
      ck.decoders.o_init ? ck.decoders.o_init->value : decode_opacity(ck.decoders.opacity, OpacityFeatures::Zero());
  const OpacityHistogram h = opacity_histogram(ck.grids, ck.decoders, histogram_samples, seed, o_init);
  {
    std::ofstream os(dir / "opacity_histogram.csv");
    write_histogram_csv(os, h);
  }
  std::printf("o_init=%.6f ternary_mass=%.4f near0=%.4f near1=%.4f near_oinit=%.4f\n", h.o_init, h.ternary_mass,
              h.mass_near_0, h.mass_near_1, h.mass_near_oinit);

  if (ray_count > 0) {
    const Intrinsics k = read_intrinsics(dir / "intrinsics.txt");
    const std::vector<Pose> poses = read_poses(dir / "trajectory_est.txt");
    if (poses.empty()) throw std::runtime_error("run has no estimated poses");
    RaySettings rays;
    rays.samples = config.samples;
    rays.near = config.near;
    rays.far = config.far > 0.0 ? config.far : ck.grids.bounds().diagonal();
    rays.transmittance_cutoff = config.transmittance_cutoff;
    rays.clip = ck.grids.bounds();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> uf(0, poses.size() - 1);
    std::uniform_int_distribution<int> ux(0, k.width - 1), uy(0, k.height - 1);
    std::ofstream os(dir / "ray_profiles.csv");
    os << "ray,frame,x,y,depth_m,opacity,weight\n";
    for (int r = 0; r < ray_count; ++r) {
      const std::size_t f = uf(rng);
      const Vec2 px(ux(rng), uy(rng));
      const RayBatch batch = make_rays(std::span<const Vec2>(&px, 1), poses[f], k, rays);
      const RaySamples samples = sample_rays(batch, rays.samples, false, 0);
      RenderSettings rs;
      rs.transmittance_cutoff = 0.0;
      rs.compute_color = false;
      const RenderOutput out = render(ck.grids, ck.decoders, batch, samples, rs);
      for (const SampleProfile& p : ray_diagnostics(out, samples, 0)) {
        os << r << "," << f << "," << px.x() << "," << px.y() << "," << p.depth << "," << p.opacity << ","
           << p.weight << "\n";
      }
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-only neural implicit SLAM with ternary-type opacity and hybrid odometry"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, dump_spec;
  bool skip_check = false;
  auto* gen = app.add_subcommand("generate", "Render a synthetic dataset");
  gen->add_option("--spec", spec_path, "Scene/trajectory JSON (default: built-in desk scene)")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output dataset directory");
  gen->add_option("--write-spec", dump_spec, "Also write the effective spec as JSON");
  gen->add_flag("--skip-check", skip_check, "Skip the warp-consistency self-check");

  std::string data_dir, config_path, preset_name = "desk", run_out;
  std::vector<std::string> overrides;
  bool no_tt = false, no_ho = false, quiet = false;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto* run = app.add_subcommand("run", "Run SLAM on a dataset");
  run->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  run->add_option("--out", run_out, "Output run directory")->required();
  run->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
  run->add_option("--preset", preset_name, "Base preset: default, desk, replica, 7scenes")->capture_default_str();
  run->add_option("--set", overrides, "Override a config entry (key=value), repeatable");
  run->add_flag("--no-tt", no_tt, "Ablation: temperature 1 and decoders trained throughout");
  run->add_flag("--no-ho", no_ho, "Ablation: constant-velocity poses instead of tracking");
  run->add_option("--workers", workers, "Worker threads")->capture_default_str();
  run->add_flag("--quiet", quiet, "No progress output");

  std::string eval_run, eval_data;
  double max_ate = 0.0, max_depth = 0.0, min_psnr = 0.0;
  int stride = 1;
  auto* ev = app.add_subcommand("eval", "Compute metrics for a run");
  ev->add_option("--run", eval_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--max-ate-percent", max_ate, "Fail (exit 3) unless ATE < this % of the trajectory diameter");
  ev->add_option("--max-depth-percent", max_depth, "Fail (exit 3) unless depth L1 < this % of the room diagonal");
  ev->add_option("--min-psnr", min_psnr, "Fail (exit 3) unless PSNR > this value (dB)");
  ev->add_option("--frame-stride", stride, "Render every n-th frame for depth/PSNR")->check(CLI::PositiveNumber);

  std::string diag_run;
  int rays = 16;
  std::uint64_t seed = 1;
  std::int64_t hist_samples = 200000;
  auto* dg = app.add_subcommand("diag", "Opacity histogram and ray profile CSVs");
  dg->add_option("--run", diag_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  dg->add_option("--rays", rays, "Number of ray profiles")->capture_default_str();
  dg->add_option("--seed", seed, "Sampling seed")->capture_default_str();
  dg->add_option("--histogram-samples", hist_samples, "Points for the opacity histogram")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(spec_path, out_dir, dump_spec, skip_check);
    if (*run) {
      const RunConfig c = build_config(preset_name, config_path, overrides, no_tt, no_ho, workers);
      return cmd_run(data_dir, c, run_out, quiet);
    }
    if (*ev) return cmd_eval(eval_run, eval_data, max_ate, max_depth, min_psnr, stride);
    if (*dg) return cmd_diag(diag_run, rays, seed, hist_samples);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
