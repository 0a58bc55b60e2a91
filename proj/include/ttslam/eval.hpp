// SPDX-License-Identifier: Apache-2.0
//
// Trajectory, depth and image metrics plus opacity diagnostics.
#pragma once

#include "ttslam/dataset.hpp"
#include "ttslam/decoders.hpp"
#include "ttslam/feature_grid.hpp"
#include "ttslam/geometry.hpp"
#include "ttslam/image.hpp"
#include "ttslam/losses.hpp"
#include "ttslam/renderer.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ttslam {

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  [[nodiscard]] Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Least-squares similarity mapping `est` onto `gt`. Throws
/// std::invalid_argument for fewer than 3 points, mismatched sizes or
/// collinear `est` positions.
[[nodiscard]] Similarity align_umeyama(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, bool with_scale);

[[nodiscard]] std::vector<Vec3> positions(const std::vector<Pose>& poses);

/// RMSE of aligned positions, in centimeters.
[[nodiscard]] double ate_rmse_cm(const std::vector<Pose>& est, const std::vector<Pose>& gt, bool with_scale = true);

/// Largest distance between two GT positions, meters.
[[nodiscard]] double trajectory_diameter(const std::vector<Pose>& poses);

struct DepthL1 {
  double l1_cm = 0.0;
  double scale = 1.0;
  std::size_t frames_used = 0;
  std::size_t frames_excluded = 0;
};

/// Pooled median-ratio rescale (lower medians), 1 m outlier filter, mean L1
/// per frame, averaged over frames. Pixels with non-positive GT are ignored.
[[nodiscard]] DepthL1 depth_l1(const std::vector<std::vector<double>>& est, const std::vector<std::vector<double>>& gt,
                               double outlier_m = 1.0);

inline constexpr double kPsnrCap = 99.0;
[[nodiscard]] double psnr_from_mse(double mse);
[[nodiscard]] double psnr(const Image& est, const Image& gt);

struct OpacityHistogram {
  std::array<double, 101> bin_edges{};
  std::array<std::int64_t, 100> counts{};
  std::int64_t sample_count = 0;
  double o_init = 0.5;
  double eps = 0.05;
  double mass_near_0 = 0.0;
  double mass_near_1 = 0.0;
  double mass_near_oinit = 0.0;
  /// Fraction within eps of any of {0, o_init, 1}.
  double ternary_mass = 0.0;
};

[[nodiscard]] OpacityHistogram opacity_histogram(const FeatureGrids& grids, const Decoders& decoders,
                                                 std::int64_t sample_count, std::uint64_t seed, double o_init,
                                                 double eps = 0.05);
void write_histogram_csv(std::ostream& os, const OpacityHistogram& h);

struct WeightConcentration {
  double peak_weight = 0.0;       // mean over rays of the largest weight
  double peak_near_depth = 0.0;   // mean over rays of the largest weight within delta of GT
  double mass_within_delta = 0.0; // mean over rays of the weight mass within delta of GT
  std::size_t rays = 0;
};

/// `delta` < 0 selects two sample spacings of each ray.
[[nodiscard]] WeightConcentration weight_concentration(const RenderOutput& out, const RaySamples& samples,
                                                       const std::vector<double>& gt_depth, double delta = -1.0);

struct RenderedView {
  Image rgb;
  std::vector<double> depth;  // row-major
};

/// Renders every pixel of a view, evenly spaced samples (no jitter).
[[nodiscard]] RenderedView render_view(const FeatureGrids& grids, const Decoders& decoders, const Intrinsics& k,
                                       const Pose& pose, const RaySettings& rays);

struct EvalOptions {
  std::int64_t histogram_samples = 200000;
  double histogram_eps = 0.05;
  int concentration_rays = 2000;
  int frame_stride = 1;  // frames used for depth and PSNR
  std::uint64_t seed = 1;
  /// Diagonal used to normalize depth error; <= 0 uses the map bounds.
  double room_diagonal = 0.0;
};

/// Everything the acceptance checks and the eval command report about a run.
struct RunEvaluation {
  double ate_cm = 0.0;
  double trajectory_diameter_m = 0.0;
  double ate_percent = 0.0;  // of the trajectory diameter
  DepthL1 depth;
  double room_diagonal_m = 0.0;
  double depth_percent = 0.0;  // of the room diagonal
  double psnr_db = 0.0;
  double o_init = 0.5;
  OpacityHistogram histogram;
  WeightConcentration concentration;
};

/// `est` may be shorter than the dataset (partial runs); metrics use the
/// common prefix. Depth and PSNR need GT depth and are skipped without it.
[[nodiscard]] RunEvaluation evaluate_run(const Dataset& dataset, const std::vector<Pose>& est,
                                         const FeatureGrids& grids, const Decoders& decoders,
                                         const RaySettings& rays, const EvalOptions& options);

using MetricReport = std::map<std::string, double>;
[[nodiscard]] MetricReport to_report(const RunEvaluation& e);
void write_report_kv(std::ostream& os, const MetricReport& report);
void write_report_json(std::ostream& os, const MetricReport& report);

}  // namespace ttslam
