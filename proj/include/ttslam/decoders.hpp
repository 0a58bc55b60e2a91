// SPDX-License-Identifier: Apache-2.0
//
// Opacity and color decoders: small ReLU MLPs whose output passes through a
// sigmoid with temperature tau. With tau >> 1 the opacity output is pushed
// toward {0, 1}.
//
// Parameter layout (also the serialization order): for each of the four
// layers, the weight matrix (out x in, row-major) followed by the bias.
#pragma once

#include "ttslam/feature_grid.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ttslam {

using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Parameter storage. Eigen picks its reduction order from the data address,
/// so an aligned buffer keeps results bit-identical from run to run.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct TemperedSigmoid {
  double tau = 10.0;

  [[nodiscard]] double operator()(double x) const;
  /// Derivative expressed through the output value y = sigma(x).
  [[nodiscard]] double derivative_from_output(double y) const { return tau * y * (1.0 - y); }
};

inline constexpr int kHiddenWidth = 32;
inline constexpr int kHiddenLayers = 3;

/// What backward needs from a batched forward pass; one column per sample.
/// Hidden activations are recomputed block by block during backward, which is
/// cheaper than streaming them through memory.
struct MlpCache {
  Matrix input;
  Matrix output;  // after the tempered sigmoid
};

class DecoderNet {
 public:
  DecoderNet() = default;
  /// He-uniform weights from `seed`, zero biases.
  DecoderNet(int input_dim, int output_dim, double tau, std::uint64_t seed);
  /// All parameters zero; used by tests.
  static DecoderNet zeros(int input_dim, int output_dim, double tau);

  [[nodiscard]] int input_dim() const { return input_dim_; }
  [[nodiscard]] int output_dim() const { return output_dim_; }
  [[nodiscard]] const TemperedSigmoid& activation() const { return activation_; }
  [[nodiscard]] bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  /// Only allowed while the net is trainable.
  void set_tau(double tau);

  [[nodiscard]] std::size_t parameter_count() const { return params_.size(); }
  [[nodiscard]] std::span<const double> parameters() const { return params_; }
  /// Mutable access; throws std::logic_error once frozen.
  [[nodiscard]] std::span<double> mutable_parameters();

  /// Batched forward pass, `input` is input_dim x samples.
  [[nodiscard]] Matrix forward(const Matrix& input, MlpCache* cache = nullptr) const;
  /// Returns dL/dinput for dL/doutput = d_output. Parameter gradients are
  /// accumulated into `param_grads` (size parameter_count()) when non-null;
  /// requesting them from a frozen net throws std::logic_error.
  [[nodiscard]] Matrix backward(const MlpCache& cache, const Matrix& d_output,
                                std::span<double> param_grads = {}) const;

  // Layer views into the flat parameter vector.
  [[nodiscard]] Eigen::Map<const RowMatrix> weight(int layer) const;
  [[nodiscard]] Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  /// Replaces every parameter; throws when frozen or on size mismatch.
  void load_parameters(std::span<const double> values);
  /// Restores parameters and frozen flag, bypassing the freeze guard (checkpoint loading).
  void restore(std::span<const double> values, bool frozen);

 private:
  [[nodiscard]] std::array<int, 5> layer_dims() const;
  [[nodiscard]] std::size_t layer_offset(int layer) const;
  void hidden_block(const Matrix& input, Eigen::Index s, Eigen::Index m, std::array<Matrix, kHiddenLayers>& h,
                    std::array<Matrix, kHiddenLayers>* active = nullptr) const;

  int input_dim_ = 0;
  int output_dim_ = 0;
  TemperedSigmoid activation_;
  ParamVector params_;
  bool frozen_ = false;
};

/// The opacity value decoded from the all-zero feature vector, fixed when the
/// opacity decoder is frozen.
struct OInit {
  double value = 0.5;
};

struct Decoders {
  DecoderNet opacity;
  DecoderNet color;
  std::optional<OInit> o_init;

  static Decoders create(double tau_opacity, double tau_color, std::uint64_t seed);
};

[[nodiscard]] double decode_opacity(const DecoderNet& net, const OpacityFeatures& f);
[[nodiscard]] Vec3 decode_color(const DecoderNet& net, const ColorFeatures& f);

struct DecoderBackward {
  Eigen::VectorXd input_grad;
  std::optional<std::vector<double>> parameter_grads;
};

/// Single-sample backward pass. Parameter gradients are only produced for a
/// trainable net. Throws std::invalid_argument on shape mismatch.
[[nodiscard]] DecoderBackward decoder_backward(const DecoderNet& net, const Eigen::VectorXd& input,
                                               const Eigen::VectorXd& upstream);

/// Freezes the net and records o_init = net(0). A second call throws std::logic_error.
OInit freeze_and_record_oinit(DecoderNet& opacity_net);

}  // namespace ttslam
