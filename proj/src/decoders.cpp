// SPDX-License-Identifier: Apache-2.0
#include "ttslam/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace ttslam {

double TemperedSigmoid::operator()(double x) const {
  const double z = tau * x;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::array<int, 5> DecoderNet::layer_dims() const {
  return {input_dim_, kHiddenWidth, kHiddenWidth, kHiddenWidth, output_dim_};
}

std::size_t DecoderNet::layer_offset(int layer) const {
  const auto dims = layer_dims();
  std::size_t offset = 0;
  for (int l = 0; l < layer; ++l) {
    offset += static_cast<std::size_t>(dims[l + 1]) * (dims[l] + 1);
  }
  return offset;
}

DecoderNet::DecoderNet(int input_dim, int output_dim, double tau, std::uint64_t seed)
    : input_dim_(input_dim), output_dim_(output_dim), activation_{tau} {
  if (input_dim <= 0 || output_dim <= 0) throw std::invalid_argument("decoder: bad dimensions");
  if (!(tau > 0.0)) throw std::invalid_argument("decoder: temperature must be positive");
  params_.assign(layer_offset(kHiddenLayers + 1), 0.0);
  std::mt19937_64 rng(seed);
  const auto dims = layer_dims();
  for (int l = 0; l <= kHiddenLayers; ++l) {
    const double bound = std::sqrt(6.0 / dims[l]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    double* w = params_.data() + layer_offset(l);
    const std::size_t n = static_cast<std::size_t>(dims[l + 1]) * dims[l];
    for (std::size_t i = 0; i < n; ++i) w[i] = dist(rng);
  }
}

DecoderNet DecoderNet::zeros(int input_dim, int output_dim, double tau) {
  DecoderNet net(input_dim, output_dim, tau, 0);
  std::fill(net.params_.begin(), net.params_.end(), 0.0);
  return net;
}

void DecoderNet::set_tau(double tau) {
  if (frozen_) throw std::logic_error("decoder: cannot change a frozen net");
  if (!(tau > 0.0)) throw std::invalid_argument("decoder: temperature must be positive");
  activation_.tau = tau;
}

std::span<double> DecoderNet::mutable_parameters() {
  if (frozen_) throw std::logic_error("decoder: parameters of a frozen net are immutable");
  return params_;
}

Eigen::Map<const RowMatrix> DecoderNet::weight(int layer) const {
  const auto dims = layer_dims();
  return {params_.data() + layer_offset(layer), dims[layer + 1], dims[layer]};
}

Eigen::Map<const Eigen::VectorXd> DecoderNet::bias(int layer) const {
  const auto dims = layer_dims();
  return {params_.data() + layer_offset(layer) + static_cast<std::size_t>(dims[layer + 1]) * dims[layer],
          dims[layer + 1]};
}

void DecoderNet::load_parameters(std::span<const double> values) {
  auto dst = mutable_parameters();
  if (values.size() != dst.size()) throw std::invalid_argument("decoder: parameter count mismatch");
  std::copy(values.begin(), values.end(), dst.begin());
}

void DecoderNet::restore(std::span<const double> values, bool frozen) {
  if (values.size() != params_.size()) throw std::invalid_argument("decoder: parameter count mismatch");
  std::copy(values.begin(), values.end(), params_.begin());
  frozen_ = frozen;
}

namespace {
// Columns per block; keeps the activations of a block in cache.
constexpr Eigen::Index kBlock = 512;
}  // namespace

// Hidden activations of columns [s, s+m) into h. When `active` is given it
// receives the ReLU derivative, taken as 1 at zero: with zero features and
// zero biases every pre-activation is exactly 0 and the usual choice of 0
// there would block all gradient to a freshly initialized map.
void DecoderNet::hidden_block(const Matrix& input, Eigen::Index s, Eigen::Index m,
                              std::array<Matrix, kHiddenLayers>& h,
                              std::array<Matrix, kHiddenLayers>* active) const {
  for (int l = 0; l < kHiddenLayers; ++l) {
    auto& cur = h[static_cast<std::size_t>(l)];
    cur.resize(kHiddenWidth, m);
    if (l == 0) {
      cur.noalias() = weight(0) * input.middleCols(s, m);
    } else {
      cur.noalias() = weight(l) * h[static_cast<std::size_t>(l - 1)];
    }
    cur.colwise() += bias(l);
    if (active) (*active)[static_cast<std::size_t>(l)] = (cur.array() >= 0.0).cast<double>().matrix();
    cur = cur.cwiseMax(0.0);
  }
}

Matrix DecoderNet::forward(const Matrix& input, MlpCache* cache) const {
  if (input.rows() != input_dim_) throw std::invalid_argument("decoder: input has wrong dimension");
  const Eigen::Index n = input.cols();
  Matrix out(output_dim_, n);
  std::array<Matrix, kHiddenLayers> h;
  for (Eigen::Index s = 0; s < n; s += kBlock) {
    const Eigen::Index m = std::min(kBlock, n - s);
    hidden_block(input, s, m, h);
    auto o = out.middleCols(s, m);
    o.noalias() = weight(kHiddenLayers) * h.back();
    o.colwise() += bias(kHiddenLayers);
  }
  out = out.unaryExpr([this](double x) { return activation_(x); });
  if (cache) {
    cache->input = input;
    cache->output = out;
  }
  return out;
}

Matrix DecoderNet::backward(const MlpCache& cache, const Matrix& d_output,
                            std::span<double> param_grads) const {
  if (d_output.rows() != output_dim_ || d_output.cols() != cache.output.cols() ||
      cache.input.cols() != cache.output.cols()) {
    throw std::invalid_argument("decoder: upstream gradient shape does not match the forward pass");
  }
  const bool want_params = !param_grads.empty();
  if (want_params && frozen_) throw std::logic_error("decoder: frozen net has no parameter gradients");
  if (want_params && param_grads.size() != params_.size()) {
    throw std::invalid_argument("decoder: parameter gradient buffer has wrong size");
  }
  const auto dims = layer_dims();
  const Eigen::Index n = d_output.cols();
  Matrix d_input(input_dim_, n);
  std::array<Matrix, kHiddenLayers> h;
  std::array<Matrix, kHiddenLayers> active;
  Matrix delta;
  Matrix d_in;
  for (Eigen::Index s = 0; s < n; s += kBlock) {
    const Eigen::Index m = std::min(kBlock, n - s);
    hidden_block(cache.input, s, m, h, &active);
    // dL/dpre-activation of the output layer
    delta = d_output.middleCols(s, m).cwiseProduct(cache.output.middleCols(s, m).unaryExpr(
        [this](double y) { return activation_.derivative_from_output(y); }));
    for (int l = kHiddenLayers; l >= 0; --l) {
      if (want_params) {
        double* base = param_grads.data() + layer_offset(l);
        Eigen::Map<RowMatrix> dw(base, dims[l + 1], dims[l]);
        Eigen::Map<Eigen::VectorXd> db(base + static_cast<std::size_t>(dims[l + 1]) * dims[l], dims[l + 1]);
        if (l == 0) {
          dw.noalias() += delta * cache.input.middleCols(s, m).transpose();
        } else {
          dw.noalias() += delta * h[static_cast<std::size_t>(l - 1)].transpose();
        }
        db += delta.rowwise().sum();
      }
      if (l == 0) {
        d_input.middleCols(s, m).noalias() = weight(0).transpose() * delta;
        break;
      }
      d_in.noalias() = weight(l).transpose() * delta;
      delta = d_in.cwiseProduct(active[static_cast<std::size_t>(l - 1)]);
    }
  }
  return d_input;
}

Decoders Decoders::create(double tau_opacity, double tau_color, std::uint64_t seed) {
  Decoders d;
  d.opacity = DecoderNet(kOpacityFeatures, 1, tau_opacity, seed);
  d.color = DecoderNet(kColorFeatures, 3, tau_color, seed ^ 0x9e3779b97f4a7c15ULL);
  return d;
}

double decode_opacity(const DecoderNet& net, const OpacityFeatures& f) {
  return net.forward(Matrix(f))(0, 0);
}

Vec3 decode_color(const DecoderNet& net, const ColorFeatures& f) {
  const Matrix out = net.forward(Matrix(f));
  return {out(0, 0), out(1, 0), out(2, 0)};
}

DecoderBackward decoder_backward(const DecoderNet& net, const Eigen::VectorXd& input,
                                 const Eigen::VectorXd& upstream) {
  if (input.size() != net.input_dim() || upstream.size() != net.output_dim()) {
    throw std::invalid_argument("decoder_backward: shape mismatch");
  }
  MlpCache cache;
  (void)net.forward(Matrix(input), &cache);
  DecoderBackward out;
  if (net.frozen()) {
    out.input_grad = net.backward(cache, Matrix(upstream));
  } else {
    std::vector<double> grads(net.parameter_count(), 0.0);
    out.input_grad = net.backward(cache, Matrix(upstream), grads);
    out.parameter_grads = std::move(grads);
  }
  return out;
}

OInit freeze_and_record_oinit(DecoderNet& opacity_net) {
  if (opacity_net.frozen()) throw std::logic_error("o_init already recorded: decoder is frozen");
  opacity_net.freeze();
  return OInit{decode_opacity(opacity_net, OpacityFeatures::Zero())};
}

}  // namespace ttslam
