/* Copyright 2026 The fdistill Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fdistill/matrix.hpp"

namespace fdistill {

enum class Activation { tanh, silu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

// Width of the sinusoidal log-sigma embedding appended to conditioned inputs.
inline constexpr std::size_t kSigmaFeatures = 16;

// sin/cos of c * freq_j for eight log-spaced frequencies in [1, 32], with
// c = log(sigma) / 4.
void sigma_features(double sigma, std::span<double> out);

// Fixed-topology MLP: affine layers with an activation between them and a
// linear head. Parameters are laid out layer by layer as W (in x out,
// in-major) followed by the bias.
class FeedForwardNet {
 public:
  FeedForwardNet() = default;
  // widths.front() counts the embedding features when sigma_conditioned.
  FeedForwardNet(std::vector<std::size_t> widths, Activation activation, bool sigma_conditioned);

  static std::size_t parameter_count_for(const std::vector<std::size_t>& widths);

  const std::vector<std::size_t>& widths() const { return widths_; }
  Activation activation() const { return activation_; }
  bool sigma_conditioned() const { return conditioned_; }
  std::size_t layer_count() const { return widths_.size() - 1; }
  std::size_t data_width() const { return widths_.front() - (conditioned_ ? kSigmaFeatures : 0); }
  std::size_t output_width() const { return widths_.back(); }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<const double> parameters() const { return params_; }
  // Any mutable access invalidates forward caches taken earlier.
  std::span<double> mutable_parameters();
  void set_parameters(std::span<const double> values);
  std::uint64_t version() const { return version_; }
  std::uint64_t id() const { return id_; }

  std::span<const double> weights(std::size_t layer) const;
  std::span<const double> bias(std::size_t layer) const;
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + widths_[layer] * widths_[layer + 1];
  }

 private:
  std::vector<std::size_t> widths_;
  Activation activation_ = Activation::silu;
  bool conditioned_ = false;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
  std::uint64_t version_ = 0;
  std::uint64_t id_ = 0;
};

struct ForwardCache {
  std::uint64_t net_id = 0;
  std::uint64_t version = 0;
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l; inputs[0] includes the embedding
  std::vector<Matrix> pre;     // pre[l] = inputs[l] * W_l + b_l
  const Matrix& output() const { return pre.back(); }
};

// sigma must hold one entry per row when the net is conditioned, else be empty.
ForwardCache forward(const FeedForwardNet& net, const Matrix& x, std::span<const double> sigma = {});

struct Gradients {
  std::vector<double> params;
  Matrix input;  // data columns only
};

// Reverse-mode gradients of sum_i output_i . output_grad_i.
Gradients backward(const FeedForwardNet& net, const ForwardCache& cache, const Matrix& output_grad);

struct InputGradNorm {
  std::vector<double> params;    // d/dtheta of sum_i w_i * 0.5 * |d out_i / d x_i|^2
  std::vector<double> sq_norms;  // |d out_i / d x_i|^2 per sample
};

// For scalar-output nets: gradient-norm penalty and its parameter gradient,
// computed exactly by pushing the input gradient as a tangent through the
// forward and backward passes. Embedding columns are not penalised.
InputGradNorm input_grad_norm_backward(const FeedForwardNet& net, const ForwardCache& cache,
                                       std::span<const double> sample_weights);

// He-normal hidden layers; the head is scaled by final_scale (0 gives a zero head).
void initialize(FeedForwardNet& net, std::uint64_t seed, double final_scale);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg) : config(cfg), m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam with decoupled weight decay. Throws before touching
// anything if a gradient entry is non-finite.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);
void adam_step(AdamState& state, FeedForwardNet& net, std::span<const double> grads);

}  // namespace fdistill
