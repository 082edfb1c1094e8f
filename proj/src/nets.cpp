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

#include "fdistill/nets.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "fdistill/errors.hpp"
#include "fdistill/kernels.hpp"
#include "fdistill/rng.hpp"

namespace fdistill {

namespace {

std::atomic<std::uint64_t> g_next_net_id{1};

struct ActDerivs {
  double value;
  double d1;
  double d2;
};

ActDerivs activate(Activation a, double z) {
  if (a == Activation::tanh) {
    const double t = std::tanh(z);
    const double d1 = 1.0 - t * t;
    return {t, d1, -2.0 * t * d1};
  }
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  const double one_minus = 1.0 - s;
  return {z * s, s * (1.0 + z * one_minus), s * one_minus * (2.0 + z * (1.0 - 2.0 * s))};
}

Matrix apply_activation(Activation a, const Matrix& z) {
  Matrix out(z.rows, z.cols);
  for (std::size_t i = 0; i < z.data.size(); ++i) out.data[i] = activate(a, z.data[i]).value;
  return out;
}

void check_cache(const FeedForwardNet& net, const ForwardCache& cache) {
  if (cache.net_id != net.id() || cache.version != net.version() ||
      cache.pre.size() != net.layer_count()) {
    throw Error("stale forward cache: network parameters changed since the forward pass");
  }
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "silu"; }

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "silu") return Activation::silu;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

void sigma_features(double sigma, std::span<double> out) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("sigma embedding needs sigma > 0");
  if (out.size() != kSigmaFeatures) throw ShapeError("sigma embedding width");
  const double c = std::log(sigma) / 4.0;
  constexpr std::size_t kFreqs = kSigmaFeatures / 2;
  for (std::size_t j = 0; j < kFreqs; ++j) {
    const double freq = std::exp(std::log(32.0) * static_cast<double>(j) / (kFreqs - 1));
    out[2 * j] = std::sin(freq * c);
    out[2 * j + 1] = std::cos(freq * c);
  }
}

std::size_t FeedForwardNet::parameter_count_for(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += (widths[l] + 1) * widths[l + 1];
  return n;
}

FeedForwardNet::FeedForwardNet(std::vector<std::size_t> widths, Activation activation,
                               bool sigma_conditioned)
    : widths_(std::move(widths)),
      activation_(activation),
      conditioned_(sigma_conditioned),
      id_(g_next_net_id.fetch_add(1)) {
  if (widths_.size() < 2) throw ValidationError("network needs at least one layer");
  for (auto w : widths_) {
    if (w == 0) throw ValidationError("layer widths must be positive");
  }
  if (conditioned_ && widths_.front() <= kSigmaFeatures) {
    throw ValidationError("conditioned network input must exceed the embedding width");
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(off);
    off += (widths_[l] + 1) * widths_[l + 1];
  }
  params_.assign(off, 0.0);
}

std::span<double> FeedForwardNet::mutable_parameters() {
  ++version_;
  return params_;
}

void FeedForwardNet::set_parameters(std::span<const double> values) {
  if (values.size() != params_.size()) throw ShapeError("parameter vector length mismatch");
  std::copy(values.begin(), values.end(), params_.begin());
  ++version_;
}

std::span<const double> FeedForwardNet::weights(std::size_t layer) const {
  return {params_.data() + offsets_[layer], widths_[layer] * widths_[layer + 1]};
}

std::span<const double> FeedForwardNet::bias(std::size_t layer) const {
  return {params_.data() + bias_offset(layer), widths_[layer + 1]};
}

ForwardCache forward(const FeedForwardNet& net, const Matrix& x, std::span<const double> sigma) {
  if (x.cols != net.data_width()) {
    std::ostringstream msg;
    msg << "input width " << x.cols << " does not match network data width " << net.data_width();
    throw ShapeError(msg.str());
  }
  if (net.sigma_conditioned() ? sigma.size() != x.rows : !sigma.empty()) {
    throw ShapeError("sigma batch does not match network conditioning");
  }
  ForwardCache cache;
  cache.net_id = net.id();
  cache.version = net.version();
  const std::size_t L = net.layer_count();
  cache.inputs.resize(L);
  cache.pre.resize(L);

  Matrix& in0 = cache.inputs[0];
  in0 = Matrix(x.rows, net.widths().front());
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto dst = in0.row(i);
    const auto src = x.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    if (net.sigma_conditioned()) sigma_features(sigma[i], dst.subspan(x.cols, kSigmaFeatures));
  }
  for (std::size_t l = 0; l < L; ++l) {
    kernels::affine_forward(cache.inputs[l], net.weights(l), net.bias(l), cache.pre[l]);
    if (l + 1 < L) cache.inputs[l + 1] = apply_activation(net.activation(), cache.pre[l]);
  }
  return cache;
}

Gradients backward(const FeedForwardNet& net, const ForwardCache& cache, const Matrix& output_grad) {
  check_cache(net, cache);
  if (!output_grad.same_shape(cache.output())) throw ShapeError("output gradient shape mismatch");
  Gradients g;
  g.params.assign(net.parameter_count(), 0.0);
  Matrix delta = output_grad;
  Matrix upstream;
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    std::span<double> dw(g.params.data() + net.weight_offset(l), net.weights(l).size());
    std::span<double> db(g.params.data() + net.bias_offset(l), net.bias(l).size());
    kernels::affine_weight_grad(cache.inputs[l], delta, dw, db);
    kernels::affine_input_grad(delta, net.weights(l), upstream);
    if (l > 0) {
      const Matrix& z = cache.pre[l - 1];
      for (std::size_t i = 0; i < upstream.data.size(); ++i) {
        upstream.data[i] *= activate(net.activation(), z.data[i]).d1;
      }
      std::swap(delta, upstream);
    }
  }
  const std::size_t d = net.data_width();
  g.input = Matrix(upstream.rows, d);
  for (std::size_t i = 0; i < upstream.rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) g.input(i, j) = upstream(i, j);
  }
  return g;
}

InputGradNorm input_grad_norm_backward(const FeedForwardNet& net, const ForwardCache& cache,
                                       std::span<const double> sample_weights) {
  check_cache(net, cache);
  if (net.output_width() != 1) throw ShapeError("gradient-norm penalty needs a scalar output");
  const std::size_t rows = cache.output().rows;
  if (sample_weights.size() != rows) throw ShapeError("sample weight count mismatch");
  const std::size_t L = net.layer_count();
  const Activation act = net.activation();

  // Plain input gradient: tangent direction per sample.
  const Gradients plain = backward(net, cache, Matrix(rows, 1, 1.0));
  InputGradNorm out;
  out.sq_norms.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (double v : plain.input.row(i)) s += v * v;
    out.sq_norms[i] = s;
  }

  // Forward tangents: dot_in[l] is the tangent of inputs[l], dot_pre[l] of pre[l].
  std::vector<Matrix> dot_in(L);
  std::vector<Matrix> dot_pre(L);
  dot_in[0] = Matrix(rows, net.widths().front());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < net.data_width(); ++j) dot_in[0](i, j) = plain.input(i, j);
  }
  const std::vector<double> no_bias_buf(*std::max_element(net.widths().begin(), net.widths().end()), 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    const std::span<const double> zero_bias(no_bias_buf.data(), net.widths()[l + 1]);
    kernels::affine_forward(dot_in[l], net.weights(l), zero_bias, dot_pre[l]);
    if (l + 1 < L) {
      dot_in[l + 1] = Matrix(rows, net.widths()[l + 1]);
      const Matrix& z = cache.pre[l];
      for (std::size_t k = 0; k < z.data.size(); ++k) {
        dot_in[l + 1].data[k] = activate(act, z.data[k]).d1 * dot_pre[l].data[k];
      }
    }
  }

  // Reverse pass carrying (delta, tangent of delta).
  out.params.assign(net.parameter_count(), 0.0);
  Matrix delta(rows, 1);
  for (std::size_t i = 0; i < rows; ++i) delta(i, 0) = sample_weights[i];
  Matrix dot_delta(rows, 1, 0.0);
  Matrix g;
  Matrix dot_g;
  for (std::size_t l = L; l-- > 0;) {
    std::span<double> dw(out.params.data() + net.weight_offset(l), net.weights(l).size());
    std::span<double> db(out.params.data() + net.bias_offset(l), net.bias(l).size());
    std::vector<double> discard(net.bias(l).size(), 0.0);
    kernels::affine_weight_grad(cache.inputs[l], dot_delta, dw, db);
    kernels::affine_weight_grad(dot_in[l], delta, dw, discard);
    if (l == 0) break;
    kernels::affine_input_grad(delta, net.weights(l), g);
    kernels::affine_input_grad(dot_delta, net.weights(l), dot_g);
    const Matrix& z = cache.pre[l - 1];
    const Matrix& dz = dot_pre[l - 1];
    delta = Matrix(rows, z.cols);
    dot_delta = Matrix(rows, z.cols);
    for (std::size_t k = 0; k < z.data.size(); ++k) {
      const auto a = activate(act, z.data[k]);
      delta.data[k] = g.data[k] * a.d1;
      dot_delta.data[k] = dot_g.data[k] * a.d1 + g.data[k] * a.d2 * dz.data[k];
    }
  }
  return out;
}

void initialize(FeedForwardNet& net, std::uint64_t seed, double final_scale) {
  const CounterRng rng(seed, 0x696e6974ULL);
  auto params = net.mutable_parameters();
  std::fill(params.begin(), params.end(), 0.0);
  std::uint64_t counter = 0;
  const std::size_t L = net.layer_count();
  for (std::size_t l = 0; l < L; ++l) {
    const double fan_in = static_cast<double>(net.widths()[l]);
    double sd = std::sqrt(2.0 / fan_in);
    if (l + 1 == L) sd *= final_scale;
    const std::size_t off = net.weight_offset(l);
    const std::size_t n = net.widths()[l] * net.widths()[l + 1];
    for (std::size_t k = 0; k < n; ++k) params[off + k] = sd == 0.0 ? 0.0 : sd * rng.normal(counter++);
  }
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment lengths differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::ostringstream msg;
      msg << "non-finite gradient at index " << i << " (" << grads[i] << ")";
      throw NumericalAbort(msg.str());
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    if (c.weight_decay != 0.0) params[i] -= c.lr * c.weight_decay * params[i];
    params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

void adam_step(AdamState& state, FeedForwardNet& net, std::span<const double> grads) {
  adam_step(state, net.mutable_parameters(), grads);
}

}  // namespace fdistill
