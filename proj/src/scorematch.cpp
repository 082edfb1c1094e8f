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

#include "fdistill/scorematch.hpp"

#include <cmath>

#include "fdistill/errors.hpp"

namespace fdistill {

namespace {

void check_sigmas(std::span<const double> sigma, std::size_t rows) {
  if (sigma.size() != rows) throw ShapeError("sigma batch length mismatch");
}

struct DenoiseForward {
  ForwardCache cache;
  std::vector<PrecondCoeffs> coeffs;
  Matrix x0_hat;
};

DenoiseForward denoise_forward(const DenoiserNet& den, const Matrix& x, std::span<const double> sigma) {
  check_sigmas(sigma, x.rows);
  if (x.cols != den.dim()) throw ShapeError("denoiser input width mismatch");
  DenoiseForward f;
  f.coeffs.reserve(x.rows);
  Matrix scaled(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    f.coeffs.push_back(precond_coeffs(den.preconditioning(), sigma[i], den.sigma_data()));
    for (std::size_t j = 0; j < x.cols; ++j) scaled(i, j) = f.coeffs[i].c_in * x(i, j);
  }
  f.cache = forward(den.net(), scaled, sigma);
  const Matrix& raw = f.cache.output();
  f.x0_hat = Matrix(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) {
      f.x0_hat(i, j) = f.coeffs[i].c_skip * x(i, j) + f.coeffs[i].c_out * raw(i, j);
    }
  }
  return f;
}

Matrix noised(const Matrix& x0, std::span<const double> sigma, const Matrix& noise) {
  if (!noise.same_shape(x0)) throw ShapeError("noise batch shape mismatch");
  check_sigmas(sigma, x0.rows);
  Matrix x(x0.rows, x0.cols);
  for (std::size_t i = 0; i < x0.rows; ++i) {
    for (std::size_t j = 0; j < x0.cols; ++j) x(i, j) = x0(i, j) + sigma[i] * noise(i, j);
  }
  return x;
}

}  // namespace

std::string_view to_string(Preconditioning p) { return p == Preconditioning::edm ? "edm" : "none"; }

Preconditioning parse_preconditioning(std::string_view name) {
  if (name == "edm") return Preconditioning::edm;
  if (name == "none") return Preconditioning::none;
  throw ValidationError("unknown preconditioning '" + std::string(name) + "'");
}

PrecondCoeffs precond_coeffs(Preconditioning p, double sigma, double sigma_data) {
  if (p == Preconditioning::none) return {1.0, 0.0, 1.0};
  const double s2 = sigma * sigma;
  const double d2 = sigma_data * sigma_data;
  const double root = std::sqrt(s2 + d2);
  return {1.0 / root, d2 / (s2 + d2), sigma * sigma_data / root};
}

DenoiserNet::DenoiserNet(FeedForwardNet net, Preconditioning precond, double sigma_data)
    : net_(std::move(net)), precond_(precond), sigma_data_(sigma_data) {
  if (!net_.sigma_conditioned()) throw ValidationError("denoiser must be sigma-conditioned");
  if (net_.data_width() != net_.output_width()) {
    throw ValidationError("denoiser output dimension must equal data dimension");
  }
  if (!(sigma_data > 0.0)) throw ValidationError("sigma_data must be positive");
}

DenoiserNet DenoiserNet::make(std::size_t dim, const std::vector<std::size_t>& hidden, Activation act,
                              Preconditioning precond, double sigma_data, std::uint64_t seed) {
  std::vector<std::size_t> widths{dim + kSigmaFeatures};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(dim);
  FeedForwardNet net(widths, act, true);
  initialize(net, seed, 0.0);
  return DenoiserNet(std::move(net), precond, sigma_data);
}

Matrix DenoiserNet::denoise(const Matrix& x, std::span<const double> sigma) const {
  return denoise_forward(*this, x, sigma).x0_hat;
}

Matrix fake_score(const DenoiserNet& denoiser, const Matrix& x, std::span<const double> sigma) {
  for (double s : sigma) {
    if (!(s > 0.0)) throw DomainError("score undefined at zero noise for denoiser parameterization");
  }
  Matrix out = denoiser.denoise(x, sigma);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double inv = 1.0 / (sigma[i] * sigma[i]);
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = (out(i, j) - x(i, j)) * inv;
  }
  return out;
}

double dsm_loss(const DenoiserNet& denoiser, const Matrix& x0, std::span<const double> sigma,
                const Matrix& noise, double sigma_min) {
  const Matrix x = noised(x0, sigma, noise);
  const auto f = denoise_forward(denoiser, x, sigma);
  const double cap = 1.0 / (sigma_min * sigma_min);
  double loss = 0.0;
  for (std::size_t i = 0; i < x0.rows; ++i) {
    const double lambda = std::min(1.0 / (sigma[i] * sigma[i]), cap);
    double sq = 0.0;
    for (std::size_t j = 0; j < x0.cols; ++j) {
      const double d = f.x0_hat(i, j) - x0(i, j);
      sq += d * d;
    }
    loss += lambda * sq;
  }
  return loss / static_cast<double>(x0.rows);
}

double dsm_update(DenoiserNet& denoiser, AdamState& adam, const Matrix& x0,
                  std::span<const double> sigma, const Matrix& noise, double sigma_min) {
  if (x0.rows == 0) throw ShapeError("empty DSM batch");
  const Matrix x = noised(x0, sigma, noise);
  const auto f = denoise_forward(denoiser, x, sigma);
  const double cap = 1.0 / (sigma_min * sigma_min);
  const auto n = static_cast<double>(x0.rows);
  double loss = 0.0;
  Matrix grad(x0.rows, x0.cols);
  for (std::size_t i = 0; i < x0.rows; ++i) {
    const double lambda = std::min(1.0 / (sigma[i] * sigma[i]), cap);
    double sq = 0.0;
    for (std::size_t j = 0; j < x0.cols; ++j) {
      const double d = f.x0_hat(i, j) - x0(i, j);
      sq += d * d;
      grad(i, j) = 2.0 * lambda * f.coeffs[i].c_out * d / n;
    }
    loss += lambda * sq;
  }
  loss /= n;
  if (!std::isfinite(loss)) throw NumericalAbort("denoising score matching loss is not finite");
  const Gradients g = backward(denoiser.net(), f.cache, grad);
  adam_step(adam, denoiser.net(), g.params);
  return loss;
}

}  // namespace fdistill
