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

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "fdistill/matrix.hpp"
#include "fdistill/nets.hpp"

namespace fdistill {

// Input/output scaling around a sigma-conditioned network. `edm` uses
// c_in = 1/sqrt(sigma^2 + sd^2), c_skip = sd^2/(sigma^2 + sd^2) and
// c_out = sigma sd / sqrt(sigma^2 + sd^2); `none` passes x through unscaled.
enum class Preconditioning { none, edm };

std::string_view to_string(Preconditioning p);
Preconditioning parse_preconditioning(std::string_view name);

struct PrecondCoeffs {
  double c_in;
  double c_skip;
  double c_out;
};
PrecondCoeffs precond_coeffs(Preconditioning p, double sigma, double sigma_data);

// Predicts the clean sample x0 from (x, sigma); the student score follows by
// Tweedie's formula.
class DenoiserNet {
 public:
  DenoiserNet() = default;
  DenoiserNet(FeedForwardNet net, Preconditioning precond, double sigma_data);

  // widths {dim + embedding, hidden..., dim} with a zero-initialised head.
  static DenoiserNet make(std::size_t dim, const std::vector<std::size_t>& hidden, Activation act,
                          Preconditioning precond, double sigma_data, std::uint64_t seed);

  FeedForwardNet& net() { return net_; }
  const FeedForwardNet& net() const { return net_; }
  Preconditioning preconditioning() const { return precond_; }
  double sigma_data() const { return sigma_data_; }
  std::size_t dim() const { return net_.output_width(); }

  Matrix denoise(const Matrix& x, std::span<const double> sigma) const;

 private:
  FeedForwardNet net_;
  Preconditioning precond_ = Preconditioning::edm;
  double sigma_data_ = 1.0;
};

// (x0_hat(x, sigma) - x) / sigma^2 per row.
Matrix fake_score(const DenoiserNet& denoiser, const Matrix& x, std::span<const double> sigma);

// One Adam step on mean_i lambda_i |x0_hat(x0_i + sigma_i eps_i, sigma_i) - x0_i|^2
// with lambda = min(1/sigma^2, 1/sigma_min^2). Returns the pre-step loss.
double dsm_update(DenoiserNet& denoiser, AdamState& adam, const Matrix& x0,
                  std::span<const double> sigma, const Matrix& noise, double sigma_min);

// Loss only, no update.
double dsm_loss(const DenoiserNet& denoiser, const Matrix& x0, std::span<const double> sigma,
                const Matrix& noise, double sigma_min);

}  // namespace fdistill
