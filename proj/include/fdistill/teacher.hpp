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
#include <vector>

#include "fdistill/kernels.hpp"
#include "fdistill/matrix.hpp"

namespace fdistill {

struct MixtureComponent {
  double weight = 1.0;
  std::vector<double> mean;
  double variance = 1.0;
};

// sum_k w_k N(mu_k, v_k I). Serves as teacher p, its perturbations p_t, and
// as the kernel-density stand-in for a neural student's q_t.
class IsotropicGaussianMixture {
 public:
  IsotropicGaussianMixture() = default;
  // Weights must sum to 1 within 1e-12, variances be positive, means finite.
  IsotropicGaussianMixture(std::size_t dim, std::vector<MixtureComponent> components);

  // Equal-weight mixture, one component per row of `centers`. Used for kernel
  // density estimates, where the 1e-12 weight check would be needlessly strict.
  static IsotropicGaussianMixture equal_weights(const Matrix& centers, double variance);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return weights_.size(); }
  double weight(std::size_t k) const { return weights_[k]; }
  double variance(std::size_t k) const { return variances_[k]; }
  std::span<const double> mean(std::size_t k) const { return {means_.data() + k * dim_, dim_}; }
  std::vector<MixtureComponent> components() const;

  double log_density(std::span<const double> x) const;
  std::vector<double> score(std::span<const double> x) const;

  std::vector<double> log_density(const Matrix& x) const;
  Matrix score(const Matrix& x) const;

  // p * N(0, sigma^2 I): every variance grows by sigma^2.
  IsotropicGaussianMixture perturb(double sigma) const;

  // i.i.d. draws, deterministic in seed.
  Matrix sample(std::size_t n, std::uint64_t seed) const;

  // Per-coordinate standard deviation of the whole mixture, averaged over coordinates.
  double data_std() const;

  kernels::MixtureView view() const;

 private:
  void rebuild();

  std::size_t dim_ = 0;
  std::vector<double> weights_;
  std::vector<double> means_;
  std::vector<double> variances_;
  std::vector<double> log_norm_;
  std::vector<double> cdf_;
};

// N(mean, cov) with a dense covariance; reached only by oracle paths and the
// exact ratio of an affine student.
class FullGaussian {
 public:
  FullGaussian(std::vector<double> mean, Matrix cov);

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const Matrix& covariance() const { return cov_; }

  double log_density(std::span<const double> x) const;
  std::vector<double> score(std::span<const double> x) const;
  std::vector<double> log_density(const Matrix& x) const;
  Matrix score(const Matrix& x) const;

  bool is_isotropic(double tol = 1e-12) const;
  // Single-component mixture; throws ValidationError unless isotropic.
  IsotropicGaussianMixture as_mixture() const;

 private:
  std::vector<double> solve(std::span<const double> x) const;  // cov^{-1} (x - mean)

  std::vector<double> mean_;
  Matrix cov_;
  Matrix chol_;  // lower triangular
  double log_norm_ = 0.0;
};

// G(z) = A z + b with z ~ N(0, I): the student whose every q_t is Gaussian.
struct AffineGenerator {
  Matrix a;  // dim x latent
  std::vector<double> b;

  std::size_t dim() const { return a.rows; }
  std::size_t latent_dim() const { return a.cols; }
  Matrix apply(const Matrix& z) const;

  static AffineGenerator isotropic(std::size_t dim, double scale, std::vector<double> bias);
};

// Law of G(z) + sigma * eps: N(b, A A^T + sigma^2 I).
FullGaussian affine_pushforward(const AffineGenerator& gen, double sigma);
// Same law as a single-component mixture; A A^T must be isotropic.
IsotropicGaussianMixture affine_pushforward_isotropic(const AffineGenerator& gen, double sigma);

// Log-uniform noise levels with per-level time weight.
class NoiseSchedule {
 public:
  NoiseSchedule(double sigma_min = 0.002, double sigma_max = 80.0, std::size_t levels = 64);

  double sigma_min() const { return sigma_min_; }
  double sigma_max() const { return sigma_max_; }
  std::size_t size() const { return sigmas_.size(); }
  double sigma(std::size_t level) const { return sigmas_[level]; }
  const std::vector<double>& sigmas() const { return sigmas_; }

  // Default time weight w_t = sigma^2.
  double weight(std::size_t level) const { return sigmas_[level] * sigmas_[level]; }

  // Equal-width bins in log sigma, clamped to [0, n_bins).
  std::size_t bin_of(double sigma, std::size_t n_bins) const;

 private:
  double sigma_min_;
  double sigma_max_;
  std::vector<double> sigmas_;
};

namespace presets {
// Eight equal components on a radius-4 circle, variance 0.09.
IsotropicGaussianMixture ring8();
// 5 x 5 grid with spacing 2 centred at the origin, variance 0.04.
IsotropicGaussianMixture grid25();
// N(0, I) in two dimensions.
IsotropicGaussianMixture gaussian();
// Weights (0.6, 0.4) at (1, 0) and (-1, 0), variance 0.5.
IsotropicGaussianMixture two_component();
// "ring8" | "grid25" | "gaussian" | "two-component"; throws ConfigError otherwise.
IsotropicGaussianMixture by_name(const std::string& name);
}  // namespace presets

}  // namespace fdistill
