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

#include "fdistill/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "fdistill/divergence.hpp"
#include "fdistill/errors.hpp"
#include "fdistill/rng.hpp"

namespace fdistill {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_point(std::span<const double> x, std::size_t dim) {
  if (x.size() != dim) throw ShapeError("point dimension does not match distribution");
  for (double v : x) {
    if (!std::isfinite(v)) throw DomainError("point has a non-finite coordinate");
  }
}

void check_batch(const Matrix& x, std::size_t dim) {
  if (x.cols != dim) throw ShapeError("batch width does not match distribution dimension");
  for (double v : x.data) {
    if (!std::isfinite(v)) throw DomainError("batch has a non-finite coordinate");
  }
}

}  // namespace

IsotropicGaussianMixture::IsotropicGaussianMixture(std::size_t dim,
                                                   std::vector<MixtureComponent> components)
    : dim_(dim) {
  if (dim == 0) throw ValidationError("mixture dimension must be positive");
  if (components.empty()) throw ValidationError("mixture needs at least one component");
  double total = 0.0;
  for (const auto& c : components) {
    if (c.mean.size() != dim) throw ValidationError("component mean has wrong dimension");
    if (!(c.weight >= 0.0) || !std::isfinite(c.weight)) {
      throw ValidationError("component weights must be finite and non-negative");
    }
    if (!(c.variance > 0.0) || !std::isfinite(c.variance)) {
      throw ValidationError("component variances must be positive");
    }
    for (double m : c.mean) {
      if (!std::isfinite(m)) throw ValidationError("component means must be finite");
    }
    total += c.weight;
    weights_.push_back(c.weight);
    variances_.push_back(c.variance);
    means_.insert(means_.end(), c.mean.begin(), c.mean.end());
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg << "mixture weights must sum to 1, got " << total;
    throw ValidationError(msg.str());
  }
  rebuild();
}

IsotropicGaussianMixture IsotropicGaussianMixture::equal_weights(const Matrix& centers,
                                                                 double variance) {
  if (centers.rows == 0 || centers.cols == 0) throw ValidationError("no kernel centres");
  if (!(variance > 0.0)) throw ValidationError("kernel variance must be positive");
  IsotropicGaussianMixture gm;
  gm.dim_ = centers.cols;
  gm.means_ = centers.data;
  gm.weights_.assign(centers.rows, 1.0 / static_cast<double>(centers.rows));
  gm.variances_.assign(centers.rows, variance);
  gm.rebuild();
  return gm;
}

void IsotropicGaussianMixture::rebuild() {
  const auto d = static_cast<double>(dim_);
  log_norm_.resize(weights_.size());
  cdf_.resize(weights_.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    log_norm_[k] = std::log(weights_[k]) - 0.5 * d * (kLog2Pi + std::log(variances_[k]));
    acc += weights_[k];
    cdf_[k] = acc;
  }
  for (auto& c : cdf_) c /= acc;
}

std::vector<MixtureComponent> IsotropicGaussianMixture::components() const {
  std::vector<MixtureComponent> out;
  for (std::size_t k = 0; k < size(); ++k) {
    const auto m = mean(k);
    out.push_back({weights_[k], std::vector<double>(m.begin(), m.end()), variances_[k]});
  }
  return out;
}

kernels::MixtureView IsotropicGaussianMixture::view() const {
  return {dim_, weights_.size(), means_, variances_, log_norm_};
}

double IsotropicGaussianMixture::log_density(std::span<const double> x) const {
  check_point(x, dim_);
  Matrix m(1, dim_);
  std::copy(x.begin(), x.end(), m.data.begin());
  double out = 0.0;
  kernels::serial::mixture_log_density(view(), m, {&out, 1});
  return out;
}

std::vector<double> IsotropicGaussianMixture::score(std::span<const double> x) const {
  check_point(x, dim_);
  Matrix m(1, dim_);
  std::copy(x.begin(), x.end(), m.data.begin());
  Matrix out;
  kernels::serial::mixture_score(view(), m, out);
  return out.data;
}

std::vector<double> IsotropicGaussianMixture::log_density(const Matrix& x) const {
  check_batch(x, dim_);
  std::vector<double> out(x.rows);
  kernels::mixture_log_density(view(), x, out);
  return out;
}

Matrix IsotropicGaussianMixture::score(const Matrix& x) const {
  check_batch(x, dim_);
  Matrix out(x.rows, x.cols);
  kernels::mixture_score(view(), x, out);
  return out;
}

IsotropicGaussianMixture IsotropicGaussianMixture::perturb(double sigma) const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be >= 0");
  IsotropicGaussianMixture out = *this;
  for (auto& v : out.variances_) v += sigma * sigma;
  out.rebuild();
  return out;
}

Matrix IsotropicGaussianMixture::sample(std::size_t n, std::uint64_t seed) const {
  if (n == 0) throw ValidationError("sample count must be >= 1");
  const CounterRng root(seed, 0x7465616368ULL);
  const CounterRng pick = root.substream(1);
  const CounterRng noise = root.substream(2);
  Matrix out(n, dim_);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) num_threads(kernels::threads()) if (n > 1024)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const double u = pick.uniform(static_cast<std::uint64_t>(i));
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    k = std::min(k, cdf_.size() - 1);
    while (weights_[k] == 0.0 && k > 0) --k;
    const double sd = std::sqrt(variances_[k]);
    for (std::size_t j = 0; j < dim_; ++j) {
      const double e = noise.normal(static_cast<std::uint64_t>(i) * dim_ + j);
      out(static_cast<std::size_t>(i), j) = means_[k * dim_ + j] + sd * e;
    }
  }
  return out;
}

double IsotropicGaussianMixture::data_std() const {
  double acc = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    double m1 = 0.0;
    double m2 = 0.0;
    for (std::size_t k = 0; k < size(); ++k) {
      const double mu = means_[k * dim_ + j];
      m1 += weights_[k] * mu;
      m2 += weights_[k] * (variances_[k] + mu * mu);
    }
    acc += m2 - m1 * m1;
  }
  return std::sqrt(acc / static_cast<double>(dim_));
}

FullGaussian::FullGaussian(std::vector<double> mean, Matrix cov)
    : mean_(std::move(mean)), cov_(std::move(cov)) {
  const std::size_t d = mean_.size();
  if (d == 0 || cov_.rows != d || cov_.cols != d) throw ShapeError("covariance shape mismatch");
  chol_ = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = cov_(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= chol_(i, k) * chol_(j, k);
      if (i == j) {
        if (!(s > 0.0)) throw ValidationError("covariance is not positive definite");
        chol_(i, i) = std::sqrt(s);
      } else {
        chol_(i, j) = s / chol_(j, j);
      }
    }
  }
  double log_det = 0.0;
  for (std::size_t i = 0; i < d; ++i) log_det += 2.0 * std::log(chol_(i, i));
  log_norm_ = -0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
}

std::vector<double> FullGaussian::solve(std::span<const double> x) const {
  const std::size_t d = dim();
  std::vector<double> y(d);
  for (std::size_t i = 0; i < d; ++i) {
    double s = x[i] - mean_[i];
    for (std::size_t k = 0; k < i; ++k) s -= chol_(i, k) * y[k];
    y[i] = s / chol_(i, i);
  }
  for (std::size_t ii = d; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < d; ++k) s -= chol_(k, ii) * y[k];
    y[ii] = s / chol_(ii, ii);
  }
  return y;
}

double FullGaussian::log_density(std::span<const double> x) const {
  check_point(x, dim());
  const auto y = solve(x);
  double quad = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) quad += (x[i] - mean_[i]) * y[i];
  return log_norm_ - 0.5 * quad;
}

std::vector<double> FullGaussian::score(std::span<const double> x) const {
  check_point(x, dim());
  auto y = solve(x);
  for (auto& v : y) v = -v;
  return y;
}

std::vector<double> FullGaussian::log_density(const Matrix& x) const {
  check_batch(x, dim());
  std::vector<double> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = log_density(x.row(i));
  return out;
}

Matrix FullGaussian::score(const Matrix& x) const {
  check_batch(x, dim());
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto s = score(x.row(i));
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

bool FullGaussian::is_isotropic(double tol) const {
  const double v = cov_(0, 0);
  for (std::size_t i = 0; i < dim(); ++i) {
    for (std::size_t j = 0; j < dim(); ++j) {
      const double target = i == j ? v : 0.0;
      if (std::abs(cov_(i, j) - target) > tol * std::max(1.0, std::abs(v))) return false;
    }
  }
  return true;
}

IsotropicGaussianMixture FullGaussian::as_mixture() const {
  if (!is_isotropic()) {
    throw ValidationError("non-isotropic Gaussian has no isotropic-mixture representation");
  }
  return IsotropicGaussianMixture(dim(), {{1.0, mean_, cov_(0, 0)}});
}

Matrix AffineGenerator::apply(const Matrix& z) const {
  if (z.cols != latent_dim()) throw ShapeError("latent width mismatch");
  Matrix out(z.rows, dim());
  for (std::size_t i = 0; i < z.rows; ++i) {
    for (std::size_t r = 0; r < dim(); ++r) {
      double acc = b[r];
      for (std::size_t c = 0; c < latent_dim(); ++c) acc += a(r, c) * z(i, c);
      out(i, r) = acc;
    }
  }
  return out;
}

AffineGenerator AffineGenerator::isotropic(std::size_t dim, double scale, std::vector<double> bias) {
  if (bias.size() != dim) throw ShapeError("bias dimension mismatch");
  AffineGenerator g{Matrix(dim, dim), std::move(bias)};
  for (std::size_t i = 0; i < dim; ++i) g.a(i, i) = scale;
  return g;
}

FullGaussian affine_pushforward(const AffineGenerator& gen, double sigma) {
  if (!(sigma >= 0.0)) throw DomainError("sigma must be >= 0");
  if (gen.b.size() != gen.dim()) throw ShapeError("bias dimension mismatch");
  const std::size_t d = gen.dim();
  Matrix cov(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < gen.latent_dim(); ++c) acc += gen.a(i, c) * gen.a(j, c);
      cov(i, j) = acc;
    }
    cov(i, i) += sigma * sigma;
  }
  return FullGaussian(gen.b, std::move(cov));
}

IsotropicGaussianMixture affine_pushforward_isotropic(const AffineGenerator& gen, double sigma) {
  return affine_pushforward(gen, sigma).as_mixture();
}

NoiseSchedule::NoiseSchedule(double sigma_min, double sigma_max, std::size_t levels)
    : sigma_min_(sigma_min), sigma_max_(sigma_max) {
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max) || !std::isfinite(sigma_max)) {
    throw ValidationError("noise schedule needs 0 < sigma_min < sigma_max");
  }
  if (levels < 2) throw ValidationError("noise schedule needs at least two levels");
  sigmas_ = log_grid(sigma_min, sigma_max, levels);
}

std::size_t NoiseSchedule::bin_of(double sigma, std::size_t n_bins) const {
  const double t = (std::log(sigma) - std::log(sigma_min_)) / (std::log(sigma_max_) - std::log(sigma_min_));
  const auto b = static_cast<std::ptrdiff_t>(std::floor(t * static_cast<double>(n_bins)));
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_bins) - 1));
}

namespace presets {

IsotropicGaussianMixture ring8() {
  std::vector<MixtureComponent> comps;
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8.0;
    comps.push_back({0.125, {4.0 * std::cos(a), 4.0 * std::sin(a)}, 0.09});
  }
  return IsotropicGaussianMixture(2, std::move(comps));
}

IsotropicGaussianMixture grid25() {
  std::vector<MixtureComponent> comps;
  for (int i = -2; i <= 2; ++i) {
    for (int j = -2; j <= 2; ++j) comps.push_back({0.04, {2.0 * i, 2.0 * j}, 0.04});
  }
  return IsotropicGaussianMixture(2, std::move(comps));
}

IsotropicGaussianMixture gaussian() { return IsotropicGaussianMixture(2, {{1.0, {0.0, 0.0}, 1.0}}); }

IsotropicGaussianMixture two_component() {
  return IsotropicGaussianMixture(2, {{0.6, {1.0, 0.0}, 0.5}, {0.4, {-1.0, 0.0}, 0.5}});
}

IsotropicGaussianMixture by_name(const std::string& name) {
  if (name == "ring8") return ring8();
  if (name == "grid25") return grid25();
  if (name == "gaussian") return gaussian();
  if (name == "two-component") return two_component();
  throw ConfigError("unknown teacher preset '" + name +
                    "' (expected ring8, grid25, gaussian or two-component)");
}

}  // namespace presets

}  // namespace fdistill
