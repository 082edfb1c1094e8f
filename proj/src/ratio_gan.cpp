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

#include "fdistill/ratio_gan.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fdistill/errors.hpp"

namespace fdistill {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix add_noise(const Matrix& x, std::span<const double> sigma, const Matrix& noise) {
  if (!noise.same_shape(x)) throw ShapeError("noise batch shape mismatch");
  if (sigma.size() != x.rows) throw ShapeError("sigma batch length mismatch");
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = x(i, j) + sigma[i] * noise(i, j);
  }
  return out;
}

void check_logits(const Matrix& out) {
  for (std::size_t i = 0; i < out.rows; ++i) {
    if (!std::isfinite(out(i, 0))) {
      std::ostringstream msg;
      msg << "discriminator produced a non-finite logit at row " << i;
      throw NumericalAbort(msg.str());
    }
  }
}

}  // namespace

void RatioClip::validate() const {
  if (!(r_min > 0.0) || !(r_min <= 1.0) || !(r_max >= 1.0) || !std::isfinite(r_max)) {
    throw ValidationError("ratio clip needs 0 < r_min <= 1 <= r_max");
  }
}

Discriminator::Discriminator(FeedForwardNet net, Preconditioning precond, double sigma_data)
    : net_(std::move(net)), precond_(precond), sigma_data_(sigma_data) {
  if (!net_.sigma_conditioned()) throw ValidationError("discriminator must be sigma-conditioned");
  if (net_.output_width() != 1) throw ValidationError("discriminator must output a scalar logit");
  if (!(sigma_data > 0.0)) throw ValidationError("sigma_data must be positive");
}

Discriminator Discriminator::make(std::size_t dim, const std::vector<std::size_t>& hidden,
                                  Activation act, Preconditioning precond, double sigma_data,
                                  std::uint64_t seed) {
  std::vector<std::size_t> widths{dim + kSigmaFeatures};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  FeedForwardNet net(widths, act, true);
  initialize(net, seed, 0.0);
  return Discriminator(std::move(net), precond, sigma_data);
}

Matrix Discriminator::scaled_input(const Matrix& x, std::span<const double> sigma) const {
  if (sigma.size() != x.rows) throw ShapeError("sigma batch length mismatch");
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double c = precond_coeffs(precond_, sigma[i], sigma_data_).c_in;
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = c * x(i, j);
  }
  return out;
}

std::vector<double> Discriminator::logits(const Matrix& x, std::span<const double> sigma) const {
  const auto cache = forward(net_, scaled_input(x, sigma), sigma);
  check_logits(cache.output());
  return cache.output().data;
}

std::vector<double> ratio_estimate(const Discriminator& disc, const Matrix& x,
                                   std::span<const double> sigma, const RatioClip& clip) {
  clip.validate();
  auto out = disc.logits(x, sigma);
  const double lo = std::log(clip.r_min);
  const double hi = std::log(clip.r_max);
  for (auto& l : out) l = std::clamp(std::exp(std::clamp(l, lo, hi)), clip.r_min, clip.r_max);
  return out;
}

DiscLoss disc_update(Discriminator& disc, AdamState& adam, const Matrix& real, const Matrix& fake,
                     std::span<const double> sigma, const Matrix& noise_real,
                     const Matrix& noise_fake, double r1_gamma) {
  if (!real.same_shape(fake) || real.rows == 0) throw ShapeError("real and fake batches must align");
  if (r1_gamma < 0.0) throw ValidationError("r1_gamma must be >= 0");
  const auto n = static_cast<double>(real.rows);
  const Matrix xr = add_noise(real, sigma, noise_real);
  const Matrix xf = add_noise(fake, sigma, noise_fake);
  const auto cache_r = forward(disc.net(), disc.scaled_input(xr, sigma), sigma);
  const auto cache_f = forward(disc.net(), disc.scaled_input(xf, sigma), sigma);
  check_logits(cache_r.output());
  check_logits(cache_f.output());

  DiscLoss loss;
  Matrix grad_r(real.rows, 1);
  Matrix grad_f(real.rows, 1);
  double sum_r = 0.0;
  double sum_f = 0.0;
  for (std::size_t i = 0; i < real.rows; ++i) {
    const double lr = cache_r.output()(i, 0);
    const double lf = cache_f.output()(i, 0);
    sum_r += softplus(-lr);
    sum_f += softplus(lf);
    grad_r(i, 0) = -sigmoid(-lr) / n;
    grad_f(i, 0) = sigmoid(lf) / n;
  }
  loss.logistic = sum_r / n + sum_f / n;

  auto g = backward(disc.net(), cache_r, grad_r).params;
  const auto gf = backward(disc.net(), cache_f, grad_f).params;
  for (std::size_t k = 0; k < g.size(); ++k) g[k] += gf[k];

  if (r1_gamma > 0.0) {
    std::vector<double> w(real.rows);
    for (std::size_t i = 0; i < real.rows; ++i) {
      const double c = precond_coeffs(disc.preconditioning(), sigma[i], disc.sigma_data()).c_in;
      w[i] = r1_gamma * c * c / n;
    }
    const auto pen = input_grad_norm_backward(disc.net(), cache_r, w);
    double r1 = 0.0;
    for (std::size_t i = 0; i < real.rows; ++i) r1 += 0.5 * w[i] * pen.sq_norms[i];
    loss.r1 = r1;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += pen.params[k];
  }
  if (!std::isfinite(loss.total())) throw NumericalAbort("discriminator loss is not finite");
  adam_step(adam, disc.net(), g);
  return loss;
}

std::string_view to_string(GanGeneratorLoss l) {
  return l == GanGeneratorLoss::minimax ? "minimax" : "non-saturating";
}

GanGeneratorLoss parse_gan_loss(std::string_view name) {
  if (name == "non-saturating") return GanGeneratorLoss::non_saturating;
  if (name == "minimax") return GanGeneratorLoss::minimax;
  throw ValidationError("unknown GAN generator loss '" + std::string(name) + "'");
}

Matrix gan_generator_grad(const Discriminator& disc, const Matrix& y, std::span<const double> sigma,
                          const Matrix& noise, GanGeneratorLoss loss) {
  const Matrix x = add_noise(y, sigma, noise);
  const auto cache = forward(disc.net(), disc.scaled_input(x, sigma), sigma);
  check_logits(cache.output());
  Matrix dl(y.rows, 1);
  for (std::size_t i = 0; i < y.rows; ++i) {
    const double l = cache.output()(i, 0);
    dl(i, 0) = loss == GanGeneratorLoss::non_saturating ? -sigmoid(-l) : -sigmoid(l);
  }
  Matrix g = backward(disc.net(), cache, dl).input;
  for (std::size_t i = 0; i < y.rows; ++i) {
    const double c = precond_coeffs(disc.preconditioning(), sigma[i], disc.sigma_data()).c_in;
    for (std::size_t j = 0; j < y.cols; ++j) g(i, j) *= c;
  }
  return g;
}

double gan_generator_loss(const Discriminator& disc, const Matrix& y, std::span<const double> sigma,
                          const Matrix& noise, GanGeneratorLoss loss) {
  const auto l = disc.logits(add_noise(y, sigma, noise), sigma);
  double acc = 0.0;
  for (double v : l) acc += loss == GanGeneratorLoss::non_saturating ? softplus(-v) : -softplus(v);
  return acc / static_cast<double>(l.size());
}

}  // namespace fdistill
