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
#include "fdistill/scorematch.hpp"

namespace fdistill {

struct RatioClip {
  double r_min = 1e-3;
  double r_max = 1e3;

  // Throws ValidationError unless 0 < r_min <= 1 <= r_max.
  void validate() const;
};

// Sigma-conditioned logit l(x, sigma); D = logistic(l), so exp(l) = D / (1 - D)
// estimates p_t / q_t.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(FeedForwardNet net, Preconditioning precond, double sigma_data);

  static Discriminator make(std::size_t dim, const std::vector<std::size_t>& hidden, Activation act,
                            Preconditioning precond, double sigma_data, std::uint64_t seed);

  FeedForwardNet& net() { return net_; }
  const FeedForwardNet& net() const { return net_; }
  Preconditioning preconditioning() const { return precond_; }
  double sigma_data() const { return sigma_data_; }
  std::size_t dim() const { return net_.data_width(); }

  // Network input is c_in * x.
  Matrix scaled_input(const Matrix& x, std::span<const double> sigma) const;
  std::vector<double> logits(const Matrix& x, std::span<const double> sigma) const;

 private:
  FeedForwardNet net_;
  Preconditioning precond_ = Preconditioning::edm;
  double sigma_data_ = 1.0;
};

// clamp(exp(l(x, sigma)), r_min, r_max) per row; throws on a non-finite logit.
std::vector<double> ratio_estimate(const Discriminator& disc, const Matrix& x,
                                   std::span<const double> sigma, const RatioClip& clip);

struct DiscLoss {
  double logistic = 0.0;  // -mean log D(real) - mean log(1 - D(fake))
  double r1 = 0.0;        // gamma/2 * mean |d l / d x|^2 over noised real inputs
  double total() const { return logistic + r1; }
};

// One Adam step on the logistic loss plus R1 on real inputs. Real and fake
// batches are noised with their own noise at the shared sigma levels.
DiscLoss disc_update(Discriminator& disc, AdamState& adam, const Matrix& real, const Matrix& fake,
                     std::span<const double> sigma, const Matrix& noise_real,
                     const Matrix& noise_fake, double r1_gamma);

enum class GanGeneratorLoss { non_saturating, minimax };
std::string_view to_string(GanGeneratorLoss l);
GanGeneratorLoss parse_gan_loss(std::string_view name);

// Per-sample gradient of the generator loss at y + sigma * noise with respect
// to y, backpropagated through the frozen discriminator: -log D for
// non_saturating, log(1 - D) for minimax. Row i is d loss_i / d y_i (no 1/B).
Matrix gan_generator_grad(const Discriminator& disc, const Matrix& y, std::span<const double> sigma,
                          const Matrix& noise, GanGeneratorLoss loss = GanGeneratorLoss::non_saturating);

// Mean per-sample generator loss for logging.
double gan_generator_loss(const Discriminator& disc, const Matrix& y, std::span<const double> sigma,
                          const Matrix& noise, GanGeneratorLoss loss = GanGeneratorLoss::non_saturating);

}  // namespace fdistill
