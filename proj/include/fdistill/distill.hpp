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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fdistill/divergence.hpp"
#include "fdistill/matrix.hpp"
#include "fdistill/nets.hpp"
#include "fdistill/ratio_gan.hpp"
#include "fdistill/rng.hpp"
#include "fdistill/scorematch.hpp"
#include "fdistill/teacher.hpp"

namespace fdistill {

enum class RatioSource { discriminator, exact_oracle };
enum class Stage1Mode { mean, sum };
enum class GeneratorKind { mlp, affine };

std::string_view to_string(RatioSource s);
RatioSource parse_ratio_source(std::string_view name);
std::string_view to_string(Stage1Mode m);
Stage1Mode parse_stage1_mode(std::string_view name);
std::string_view to_string(GeneratorKind g);
GeneratorKind parse_generator_kind(std::string_view name);

struct RunConfig {
  DivergenceKind divergence = DivergenceKind::jensen_shannon;
  std::size_t batch_size = 128;
  std::size_t iterations = 20000;
  std::size_t tau = 5;
  double gan_weight = 1e-3;
  RatioClip clip;
  std::size_t time_bins = 8;
  bool stage1 = true;
  bool stage2 = true;
  Stage1Mode stage1_mode = Stage1Mode::mean;
  bool ratio_at_clean = false;
  RatioSource ratio_source = RatioSource::discriminator;
  GanGeneratorLoss gan_loss = GanGeneratorLoss::non_saturating;
  bool rescale_time_weight = false;

  double lr_generator = 1e-3;
  double lr_denoiser = 1e-3;
  double lr_discriminator = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay = 0.0;
  double r1_gamma = 1.0;

  std::uint64_t seed = 0;
  // Preset name, or explicit components when `teacher_components` is non-empty.
  std::string teacher = "ring8";
  std::vector<MixtureComponent> teacher_components;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  std::size_t levels = 64;

  GeneratorKind generator = GeneratorKind::mlp;
  std::size_t latent_dim = 2;
  std::vector<std::size_t> generator_hidden{128, 128};
  std::vector<std::size_t> denoiser_hidden{128, 128};
  std::vector<std::size_t> discriminator_hidden{128, 128};
  Activation activation = Activation::silu;
  Preconditioning preconditioning = Preconditioning::edm;
  double generator_init_scale = 0.1;

  std::size_t oracle_ratio_samples = 1024;
  double oracle_sigma_floor = 0.1;

  std::size_t metrics_every = 100;
  double metric_sigma = 0.1;
  std::size_t metric_samples = 2048;
  double coverage_k = 3.0;
  double coverage_threshold = 0.02;
  std::size_t checkpoint_every = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

IsotropicGaussianMixture make_teacher(const RunConfig& config);

struct TrainState {
  FeedForwardNet generator;
  DenoiserNet denoiser;
  Discriminator discriminator;
  AdamState generator_adam;
  AdamState denoiser_adam;
  AdamState discriminator_adam;
  std::uint64_t iteration = 0;
};

// The affine generator's law. Requires a single-layer generator.
AffineGenerator as_affine(const FeedForwardNet& generator);

// g_i = w_i * h_i * (teacher_score_i - fake_score_i), a constant per sample.
Matrix fdistill_generator_signal(const Matrix& x, const Matrix& teacher_score,
                                 const Matrix& fake_score, std::span<const double> h,
                                 std::span<const double> w);

// Divides each ratio by its bin's arithmetic mean (or sum in Stage1Mode::sum).
// In mean mode the per-bin left-to-right sum equals the bin count exactly.
std::vector<double> normalize_stage1(std::span<const double> ratios, std::span<const std::size_t> bins,
                                     Stage1Mode mode = Stage1Mode::mean);

// h / mean(h); the left-to-right sum of the output equals its length exactly.
std::vector<double> normalize_stage2(std::span<const double> h);

// Randomness consumed by one iteration, all drawn from the iteration's substream.
struct StepDraws {
  Matrix z;                      // generator latents
  std::vector<std::size_t> level;  // schedule level per sample
  Matrix noise;                  // forward-process noise for generator outputs
  Matrix noise_real;             // discriminator real-branch noise
  Matrix real;                   // teacher samples
  Matrix reference_z;            // latents for the exact-oracle kernel estimate
};

StepDraws step_draws(const RunConfig& config, const IsotropicGaussianMixture& teacher,
                     std::size_t dim, std::uint64_t iteration);

struct StepReport {
  std::uint64_t iteration = 0;
  bool generator_updated = false;
  bool denoiser_updated = false;
  bool discriminator_updated = false;
  double dsm_loss = 0.0;
  double disc_loss = 0.0;
  double gan_loss = 0.0;
  double mean_h = 0.0;
  double var_h = 0.0;
  double mean_ratio = 0.0;

  std::string describe() const;
};

struct MetricsRow {
  std::uint64_t iteration = 0;
  double dsm_loss = 0.0;
  double disc_loss = 0.0;
  double gan_loss = 0.0;
  double forward_kl = 0.0;
  double forward_kl_se = 0.0;
  double reverse_kl = 0.0;
  double reverse_kl_se = 0.0;
  std::size_t modes_covered = 0;
  double mean_h = 0.0;
  double var_h = 0.0;
  double mean_ratio = 0.0;
};

std::vector<std::string> metrics_header();
std::vector<double> metrics_values(const MetricsRow& row);

class Distiller {
 public:
  explicit Distiller(RunConfig config);
  // Custom weighting: spec.h replaces the catalog h of config.divergence.
  Distiller(RunConfig config, DivergenceSpec spec);
  // Explicit teacher instead of the config preset.
  Distiller(RunConfig config, DivergenceSpec spec, IsotropicGaussianMixture teacher);

  const RunConfig& config() const { return config_; }
  const DivergenceSpec& spec() const { return spec_; }
  const IsotropicGaussianMixture& teacher() const { return teacher_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  TrainState initial_state() const;

  // One iteration of the alternating update; increments state.iteration.
  StepReport train_step(TrainState& state) const;

  // Generator samples G(z) for z drawn from (seed, tag).
  Matrix generate(const TrainState& state, std::size_t n, std::uint64_t seed) const;

  // p_t / q_t at the requested points, q_t taken from the current generator.
  std::vector<double> exact_ratio(const TrainState& state, const Matrix& x,
                                  std::span<const std::size_t> level, const Matrix& reference_z) const;

  MetricsRow evaluate(const TrainState& state, const StepReport& last) const;

  struct Result {
    TrainState state;
    std::vector<MetricsRow> metrics;
  };

  using Observer = std::function<void(const TrainState&, const MetricsRow*)>;

  // Runs from state.iteration up to config.iterations; logs every metrics_every
  // steps and after the last one. The observer sees every completed step.
  Result train(TrainState state, const Observer& observer = {}) const;
  Result train() const { return train(initial_state()); }

 private:
  bool discriminator_needed() const;

  RunConfig config_;
  DivergenceSpec spec_;
  IsotropicGaussianMixture teacher_;
  NoiseSchedule schedule_;
  std::vector<IsotropicGaussianMixture> perturbed_;
};

Distiller::Result train(const RunConfig& config);

}  // namespace fdistill
