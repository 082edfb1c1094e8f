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

#include "fdistill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "fdistill/errors.hpp"
#include "fdistill/oracle.hpp"

namespace fdistill {

namespace {

enum DrawTag : std::uint64_t {
  kLatent = 1,
  kLevel = 2,
  kNoise = 3,
  kNoiseReal = 4,
  kReal = 5,
  kReference = 6,
  kMetricRef = 7,
  kMetricEval = 8,
  kMetricTeacher = 9,
};

Matrix normal_matrix(const CounterRng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = rng.normal(k);
  return m;
}

double left_sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// Nudges the largest entry until the left-to-right sum hits `target` exactly,
// then falls back to solving for the last member.
void pin_sum(std::vector<double>& y, std::span<const std::size_t> members, double target) {
  if (members.empty()) return;
  std::size_t top = members.front();
  for (std::size_t i : members) {
    if (y[i] > y[top]) top = i;
  }
  for (int round = 0; round < 8; ++round) {
    double s = 0.0;
    for (std::size_t i : members) s += y[i];
    if (s == target) return;
    y[top] += target - s;
  }
  double head = 0.0;
  for (std::size_t k = 0; k + 1 < members.size(); ++k) head += y[members[k]];
  const double last = target - head;
  if (last > 0.0) y[members.back()] = last;
}

void check_finite(const Matrix& m, const char* what) {
  for (double v : m.data) {
    if (!std::isfinite(v)) throw NumericalAbort(std::string("non-finite ") + what);
  }
}

void require(bool ok, const char* field, const std::string& what) {
  if (!ok) throw ConfigError(std::string(field) + ": " + what);
}

void check_finite(const FeedForwardNet& net, const char* name, const StepReport& report) {
  for (double p : net.parameters()) {
    if (!std::isfinite(p)) {
      throw NumericalAbort(std::string("non-finite ") + name + " parameters; " + report.describe());
    }
  }
}

}  // namespace

std::string_view to_string(RatioSource s) {
  return s == RatioSource::exact_oracle ? "exact-oracle" : "discriminator";
}

RatioSource parse_ratio_source(std::string_view name) {
  if (name == "discriminator") return RatioSource::discriminator;
  if (name == "exact-oracle") return RatioSource::exact_oracle;
  throw ValidationError("unknown ratio source '" + std::string(name) + "'");
}

std::string_view to_string(Stage1Mode m) { return m == Stage1Mode::sum ? "sum" : "mean"; }

Stage1Mode parse_stage1_mode(std::string_view name) {
  if (name == "mean") return Stage1Mode::mean;
  if (name == "sum") return Stage1Mode::sum;
  throw ValidationError("unknown stage-1 mode '" + std::string(name) + "'");
}

std::string_view to_string(GeneratorKind g) { return g == GeneratorKind::affine ? "affine" : "mlp"; }

GeneratorKind parse_generator_kind(std::string_view name) {
  if (name == "mlp") return GeneratorKind::mlp;
  if (name == "affine") return GeneratorKind::affine;
  throw ValidationError("unknown generator kind '" + std::string(name) + "'");
}

void RunConfig::validate() const {
  require(divergence != DivergenceKind::custom, "divergence", "custom weighting is set programmatically");
  require(time_bins >= 1, "time_bins", "must be >= 1");
  require(batch_size >= 2 * time_bins, "batch_size", "need at least 2 samples per time bin on average");
  require(tau >= 1, "tau", "must be >= 1");
  require(std::isfinite(gan_weight) && gan_weight >= 0.0, "gan_weight", "must be >= 0");
  try {
    clip.validate();
  } catch (const ValidationError& e) {
    require(false, "r_min, r_max", e.what());
  }
  require(lr_generator > 0.0, "lr_generator", "must be > 0");
  require(lr_denoiser > 0.0, "lr_denoiser", "must be > 0");
  require(lr_discriminator > 0.0, "lr_discriminator", "must be > 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(r1_gamma >= 0.0, "r1_gamma", "must be >= 0");
  require(sigma_min > 0.0, "sigma_min", "must be > 0");
  require(sigma_max > sigma_min, "sigma_max", "must exceed sigma_min");
  require(levels >= 2, "levels", "must be >= 2");
  require(latent_dim >= 1, "latent_dim", "must be >= 1");
  require(generator == GeneratorKind::affine || !generator_hidden.empty(), "generator_hidden",
          "an mlp generator needs at least one hidden layer");
  require(!denoiser_hidden.empty(), "denoiser_hidden", "needs at least one hidden layer");
  require(!discriminator_hidden.empty(), "discriminator_hidden", "needs at least one hidden layer");
  require(oracle_ratio_samples >= 1, "oracle_ratio_samples", "must be >= 1");
  require(oracle_sigma_floor >= 0.0, "oracle_sigma_floor", "must be >= 0");
  require(metric_sigma > 0.0, "metric_sigma", "must be > 0");
  require(metric_samples >= 2, "metric_samples", "must be >= 2");
  require(coverage_k > 0.0, "coverage_k", "must be > 0");
  require(coverage_threshold > 0.0 && coverage_threshold <= 1.0, "coverage_threshold",
          "must lie in (0, 1]");
}

AffineGenerator as_affine(const FeedForwardNet& generator) {
  if (generator.layer_count() != 1 || generator.sigma_conditioned()) {
    throw ValidationError("generator is not affine");
  }
  const std::size_t in = generator.widths()[0];
  const std::size_t out = generator.widths()[1];
  AffineGenerator g;
  g.a = Matrix(out, in);
  const auto w = generator.weights(0);
  for (std::size_t k = 0; k < in; ++k) {
    for (std::size_t o = 0; o < out; ++o) g.a(o, k) = w[k * out + o];
  }
  const auto b = generator.bias(0);
  g.b.assign(b.begin(), b.end());
  return g;
}

Matrix fdistill_generator_signal(const Matrix& x, const Matrix& teacher_score, const Matrix& fake_score,
                                 std::span<const double> h, std::span<const double> w) {
  if (!x.same_shape(teacher_score) || !x.same_shape(fake_score) || h.size() != x.rows ||
      w.size() != x.rows) {
    throw ShapeError("generator signal batches are misaligned");
  }
  Matrix g(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (!(h[i] >= 0.0)) throw DomainError("weighting h must be non-negative");
    for (std::size_t j = 0; j < x.cols; ++j) {
      g(i, j) = w[i] * h[i] * (teacher_score(i, j) - fake_score(i, j));
    }
  }
  return g;
}

std::vector<double> normalize_stage1(std::span<const double> ratios, std::span<const std::size_t> bins,
                                     Stage1Mode mode) {
  if (ratios.empty()) throw ValidationError("empty ratio batch");
  if (bins.size() != ratios.size()) throw ShapeError("ratio and bin batches are misaligned");
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (!(ratios[i] > 0.0) || !std::isfinite(ratios[i])) throw DomainError("ratios must be positive and finite");
    members[bins[i]].push_back(i);
  }
  std::vector<double> out(ratios.size());
  for (const auto& [bin, idx] : members) {
    double s = 0.0;
    for (std::size_t i : idx) s += ratios[i];
    const double n = static_cast<double>(idx.size());
    const double denom = mode == Stage1Mode::sum ? s : s / n;
    for (std::size_t i : idx) out[i] = ratios[i] / denom;
    if (mode == Stage1Mode::mean) pin_sum(out, idx, n);
  }
  return out;
}

std::vector<double> normalize_stage2(std::span<const double> h) {
  if (h.empty()) throw ValidationError("empty weighting batch");
  const double s = left_sum(h);
  if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("degenerate weighting batch");
  const double n = static_cast<double>(h.size());
  const double mean = s / n;
  std::vector<double> out(h.size());
  std::vector<std::size_t> idx(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!(h[i] >= 0.0)) throw DomainError("weighting h must be non-negative");
    out[i] = h[i] / mean;
    idx[i] = i;
  }
  pin_sum(out, idx, n);
  return out;
}

StepDraws step_draws(const RunConfig& config, const IsotropicGaussianMixture& teacher, std::size_t dim,
                     std::uint64_t iteration) {
  const CounterRng root = CounterRng(config.seed, 0x64726177ULL).substream(iteration);
  const std::size_t b = config.batch_size;
  StepDraws d;
  d.z = normal_matrix(root.substream(kLatent), b, config.latent_dim);
  const CounterRng lv = root.substream(kLevel);
  d.level.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto l = static_cast<std::size_t>(lv.uniform(i) * static_cast<double>(config.levels));
    d.level[i] = std::min(l, config.levels - 1);
  }
  d.noise = normal_matrix(root.substream(kNoise), b, dim);
  const bool generator_step = iteration % config.tau == 0;
  if (!generator_step) {
    d.noise_real = normal_matrix(root.substream(kNoiseReal), b, dim);
    d.real = teacher.sample(b, mix64(config.seed ^ mix64(root.stream() + kReal)));
  } else if (config.ratio_source == RatioSource::exact_oracle && config.generator == GeneratorKind::mlp) {
    d.reference_z = normal_matrix(root.substream(kReference), config.oracle_ratio_samples, config.latent_dim);
  }
  return d;
}

std::string StepReport::describe() const {
  std::ostringstream s;
  s.precision(17);
  s << "iteration=" << iteration << " generator=" << generator_updated << " denoiser=" << denoiser_updated
    << " discriminator=" << discriminator_updated << " dsm_loss=" << dsm_loss << " disc_loss=" << disc_loss
    << " gan_loss=" << gan_loss << " mean_h=" << mean_h << " var_h=" << var_h
    << " mean_ratio=" << mean_ratio;
  return s.str();
}

std::vector<std::string> metrics_header() {
  return {"iteration",   "dsm_loss",   "disc_loss",     "gan_loss", "forward_kl", "forward_kl_se",
          "reverse_kl",  "reverse_kl_se", "modes_covered", "mean_h", "var_h",      "mean_ratio"};
}

std::vector<double> metrics_values(const MetricsRow& r) {
  return {static_cast<double>(r.iteration), r.dsm_loss,   r.disc_loss,
          r.gan_loss,                       r.forward_kl, r.forward_kl_se,
          r.reverse_kl,                     r.reverse_kl_se, static_cast<double>(r.modes_covered),
          r.mean_h,                         r.var_h,      r.mean_ratio};
}

Distiller::Distiller(RunConfig config)
    : Distiller(config, catalog(config.divergence == DivergenceKind::custom ? DivergenceKind::reverse_kl
                                                                            : config.divergence)) {}

IsotropicGaussianMixture make_teacher(const RunConfig& config) {
  if (config.teacher_components.empty()) return presets::by_name(config.teacher);
  try {
    return IsotropicGaussianMixture(config.teacher_components.front().mean.size(), config.teacher_components);
  } catch (const Error& e) {
    throw ConfigError(std::string("teacher: ") + e.what());
  }
}

Distiller::Distiller(RunConfig config, DivergenceSpec spec)
    : Distiller(config, std::move(spec), make_teacher(config)) {}

Distiller::Distiller(RunConfig config, DivergenceSpec spec, IsotropicGaussianMixture teacher)
    : config_(std::move(config)),
      spec_(std::move(spec)),
      teacher_(std::move(teacher)),
      schedule_(config_.sigma_min, config_.sigma_max, config_.levels) {
  if (!spec_.is_custom()) config_.validate();
  else {
    RunConfig probe = config_;
    probe.divergence = DivergenceKind::reverse_kl;
    probe.validate();
  }
  perturbed_.reserve(schedule_.size());
  for (double s : schedule_.sigmas()) perturbed_.push_back(teacher_.perturb(s));
}

bool Distiller::discriminator_needed() const {
  return config_.ratio_source == RatioSource::discriminator || config_.gan_weight > 0.0;
}

TrainState Distiller::initial_state() const {
  const std::size_t dim = teacher_.dim();
  const double sd = teacher_.data_std();
  const CounterRng seeds(config_.seed, 0x696e6974ULL);
  TrainState s;
  std::vector<std::size_t> widths{config_.latent_dim};
  if (config_.generator == GeneratorKind::mlp) {
    widths.insert(widths.end(), config_.generator_hidden.begin(), config_.generator_hidden.end());
  }
  widths.push_back(dim);
  s.generator = FeedForwardNet(widths, config_.activation, false);
  initialize(s.generator, seeds.block(1)[0], config_.generator_init_scale);
  s.denoiser = DenoiserNet::make(dim, config_.denoiser_hidden, config_.activation, config_.preconditioning, sd,
                                 seeds.block(2)[0]);
  s.discriminator = Discriminator::make(dim, config_.discriminator_hidden, config_.activation,
                                        config_.preconditioning, sd, seeds.block(3)[0]);
  const auto adam = [&](double lr) {
    return AdamConfig{lr, config_.adam_beta1, config_.adam_beta2, 1e-8, config_.weight_decay};
  };
  s.generator_adam = AdamState(s.generator.parameter_count(), adam(config_.lr_generator));
  s.denoiser_adam = AdamState(s.denoiser.net().parameter_count(), adam(config_.lr_denoiser));
  s.discriminator_adam = AdamState(s.discriminator.net().parameter_count(), adam(config_.lr_discriminator));
  return s;
}

Matrix Distiller::generate(const TrainState& state, std::size_t n, std::uint64_t seed) const {
  const Matrix z = normal_matrix(CounterRng(seed, 0x67656eULL), n, config_.latent_dim);
  Matrix out = forward(state.generator, z).output();
  check_finite(out, "generator output");
  return out;
}

std::vector<double> Distiller::exact_ratio(const TrainState& state, const Matrix& x,
                                           std::span<const std::size_t> level,
                                           const Matrix& reference_z) const {
  if (level.size() != x.rows) throw ShapeError("level batch length mismatch");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < x.rows; ++i) groups[level[i]].push_back(i);

  const bool affine = state.generator.layer_count() == 1;
  Matrix reference;
  if (!affine) {
    if (reference_z.rows == 0) throw ValidationError("kernel ratio estimate needs reference latents");
    reference = forward(state.generator, reference_z).output();
  }
  std::vector<double> log_r(x.rows);
  for (const auto& [l, idx] : groups) {
    Matrix pts(idx.size(), x.cols);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      for (std::size_t j = 0; j < x.cols; ++j) pts(k, j) = x(idx[k], j);
    }
    std::vector<double> lp;
    std::vector<double> lq;
    const double sigma = schedule_.sigma(l);
    if (affine) {
      lp = perturbed_[l].log_density(pts);
      lq = affine_pushforward(as_affine(state.generator), sigma).log_density(pts);
    } else {
      const double s = std::max(sigma, config_.oracle_sigma_floor);
      lp = (s == sigma ? perturbed_[l] : teacher_.perturb(s)).log_density(pts);
      lq = IsotropicGaussianMixture::equal_weights(reference, s * s).log_density(pts);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) log_r[idx[k]] = lp[k] - lq[k];
  }
  std::vector<double> r(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (std::isnan(log_r[i])) throw NumericalAbort("exact density ratio is undefined");
    r[i] = std::exp(log_r[i]);
  }
  return r;
}

StepReport Distiller::train_step(TrainState& state) const {
  const std::uint64_t it = state.iteration;
  const std::size_t dim = teacher_.dim();
  const std::size_t bsz = config_.batch_size;
  const auto n = static_cast<double>(bsz);
  const StepDraws d = step_draws(config_, teacher_, dim, it);
  std::vector<double> sigma(bsz);
  for (std::size_t i = 0; i < bsz; ++i) sigma[i] = schedule_.sigma(d.level[i]);

  StepReport report;
  report.iteration = it;
  const ForwardCache gen_cache = forward(state.generator, d.z);
  const Matrix& y = gen_cache.output();
  check_finite(y, "generator output");
  Matrix x(bsz, dim);
  for (std::size_t i = 0; i < bsz; ++i) {
    for (std::size_t j = 0; j < dim; ++j) x(i, j) = y(i, j) + sigma[i] * d.noise(i, j);
  }

  if (it % config_.tau == 0) {
    Matrix sp(bsz, dim);
    for (std::size_t i = 0; i < bsz; ++i) {
      const auto s = perturbed_[d.level[i]].score(x.row(i));
      std::copy(s.begin(), s.end(), sp.row(i).begin());
    }
    const Matrix sf = fake_score(state.denoiser, x, sigma);

    const Matrix& at = config_.ratio_at_clean ? y : x;
    std::vector<double> r = config_.ratio_source == RatioSource::exact_oracle
                                ? exact_ratio(state, at, d.level, d.reference_z)
                                : ratio_estimate(state.discriminator, at, sigma, config_.clip);
    for (double& v : r) v = std::clamp(v, config_.clip.r_min, config_.clip.r_max);
    report.mean_ratio = left_sum(r) / n;
    if (config_.stage1) {
      std::vector<std::size_t> bins(bsz);
      for (std::size_t i = 0; i < bsz; ++i) bins[i] = schedule_.bin_of(sigma[i], config_.time_bins);
      r = normalize_stage1(r, bins, config_.stage1_mode);
    }
    std::vector<double> h(bsz);
    for (std::size_t i = 0; i < bsz; ++i) h[i] = spec_.h(r[i]);
    report.mean_h = left_sum(h) / n;
    double var = 0.0;
    for (double v : h) var += (v - report.mean_h) * (v - report.mean_h);
    report.var_h = var / n;
    if (config_.stage2) h = normalize_stage2(h);

    std::vector<double> w(bsz);
    for (std::size_t i = 0; i < bsz; ++i) w[i] = schedule_.weight(d.level[i]);
    if (config_.rescale_time_weight) {
      double l1 = 0.0;
      for (std::size_t k = 0; k < sp.data.size(); ++k) l1 += std::abs(sp.data[k] - sf.data[k]);
      const double scale = std::max(l1 / n, 1e-12);
      for (double& v : w) v /= scale;
    }
    const Matrix g = fdistill_generator_signal(x, sp, sf, h, w);
    Matrix out_grad(bsz, dim);
    for (std::size_t k = 0; k < g.data.size(); ++k) out_grad.data[k] = -g.data[k] / n;
    if (config_.gan_weight > 0.0) {
      const Matrix gg = gan_generator_grad(state.discriminator, y, sigma, d.noise, config_.gan_loss);
      for (std::size_t k = 0; k < gg.data.size(); ++k) out_grad.data[k] += config_.gan_weight * gg.data[k] / n;
      report.gan_loss = gan_generator_loss(state.discriminator, y, sigma, d.noise, config_.gan_loss);
    }
    const Gradients grads = backward(state.generator, gen_cache, out_grad);
    adam_step(state.generator_adam, state.generator, grads.params);
    report.generator_updated = true;
    check_finite(state.generator, "generator", report);
  } else {
    report.dsm_loss =
        dsm_update(state.denoiser, state.denoiser_adam, y, sigma, d.noise, schedule_.sigma_min());
    report.denoiser_updated = true;
    check_finite(state.denoiser.net(), "denoiser", report);
    if (discriminator_needed()) {
      const DiscLoss dl = disc_update(state.discriminator, state.discriminator_adam, d.real, y, sigma,
                                      d.noise_real, d.noise, config_.r1_gamma);
      report.disc_loss = dl.total();
      report.discriminator_updated = true;
      check_finite(state.discriminator.net(), "discriminator", report);
    }
  }
  ++state.iteration;
  return report;
}

MetricsRow Distiller::evaluate(const TrainState& state, const StepReport& last) const {
  const std::uint64_t base = mix64(config_.seed ^ mix64(state.iteration + 0x6d6574ULL));
  const Matrix ref = generate(state, config_.metric_samples, base ^ kMetricRef);
  const Matrix eval = generate(state, config_.metric_samples, base ^ kMetricEval);
  const KdeDivergences kl = kde_divergences(teacher_, ref, eval, config_.metric_sigma, config_.metric_samples,
                                            base ^ kMetricTeacher);
  MetricsRow row;
  row.iteration = state.iteration;
  row.dsm_loss = last.dsm_loss;
  row.disc_loss = last.disc_loss;
  row.gan_loss = last.gan_loss;
  row.forward_kl = kl.forward_kl.value;
  row.forward_kl_se = kl.forward_kl.se;
  row.reverse_kl = kl.reverse_kl.value;
  row.reverse_kl_se = kl.reverse_kl.se;
  row.modes_covered = mode_coverage(eval, teacher_, config_.coverage_k, config_.coverage_threshold).covered;
  row.mean_h = last.mean_h;
  row.var_h = last.var_h;
  row.mean_ratio = last.mean_ratio;
  return row;
}

Distiller::Result Distiller::train(TrainState state, const Observer& observer) const {
  Result result{std::move(state), {}};
  StepReport latest;
  while (result.state.iteration < config_.iterations) {
    const StepReport rep = train_step(result.state);
    if (rep.denoiser_updated) latest.dsm_loss = rep.dsm_loss;
    if (rep.discriminator_updated) latest.disc_loss = rep.disc_loss;
    if (rep.generator_updated) {
      latest.gan_loss = rep.gan_loss;
      latest.mean_h = rep.mean_h;
      latest.var_h = rep.var_h;
      latest.mean_ratio = rep.mean_ratio;
    }
    const std::uint64_t done = result.state.iteration;
    const bool log = (config_.metrics_every > 0 && done % config_.metrics_every == 0) ||
                     done == config_.iterations;
    if (log) {
      result.metrics.push_back(evaluate(result.state, latest));
      if (observer) observer(result.state, &result.metrics.back());
    } else if (observer) {
      observer(result.state, nullptr);
    }
  }
  return result;
}

Distiller::Result train(const RunConfig& config) { return Distiller(config).train(); }

}  // namespace fdistill
