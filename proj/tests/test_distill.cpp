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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fdistill/distill.hpp"
#include "fdistill/errors.hpp"
#include "fdistill/rng.hpp"

using namespace fdistill;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.batch_size = 64;
  c.iterations = 20;
  c.generator_hidden = {16, 16};
  c.denoiser_hidden = {16, 16};
  c.discriminator_hidden = {16, 16};
  c.oracle_ratio_samples = 128;
  c.metric_samples = 256;
  c.metrics_every = 10;
  return c;
}

RunConfig gaussian_pair_config(DivergenceKind kind) {
  RunConfig c = small_config();
  c.divergence = kind;
  c.generator = GeneratorKind::affine;
  c.ratio_source = RatioSource::exact_oracle;
  c.gan_weight = 0.0;
  c.teacher_components = {{1.0, {1.5, -1.0}, 1.0}};
  return c;
}

bool same_params(const FeedForwardNet& a, const FeedForwardNet& b) {
  return std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin(), b.parameters().end());
}

double left_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("enum names round-trip") {
  for (auto s : {RatioSource::discriminator, RatioSource::exact_oracle}) CHECK(parse_ratio_source(to_string(s)) == s);
  for (auto m : {Stage1Mode::mean, Stage1Mode::sum}) CHECK(parse_stage1_mode(to_string(m)) == m);
  for (auto g : {GeneratorKind::mlp, GeneratorKind::affine}) CHECK(parse_generator_kind(to_string(g)) == g);
  CHECK(to_string(RatioSource::exact_oracle) == "exact-oracle");
  CHECK_THROWS_AS(parse_ratio_source("oracle"), ValidationError);
}

TEST_CASE("run config validation names the field") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.tau = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("tau"), ConfigError);
  c = RunConfig{};
  c.gan_weight = -1.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("gan_weight"), ConfigError);
  c = RunConfig{};
  c.batch_size = 8;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("batch_size"), ConfigError);
  c = RunConfig{};
  c.clip = {2.0, 3.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("generator signal examples") {
  const Matrix x(3, 2);
  Matrix sp(3, 2);
  Matrix sf(3, 2);
  for (std::size_t k = 0; k < 6; ++k) {
    sp.data[k] = 0.3 * static_cast<double>(k) - 0.7;
    sf.data[k] = -0.2 * static_cast<double>(k) + 0.1;
  }
  const std::vector<double> ones(3, 1.0);
  const Matrix vsd = fdistill_generator_signal(x, sp, sf, ones, ones);
  for (std::size_t k = 0; k < 6; ++k) CHECK(vsd.data[k] == sp.data[k] - sf.data[k]);

  const Matrix zero = fdistill_generator_signal(x, sp, sp, ones, std::vector<double>{2.0, 3.0, 4.0});
  CHECK(std::all_of(zero.data.begin(), zero.data.end(), [](double v) { return v == 0.0; }));

  const Matrix scaled = fdistill_generator_signal(x, sp, sf, std::vector<double>{0.5, 1.0, 2.0},
                                                  std::vector<double>{4.0, 1.0, 0.25});
  for (std::size_t k = 0; k < 6; ++k) CHECK(scaled.data[k] == doctest::Approx(2.0 * vsd.data[k] * (k < 2 ? 1.0 : k < 4 ? 0.5 : 0.25)));

  CHECK_THROWS_AS(fdistill_generator_signal(x, sp, sf, std::vector<double>{1.0, -0.1, 1.0}, ones), DomainError);
  CHECK_THROWS_AS(fdistill_generator_signal(x, sp, sf, std::vector<double>{1.0, 1.0}, ones), ShapeError);
  CHECK_THROWS_AS(fdistill_generator_signal(x, sp, Matrix(2, 2), ones, ones), ShapeError);
}

TEST_CASE("stage-1 normalization examples") {
  const std::vector<std::size_t> one_bin(3, 0);
  const auto a = normalize_stage1(std::vector<double>{0.5, 1.0, 1.5}, one_bin);
  CHECK(a == std::vector<double>{0.5, 1.0, 1.5});
  const auto b = normalize_stage1(std::vector<double>{2.0, 2.0, 2.0}, one_bin);
  CHECK(b == std::vector<double>{1.0, 1.0, 1.0});
  const auto c = normalize_stage1(std::vector<double>{2.0, 4.0, 1.0, 1.0}, std::vector<std::size_t>{0, 0, 1, 1});
  CHECK(c[0] == doctest::Approx(2.0 / 3.0));
  CHECK(c[1] == doctest::Approx(4.0 / 3.0));
  CHECK(c[2] == 1.0);
  CHECK(c[3] == 1.0);
  const auto s = normalize_stage1(std::vector<double>{2.0, 4.0, 1.0, 3.0}, std::vector<std::size_t>{0, 0, 1, 1},
                                  Stage1Mode::sum);
  CHECK(s[0] == doctest::Approx(1.0 / 3.0));
  CHECK(s[3] == doctest::Approx(0.75));

  CHECK_THROWS_AS(normalize_stage1(std::vector<double>{}, std::vector<std::size_t>{}), ValidationError);
  CHECK_THROWS_AS(normalize_stage1(std::vector<double>{1.0, 0.0}, std::vector<std::size_t>{0, 0}), DomainError);
  CHECK_THROWS_AS(normalize_stage1(std::vector<double>{1.0, 2.0}, std::vector<std::size_t>{0}), ShapeError);
}

TEST_CASE("stage-2 normalization examples") {
  CHECK(normalize_stage2(std::vector<double>{1.0, 2.0, 3.0}) == std::vector<double>{0.5, 1.0, 1.5});
  CHECK(normalize_stage2(std::vector<double>(5, 0.37)) == std::vector<double>(5, 1.0));
  CHECK_THROWS_WITH_AS(normalize_stage2(std::vector<double>{0.0, 0.0}), "degenerate weighting batch", DomainError);
}

TEST_CASE("normalization means are exact on randomized batches") {
  const CounterRng rng(42, 1);
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const CounterRng s = rng.substream(t);
    const std::size_t n = 2 + static_cast<std::size_t>(s.uniform(0) * 300);
    const std::size_t bins = 1 + static_cast<std::size_t>(s.uniform(1) * 8);
    std::vector<double> r(n);
    std::vector<std::size_t> bin(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = std::exp(6.0 * s.substream(1).normal(i));
      bin[i] = std::min(bins - 1, static_cast<std::size_t>(s.substream(2).uniform(i) * bins));
    }
    const auto out = normalize_stage1(r, bin);
    std::vector<double> sum(bins, 0.0);
    std::vector<double> count(bins, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[bin[i]] += out[i];
      count[bin[i]] += 1.0;
    }
    for (std::size_t k = 0; k < bins; ++k) {
      if (count[k] > 0) CHECK(sum[k] / count[k] == 1.0);
    }
    const auto h = normalize_stage2(r);
    CHECK(left_mean(h) == 1.0);
  }
}

TEST_CASE("tau schedule alternates updates") {
  RunConfig c = small_config();
  c.tau = 5;
  const Distiller d(c);
  TrainState s = d.initial_state();
  for (std::uint64_t it = 0; it < 10; ++it) {
    const StepReport r = d.train_step(s);
    CHECK(r.iteration == it);
    CHECK(r.generator_updated == (it == 0 || it == 5));
    CHECK(r.denoiser_updated == !r.generator_updated);
    CHECK(r.discriminator_updated == !r.generator_updated);
  }
  CHECK(s.iteration == 10);
}

TEST_CASE("discriminator is skipped when neither ratios nor the GAN term use it") {
  RunConfig c = small_config();
  c.ratio_source = RatioSource::exact_oracle;
  c.gan_weight = 0.0;
  const Distiller d(c);
  TrainState s = d.initial_state();
  const auto disc_before = s.discriminator.net();
  for (int k = 0; k < 3; ++k) CHECK_FALSE(d.train_step(s).discriminator_updated);
  CHECK(same_params(disc_before, s.discriminator.net()));
}

TEST_CASE("reverse-kl and custom h = 1 take identical steps") {
  RunConfig c = small_config();
  c.divergence = DivergenceKind::reverse_kl;
  c.ratio_source = RatioSource::exact_oracle;
  const Distiller a(c);
  const Distiller b(c, make_custom([](double) { return 1.0; }));
  TrainState sa = a.initial_state();
  TrainState sb = b.initial_state();
  for (int k = 0; k < 12; ++k) {
    const StepReport ra = a.train_step(sa);
    const StepReport rb = b.train_step(sb);
    CHECK(ra.describe() == rb.describe());
    CHECK(same_params(sa.generator, sb.generator));
    CHECK(same_params(sa.denoiser.net(), sb.denoiser.net()));
    CHECK(same_params(sa.discriminator.net(), sb.discriminator.net()));
  }
}

TEST_CASE("h = 1 without normalization is the VSD update") {
  RunConfig c = small_config();
  c.divergence = DivergenceKind::reverse_kl;
  c.stage1 = false;
  c.stage2 = false;
  c.gan_weight = 0.0;
  c.ratio_source = RatioSource::exact_oracle;
  c.tau = 3;
  const Distiller d(c);
  const IsotropicGaussianMixture teacher = make_teacher(c);
  const NoiseSchedule sched(c.sigma_min, c.sigma_max, c.levels);
  TrainState s = d.initial_state();
  for (std::uint64_t it = 0; it < 10; ++it) {
    if (it % c.tau != 0) {
      d.train_step(s);
      continue;
    }
    // Independent VSD step: grad = -(1/B) sum_i sigma_i^2 (s_p - s_f)^T dG/dtheta.
    TrainState ref = s;
    const StepDraws draws = step_draws(c, teacher, 2, it);
    const ForwardCache cache = forward(ref.generator, draws.z);
    Matrix x = cache.output();
    std::vector<double> sigma(c.batch_size);
    for (std::size_t i = 0; i < c.batch_size; ++i) {
      sigma[i] = sched.sigma(draws.level[i]);
      for (std::size_t j = 0; j < 2; ++j) x(i, j) += sigma[i] * draws.noise(i, j);
    }
    const Matrix sf = fake_score(ref.denoiser, x, sigma);
    Matrix grad(c.batch_size, 2);
    for (std::size_t i = 0; i < c.batch_size; ++i) {
      const auto sp = teacher.perturb(sigma[i]).score(x.row(i));
      for (std::size_t j = 0; j < 2; ++j) {
        grad(i, j) = -(sigma[i] * sigma[i] * (sp[j] - sf(i, j))) / static_cast<double>(c.batch_size);
      }
    }
    adam_step(ref.generator_adam, ref.generator, backward(ref.generator, cache, grad).params);

    d.train_step(s);
    CHECK(same_params(s.generator, ref.generator));
    CHECK(s.generator_adam.m == ref.generator_adam.m);
  }
}

TEST_CASE("generator step decreases the mean gap at every noise level") {
  // p = N(0, I), q = N(b, I) with the exact fake score; one Adam step per sigma.
  const NoiseSchedule sched;
  const std::size_t n = 4096;
  const CounterRng rng(7, 2);
  for (DivergenceKind kind : catalog_kinds()) {
    const DivergenceSpec spec = catalog(kind);
    for (std::size_t level = 0; level < sched.size(); ++level) {
      const double sigma = sched.sigma(level);
      FeedForwardNet gen({2, 2}, Activation::silu, false);
      auto p = gen.mutable_parameters();
      p[gen.weight_offset(0)] = 1.0;
      p[gen.weight_offset(0) + 3] = 1.0;
      p[gen.bias_offset(0)] = 0.8;
      p[gen.bias_offset(0) + 1] = -0.6;
      const IsotropicGaussianMixture pt(2, {{1.0, {0.0, 0.0}, 1.0 + sigma * sigma}});
      const IsotropicGaussianMixture qt(2, {{1.0, {0.8, -0.6}, 1.0 + sigma * sigma}});

      Matrix z(n, 2);
      for (std::size_t k = 0; k < z.data.size(); ++k) z.data[k] = rng.substream(level).normal(k);
      const ForwardCache cache = forward(gen, z);
      Matrix x = cache.output();
      for (std::size_t k = 0; k < x.data.size(); ++k) x.data[k] += sigma * rng.substream(1000 + level).normal(k);
      const Matrix sp = pt.score(x);
      const Matrix sf = qt.score(x);
      const auto lp = pt.log_density(x);
      const auto lq = qt.log_density(x);
      std::vector<double> r(n);
      for (std::size_t i = 0; i < n; ++i) r[i] = std::clamp(std::exp(lp[i] - lq[i]), 1e-3, 1e3);
      r = normalize_stage1(r, std::vector<std::size_t>(n, 0));
      std::vector<double> h(n);
      for (std::size_t i = 0; i < n; ++i) h[i] = spec.h(r[i]);
      h = normalize_stage2(h);
      const Matrix g = fdistill_generator_signal(x, sp, sf, h, std::vector<double>(n, sigma * sigma));
      Matrix out(n, 2);
      for (std::size_t k = 0; k < g.data.size(); ++k) out.data[k] = -g.data[k] / static_cast<double>(n);
      for (double lr : {1e-3, 5e-3, 9e-3}) {
        FeedForwardNet step = gen;
        AdamState adam(step.parameter_count(), {lr, 0.9, 0.999, 1e-8, 0.0});
        adam_step(adam, step, backward(gen, cache, out).params);
        const double b0 = step.parameters()[step.bias_offset(0)];
        const double b1 = step.parameters()[step.bias_offset(0) + 1];
        CAPTURE(to_string(kind));
        CAPTURE(sigma);
        CHECK(std::hypot(b0, b1) < 1.0);
      }
    }
  }
}

TEST_CASE("forward-kl signal reproduces the closed-form mean gradient") {
  // p_t = N(0, 2), q_t = N(1, 2): d/db KL(p_t || q_t) = b / (1 + sigma^2) = 0.5.
  const std::size_t n = 100000;
  const double sigma = 1.0;
  const IsotropicGaussianMixture pt(1, {{1.0, {0.0}, 2.0}});
  const IsotropicGaussianMixture qt(1, {{1.0, {1.0}, 2.0}});
  const Matrix x = qt.sample(n, 3);
  const Matrix sp = pt.score(x);
  const Matrix sf = qt.score(x);
  const auto lp = pt.log_density(x);
  const auto lq = qt.log_density(x);
  std::vector<double> h(n);
  const DivergenceSpec spec = catalog(DivergenceKind::forward_kl);
  for (std::size_t i = 0; i < n; ++i) h[i] = spec.h(std::exp(lp[i] - lq[i]));
  const Matrix g = fdistill_generator_signal(x, sp, sf, h, std::vector<double>(n, 1.0));
  double mean = 0.0;
  double sq = 0.0;
  for (double v : g.data) {
    mean -= v / static_cast<double>(n);
    sq += v * v / static_cast<double>(n);
  }
  const double se = std::sqrt((sq - mean * mean) / static_cast<double>(n));
  CHECK(std::abs(mean - 0.5) <= 3.0 * se);
  CHECK(std::abs(mean - 0.5 * sigma * sigma) <= 3.0 * se);
}

TEST_CASE("Gaussian shrink: affine student reaches the teacher mean for every divergence") {
  for (DivergenceKind kind : catalog_kinds()) {
    RunConfig c = gaussian_pair_config(kind);
    c.iterations = 2000;
    c.tau = 2;
    c.lr_generator = 5e-3;
    c.lr_denoiser = 5e-3;
    c.denoiser_hidden = {32, 32};
    c.sigma_max = 5.0;
    c.metrics_every = 2000;
    const Distiller d(c);
    const auto result = d.train(d.initial_state());
    const AffineGenerator g = as_affine(result.state.generator);
    CAPTURE(to_string(kind));
    CHECK(std::hypot(g.b[0] - 1.5, g.b[1] + 1.0) < 0.05);
  }
}

TEST_CASE("discriminator ratios track exact ratios in the generator signal") {
  // Gaussian pair p_t = N(0, (1 + s^2) I), q_t = N(b, (1 + s^2) I) at s = 0.5.
  const double s = 0.5;
  const double v = 1.0 + s * s;
  const IsotropicGaussianMixture p0(2, {{1.0, {0.0, 0.0}, 1.0}});
  const IsotropicGaussianMixture q0(2, {{1.0, {0.6, -0.4}, 1.0}});
  const IsotropicGaussianMixture pt = p0.perturb(s);
  const IsotropicGaussianMixture qt = q0.perturb(s);

  auto disc = Discriminator::make(2, {64, 64}, Activation::silu, Preconditioning::edm, 1.0, 3);
  AdamState adam(disc.net().parameter_count(), {1e-3, 0.9, 0.999, 1e-8, 0.0});
  const std::vector<double> sig(256, s);
  for (std::uint64_t step = 0; step < 3000; ++step) {
    const CounterRng r(11, step);
    Matrix nr(256, 2);
    Matrix nf(256, 2);
    for (std::size_t k = 0; k < nr.data.size(); ++k) {
      nr.data[k] = r.substream(1).normal(k);
      nf.data[k] = r.substream(2).normal(k);
    }
    disc_update(disc, adam, p0.sample(256, 2 * step + 100), q0.sample(256, 2 * step + 101), sig, nr, nf, 0.0);
  }

  const std::size_t n = 8192;
  const Matrix x = qt.sample(n, 5);
  const Matrix sp = pt.score(x);
  const Matrix sf = qt.score(x);
  const auto lp = pt.log_density(x);
  const auto lq = qt.log_density(x);
  std::vector<double> exact(n);
  for (std::size_t i = 0; i < n; ++i) exact[i] = std::clamp(std::exp(lp[i] - lq[i]), 1e-3, 1e3);
  const std::vector<double> est = ratio_estimate(disc, x, std::vector<double>(n, s), RatioClip{});

  for (DivergenceKind kind : catalog_kinds()) {
    const DivergenceSpec spec = catalog(kind);
    auto mean_signal = [&](const std::vector<double>& r) {
      std::vector<double> h(n);
      for (std::size_t i = 0; i < n; ++i) h[i] = spec.h(r[i]);
      const Matrix g = fdistill_generator_signal(x, sp, sf, h, std::vector<double>(n, v));
      std::vector<double> m(2, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        m[0] += g(i, 0) / static_cast<double>(n);
        m[1] += g(i, 1) / static_cast<double>(n);
      }
      return m;
    };
    const auto a = mean_signal(exact);
    const auto b = mean_signal(est);
    CAPTURE(to_string(kind));
    CHECK(std::hypot(a[0] - b[0], a[1] - b[1]) <= 0.2 * std::hypot(a[0], a[1]));
  }
}

TEST_CASE("zero iterations return the initial state and an empty log") {
  RunConfig c = small_config();
  c.iterations = 0;
  const Distiller d(c);
  const auto result = d.train();
  CHECK(result.metrics.empty());
  CHECK(result.state.iteration == 0);
  CHECK(same_params(result.state.generator, d.initial_state().generator));
}

TEST_CASE("training is deterministic and resumable") {
  RunConfig c = small_config();
  c.iterations = 30;
  const auto first = train(c);
  const auto second = train(c);
  REQUIRE(first.metrics.size() == 3);
  for (std::size_t k = 0; k < first.metrics.size(); ++k) {
    CHECK(metrics_values(first.metrics[k]) == metrics_values(second.metrics[k]));
  }
  CHECK(first.metrics.back().iteration == 30);

  RunConfig half = c;
  half.iterations = 13;
  const Distiller d_half(half);
  const auto partial = d_half.train(d_half.initial_state());
  std::size_t observed = 0;
  const Distiller d(c);
  const auto resumed = d.train(partial.state, [&](const TrainState&, const MetricsRow*) { ++observed; });
  CHECK(observed == 17);
  CHECK(same_params(resumed.state.generator, first.state.generator));
  CHECK(same_params(resumed.state.denoiser.net(), first.state.denoiser.net()));
  CHECK(same_params(resumed.state.discriminator.net(), first.state.discriminator.net()));
  CHECK(metrics_values(resumed.metrics.back()) == metrics_values(first.metrics.back()));
}

TEST_CASE("metrics header matches the row layout") {
  CHECK(metrics_header().size() == metrics_values(MetricsRow{}).size());
  CHECK(metrics_header().front() == "iteration");
}
