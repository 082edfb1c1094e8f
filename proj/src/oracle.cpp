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

#include "fdistill/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fdistill/errors.hpp"
#include "fdistill/kernels.hpp"
#include "fdistill/rng.hpp"

namespace fdistill {

namespace {

Matrix normal_matrix(const CounterRng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = rng.normal(k);
  return m;
}

// Mean and standard error after dropping non-finite entries within the trim budget.
Estimate trimmed_mean(std::span<const double> v, const char* what) {
  std::vector<double> kept;
  kept.reserve(v.size());
  for (double x : v) {
    if (std::isfinite(x)) kept.push_back(x);
  }
  const std::size_t dropped = v.size() - kept.size();
  if (static_cast<double>(dropped) > kTrimBudget * static_cast<double>(v.size()) || kept.size() < 2) {
    std::ostringstream msg;
    msg << what << ": " << dropped << " of " << v.size() << " values are non-finite, over the trim budget";
    throw NumericalAbort(msg.str());
  }
  const auto m = static_cast<double>(kept.size());
  const double mean = kernels::blocked_sum(kept) / m;
  std::vector<double> sq(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) sq[i] = (kept[i] - mean) * (kept[i] - mean);
  const double var = kernels::blocked_sum(sq) / (m - 1.0);
  return {mean, std::sqrt(var / m)};
}

bool within(const Estimate& e, double k) { return std::abs(e.value) <= k * e.se; }

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

Estimate mc_f_divergence(const DivergenceSpec& spec, std::span<const double> log_p,
                         std::span<const double> log_q) {
  if (log_p.size() != log_q.size()) throw ShapeError("log density batches are misaligned");
  if (log_p.size() < 100) throw ValidationError("Monte-Carlo divergence needs n >= 100");
  std::vector<double> v(log_p.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lr = log_p[i] - log_q[i];
    v[i] = std::isfinite(lr) ? spec.f_log(lr) : std::numeric_limits<double>::quiet_NaN();
  }
  return trimmed_mean(v, "f-divergence estimate");
}

Estimate mc_f_divergence(const DivergenceSpec& spec, const IsotropicGaussianMixture& p,
                         const IsotropicGaussianMixture& q, std::size_t n, std::uint64_t seed) {
  if (p.dim() != q.dim()) throw ShapeError("p and q dimensions differ");
  if (n < 100) throw ValidationError("Monte-Carlo divergence needs n >= 100");
  const Matrix x = q.sample(n, seed);
  return mc_f_divergence(spec, p.log_density(x), q.log_density(x));
}

double quadrature_f_divergence_1d(const DivergenceSpec& spec, const IsotropicGaussianMixture& p,
                                  const IsotropicGaussianMixture& q) {
  if (p.dim() != 1 || q.dim() != 1) throw ShapeError("quadrature oracle is one-dimensional");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* gm : {&p, &q}) {
    for (std::size_t k = 0; k < gm->size(); ++k) {
      const double sd = std::sqrt(gm->variance(k));
      lo = std::min(lo, gm->mean(k)[0] - 10.0 * sd);
      hi = std::max(hi, gm->mean(k)[0] + 10.0 * sd);
    }
  }
  const auto integrand = [&](double x) {
    const std::span<const double> pt(&x, 1);
    return spec.perspective(p.log_density(pt), q.log_density(pt));
  };
  double error = 0.0;
  const double value =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, lo, hi, 20, 1e-13, &error);
  if (!std::isfinite(value) || !(error <= 1e-8)) {
    std::ostringstream msg;
    msg << "quadrature did not converge (error estimate " << error << ")";
    throw NumericalAbort(msg.str());
  }
  return value;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

std::vector<GradCheckReport> gradient_check(const DivergenceSpec& spec,
                                                 const IsotropicGaussianMixture& teacher,
                                                 const AffineGenerator& gen, double sigma,
                                                 std::size_t n, std::uint64_t seed, double fd_step,
                                                 double tolerance) {
  const std::size_t dim = teacher.dim();
  if (gen.dim() != dim || gen.b.size() != dim) throw ShapeError("generator and teacher dimensions differ");
  if (!(fd_step > 0.0)) throw ValidationError("finite-difference step must be positive");
  const IsotropicGaussianMixture pt = teacher.perturb(sigma);
  const FullGaussian qt = affine_pushforward(gen, sigma);

  const CounterRng rng(seed, 0x6772616463ULL);
  const Matrix z = normal_matrix(rng.substream(1), n, gen.latent_dim());
  const Matrix eps = normal_matrix(rng.substream(2), n, dim);
  Matrix x = gen.apply(z);
  for (std::size_t k = 0; k < x.data.size(); ++k) x.data[k] += sigma * eps.data[k];

  const Matrix xp = pt.sample(n, mix64(seed ^ 0x7074ULL));
  const auto lp = pt.log_density(x);
  const auto lq = qt.log_density(x);
  const Matrix sp = pt.score(x);
  const Matrix sq = qt.score(x);
  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = spec.h_log(lp[i] - lq[i]);

  std::vector<GradCheckReport> reports;
  for (std::size_t k = 0; k < dim; ++k) {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = -h[i] * (sp(i, k) - sq(i, k));

    // Divergence estimated on a balanced q_t / p_t sample with weights q / m,
    // m = (p + q) / 2; the p_t half does not move with b.
    std::vector<double> fd(2 * n);
    std::vector<double> f_side[2];
    for (int side = 0; side < 2; ++side) {
      const double delta = side == 0 ? fd_step : -fd_step;
      std::vector<double> mean = gen.b;
      mean[k] += delta;
      const FullGaussian shifted(mean, qt.covariance());
      Matrix xs = x;
      for (std::size_t i = 0; i < n; ++i) xs(i, k) += delta;
      f_side[side].resize(2 * n);
      for (int half = 0; half < 2; ++half) {
        const Matrix& pts = half == 0 ? xs : xp;
        const auto lps = pt.log_density(pts);
        const auto lqs = shifted.log_density(pts);
        for (std::size_t i = 0; i < n; ++i) {
          const double hi = std::max(lps[i], lqs[i]);
          const double lm = hi + std::log1p(std::exp(std::min(lps[i], lqs[i]) - hi)) - std::log(2.0);
          f_side[side][half * n + i] = spec.perspective(lps[i] - lm, lqs[i] - lm);
        }
      }
    }
    for (std::size_t i = 0; i < 2 * n; ++i) fd[i] = (f_side[0][i] - f_side[1][i]) / (2.0 * fd_step);

    GradCheckReport rep;
    rep.kind = spec.kind();
    rep.sigma = sigma;
    rep.parameter = k;
    rep.estimator = trimmed_mean(t, "gradient estimate");
    rep.finite_difference = trimmed_mean(fd, "finite-difference estimate");
    rep.relative_error = relative_error(rep.estimator.value, rep.finite_difference.value);
    const bool at_zero = within(rep.estimator, 3.0) && within(rep.finite_difference, 3.0);
    if (!at_zero && rep.estimator.se > 0.2 * std::abs(rep.estimator.value)) {
      std::ostringstream msg;
      msg << "standard error " << rep.estimator.se << " exceeds 20% of the estimate "
          << rep.estimator.value << " for " << to_string(spec.kind()) << " at sigma " << sigma
          << "; increase n";
      throw ValidationError(msg.str());
    }
    rep.pass = rep.relative_error <= tolerance || at_zero;
    reports.push_back(rep);
  }
  return reports;
}

std::vector<Estimate> normalized_variance_curve(const DivergenceSpec& spec, std::span<const double> gaps,
                                                std::size_t n, std::uint64_t seed) {
  if (n < 100) throw ValidationError("normalized variance needs n >= 100");
  constexpr std::size_t kBlocks = 100;
  const CounterRng rng(seed, 0x76617269ULL);
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = rng.normal(i);

  std::vector<Estimate> out;
  for (double d : gaps) {
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = d + z[i];
      h[i] = spec.h_log(-d * x + 0.5 * d * d);
    }
    const auto normalized_var = [&](std::size_t lo, std::size_t hi) {
      const std::span<const double> part(h.data() + lo, hi - lo);
      const auto m = static_cast<double>(part.size());
      const double mean = kernels::blocked_sum(part) / m;
      std::vector<double> sq(part.size());
      for (std::size_t i = 0; i < part.size(); ++i) {
        const double u = part[i] / mean - 1.0;
        sq[i] = u * u;
      }
      return kernels::blocked_sum(sq) / (m - 1.0);
    };
    Estimate e;
    e.value = normalized_var(0, n);
    if (!std::isfinite(e.value)) throw NumericalAbort("normalized variance is not finite");
    std::vector<double> blocks;
    for (std::size_t b = 0; b < kBlocks; ++b) blocks.push_back(normalized_var(b * n / kBlocks, (b + 1) * n / kBlocks));
    const double bm = kernels::blocked_sum(blocks) / kBlocks;
    double acc = 0.0;
    for (double v : blocks) acc += (v - bm) * (v - bm);
    e.se = std::sqrt(acc / (kBlocks - 1.0) / kBlocks);
    out.push_back(e);
  }
  return out;
}

std::vector<WeightMapCell> weight_score_map(const DivergenceSpec& spec,
                                            const IsotropicGaussianMixture& teacher,
                                            const IsotropicGaussianMixture& student, double sigma,
                                            std::span<const double> xs, std::span<const double> ys) {
  if (teacher.dim() != 2 || student.dim() != 2) throw ShapeError("weight map needs 2-D distributions");
  const IsotropicGaussianMixture pt = teacher.perturb(sigma);
  const IsotropicGaussianMixture qt = student.perturb(sigma);
  Matrix grid(xs.size() * ys.size(), 2);
  std::size_t r = 0;
  for (double y : ys) {
    for (double x : xs) {
      grid(r, 0) = x;
      grid(r, 1) = y;
      ++r;
    }
  }
  const auto lp = pt.log_density(grid);
  const auto lq = qt.log_density(grid);
  const Matrix sp = pt.score(grid);
  const Matrix sq = qt.score(grid);
  std::vector<WeightMapCell> cells(grid.rows);
  for (std::size_t i = 0; i < grid.rows; ++i) {
    const double dx = sp(i, 0) - sq(i, 0);
    const double dy = sp(i, 1) - sq(i, 1);
    cells[i] = {grid(i, 0), grid(i, 1), std::hypot(dx, dy), spec.h_log(lp[i] - lq[i])};
  }
  return cells;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("spearman needs two aligned series of length >= 2");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - mean) * (rb[i] - mean);
    saa += (ra[i] - mean) * (ra[i] - mean);
    sbb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) throw DomainError("spearman correlation undefined for a constant series");
  return sab / std::sqrt(saa * sbb);
}

ModeCoverage mode_coverage(const Matrix& samples, const IsotropicGaussianMixture& teacher, double k,
                           double threshold) {
  if (samples.rows == 0) throw ValidationError("empty sample set");
  if (samples.cols != teacher.dim()) throw ShapeError("sample and teacher dimensions differ");
  if (!(k > 0.0)) throw ValidationError("radius multiplier must be positive");
  const std::size_t m = teacher.size();
  std::vector<double> radius(m);
  for (std::size_t j = 0; j < m; ++j) radius[j] = k * std::sqrt(teacher.variance(j));
  const auto dist2 = [&](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
    return s;
  };
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double reach = radius[i] + radius[j];
      if (dist2(teacher.mean(i), teacher.mean(j)) <= reach * reach) {
        throw ValidationError("coverage undefined: modes overlap at this radius multiplier");
      }
    }
  }
  ModeCoverage out;
  out.mass.assign(m, 0.0);
  for (std::size_t s = 0; s < samples.rows; ++s) {
    for (std::size_t j = 0; j < m; ++j) {
      if (dist2(samples.row(s), teacher.mean(j)) <= radius[j] * radius[j]) {
        out.mass[j] += 1.0;
        break;
      }
    }
  }
  for (double& v : out.mass) {
    v /= static_cast<double>(samples.rows);
    if (v >= threshold) ++out.covered;
  }
  return out;
}

KdeDivergences kde_divergences(const IsotropicGaussianMixture& teacher, const Matrix& reference,
                               const Matrix& student_eval, double s, std::size_t n_teacher,
                               std::uint64_t seed) {
  if (reference.cols != teacher.dim() || student_eval.cols != teacher.dim()) {
    throw ShapeError("sample and teacher dimensions differ");
  }
  if (!(s > 0.0)) throw ValidationError("smoothing scale must be positive");
  const IsotropicGaussianMixture pt = teacher.perturb(s);
  const IsotropicGaussianMixture qt = IsotropicGaussianMixture::equal_weights(reference, s * s);

  const Matrix xp = pt.sample(n_teacher, seed);
  const auto lpp = pt.log_density(xp);
  const auto lqp = qt.log_density(xp);
  std::vector<double> fwd(xp.rows);
  for (std::size_t i = 0; i < xp.rows; ++i) fwd[i] = lpp[i] - lqp[i];

  Matrix xq = student_eval;
  const CounterRng rng(seed, 0x6b6465ULL);
  for (std::size_t k = 0; k < xq.data.size(); ++k) xq.data[k] += s * rng.normal(k);
  const auto lpq = pt.log_density(xq);
  const auto lqq = qt.log_density(xq);
  std::vector<double> rev(xq.rows);
  for (std::size_t i = 0; i < xq.rows; ++i) rev[i] = lqq[i] - lpq[i];

  return {trimmed_mean(fwd, "forward KL"), trimmed_mean(rev, "reverse KL")};
}

}  // namespace fdistill
