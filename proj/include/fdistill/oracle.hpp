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

#include "fdistill/divergence.hpp"
#include "fdistill/matrix.hpp"
#include "fdistill/teacher.hpp"

namespace fdistill {

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

// Fraction of non-finite f values that may be dropped before an estimate fails.
inline constexpr double kTrimBudget = 1e-3;

// Mean and standard error of f(exp(log_p - log_q)) over samples drawn from q.
Estimate mc_f_divergence(const DivergenceSpec& spec, std::span<const double> log_p,
                         std::span<const double> log_q);

// D_f(p || q) by n draws from q.
Estimate mc_f_divergence(const DivergenceSpec& spec, const IsotropicGaussianMixture& p,
                         const IsotropicGaussianMixture& q, std::size_t n, std::uint64_t seed);

// Adaptive Gauss-Kronrod integral of q f(p/q) over +-10 standard deviations
// around every component; absolute tolerance 1e-8.
double quadrature_f_divergence_1d(const DivergenceSpec& spec, const IsotropicGaussianMixture& p,
                                  const IsotropicGaussianMixture& q);

struct GradCheckReport {
  DivergenceKind kind = DivergenceKind::reverse_kl;
  double sigma = 0.0;
  std::size_t parameter = 0;
  Estimate estimator;
  Estimate finite_difference;
  double relative_error = 0.0;
  bool pass = false;
};

double relative_error(double a, double b);

// Compares the exact-score estimator -E[h(r) (s_p - s_q) dx/db_k] with a
// central difference in b_k of the Monte-Carlo divergence, estimated on an
// equal number of q_t and p_t draws weighted by q / ((p + q) / 2). Both sides
// share the same latents and noise; one report per bias coordinate. Passes on relative error
// <= tolerance, or when both estimates lie within 3 standard errors of zero.
std::vector<GradCheckReport> gradient_check(const DivergenceSpec& spec,
                                                 const IsotropicGaussianMixture& teacher,
                                                 const AffineGenerator& gen, double sigma,
                                                 std::size_t n, std::uint64_t seed,
                                                 double fd_step = 1e-3, double tolerance = 0.05);

// Var_q(h(p/q) / E_q h(p/q)) for p = N(0, 1), q = N(d, 1), one estimate per d.
// All gaps share the same standard normal draws.
std::vector<Estimate> normalized_variance_curve(const DivergenceSpec& spec, std::span<const double> gaps,
                                                std::size_t n, std::uint64_t seed);

struct WeightMapCell {
  double x = 0.0;
  double y = 0.0;
  double score_diff = 0.0;
  double h = 0.0;
};

// |grad log p_t - grad log q_t| and h(p_t / q_t) on the tensor grid xs x ys.
std::vector<WeightMapCell> weight_score_map(const DivergenceSpec& spec,
                                            const IsotropicGaussianMixture& teacher,
                                            const IsotropicGaussianMixture& student, double sigma,
                                            std::span<const double> xs, std::span<const double> ys);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

struct ModeCoverage {
  std::vector<double> mass;  // fraction of samples within k sqrt(v_j) of mean j
  std::size_t covered = 0;
};

ModeCoverage mode_coverage(const Matrix& samples, const IsotropicGaussianMixture& teacher, double k,
                           double threshold = 0.02);

struct KdeDivergences {
  Estimate forward_kl;  // KL(p_s || q_s)
  Estimate reverse_kl;  // KL(q_s || p_s)
};

// KL divergences between teacher and student smoothed by N(0, s^2 I). The
// student law is the equal-weight mixture over `reference` at variance s^2;
// `student_eval` must be drawn independently of `reference`.
KdeDivergences kde_divergences(const IsotropicGaussianMixture& teacher, const Matrix& reference,
                               const Matrix& student_eval, double s, std::size_t n_teacher,
                               std::uint64_t seed);

}  // namespace fdistill
