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

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Catalog of f-divergences D_f(p || q) = E_q[f(p/q)] together with the
// weighting function h(r) = f''(r) r^2 that multiplies the score difference in
// the generator gradient.
namespace fdistill {

enum class DivergenceKind {
  reverse_kl,
  softened_rkl,
  jensen_shannon,
  squared_hellinger,
  forward_kl,
  jeffreys,
  custom,
};

enum class ModeSeeking { high, medium, low };
enum class VarianceClass { none, low, high };

// The six closed-form kinds, in catalog order.
const std::vector<DivergenceKind>& catalog_kinds();

std::string_view to_string(DivergenceKind kind);
// Accepts the hyphenated names ("reverse-kl", "jensen-shannon", ...).
DivergenceKind parse_divergence(std::string_view name);

using WeightingFn = std::function<double(double)>;

class DivergenceSpec {
 public:
  DivergenceKind kind() const { return kind_; }
  std::string_view name() const { return to_string(kind_); }

  // Closed forms on r in (0, inf). Throw DomainError for r <= 0 or non-finite r,
  // and Error for custom specs (f is not materialised for those).
  double f(double r) const;
  double f_prime(double r) const;
  double f_second(double r) const;
  double h(double r) const;

  // Same quantities taking log r; stable for |log r| up to ~700.
  double f_log(double log_r) const;
  double h_log(double log_r) const;

  // q * f(p / q) from log p and log q; finite whenever either density is.
  double perspective(double log_p, double log_q) const;

  // Mode-seeking column (high = "Yes"), saturation column, variance column.
  ModeSeeking mode_seeking() const { return mode_seeking_; }
  bool saturating() const { return saturating_; }
  VarianceClass variance_class() const { return variance_class_; }

  bool is_custom() const { return kind_ == DivergenceKind::custom; }

 private:
  friend DivergenceSpec catalog(DivergenceKind kind);
  friend DivergenceSpec make_custom(WeightingFn h);

  DivergenceKind kind_ = DivergenceKind::reverse_kl;
  ModeSeeking mode_seeking_ = ModeSeeking::high;
  bool saturating_ = false;
  VarianceClass variance_class_ = VarianceClass::none;
  WeightingFn custom_h_;
};

DivergenceSpec catalog(DivergenceKind kind);

// h(kind, r) for the closed-form kinds.
double weight_h(DivergenceKind kind, double r);

// f(r) / r at a large ratio; bounded for mode-seeking kinds, growing otherwise.
double growth_limit_probe(DivergenceKind kind, double r_large);

struct TailRates {
  double right;  // exponent of f''(r) as r -> inf
  double left;   // exponent of f''(r) as r -> 0
};
TailRates tail_weight_rates(DivergenceKind kind);

// 512 log-spaced ratios in [1e-4, 1e4].
std::vector<double> custom_probe_grid();

// Wraps a user weighting function after checking it is finite and
// non-negative on the probe grid.
DivergenceSpec make_custom(WeightingFn h);

// n log-spaced points in [lo, hi] (inclusive).
std::vector<double> log_grid(double lo, double hi, std::size_t n);

}  // namespace fdistill
