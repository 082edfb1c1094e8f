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

#include "fdistill/divergence.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "fdistill/errors.hpp"

namespace fdistill {

namespace {

constexpr double kLog2 = std::numbers::ln2;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_add_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// exp(log_a) * factor with 0 * inf treated as 0.
double scaled(double log_a, double factor) {
  if (log_a == -INFINITY) return 0.0;
  return std::exp(log_a) * factor;
}

void check_ratio(double r) {
  if (!std::isfinite(r) || r <= 0.0) {
    std::ostringstream msg;
    msg << "density ratio must be positive and finite, got " << r;
    throw DomainError(msg.str());
  }
}

[[noreturn]] void unset_for_custom(const char* what) {
  throw Error(std::string(what) + " is not defined for a custom weighting function");
}

}  // namespace

const std::vector<DivergenceKind>& catalog_kinds() {
  static const std::vector<DivergenceKind> kinds = {
      DivergenceKind::reverse_kl,        DivergenceKind::softened_rkl, DivergenceKind::jensen_shannon,
      DivergenceKind::squared_hellinger, DivergenceKind::forward_kl,   DivergenceKind::jeffreys,
  };
  return kinds;
}

std::string_view to_string(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::reverse_kl: return "reverse-kl";
    case DivergenceKind::softened_rkl: return "softened-rkl";
    case DivergenceKind::jensen_shannon: return "jensen-shannon";
    case DivergenceKind::squared_hellinger: return "squared-hellinger";
    case DivergenceKind::forward_kl: return "forward-kl";
    case DivergenceKind::jeffreys: return "jeffreys";
    case DivergenceKind::custom: return "custom";
  }
  return "unknown";
}

DivergenceKind parse_divergence(std::string_view name) {
  for (auto kind : catalog_kinds()) {
    if (to_string(kind) == name) return kind;
  }
  if (name == "custom") return DivergenceKind::custom;
  throw ValidationError("unsupported divergence: '" + std::string(name) + "'");
}

DivergenceSpec catalog(DivergenceKind kind) {
  DivergenceSpec spec;
  spec.kind_ = kind;
  switch (kind) {
    case DivergenceKind::reverse_kl:
      spec.mode_seeking_ = ModeSeeking::high;
      spec.saturating_ = false;
      spec.variance_class_ = VarianceClass::none;
      break;
    case DivergenceKind::softened_rkl:
      spec.mode_seeking_ = ModeSeeking::high;
      spec.saturating_ = false;
      spec.variance_class_ = VarianceClass::low;
      break;
    case DivergenceKind::jensen_shannon:
      spec.mode_seeking_ = ModeSeeking::medium;
      spec.saturating_ = true;
      spec.variance_class_ = VarianceClass::low;
      break;
    case DivergenceKind::squared_hellinger:
      spec.mode_seeking_ = ModeSeeking::medium;
      spec.saturating_ = true;
      spec.variance_class_ = VarianceClass::low;
      break;
    case DivergenceKind::forward_kl:
      spec.mode_seeking_ = ModeSeeking::low;
      spec.saturating_ = false;
      spec.variance_class_ = VarianceClass::high;
      break;
    case DivergenceKind::jeffreys:
      spec.mode_seeking_ = ModeSeeking::low;
      spec.saturating_ = false;
      spec.variance_class_ = VarianceClass::high;
      break;
    default:
      throw ValidationError("unsupported divergence: custom kinds are built with make_custom");
  }
  return spec;
}

double DivergenceSpec::f(double r) const {
  check_ratio(r);
  switch (kind_) {
    case DivergenceKind::reverse_kl: return -std::log(r);
    case DivergenceKind::softened_rkl: return (r + 1.0) * std::log(0.5 + 0.5 / r);
    case DivergenceKind::jensen_shannon: return r * std::log(r) - (r + 1.0) * std::log((r + 1.0) / 2.0);
    case DivergenceKind::squared_hellinger: return 1.0 - std::sqrt(r);
    case DivergenceKind::forward_kl: return r * std::log(r);
    case DivergenceKind::jeffreys: return (r - 1.0) * std::log(r);
    case DivergenceKind::custom: unset_for_custom("f");
  }
  return 0.0;
}

double DivergenceSpec::f_prime(double r) const {
  check_ratio(r);
  switch (kind_) {
    case DivergenceKind::reverse_kl: return -1.0 / r;
    case DivergenceKind::softened_rkl: return std::log((r + 1.0) / (2.0 * r)) - 1.0 / r;
    case DivergenceKind::jensen_shannon: return std::log(2.0 * r / (r + 1.0));
    case DivergenceKind::squared_hellinger: return -0.5 / std::sqrt(r);
    case DivergenceKind::forward_kl: return std::log(r) + 1.0;
    case DivergenceKind::jeffreys: return std::log(r) + 1.0 - 1.0 / r;
    case DivergenceKind::custom: unset_for_custom("f'");
  }
  return 0.0;
}

double DivergenceSpec::f_second(double r) const {
  check_ratio(r);
  switch (kind_) {
    case DivergenceKind::reverse_kl: return 1.0 / (r * r);
    case DivergenceKind::softened_rkl: return 1.0 / (r * r * (r + 1.0));
    case DivergenceKind::jensen_shannon: return 1.0 / (r * (r + 1.0));
    case DivergenceKind::squared_hellinger: return 0.25 / (r * std::sqrt(r));
    case DivergenceKind::forward_kl: return 1.0 / r;
    case DivergenceKind::jeffreys: return (r + 1.0) / (r * r);
    case DivergenceKind::custom: return custom_h_(r) / (r * r);
  }
  return 0.0;
}

double DivergenceSpec::h(double r) const {
  check_ratio(r);
  switch (kind_) {
    case DivergenceKind::reverse_kl: return 1.0;
    case DivergenceKind::softened_rkl: return 1.0 / (r + 1.0);
    case DivergenceKind::jensen_shannon: return r / (r + 1.0);
    case DivergenceKind::squared_hellinger: return 0.25 * std::sqrt(r);
    case DivergenceKind::forward_kl: return r;
    case DivergenceKind::jeffreys: return r + 1.0;
    case DivergenceKind::custom: return custom_h_(r);
  }
  return 0.0;
}

double DivergenceSpec::f_log(double lr) const {
  if (std::isnan(lr)) throw DomainError("log ratio is NaN");
  const double r = std::exp(lr);
  switch (kind_) {
    case DivergenceKind::reverse_kl: return -lr;
    case DivergenceKind::softened_rkl: return (r + 1.0) * (softplus(-lr) - kLog2);
    case DivergenceKind::jensen_shannon:
      return r * (kLog2 - softplus(-lr)) - (softplus(lr) - kLog2);
    case DivergenceKind::squared_hellinger: return 1.0 - std::exp(0.5 * lr);
    case DivergenceKind::forward_kl: return r * lr;
    case DivergenceKind::jeffreys: return std::expm1(lr) * lr;
    case DivergenceKind::custom: unset_for_custom("f");
  }
  return 0.0;
}

double DivergenceSpec::h_log(double lr) const {
  if (std::isnan(lr)) throw DomainError("log ratio is NaN");
  switch (kind_) {
    case DivergenceKind::reverse_kl: return 1.0;
    case DivergenceKind::softened_rkl: return sigmoid(-lr);
    case DivergenceKind::jensen_shannon: return sigmoid(lr);
    case DivergenceKind::squared_hellinger: return 0.25 * std::exp(0.5 * lr);
    case DivergenceKind::forward_kl: return std::exp(lr);
    case DivergenceKind::jeffreys: return std::exp(lr) + 1.0;
    case DivergenceKind::custom: return custom_h_(std::exp(lr));
  }
  return 0.0;
}

double DivergenceSpec::perspective(double lp, double lq) const {
  if (std::isnan(lp) || std::isnan(lq)) throw DomainError("log density is NaN");
  if (lp == -INFINITY && lq == -INFINITY) return 0.0;
  switch (kind_) {
    case DivergenceKind::reverse_kl: return scaled(lq, lq - lp);
    case DivergenceKind::forward_kl: return scaled(lp, lp - lq);
    case DivergenceKind::jeffreys: return scaled(lp, lp - lq) + scaled(lq, lq - lp);
    case DivergenceKind::squared_hellinger: return scaled(lq, 1.0) - scaled(0.5 * (lp + lq), 1.0);
    case DivergenceKind::jensen_shannon: {
      const double lm = log_add_exp(lp, lq) - kLog2;
      return scaled(lp, lp - lm) + scaled(lq, lq - lm);
    }
    case DivergenceKind::softened_rkl: {
      const double lm = log_add_exp(lp, lq) - kLog2;
      return 2.0 * scaled(lm, lm - lp);
    }
    case DivergenceKind::custom: unset_for_custom("f");
  }
  return 0.0;
}

double weight_h(DivergenceKind kind, double r) { return catalog(kind).h(r); }

double growth_limit_probe(DivergenceKind kind, double r_large) {
  if (!(r_large >= 1e4) || !std::isfinite(r_large)) {
    throw DomainError("growth_limit_probe needs r_large >= 1e4");
  }
  const double v = catalog(kind).f(r_large) / r_large;
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "overflow evaluating f(r)/r for " << to_string(kind) << " at r=" << r_large;
    throw Error(msg.str());
  }
  return v;
}

TailRates tail_weight_rates(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::reverse_kl: return {-2.0, -2.0};
    case DivergenceKind::softened_rkl: return {-3.0, -2.0};
    case DivergenceKind::jensen_shannon: return {-2.0, -1.0};
    case DivergenceKind::squared_hellinger: return {-1.5, -1.5};
    case DivergenceKind::forward_kl: return {-1.0, -1.0};
    case DivergenceKind::jeffreys: return {-1.0, -2.0};
    case DivergenceKind::custom: break;
  }
  throw ValidationError("rates undefined for custom h");
}

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    out[i] = std::exp(a + (b - a) * t);
  }
  out.front() = lo;
  if (n > 1) out.back() = hi;
  return out;
}

std::vector<double> custom_probe_grid() { return log_grid(1e-4, 1e4, 512); }

DivergenceSpec make_custom(WeightingFn h) {
  if (!h) throw ValidationError("custom weighting function is empty");
  std::vector<double> bad;
  for (double r : custom_probe_grid()) {
    const double v = h(r);
    if (!std::isfinite(v) || v < 0.0) bad.push_back(r);
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "custom weighting must be finite and non-negative; offending r:";
    for (std::size_t i = 0; i < bad.size() && i < 8; ++i) msg << ' ' << bad[i];
    if (bad.size() > 8) msg << " ... (" << bad.size() << " points)";
    throw ValidationError(msg.str());
  }
  DivergenceSpec spec;
  spec.kind_ = DivergenceKind::custom;
  spec.custom_h_ = std::move(h);
  return spec;
}

}  // namespace fdistill
