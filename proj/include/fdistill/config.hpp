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
#include <string>
#include <vector>

#include "fdistill/distill.hpp"
#include "json.hpp"

namespace fdistill {

struct GradCheckConfig {
  std::vector<DivergenceKind> kinds = catalog_kinds();
  std::vector<double> sigmas{0.0, 0.5, 2.0};
  std::vector<std::string> teachers{"gaussian", "two-component"};
  std::vector<double> bias{1.0, 0.5};
  double scale = 1.0;
  std::size_t samples = 100000;
  double fd_step = 1e-3;
  double tolerance = 0.05;
  std::uint64_t seed = 0;
};

struct VarianceConfig {
  std::vector<DivergenceKind> kinds = catalog_kinds();
  std::vector<double> gaps{0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
  std::size_t samples = 1000000;
  std::uint64_t seed = 0;
};

struct WeightMapConfig {
  DivergenceKind divergence = DivergenceKind::forward_kl;
  std::string teacher = "ring8";
  std::vector<double> student_mean{0.0, 0.0};
  double student_variance = 4.0;
  double sigma = 0.5;
  double lo = -6.0;
  double hi = 6.0;
  std::size_t points = 121;
};

struct ModesConfig {
  double k = 3.0;
  double threshold = 0.02;
  std::size_t samples = 10000;
  std::uint64_t seed = 0;
};

struct AppConfig {
  RunConfig train;
  GradCheckConfig gradcheck;
  VarianceConfig variance;
  WeightMapConfig weightmap;
  ModesConfig modes;
};

// Strict readers: every key must be known and well typed, otherwise a
// ConfigError names the dotted path of the field.
RunConfig run_config_from_json(const nlohmann::json& j, const std::string& path = "train");
AppConfig app_config_from_json(const nlohmann::json& j);
AppConfig load_app_config(const std::string& file);

nlohmann::json to_json(const RunConfig& c);
nlohmann::json to_json(const AppConfig& c);

}  // namespace fdistill
