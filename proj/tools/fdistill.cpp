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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fdistill/checkpoint.hpp"
#include "fdistill/config.hpp"
#include "fdistill/csv.hpp"
#include "fdistill/distill.hpp"
#include "fdistill/errors.hpp"
#include "fdistill/oracle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fdistill;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> divergence;
  std::optional<std::size_t> iters;
  std::string checkpoint;
  std::string resume;
};

// Without --config the train section falls back to `base` when given.
AppConfig resolve(const Options& o, const RunConfig* base = nullptr) {
  AppConfig c = o.config.empty() ? AppConfig{} : load_app_config(o.config);
  if (o.config.empty() && base) c.train = *base;
  if (o.seed) {
    c.train.seed = *o.seed;
    c.gradcheck.seed = *o.seed;
    c.variance.seed = *o.seed;
    c.modes.seed = *o.seed;
  }
  if (o.divergence) {
    DivergenceKind k;
    try {
      k = parse_divergence(*o.divergence);
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("--divergence: ") + e.what());
    }
    if (k == DivergenceKind::custom) throw ConfigError("--divergence: custom weighting is not selectable here");
    c.train.divergence = k;
    c.weightmap.divergence = k;
    c.gradcheck.kinds = {k};
    c.variance.kinds = {k};
  }
  if (o.iters) c.train.iterations = *o.iters;
  try {
    c.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train.") + e.what());
  }
  return c;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_samples(const fs::path& path, const Matrix& x) {
  std::vector<std::string> header;
  for (std::size_t j = 0; j < x.cols; ++j) header.push_back("x" + std::to_string(j));
  CsvWriter csv(path.string(), header);
  for (std::size_t i = 0; i < x.rows; ++i) csv.row(std::vector<double>(x.row(i).begin(), x.row(i).end()));
}

int cmd_train(const Options& o) {
  std::optional<LoadedCheckpoint> ck;
  if (!o.resume.empty()) ck = load_checkpoint(o.resume);
  const AppConfig app = resolve(o, ck ? &ck->config : nullptr);
  const Distiller d(app.train);
  TrainState state = ck ? std::move(ck->state) : d.initial_state();
  const fs::path out(o.out);
  CsvWriter metrics((out / "metrics.csv").string(), metrics_header());
  const std::size_t every = app.train.checkpoint_every;
  const auto observer = [&](const TrainState& s, const MetricsRow* row) {
    if (row) {
      metrics.row(metrics_values(*row));
      metrics.flush();
    }
    if (every > 0 && s.iteration % every == 0) {
      save_checkpoint(s, app.train, (out / ("checkpoint_" + std::to_string(s.iteration) + ".fdst")).string());
    }
  };
  const auto result = d.train(std::move(state), observer);
  save_checkpoint(result.state, app.train, (out / "final.fdst").string());
  write_samples(out / "samples.csv", d.generate(result.state, 10000, mix64(app.train.seed ^ 0x73616d70ULL)));
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    std::printf("iteration %llu forward_kl %.4f reverse_kl %.4f modes %zu\n",
                static_cast<unsigned long long>(last.iteration), last.forward_kl, last.reverse_kl,
                last.modes_covered);
  }
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const AppConfig app = resolve(o);
  const auto& g = app.gradcheck;
  json cases = json::array();
  bool all = true;
  for (const auto& name : g.teachers) {
    const IsotropicGaussianMixture teacher = presets::by_name(name);
    const AffineGenerator gen = AffineGenerator::isotropic(teacher.dim(), g.scale, g.bias);
    for (DivergenceKind kind : g.kinds) {
      for (double sigma : g.sigmas) {
        try {
          for (const auto& r :
               gradient_check(catalog(kind), teacher, gen, sigma, g.samples, g.seed, g.fd_step, g.tolerance)) {
            all = all && r.pass;
            cases.push_back({{"teacher", name},
                             {"kind", to_string(kind)},
                             {"sigma", sigma},
                             {"parameter", r.parameter},
                             {"estimator", r.estimator.value},
                             {"estimator_se", r.estimator.se},
                             {"finite_difference", r.finite_difference.value},
                             {"finite_difference_se", r.finite_difference.se},
                             {"relative_error", r.relative_error},
                             {"pass", r.pass}});
          }
        } catch (const ValidationError& e) {
          all = false;
          cases.push_back({{"teacher", name}, {"kind", to_string(kind)}, {"sigma", sigma}, {"pass", false},
                           {"error", e.what()}});
        }
      }
    }
  }
  write_json(fs::path(o.out) / "report.json", {{"cases", cases}, {"all_pass", all}});
  std::printf("%zu cases, %s\n", cases.size(), all ? "all pass" : "FAILURES");
  return all ? 0 : kExitFailure;
}

int cmd_variance(const Options& o) {
  const AppConfig app = resolve(o);
  CsvWriter csv((fs::path(o.out) / "variance.csv").string(), {"kind", "d", "estimate", "se"});
  for (DivergenceKind kind : app.variance.kinds) {
    const auto est = normalized_variance_curve(catalog(kind), app.variance.gaps, app.variance.samples, app.variance.seed);
    for (std::size_t i = 0; i < est.size(); ++i) {
      csv.row({std::string(to_string(kind))}, {app.variance.gaps[i], est[i].value, est[i].se});
    }
  }
  return 0;
}

int cmd_table(const Options& o) {
  auto grid = log_grid(1e-2, 1e2, 21);
  for (double r : {0.5, 2.0, 4.0}) grid.push_back(r);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  CsvWriter csv((fs::path(o.out) / "catalog.csv").string(), {"kind", "r", "f", "f_prime", "f_second", "h"});
  for (DivergenceKind kind : catalog_kinds()) {
    const DivergenceSpec s = catalog(kind);
    for (double r : grid) csv.row({std::string(to_string(kind))}, {r, s.f(r), s.f_prime(r), s.f_second(r), s.h(r)});
  }
  return 0;
}

int cmd_weightmap(const Options& o) {
  const AppConfig app = resolve(o);
  const auto& w = app.weightmap;
  const IsotropicGaussianMixture teacher = presets::by_name(w.teacher);
  const IsotropicGaussianMixture student(2, {{1.0, w.student_mean, w.student_variance}});
  std::vector<double> axis(w.points);
  for (std::size_t i = 0; i < w.points; ++i) {
    axis[i] = w.lo + (w.hi - w.lo) * static_cast<double>(i) / static_cast<double>(w.points - 1);
  }
  const auto cells = weight_score_map(catalog(w.divergence), teacher, student, w.sigma, axis, axis);
  CsvWriter csv((fs::path(o.out) / "map.csv").string(), {"x", "y", "score_diff", "h"});
  for (const auto& c : cells) csv.row({c.x, c.y, c.score_diff, c.h});
  return 0;
}

int cmd_modes(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint: required for modes");
  const AppConfig app = resolve(o);
  const LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  const Distiller d(ck.config);
  const Matrix x = d.generate(ck.state, app.modes.samples, app.modes.seed);
  const ModeCoverage cov = mode_coverage(x, d.teacher(), app.modes.k, app.modes.threshold);
  write_json(fs::path(o.out) / "modes.json", {{"checkpoint", o.checkpoint},
                                              {"iteration", ck.state.iteration},
                                              {"teacher", ck.config.teacher},
                                              {"k", app.modes.k},
                                              {"threshold", app.modes.threshold},
                                              {"samples", app.modes.samples},
                                              {"mass", cov.mass},
                                              {"covered", cov.covered},
                                              {"modes", cov.mass.size()}});
  std::printf("%zu of %zu modes covered\n", cov.covered, cov.mass.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"f-divergence distribution-matching distillation on analytic teachers"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  std::string divergence;
  std::size_t iters = 0;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", seed, "override every seed");
    sub->add_option("--divergence", divergence, "override the divergence");
    sub->add_option("--iters", iters, "override train.iterations");
  };
  CLI::App* train = app.add_subcommand("train", "run the distillation loop");
  common(train);
  train->add_option("--resume", o.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the gradient estimator");
  common(gradcheck);
  CLI::App* variance = app.add_subcommand("variance", "normalized weighting variance against mean gap");
  common(variance);
  CLI::App* table = app.add_subcommand("table", "tabulate f, f', f'' and h for every divergence");
  common(table);
  CLI::App* weightmap = app.add_subcommand("weightmap", "score difference and weighting on a 2-D grid");
  common(weightmap);
  CLI::App* modes = app.add_subcommand("modes", "mode coverage of a checkpointed generator");
  common(modes);
  modes->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    std::cerr << app.help();
    return kExitUsage;
  }
  for (CLI::App* sub : app.get_subcommands()) {
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--divergence")) o.divergence = divergence;
    if (sub->count("--iters")) o.iters = iters;
  }

  try {
    fs::create_directories(o.out);
    if (train->parsed()) return cmd_train(o);
    if (gradcheck->parsed()) return cmd_gradcheck(o);
    if (variance->parsed()) return cmd_variance(o);
    if (table->parsed()) return cmd_table(o);
    if (weightmap->parsed()) return cmd_weightmap(o);
    if (modes->parsed()) return cmd_modes(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
