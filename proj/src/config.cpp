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

#include "fdistill/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "fdistill/errors.hpp"

namespace fdistill {

namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void field(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    read(*it, path_ + "." + key, out);
  }

  template <typename T>
  void required(const char* key, T& out) {
    if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": missing required key");
    field(key, out);
  }

  template <typename T, typename Parse>
  void named(const char* key, T& out, Parse parse) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    std::string name;
    read(*it, path_ + "." + key, name);
    try {
      out = parse(name);
    } catch (const Error& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <typename Parse, typename T>
  void named_list(const char* key, std::vector<T>& out, Parse parse) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    std::vector<std::string> names;
    read(*it, path_ + "." + key, names);
    out.clear();
    for (const auto& n : names) {
      try {
        out.push_back(parse(n));
      } catch (const Error& e) {
        throw ConfigError(path_ + "." + key + ": " + e.what());
      }
    }
  }

  const json* section(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(path_ + "." + key + ": unknown key");
    }
  }

 private:
  static void read(const json& v, const std::string& path, double& out) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
    out = v.get<double>();
  }
  static void read(const json& v, const std::string& path, bool& out) {
    if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
    out = v.get<bool>();
  }
  static void read(const json& v, const std::string& path, std::string& out) {
    if (!v.is_string()) throw ConfigError(path + ": expected a string");
    out = v.get<std::string>();
  }
  template <typename U>
    requires std::is_unsigned_v<U> && (!std::is_same_v<U, bool>)
  static void read(const json& v, const std::string& path, U& out) {
    if (!v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
    out = v.get<U>();
  }
  template <typename T>
  static void read(const json& v, const std::string& path, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError(path + ": expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T item{};
      read(v[i], path + "[" + std::to_string(i) + "]", item);
      out.push_back(item);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::string> kind_names(const std::vector<DivergenceKind>& kinds) {
  std::vector<std::string> out;
  for (auto k : kinds) out.emplace_back(to_string(k));
  return out;
}

DivergenceKind parse_catalog_kind(std::string_view name) {
  const DivergenceKind k = parse_divergence(name);
  if (k == DivergenceKind::custom) throw ValidationError("custom weighting cannot be selected from a config file");
  return k;
}

json teacher_json(const RunConfig& c) {
  if (c.teacher_components.empty()) return c.teacher;
  json list = json::array();
  for (const auto& mc : c.teacher_components) {
    list.push_back({{"weight", mc.weight}, {"mean", mc.mean}, {"variance", mc.variance}});
  }
  return list;
}

}  // namespace

RunConfig run_config_from_json(const json& j, const std::string& path) {
  RunConfig c;
  Reader r(j, path);
  r.named("divergence", c.divergence, parse_catalog_kind);
  r.field("batch_size", c.batch_size);
  r.field("iterations", c.iterations);
  r.field("tau", c.tau);
  r.field("gan_weight", c.gan_weight);
  r.field("r_min", c.clip.r_min);
  r.field("r_max", c.clip.r_max);
  r.field("time_bins", c.time_bins);
  r.field("stage1", c.stage1);
  r.field("stage2", c.stage2);
  r.named("stage1_mode", c.stage1_mode, parse_stage1_mode);
  r.field("ratio_at_clean", c.ratio_at_clean);
  r.named("ratio_source", c.ratio_source, parse_ratio_source);
  r.named("gan_loss", c.gan_loss, parse_gan_loss);
  r.field("rescale_time_weight", c.rescale_time_weight);
  r.field("lr_generator", c.lr_generator);
  r.field("lr_denoiser", c.lr_denoiser);
  r.field("lr_discriminator", c.lr_discriminator);
  r.field("adam_beta1", c.adam_beta1);
  r.field("adam_beta2", c.adam_beta2);
  r.field("weight_decay", c.weight_decay);
  r.field("r1_gamma", c.r1_gamma);
  r.field("seed", c.seed);
  if (const json* t = r.section("teacher")) {
    if (t->is_string()) {
      c.teacher = t->get<std::string>();
    } else if (t->is_array()) {
      c.teacher = "custom";
      for (std::size_t k = 0; k < t->size(); ++k) {
        Reader comp((*t)[k], path + ".teacher[" + std::to_string(k) + "]");
        MixtureComponent mc;
        comp.required("weight", mc.weight);
        comp.required("mean", mc.mean);
        comp.required("variance", mc.variance);
        comp.finish();
        c.teacher_components.push_back(mc);
      }
      if (c.teacher_components.empty()) throw ConfigError(path + ".teacher: needs at least one component");
    } else {
      throw ConfigError(path + ".teacher: expected a preset name or a list of components");
    }
  }
  r.field("sigma_min", c.sigma_min);
  r.field("sigma_max", c.sigma_max);
  r.field("levels", c.levels);
  r.named("generator", c.generator, parse_generator_kind);
  r.field("latent_dim", c.latent_dim);
  r.field("generator_hidden", c.generator_hidden);
  r.field("denoiser_hidden", c.denoiser_hidden);
  r.field("discriminator_hidden", c.discriminator_hidden);
  r.named("activation", c.activation, parse_activation);
  r.named("preconditioning", c.preconditioning, parse_preconditioning);
  r.field("generator_init_scale", c.generator_init_scale);
  r.field("oracle_ratio_samples", c.oracle_ratio_samples);
  r.field("oracle_sigma_floor", c.oracle_sigma_floor);
  r.field("metrics_every", c.metrics_every);
  r.field("metric_sigma", c.metric_sigma);
  r.field("metric_samples", c.metric_samples);
  r.field("coverage_k", c.coverage_k);
  r.field("coverage_threshold", c.coverage_threshold);
  r.field("checkpoint_every", c.checkpoint_every);
  r.finish();
  try {
    make_teacher(c);
  } catch (const Error& e) {
    throw ConfigError(path + ".teacher: " + e.what());
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + "." + e.what());
  }
  return c;
}

AppConfig app_config_from_json(const json& j) {
  AppConfig c;
  Reader top(j, "config");
  if (const json* t = top.section("train")) c.train = run_config_from_json(*t, "train");
  if (const json* g = top.section("gradcheck")) {
    Reader r(*g, "gradcheck");
    r.named_list("kinds", c.gradcheck.kinds, parse_catalog_kind);
    r.field("sigmas", c.gradcheck.sigmas);
    r.field("teachers", c.gradcheck.teachers);
    r.field("bias", c.gradcheck.bias);
    r.field("scale", c.gradcheck.scale);
    r.field("samples", c.gradcheck.samples);
    r.field("fd_step", c.gradcheck.fd_step);
    r.field("tolerance", c.gradcheck.tolerance);
    r.field("seed", c.gradcheck.seed);
    r.finish();
    for (const auto& t : c.gradcheck.teachers) {
      try {
        if (presets::by_name(t).dim() != c.gradcheck.bias.size()) {
          throw ConfigError("gradcheck.bias: length does not match teacher '" + t + "'");
        }
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("gradcheck.teachers: ") + e.what());
      }
    }
    if (c.gradcheck.samples < 100) throw ConfigError("gradcheck.samples: must be >= 100");
    if (!(c.gradcheck.fd_step > 0.0)) throw ConfigError("gradcheck.fd_step: must be > 0");
  }
  if (const json* v = top.section("variance")) {
    Reader r(*v, "variance");
    r.named_list("kinds", c.variance.kinds, parse_catalog_kind);
    r.field("gaps", c.variance.gaps);
    r.field("samples", c.variance.samples);
    r.field("seed", c.variance.seed);
    r.finish();
    if (c.variance.samples < 100) throw ConfigError("variance.samples: must be >= 100");
  }
  if (const json* w = top.section("weightmap")) {
    Reader r(*w, "weightmap");
    r.named("divergence", c.weightmap.divergence, parse_catalog_kind);
    r.field("teacher", c.weightmap.teacher);
    r.field("student_mean", c.weightmap.student_mean);
    r.field("student_variance", c.weightmap.student_variance);
    r.field("sigma", c.weightmap.sigma);
    r.field("lo", c.weightmap.lo);
    r.field("hi", c.weightmap.hi);
    r.field("points", c.weightmap.points);
    r.finish();
    if (c.weightmap.student_mean.size() != 2) throw ConfigError("weightmap.student_mean: expected two entries");
    if (!(c.weightmap.student_variance > 0.0)) throw ConfigError("weightmap.student_variance: must be > 0");
    if (!(c.weightmap.sigma >= 0.0)) throw ConfigError("weightmap.sigma: must be >= 0");
    if (!(c.weightmap.hi > c.weightmap.lo)) throw ConfigError("weightmap.hi: must exceed lo");
    if (c.weightmap.points < 2) throw ConfigError("weightmap.points: must be >= 2");
  }
  if (const json* m = top.section("modes")) {
    Reader r(*m, "modes");
    r.field("k", c.modes.k);
    r.field("threshold", c.modes.threshold);
    r.field("samples", c.modes.samples);
    r.field("seed", c.modes.seed);
    r.finish();
    if (!(c.modes.k > 0.0)) throw ConfigError("modes.k: must be > 0");
    if (c.modes.samples == 0) throw ConfigError("modes.samples: must be >= 1");
  }
  top.finish();
  return c;
}

AppConfig load_app_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError(file + ": cannot open config file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(file + ": malformed JSON: " + e.what());
  }
  return app_config_from_json(j);
}

json to_json(const RunConfig& c) {
  return json{
      {"divergence", to_string(c.divergence)},
      {"batch_size", c.batch_size},
      {"iterations", c.iterations},
      {"tau", c.tau},
      {"gan_weight", c.gan_weight},
      {"r_min", c.clip.r_min},
      {"r_max", c.clip.r_max},
      {"time_bins", c.time_bins},
      {"stage1", c.stage1},
      {"stage2", c.stage2},
      {"stage1_mode", to_string(c.stage1_mode)},
      {"ratio_at_clean", c.ratio_at_clean},
      {"ratio_source", to_string(c.ratio_source)},
      {"gan_loss", to_string(c.gan_loss)},
      {"rescale_time_weight", c.rescale_time_weight},
      {"lr_generator", c.lr_generator},
      {"lr_denoiser", c.lr_denoiser},
      {"lr_discriminator", c.lr_discriminator},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"weight_decay", c.weight_decay},
      {"r1_gamma", c.r1_gamma},
      {"seed", c.seed},
      {"teacher", teacher_json(c)},
      {"sigma_min", c.sigma_min},
      {"sigma_max", c.sigma_max},
      {"levels", c.levels},
      {"generator", to_string(c.generator)},
      {"latent_dim", c.latent_dim},
      {"generator_hidden", c.generator_hidden},
      {"denoiser_hidden", c.denoiser_hidden},
      {"discriminator_hidden", c.discriminator_hidden},
      {"activation", to_string(c.activation)},
      {"preconditioning", to_string(c.preconditioning)},
      {"generator_init_scale", c.generator_init_scale},
      {"oracle_ratio_samples", c.oracle_ratio_samples},
      {"oracle_sigma_floor", c.oracle_sigma_floor},
      {"metrics_every", c.metrics_every},
      {"metric_sigma", c.metric_sigma},
      {"metric_samples", c.metric_samples},
      {"coverage_k", c.coverage_k},
      {"coverage_threshold", c.coverage_threshold},
      {"checkpoint_every", c.checkpoint_every},
  };
}

json to_json(const AppConfig& c) {
  return json{
      {"train", to_json(c.train)},
      {"gradcheck",
       {{"kinds", kind_names(c.gradcheck.kinds)},
        {"sigmas", c.gradcheck.sigmas},
        {"teachers", c.gradcheck.teachers},
        {"bias", c.gradcheck.bias},
        {"scale", c.gradcheck.scale},
        {"samples", c.gradcheck.samples},
        {"fd_step", c.gradcheck.fd_step},
        {"tolerance", c.gradcheck.tolerance},
        {"seed", c.gradcheck.seed}}},
      {"variance",
       {{"kinds", kind_names(c.variance.kinds)},
        {"gaps", c.variance.gaps},
        {"samples", c.variance.samples},
        {"seed", c.variance.seed}}},
      {"weightmap",
       {{"divergence", to_string(c.weightmap.divergence)},
        {"teacher", c.weightmap.teacher},
        {"student_mean", c.weightmap.student_mean},
        {"student_variance", c.weightmap.student_variance},
        {"sigma", c.weightmap.sigma},
        {"lo", c.weightmap.lo},
        {"hi", c.weightmap.hi},
        {"points", c.weightmap.points}}},
      {"modes",
       {{"k", c.modes.k}, {"threshold", c.modes.threshold}, {"samples", c.modes.samples}, {"seed", c.modes.seed}}},
  };
}

}  // namespace fdistill
