#pragma once

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "unlearn_arena/error.hpp"
#include "unlearn_arena/game.hpp"

namespace arena {

struct SweepConfig {
  std::vector<UnlearnMethod> methods = {UnlearnMethod::Amnesiac, UnlearnMethod::BadTeacher, UnlearnMethod::Ssd};
  std::vector<DistinguisherKind> distinguishers = {DistinguisherKind::Kld};
  std::vector<std::size_t> forget_sizes = {3, 6, 30, 60, 300};
  std::vector<double> sigmas = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<double> dp_epsilons = {1e2, 1.0, 1e-2, std::log1p(std::ldexp(1.0, -32))};
  std::size_t dp_repeats = 16;
  std::size_t dp_queries = 1000;
  std::size_t instances = 100;
};

struct OutputConfig {
  std::string dir = "results";
  std::string experiment_id = "run";
};

struct ExperimentConfig {
  GameConfig game;
  SweepConfig sweep;
  OutputConfig output;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Typed access to one INI section; every read marks the key as known.
class Section {
 public:
  Section(std::string name, const boost::property_tree::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw Error(ErrorKind::ConfigError, "[" + name_ + "] " + key + ": " + why);
  }

  const std::string* raw(const std::string& key) {
    known_.insert(key);
    if (!tree_) return nullptr;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return nullptr;
    value_ = trim(it->second.data());
    return &value_;
  }

  void get(const std::string& key, std::string& out) {
    if (const auto* v = raw(key)) out = *v;
  }

  void get(const std::string& key, double& out) {
    if (const auto* v = raw(key)) out = to_double(key, *v);
  }

  void get(const std::string& key, std::uint64_t& out) {
    if (const auto* v = raw(key)) out = to_count(key, *v);
  }

  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const auto* v = raw(key)) {
      out.clear();
      for (const auto& item : split_list(*v)) out.push_back(to_count(key, item));
    }
  }

  void get(const std::string& key, std::vector<double>& out) {
    if (const auto* v = raw(key)) {
      out.clear();
      for (const auto& item : split_list(*v)) out.push_back(to_double(key, item));
    }
  }

  template <typename T, typename Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    if (const auto* v = raw(key)) {
      auto p = parse(*v);
      if (!p) fail(key, "unrecognized value '" + *v + "'");
      out = *p;
    }
  }

  template <typename T, typename Parse>
  void get_enum_list(const std::string& key, std::vector<T>& out, Parse parse) {
    if (const auto* v = raw(key)) {
      out.clear();
      for (const auto& item : split_list(*v)) {
        auto p = parse(item);
        if (!p) fail(key, "unrecognized value '" + item + "'");
        out.push_back(*p);
      }
    }
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, child] : *tree_) {
      if (!known_.count(key)) fail(key, "unknown key");
    }
  }

 private:
  double to_double(const std::string& key, const std::string& v) const {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
      fail(key, "expected a number, got '" + v + "'");
    }
    return out;
  }

  std::uint64_t to_count(const std::string& key, const std::string& v) const {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      fail(key, "expected a non-negative integer, got '" + v + "'");
    }
    return out;
  }

  std::string name_;
  const boost::property_tree::ptree* tree_;
  std::set<std::string> known_;
  std::string value_;
};

}  // namespace detail

/// Field-level checks shared by every command. Sweep points are checked
/// against the game settings by the sweep commands before any compute.
inline void validate(const ExperimentConfig& e) {
  validate(e.game);
  const auto& s = e.sweep;
  for (std::size_t f : s.forget_sizes) {
    if (f == 0) throw Error(ErrorKind::ConfigError, "[sweep] forget_sizes: entries must be at least 1");
  }
  for (double v : s.sigmas)
    if (v < 0.0) throw Error(ErrorKind::ConfigError, "[sweep] sigmas: entries must be non-negative");
  for (double v : s.dp_epsilons)
    if (!(v > 0.0)) throw Error(ErrorKind::ConfigError, "[sweep] dp_epsilons: entries must be positive");
  if (s.dp_repeats < 1) throw Error(ErrorKind::ConfigError, "[sweep] dp_repeats: must be at least 1");
  if (s.dp_queries < 1) throw Error(ErrorKind::ConfigError, "[sweep] dp_queries: must be at least 1");
  if (s.instances < 1) throw Error(ErrorKind::ConfigError, "[sweep] instances: must be at least 1");
  if (e.output.dir.empty()) throw Error(ErrorKind::ConfigError, "[output] dir: must not be empty");
}

/// Parses INI text. Unknown sections and keys are rejected; the message
/// names the offending section and key (or the line for syntax errors).
inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorKind::ConfigError, origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::set<std::string> sections = {"scheme", "unlearner", "distinguisher", "game", "sweep", "output"};
  for (const auto& [name, child] : tree) {
    if (!child.data().empty()) throw Error(ErrorKind::ConfigError, name + ": key outside any section");
    if (!sections.count(name)) throw Error(ErrorKind::ConfigError, "[" + name + "]: unknown section");
  }
  auto section = [&](const std::string& name) {
    auto it = tree.find(name);
    return detail::Section(name, it == tree.not_found() ? nullptr : &it->second);
  };

  ExperimentConfig e;
  GameConfig& g = e.game;
  {
    auto s = section("scheme");
    s.get_enum("scheme", g.scheme, parse_scheme);
    s.get("hidden", g.hidden);
    s.get("epochs", g.scheme_cfg.epochs);
    s.get("batch_size", g.scheme_cfg.batch_size);
    s.get("learning_rate", g.scheme_cfg.learning_rate);
    s.get("weight_decay", g.scheme_cfg.weight_decay);
    s.get("momentum", g.scheme_cfg.momentum);
    s.get("k", g.scheme_cfg.k);
    s.get("ridge", g.scheme_cfg.ridge);
    s.get("sigma_objective_perturbation", g.scheme_cfg.sigma_objective_perturbation);
    s.reject_unknown();
  }
  {
    auto s = section("unlearner");
    auto& u = g.unlearner;
    s.get_enum("method", u.method, parse_method);
    s.get("ssd_alpha", u.ssd_alpha);
    s.get("ssd_lambda", u.ssd_lambda);
    s.get("bad_teacher_steps", u.bad_teacher_steps);
    s.get("bad_teacher_lr", u.bad_teacher_lr);
    s.get("bad_teacher_batch", u.bad_teacher_batch);
    s.get("bad_teacher_retain_sample", u.bad_teacher_retain_sample);
    s.get("newton_ridge", u.newton_ridge);
    s.get("newton_sigma", u.newton_sigma);
    s.get("newton_noise_scale", u.newton_noise_scale);
    s.get("dp_epsilon", u.dp_epsilon);
    s.get("dp_delta", u.dp_delta);
    s.reject_unknown();
  }
  {
    auto s = section("distinguisher");
    s.get_enum("kind", g.distinguisher, parse_distinguisher);
    s.get("noise_variance", g.noise_variance);
    s.get("calibration_trials", g.calibration_trials);
    s.get("shadow_count", g.shadow_count);
    s.reject_unknown();
  }
  {
    auto s = section("game");
    s.get_enum("mode", g.mode, [](std::string_view v) -> std::optional<GameMode> {
      if (v == "white-box") return GameMode::WhiteBox;
      if (v == "black-box") return GameMode::BlackBox;
      return std::nullopt;
    });
    std::string dataset = g.dataset.regression ? "regression" : "blobs";
    s.get("dataset", dataset);
    if (dataset != "blobs" && dataset != "regression") s.fail("dataset", "expected blobs or regression");
    g.dataset.regression = dataset == "regression";
    s.get("classes", g.dataset.classes);
    s.get("dims", g.dataset.dims);
    s.get("spread", g.dataset.spread);
    s.get("noise_sd", g.dataset.noise_sd);
    s.get("train_size", g.dataset.train);
    s.get("test_size", g.dataset.test);
    s.get("population_size", g.dataset.population);
    s.get_enum("forget_strategy", g.forget.strategy, [](std::string_view v) -> std::optional<ForgetStrategy> {
      if (v == "random") return ForgetStrategy::RandomSubset;
      if (v == "classwise") return ForgetStrategy::Classwise;
      return std::nullopt;
    });
    s.get("forget_size", g.forget.size);
    s.get("forget_class", g.forget.forget_class);
    // Integers are parsed as unsigned, so "-5" is reported with the field name.
    s.get("trials", g.trials);
    s.get("security_parameter", g.security_parameter);
    s.get("utility_gap", g.utility_gap);
    s.get("query_budget", g.query_budget);
    s.get("master_seed", g.master_seed);
    s.get("threads", g.threads);
    s.reject_unknown();
  }
  {
    auto s = section("sweep");
    auto& w = e.sweep;
    s.get_enum_list("methods", w.methods, parse_method);
    s.get_enum_list("distinguishers", w.distinguishers, parse_distinguisher);
    s.get("forget_sizes", w.forget_sizes);
    s.get("sigmas", w.sigmas);
    s.get("dp_epsilons", w.dp_epsilons);
    s.get("dp_repeats", w.dp_repeats);
    s.get("dp_queries", w.dp_queries);
    s.get("instances", w.instances);
    s.reject_unknown();
  }
  {
    auto s = section("output");
    s.get("dir", e.output.dir);
    s.get("experiment_id", e.output.experiment_id);
    s.reject_unknown();
  }
  return e;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

/// Seed from UNLEARN_ARENA_SEED when set; a malformed value is a config error.
inline void apply_seed_override(ExperimentConfig& e) {
  const char* env = std::getenv("UNLEARN_ARENA_SEED");
  if (!env || !*env) return;
  const std::string v(env);
  std::uint64_t seed = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), seed);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorKind::ConfigError, "UNLEARN_ARENA_SEED: expected a non-negative integer, got '" + v + "'");
  }
  e.game.master_seed = seed;
}

}  // namespace arena
