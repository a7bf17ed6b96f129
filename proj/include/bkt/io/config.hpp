#pragma once

// INI experiment configuration.
//
//   [scenario]     experiment, horizon, measurements_per_step, seed
//   [overrides]    any bank / initial-condition override (numeric)
//   [sampler]      n_iterations, burn_in, step_size, leapfrog_steps, step_jitter,
//                  mass, adapt, freeze_transition, freeze_measurement, cluster_candidates
//   [experiment]   realizations, output, estimators, workers
//
// Lists are comma separated. Comments start with ';'.

#include "bkt/inference/run_chain.hpp"
#include "bkt/scenarios.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <istream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace bkt::io {

struct ExperimentConfig {
  ScenarioConfig scenario;
  SamplerConfig sampler;
  int n_realizations = 1;
  std::string output_dir = "out";
  std::vector<std::string> estimators{"bkt", "kf_bank"};
  int workers = 1;

  bool runs(const std::string& estimator) const {
    return std::find(estimators.begin(), estimators.end(), estimator) != estimators.end();
  }

  void validate() const {
    scenario.validate();
    sampler.validate();
    if (n_realizations < 1) throw ConfigError("experiment: realizations must be >= 1");
    if (workers < 1) throw ConfigError("experiment: workers must be >= 1");
    if (output_dir.empty()) throw ConfigError("experiment: output must be nonempty");
    if (estimators.empty()) throw ConfigError("experiment: estimators must be nonempty");
    for (const auto& e : estimators) {
      if (e != "bkt" && e != "kf_bank") throw ConfigError("experiment: unknown estimator '" + e + "'");
    }
    build_bank(scenario);  // rejects bad overrides
  }
};

namespace detail {

using boost::property_tree::ptree;

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

inline double number(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

inline long integer(const std::string& key, const std::string& text) {
  const double v = number(key, text);
  if (v != std::floor(v) || std::abs(v) > 9.0e15) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return static_cast<long>(v);
}

inline std::uint64_t seed_value(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || s[0] == '-' || end != s.c_str() + s.size() || errno != 0) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + text + "'");
  }
  return static_cast<std::uint64_t>(v);
}

inline bool boolean(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::vector<std::string> list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& is) {
  using detail::ptree;
  ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty() && body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string name = section + "." + key;
      const std::string& v = node.data();
      if (section == "scenario") {
        if (key == "experiment") cfg.scenario.experiment = experiment_from_string(detail::trim(v));
        else if (key == "horizon") cfg.scenario.horizon = static_cast<int>(detail::integer(name, v));
        else if (key == "measurements_per_step") cfg.scenario.measurements_per_step = static_cast<int>(detail::integer(name, v));
        else if (key == "seed") cfg.scenario.seed = detail::seed_value(name, v);
        else throw ConfigError("config: unknown key " + name);
      } else if (section == "overrides") {
        cfg.scenario.overrides[key] = detail::number(name, v);
      } else if (section == "sampler") {
        auto& s = cfg.sampler;
        if (key == "n_iterations") s.n_iterations = static_cast<int>(detail::integer(name, v));
        else if (key == "burn_in") s.burn_in = static_cast<int>(detail::integer(name, v));
        else if (key == "step_size") s.step_size = detail::number(name, v);
        else if (key == "leapfrog_steps") s.leapfrog_steps = static_cast<int>(detail::integer(name, v));
        else if (key == "step_jitter") s.step_jitter = detail::number(name, v);
        else if (key == "adapt") s.adapt = detail::boolean(name, v);
        else if (key == "freeze_transition") s.freeze_transition = detail::boolean(name, v);
        else if (key == "freeze_measurement") s.freeze_measurement = detail::boolean(name, v);
        else if (key == "mass") {
          s.mass.clear();
          for (const auto& item : detail::list(v)) s.mass.push_back(detail::number(name, item));
        } else if (key == "cluster_candidates") {
          s.cluster_candidates.clear();
          for (const auto& item : detail::list(v)) s.cluster_candidates.push_back(static_cast<int>(detail::integer(name, item)));
        } else {
          throw ConfigError("config: unknown key " + name);
        }
      } else if (section == "experiment") {
        if (key == "realizations") cfg.n_realizations = static_cast<int>(detail::integer(name, v));
        else if (key == "output") cfg.output_dir = detail::trim(v);
        else if (key == "workers") cfg.workers = static_cast<int>(detail::integer(name, v));
        else if (key == "estimators") cfg.estimators = detail::list(v);
        else throw ConfigError("config: unknown key " + name);
      } else {
        throw ConfigError("config: unknown section [" + section + "]");
      }
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

/// Effective configuration, as echoed into meta.json.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [k, v] : c.scenario.overrides) overrides[k] = v;
  const auto& s = c.sampler;
  return {{"scenario",
           {{"experiment", to_string(c.scenario.experiment)},
            {"horizon", c.scenario.horizon},
            {"measurements_per_step", c.scenario.measurements_per_step},
            {"seed", c.scenario.seed}}},
          {"overrides", overrides},
          {"sampler",
           {{"n_iterations", s.n_iterations},
            {"burn_in", s.burn_in},
            {"step_size", s.step_size},
            {"leapfrog_steps", s.leapfrog_steps},
            {"step_jitter", s.step_jitter},
            {"mass", s.mass},
            {"adapt", s.adapt},
            {"freeze_transition", s.freeze_transition},
            {"freeze_measurement", s.freeze_measurement},
            {"cluster_candidates", s.cluster_candidates}}},
          {"experiment",
           {{"realizations", c.n_realizations},
            {"output", c.output_dir},
            {"estimators", c.estimators},
            {"workers", c.workers}}}};
}

}  // namespace bkt::io
