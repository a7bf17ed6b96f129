// bkt: simulate, track and report Monte Carlo experiments.
//
//   bkt simulate --config exp1.ini
//   bkt track    --config exp1.ini --realizations 4 --workers 2
//   bkt report   --config exp1.ini
//   bkt all      --config exp1.ini --output out/exp1
//
// Exit codes: 0 ok, 2 bad config, 3 I/O, 4 simulation or sampler failure, 5 missing inputs.

#include "bkt/bkt.hpp"
#include "bkt/io/config.hpp"
#include "bkt/io/csv.hpp"

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <thread>

namespace fs = std::filesystem;
using namespace bkt;
using json = nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kBadConfig = 2;
constexpr int kIo = 3;
constexpr int kSampler = 4;
constexpr int kMissing = 5;

const char* const kBaselineLabel =
    "kf_bank: likelihood-weighted bank of per-model Kalman filters (linearized for nonlinear models), a proxy baseline";

class RealizationFailure : public std::runtime_error {
 public:
  RealizationFailure(int r, const std::string& what)
      : std::runtime_error("realization " + std::to_string(r) + ": " + what), index(r) {}
  int index;
};

std::string realization_name(int r) {
  std::ostringstream ss;
  ss << 'r' << std::setw(4) << std::setfill('0') << r;
  return ss.str();
}

std::vector<std::string> names(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Mat& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(vec_json(m.row(i).transpose()));
  return out;
}

Vec json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

Mat json_mat(const json& j) {
  const auto n = static_cast<Eigen::Index>(j.size());
  Mat out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = json_vec(j.at(static_cast<std::size_t>(i))).transpose();
  return out;
}

struct Realization {
  int index = 0;
  std::uint64_t seed = 0;
  fs::path dir;
  ScenarioTruth truth;
};

std::uint64_t realization_seed(const io::ExperimentConfig& cfg, int r) {
  return derive_seed(cfg.scenario.seed, static_cast<std::uint64_t>(r));
}

Realization simulate_realization(const io::ExperimentConfig& cfg, const ModelBank& bank, int r) {
  Realization out;
  out.index = r;
  out.seed = realization_seed(cfg, r);
  out.dir = fs::path(cfg.output_dir) / realization_name(r);
  ScenarioConfig sc = cfg.scenario;
  sc.seed = out.seed;
  out.truth = simulate(bank, sc);
  return out;
}

void write_simulation(const io::ExperimentConfig& cfg, const Realization& rz) {
  const auto& t = rz.truth;
  const int n = static_cast<int>(t.initial_state.size());
  const int m = static_cast<int>(t.measurements.front().front().size());
  fs::create_directories(rz.dir);

  io::CsvWriter states(concat({"k", "model"}, names("x", n)));
  states.row_with({"0", std::to_string(t.initial_model.index())}, t.initial_state);
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    states.row_with({std::to_string(k + 1), std::to_string(t.model_seq[k].index())}, t.states[k]);
  }
  io::write_text(rz.dir / "states.csv", states.str());

  io::CsvWriter meas(concat({"k", "m"}, names("y", m)));
  for (std::size_t k = 0; k < t.measurements.size(); ++k) {
    for (std::size_t i = 0; i < t.measurements[k].size(); ++i) {
      meas.row_with({std::to_string(k + 1), std::to_string(i + 1)}, t.measurements[k][i]);
    }
  }
  io::write_text(rz.dir / "meas.csv", meas.str());

  const json meta{{"realization", rz.index},
                  {"seed", rz.seed},
                  {"config", io::to_json(cfg)},
                  {"prior_mean", vec_json(t.prior_mean)},
                  {"prior_cov", mat_json(t.prior_cov)},
                  {"simulation_attempts", t.attempts}};
  io::write_text(rz.dir / "meta.json", meta.dump(2) + "\n");
}

/// Measurements and estimator prior of a simulated realization; truth states only when present.
Realization load_simulation(const io::ExperimentConfig& cfg, const ModelBank& bank, int r) {
  Realization rz;
  rz.index = r;
  rz.dir = fs::path(cfg.output_dir) / realization_name(r);
  json meta;
  try {
    meta = json::parse(io::read_text(rz.dir / "meta.json"));
    rz.seed = meta.at("seed").get<std::uint64_t>();
    rz.truth.prior_mean = json_vec(meta.at("prior_mean"));
    rz.truth.prior_cov = json_mat(meta.at("prior_cov"));
  } catch (const json::exception& e) {
    throw io::IoError("bad meta.json in " + rz.dir.string() + ": " + e.what());
  }
  if (rz.truth.prior_mean.size() != bank.state_dim()) {
    throw ConfigError(rz.dir.string() + ": simulated state dimension does not match the configured experiment");
  }
  const auto meas = io::read_csv(rz.dir / "meas.csv");
  const std::size_t kc = meas.column("k");
  for (const auto& row : meas.rows) {
    const auto k = static_cast<std::size_t>(io::to_long(row[kc]));
    if (k < 1) throw io::IoError("meas.csv: step index must be >= 1");
    if (rz.truth.measurements.size() < k) rz.truth.measurements.resize(k);
    Vec y(bank.obs_dim());
    for (int i = 0; i < bank.obs_dim(); ++i) y[i] = io::to_double(row.at(meas.column("y" + std::to_string(i + 1))));
    rz.truth.measurements[k - 1].push_back(y);
  }
  if (rz.truth.measurements.empty()) throw io::IoError("meas.csv: no measurements in " + rz.dir.string());
  for (const auto& ys : rz.truth.measurements) {
    if (ys.empty()) throw io::IoError("meas.csv: a step has no measurements in " + rz.dir.string());
  }
  return rz;
}

bool has_simulation(const fs::path& dir) {
  return fs::exists(dir / "meta.json") && fs::exists(dir / "meas.csv") && fs::exists(dir / "states.csv");
}

void track_realization(const io::ExperimentConfig& cfg, const ModelBank& bank, const Realization& rz) {
  const auto& y = rz.truth.measurements;
  const int n = bank.state_dim();
  io::CsvWriter est(concat({"k", "estimator"}, names("x", n)));
  io::CsvWriter models({"k", "estimator", "model"});
  json diag{{"realization", rz.index}, {"seed", rz.seed}};

  if (cfg.runs("bkt")) {
    SamplerConfig sc = cfg.sampler;
    sc.seed = derive_seed(rz.seed, 1);
    PosteriorSummary s;
    try {
      s = run_chain(y, bank, sc, rz.truth.prior_mean, rz.truth.prior_cov);
    } catch (const SamplerError& e) {
      throw RealizationFailure(rz.index, e.what());
    } catch (const NumericalError& e) {
      throw RealizationFailure(rz.index, e.what());
    }
    for (int k = 0; k < s.horizon(); ++k) {
      const auto ki = static_cast<std::size_t>(k);
      est.row_with({std::to_string(k + 1), "bkt"}, s.state_mean[ki]);
      models.row(k + 1, "bkt", s.model_map[ki].index());
    }
    json min_ess = json::array();
    for (const auto& e : s.ess) min_ess.push_back(*std::min_element(e.begin(), e.end()));
    diag["bkt"] = {{"acceptance_rate", s.acceptance_rate}, {"acceptance", s.acceptance},
                   {"step_sizes", s.step_sizes},           {"cluster_counts", s.cluster_counts},
                   {"min_ess", min_ess},                   {"model_marginals", s.model_marginals},
                   {"warnings", s.warnings}};
  }
  if (cfg.runs("kf_bank")) {
    const auto b = kf_bank_track(bank_filter_models(bank, rz.truth.prior_mean, rz.truth.prior_cov), first_measurements(y));
    for (std::size_t k = 0; k < b.estimates.size(); ++k) {
      est.row_with({std::to_string(k + 1), "kf_bank"}, b.estimates[k]);
      models.row(k + 1, "kf_bank", b.model_map[k].index());
    }
    diag["kf_bank"] = {{"label", kBaselineLabel}, {"weights", b.weights}};
  }
  io::write_text(rz.dir / "estimates.csv", est.str());
  io::write_text(rz.dir / "models.csv", models.str());
  io::write_text(rz.dir / "diagnostics.json", diag.dump(2) + "\n");
}

/// Runs job(r) for every realization on `workers` threads; rethrows the failure of the lowest index.
void for_each_realization(int count, int workers, const std::function<void(int)>& job) {
  std::atomic<int> next{0};
  std::mutex mu;
  std::map<int, std::exception_ptr> failures;
  auto worker = [&]() {
    for (int r = next++; r < count; r = next++) {
      try {
        job(r);
      } catch (...) {
        std::lock_guard lock(mu);
        failures[r] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int w = std::max(1, std::min(workers, count));
  for (int i = 1; i < w; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (!failures.empty()) std::rethrow_exception(failures.begin()->second);
}

void cmd_simulate(const io::ExperimentConfig& cfg) {
  const ModelBank bank = build_bank(cfg.scenario);
  fs::create_directories(cfg.output_dir);
  for_each_realization(cfg.n_realizations, cfg.workers, [&](int r) {
    Realization rz;
    try {
      rz = simulate_realization(cfg, bank, r);
    } catch (const SimulationError& e) {
      throw RealizationFailure(r, e.what());
    }
    write_simulation(cfg, rz);
  });
}

void cmd_track(const io::ExperimentConfig& cfg) {
  const ModelBank bank = build_bank(cfg.scenario);
  fs::create_directories(cfg.output_dir);
  for_each_realization(cfg.n_realizations, cfg.workers, [&](int r) {
    const fs::path dir = fs::path(cfg.output_dir) / realization_name(r);
    Realization rz;
    if (has_simulation(dir)) {
      rz = load_simulation(cfg, bank, r);
    } else {
      try {
        rz = simulate_realization(cfg, bank, r);
      } catch (const SimulationError& e) {
        throw RealizationFailure(r, e.what());
      }
      write_simulation(cfg, rz);
    }
    track_realization(cfg, bank, rz);
  });
}

struct TruthTable {
  std::vector<StateVec> states;
  std::vector<ModelId> models;
};

TruthTable read_truth(const fs::path& dir) {
  const auto t = io::read_csv(dir / "states.csv");
  TruthTable out;
  const std::size_t kc = t.column("k"), mc = t.column("model");
  std::vector<std::size_t> xc;
  for (std::size_t i = 1; i + 2 <= t.header.size(); ++i) {
    if (std::find(t.header.begin(), t.header.end(), "x" + std::to_string(i)) == t.header.end()) break;
    xc.push_back(t.column("x" + std::to_string(i)));
  }
  for (const auto& row : t.rows) {
    if (io::to_long(row[kc]) == 0) continue;
    Vec x(static_cast<Eigen::Index>(xc.size()));
    for (std::size_t i = 0; i < xc.size(); ++i) x[static_cast<Eigen::Index>(i)] = io::to_double(row[xc[i]]);
    out.states.push_back(x);
    out.models.push_back(ModelId(static_cast<int>(io::to_long(row[mc]))));
  }
  return out;
}

/// Per estimator, in first-seen order: estimates by step and MAP models by step.
std::vector<std::pair<std::string, std::pair<std::vector<StateVec>, std::vector<ModelId>>>> read_estimates(
    const fs::path& dir, int state_dim) {
  const auto est = io::read_csv(dir / "estimates.csv");
  const auto mod = io::read_csv(dir / "models.csv");
  std::vector<std::pair<std::string, std::pair<std::vector<StateVec>, std::vector<ModelId>>>> out;
  auto slot = [&](const std::string& name) -> auto& {
    for (auto& e : out) {
      if (e.first == name) return e.second;
    }
    out.push_back({name, {}});
    return out.back().second;
  };
  const std::size_t ec = est.column("estimator");
  for (const auto& row : est.rows) {
    Vec x(state_dim);
    for (int i = 0; i < state_dim; ++i) x[i] = io::to_double(row.at(est.column("x" + std::to_string(i + 1))));
    slot(row[ec]).first.push_back(x);
  }
  const std::size_t mec = mod.column("estimator"), mmc = mod.column("model");
  for (const auto& row : mod.rows) slot(row[mec]).second.push_back(ModelId(static_cast<int>(io::to_long(row[mmc]))));
  return out;
}

void cmd_report(const io::ExperimentConfig& cfg) {
  const fs::path root(cfg.output_dir);
  if (!fs::is_directory(root)) throw io::MissingInputError("no output directory " + root.string());
  std::vector<fs::path> dirs;
  const std::regex pattern("r[0-9]{4,}");
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && std::regex_match(entry.path().filename().string(), pattern)) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw io::MissingInputError("no realization directories under " + root.string());

  std::vector<std::string> order;
  std::map<std::string, std::vector<RunResult>> results;
  for (const auto& dir : dirs) {
    if (!fs::exists(dir / "estimates.csv") || !fs::exists(dir / "models.csv") || !fs::exists(dir / "states.csv")) {
      throw io::MissingInputError("missing estimates or truth in " + dir.string());
    }
    const auto truth = read_truth(dir);
    const auto est = read_estimates(dir, static_cast<int>(truth.states.front().size()));
    std::uint64_t seed = 0;
    if (fs::exists(dir / "meta.json")) seed = json::parse(io::read_text(dir / "meta.json")).value("seed", std::uint64_t{0});
    for (const auto& [name, e] : est) {
      if (e.first.size() != truth.states.size() || e.second.size() != truth.models.size()) {
        throw io::IoError("estimate length does not match truth in " + dir.string());
      }
      if (!results.contains(name)) order.push_back(name);
      results[name].push_back(make_run_result(name, truth.states, e.first, truth.models, e.second, seed));
    }
  }
  if (order.empty()) throw io::MissingInputError("no estimates under " + root.string());

  std::vector<AggregateReport> reports;
  json j{{"baseline", kBaselineLabel}, {"estimators", json::array()}};
  for (const auto& name : order) {
    reports.push_back(aggregate(results[name]));
    j["estimators"].push_back(to_json(reports.back()));
  }
  std::ostringstream csv;
  write_report_csv(csv, reports);
  io::write_text(root / "report.json", j.dump(2) + "\n");
  io::write_text(root / "report.csv", csv.str());
  for (const auto& r : reports) {
    std::cout << r.estimator << ": mse " << r.mse << ", model accuracy " << r.model_accuracy << " over "
              << r.n_realizations << " realizations\n";
  }
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> realizations;
  std::optional<int> workers;
  std::optional<std::string> output;
};

io::ExperimentConfig load(const Flags& f) {
  std::ifstream is(f.config);
  if (!is) throw ConfigError("cannot read config " + f.config);
  io::ExperimentConfig cfg = io::parse_config(is);
  if (f.seed) cfg.scenario.seed = *f.seed;
  if (f.realizations) cfg.n_realizations = *f.realizations;
  if (f.workers) cfg.workers = *f.workers;
  if (f.output) cfg.output_dir = *f.output;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian knowledge-transfer tracker experiments"};
  app.require_subcommand(1);
  Flags flags;
  std::string command;
  for (const char* name : {"simulate", "track", "report", "all"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", flags.config, "INI experiment file")->required();
    sub->add_option("--seed", flags.seed, "base seed");
    sub->add_option("--realizations", flags.realizations, "number of realizations");
    sub->add_option("--workers", flags.workers, "worker threads");
    sub->add_option("--output", flags.output, "output directory");
    sub->callback([&command, name]() { command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadConfig;
  }

  io::ExperimentConfig cfg;
  try {
    cfg = load(flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kBadConfig;
  }

  try {
    if (command == "simulate" || command == "all") cmd_simulate(cfg);
    if (command == "track" || command == "all") cmd_track(cfg);
    if (command == "report" || command == "all") cmd_report(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const io::MissingInputError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kMissing;
  } catch (const io::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const RealizationFailure& e) {
    std::cerr << "failure in " << e.what() << "\n";
    return kSampler;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
