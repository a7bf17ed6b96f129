#pragma once

// The two benchmark model banks (linear constant-velocity bank, coordinated-turn
// bank with range/bearing sensing) and the ground-truth simulator.

#include "bkt/core/error.hpp"
#include "bkt/core/gaussian.hpp"
#include "bkt/core/random.hpp"
#include "bkt/model_core.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace bkt {

enum class Experiment { exp1_linear, exp2_turn };

inline std::string to_string(Experiment e) { return e == Experiment::exp1_linear ? "exp1_linear" : "exp2_turn"; }

inline Experiment experiment_from_string(const std::string& s) {
  if (s == "exp1_linear" || s == "exp1") return Experiment::exp1_linear;
  if (s == "exp2_turn" || s == "exp2") return Experiment::exp2_turn;
  throw ConfigError("unknown experiment '" + s + "' (expected exp1_linear or exp2_turn)");
}

using Overrides = std::map<std::string, double>;

struct ScenarioConfig {
  Experiment experiment = Experiment::exp1_linear;
  int horizon = 100;
  int measurements_per_step = 1;
  std::uint64_t seed = 1;
  Overrides overrides;

  void validate() const {
    if (horizon < 1) throw ConfigError("scenario: horizon must be >= 1");
    if (measurements_per_step < 1) throw ConfigError("scenario: measurements_per_step must be >= 1");
  }
};

struct ScenarioTruth {
  std::vector<ModelId> model_seq;                  // k = 1..K
  std::vector<StateVec> states;                    // k = 1..K
  std::vector<std::vector<ObsVec>> measurements;   // k = 1..K, M_k each
  ModelId initial_model{1};                        // k = 0
  StateVec initial_state;                          // k = 0
  StateVec prior_mean;                             // estimator prior on x_0
  Mat prior_cov;
  int attempts = 1;                                // trajectory draws until one stayed in the sensor domain

  int horizon() const { return static_cast<int>(states.size()); }
};

// ---------------------------------------------------------------------------
// Override handling

namespace detail {

inline const std::set<std::string>& known_override_keys(Experiment e) {
  static const std::set<std::string> exp1{"delta", "alpha", "beta", "models", "tau", "niw_mean_scale", "niw_lambda",
                                          "niw_nu", "niw_psi_scale", "init_x", "init_y", "init_vx", "init_vy",
                                          "prior_var", "prior_offset_sd"};
  static const std::set<std::string> exp2{"models", "sigma_scale", "sigma_v_scale", "q_jitter", "tau",
                                          "niw_lambda", "niw_nu", "niw_psi_scale", "range_sd_m", "bearing_sd_deg",
                                          "init_x", "init_y", "init_vx", "init_vy", "init_omega", "prior_var",
                                          "prior_omega_var", "prior_offset_sd", "max_attempts"};
  return e == Experiment::exp1_linear ? exp1 : exp2;
}

inline double get(const Overrides& o, const std::string& key, double fallback) {
  auto it = o.find(key);
  return it == o.end() ? fallback : it->second;
}

inline void check_keys(const Overrides& o, Experiment e) {
  const auto& known = known_override_keys(e);
  for (const auto& [k, v] : o) {
    if (!known.contains(k)) throw ConfigError("unknown override '" + k + "' for " + to_string(e));
    if (!std::isfinite(v)) throw ConfigError("override '" + k + "' is not finite");
  }
}

inline int model_count_override(const Overrides& o, int fallback) {
  const double l = get(o, "models", fallback);
  if (l < 1 || l > 64 || l != std::floor(l)) throw ConfigError("override 'models' must be an integer in [1, 64]");
  return static_cast<int>(l);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment I: x = (px, py, vx, vy), x_k = A x_{k-1} + v_j, y = C x + w_j.

struct Exp1Parameters {
  double delta = 0.1;
  double alpha = 0.01;
  double beta = 0.5;
  int models = 3;
  double tau = 0.1;
  double niw_mean_scale = 0.001;
  double niw_lambda = 100.0;
  double niw_nu = 100.0;
  double niw_psi_scale = 0.0;  // 0 selects beta * (nu - d - 1): E[Sigma_j] = R_j

  static Exp1Parameters from(const Overrides& o) {
    detail::check_keys(o, Experiment::exp1_linear);
    Exp1Parameters p;
    p.delta = detail::get(o, "delta", p.delta);
    p.alpha = detail::get(o, "alpha", p.alpha);
    p.beta = detail::get(o, "beta", p.beta);
    p.models = detail::model_count_override(o, p.models);
    p.tau = detail::get(o, "tau", p.tau);
    p.niw_mean_scale = detail::get(o, "niw_mean_scale", p.niw_mean_scale);
    p.niw_lambda = detail::get(o, "niw_lambda", p.niw_lambda);
    p.niw_nu = detail::get(o, "niw_nu", p.niw_nu);
    p.niw_psi_scale = detail::get(o, "niw_psi_scale", p.niw_psi_scale);
    if (!(p.delta > 0)) throw ConfigError("delta must be > 0");
    if (!(p.alpha > 0)) throw ConfigError("alpha must be > 0");
    if (!(p.beta > 0)) throw ConfigError("beta must be > 0");
    if (!(p.tau >= 0)) throw ConfigError("tau must be >= 0");
    if (!(p.niw_lambda > 0)) throw ConfigError("niw_lambda must be > 0");
    if (!(p.niw_nu > 3)) throw ConfigError("niw_nu must be > 3 (finite prior mean in 2-D)");
    if (p.niw_psi_scale < 0) throw ConfigError("niw_psi_scale must be >= 0");
    return p;
  }

  double psi_scale() const { return niw_psi_scale > 0 ? niw_psi_scale : beta * (niw_nu - 2 - 1); }
};

inline Mat exp1_transition_matrix(double delta) {
  Mat a = Mat::Identity(4, 4);
  a(0, 2) = delta;
  a(1, 3) = delta;
  return a;
}

inline Mat exp1_observation_matrix() {
  Mat c = Mat::Zero(2, 4);
  c(0, 0) = 1.0;
  c(1, 1) = 1.0;
  return c;
}

/// Q_j = alpha diag(j delta^2 / 4, j^2 delta / 3) in (position, velocity) block form.
inline Mat exp1_process_noise(int j, double delta, double alpha) {
  Vec d(4);
  d << j * delta * delta / 4.0, j * delta * delta / 4.0, j * j * delta / 3.0, j * j * delta / 3.0;
  return alpha * Mat(d.asDiagonal());
}

inline Mat exp1_measurement_noise(int j, double beta) { return j * beta * Mat::Identity(2, 2); }

inline ModelBank build_exp1_bank(const Overrides& overrides = {}) {
  const auto p = Exp1Parameters::from(overrides);
  const int l = p.models;
  const Mat a = exp1_transition_matrix(p.delta);
  const Mat c = exp1_observation_matrix();
  auto [g, gj] = linear_map(a);
  auto [t, tj] = linear_map(c);

  std::vector<ModelBank::Model> models;
  std::vector<std::vector<TransitionKernel>> transitions(static_cast<std::size_t>(l));
  for (int j = 1; j <= l; ++j) {
    NIWParams prior{Vec::Constant(2, p.niw_mean_scale * j), p.niw_lambda, p.psi_scale() * j * Mat::Identity(2, 2),
                    p.niw_nu};
    models.push_back({MeasurementKernel(ModelId(j), t, tj, exp1_measurement_noise(j, p.beta)), prior});
  }
  for (int from = 1; from <= l; ++from) {
    for (int to = 1; to <= l; ++to) {
      transitions[static_cast<std::size_t>(from - 1)].emplace_back(ModelId(from), ModelId(to), g, gj,
                                                                   exp1_process_noise(to, p.delta, p.alpha),
                                                                   std::vector<int>{0, 1, 2, 3});
    }
  }
  return ModelBank("exp1_linear", std::move(models), std::move(transitions), JumpMap::affine(l, 4, p.tau),
                   {"px", "py", "vx", "vy"}, {"ox", "oy"});
}

// ---------------------------------------------------------------------------
// Experiment II: x = (px, vx, py, vy, omega), coordinated turn with effective
// rate |j' - j| omega, measurement (bearing rad, range km).

struct Exp2Parameters {
  int models = 10;
  double sigma_scale = 15.0;
  double sigma_v_scale = 1.0;
  double q_jitter = 1e-4;
  double tau = 0.1;
  double niw_lambda = 100.0;
  double niw_nu = 100.0;
  double niw_psi_scale = 0.0;  // 0 selects nu - d - 1: E[Sigma] = R
  double range_sd_m = 5.0;
  double bearing_sd_deg = 1.0;

  static Exp2Parameters from(const Overrides& o) {
    detail::check_keys(o, Experiment::exp2_turn);
    Exp2Parameters p;
    p.models = detail::model_count_override(o, p.models);
    p.sigma_scale = detail::get(o, "sigma_scale", p.sigma_scale);
    p.sigma_v_scale = detail::get(o, "sigma_v_scale", p.sigma_v_scale);
    p.q_jitter = detail::get(o, "q_jitter", p.q_jitter);
    p.tau = detail::get(o, "tau", p.tau);
    p.niw_lambda = detail::get(o, "niw_lambda", p.niw_lambda);
    p.niw_nu = detail::get(o, "niw_nu", p.niw_nu);
    p.niw_psi_scale = detail::get(o, "niw_psi_scale", p.niw_psi_scale);
    p.range_sd_m = detail::get(o, "range_sd_m", p.range_sd_m);
    p.bearing_sd_deg = detail::get(o, "bearing_sd_deg", p.bearing_sd_deg);
    if (!(p.sigma_scale >= 0)) throw ConfigError("sigma_scale must be >= 0");
    if (!(p.sigma_v_scale > 0)) throw ConfigError("sigma_v_scale must be > 0");
    if (!(p.q_jitter > 0)) throw ConfigError("q_jitter must be > 0");
    if (!(p.tau >= 0)) throw ConfigError("tau must be >= 0");
    if (!(p.niw_lambda > 0)) throw ConfigError("niw_lambda must be > 0");
    if (!(p.niw_nu > 3)) throw ConfigError("niw_nu must be > 3");
    if (p.niw_psi_scale < 0) throw ConfigError("niw_psi_scale must be >= 0");
    if (!(p.range_sd_m > 0) || !(p.bearing_sd_deg > 0)) throw ConfigError("measurement noise must be > 0");
    return p;
  }

  double psi_scale() const { return niw_psi_scale > 0 ? niw_psi_scale : niw_nu - 2 - 1; }
};

struct TurnCoefficients {
  double a, b, c, d;      // sin(u)/u, (1 - cos u)/u, cos u, sin u
  double da, db, dc, dd;  // derivatives with respect to u
};

inline TurnCoefficients turn_coefficients(double u) {
  TurnCoefficients t{};
  t.c = std::cos(u);
  t.d = std::sin(u);
  t.dc = -t.d;
  t.dd = t.c;
  if (std::abs(u) < 1e-2) {
    const double u2 = u * u;
    t.a = 1.0 - u2 / 6.0 + u2 * u2 / 120.0 - u2 * u2 * u2 / 5040.0;
    t.b = u / 2.0 - u * u2 / 24.0 + u * u2 * u2 / 720.0;
    t.da = -u / 3.0 + u * u2 / 30.0 - u * u2 * u2 / 840.0;
    t.db = 0.5 - u2 / 8.0 + u2 * u2 / 144.0;
  } else {
    const double half = std::sin(0.5 * u);
    const double one_minus_cos = 2.0 * half * half;
    t.a = t.d / u;
    t.b = one_minus_cos / u;
    t.da = (u * t.c - t.d) / (u * u);
    t.db = (u * t.d - one_minus_cos) / (u * u);
  }
  return t;
}

/// F_j x for jump size n = |j' - j| with turn rate omega = x[4].
inline Vec coordinated_turn(int n, const Vec& x) {
  const auto t = turn_coefficients(n * x[4]);
  Vec out(5);
  out[0] = x[0] + t.a * x[1] - t.b * x[3];
  out[1] = t.c * x[1] - t.d * x[3];
  out[2] = t.b * x[1] + x[2] + t.a * x[3];
  out[3] = t.d * x[1] + t.c * x[3];
  out[4] = x[4];
  return out;
}

inline Mat coordinated_turn_jacobian(int n, const Vec& x) {
  const auto t = turn_coefficients(n * x[4]);
  Mat j = Mat::Zero(5, 5);
  j(0, 0) = 1.0;
  j(0, 1) = t.a;
  j(0, 3) = -t.b;
  j(1, 1) = t.c;
  j(1, 3) = -t.d;
  j(2, 1) = t.b;
  j(2, 2) = 1.0;
  j(2, 3) = t.a;
  j(3, 1) = t.d;
  j(3, 3) = t.c;
  j(4, 4) = 1.0;
  j(0, 4) = n * (t.da * x[1] - t.db * x[3]);
  j(1, 4) = n * (t.dc * x[1] - t.dd * x[3]);
  j(2, 4) = n * (t.db * x[1] + t.da * x[3]);
  j(3, 4) = n * (t.dd * x[1] + t.dc * x[3]);
  return j;
}

/// Position/velocity acceleration scale 15 log(1 + |j - j'|); zero at self-transition.
inline double exp2_sigma(int from, int to, double sigma_scale) {
  return sigma_scale * std::log(1.0 + std::abs(from - to));
}

inline double exp2_sigma_v(int to, double sigma_v_scale) {
  return sigma_v_scale * std::sqrt(static_cast<double>(to)) * std::numbers::pi / 180.0;
}

inline Mat exp2_process_noise(int from, int to, const Exp2Parameters& p) {
  const double s2 = std::pow(exp2_sigma(from, to, p.sigma_scale), 2);
  const double sv = exp2_sigma_v(to, p.sigma_v_scale);
  Mat q = Mat::Zero(5, 5);
  for (int axis : {0, 2}) {
    q(axis, axis) = s2 / 4.0;
    q(axis, axis + 1) = s2 / 2.0;
    q(axis + 1, axis) = s2 / 2.0;
    q(axis + 1, axis + 1) = s2;
  }
  q(4, 4) = sv * sv;
  for (int i = 0; i < 4; ++i) q(i, i) += p.q_jitter;
  return q;
}

/// Sensor noise as listed for the turn scenario: diag(25, (pi/180)^2), read as
/// (range variance in m^2, bearing variance in rad^2).
inline Mat exp2_paper_measurement_noise() {
  Mat q = Mat::Zero(2, 2);
  q(0, 0) = 25.0;
  q(1, 1) = std::pow(std::numbers::pi / 180.0, 2);
  return q;
}

/// Noise covariance in observation order (bearing rad, range km).
inline Mat exp2_measurement_noise(const Exp2Parameters& p) {
  Mat r = Mat::Zero(2, 2);
  r(0, 0) = std::pow(p.bearing_sd_deg * std::numbers::pi / 180.0, 2);
  r(1, 1) = std::pow(p.range_sd_m / 1000.0, 2);
  return r;
}

/// (arctan(y / x), sqrt(x^2 + y^2) / 1000): bearing in (-pi/2, pi/2), range in km.
inline Vec bearing_range(const Vec& x) {
  Vec out(2);
  out[0] = std::atan(x[2] / x[0]);
  out[1] = std::hypot(x[0], x[2]) / 1000.0;
  return out;
}

inline Mat bearing_range_jacobian(const Vec& x) {
  const double r2 = x[0] * x[0] + x[2] * x[2];
  const double r = std::sqrt(r2);
  Mat h = Mat::Zero(2, 5);
  h(0, 0) = -x[2] / r2;
  h(0, 2) = x[0] / r2;
  h(1, 0) = x[0] / (1000.0 * r);
  h(1, 2) = x[2] / (1000.0 * r);
  return h;
}

inline ModelBank build_exp2_bank(const Overrides& overrides = {}) {
  const auto p = Exp2Parameters::from(overrides);
  const int l = p.models;
  const Mat r = exp2_measurement_noise(p);
  std::vector<ModelBank::Model> models;
  for (int j = 1; j <= l; ++j) {
    NIWParams prior{Vec::Zero(2), p.niw_lambda, p.psi_scale() * r, p.niw_nu};
    models.push_back({MeasurementKernel(ModelId(j), bearing_range, bearing_range_jacobian, r), prior});
  }
  std::vector<std::vector<TransitionKernel>> transitions(static_cast<std::size_t>(l));
  for (int from = 1; from <= l; ++from) {
    for (int to = 1; to <= l; ++to) {
      const int n = std::abs(from - to);
      transitions[static_cast<std::size_t>(from - 1)].emplace_back(
          ModelId(from), ModelId(to), [n](const Vec& x) { return coordinated_turn(n, x); },
          [n](const Vec& x) { return coordinated_turn_jacobian(n, x); }, exp2_process_noise(from, to, p),
          std::vector<int>{0, 0, 0, 0, 1});
    }
  }
  return ModelBank("exp2_turn", std::move(models), std::move(transitions), JumpMap::affine(l, 2, p.tau),
                   {"px", "vx", "py", "vy", "omega"}, {"bearing", "range_km"});
}

inline ModelBank build_bank(const ScenarioConfig& cfg) {
  return cfg.experiment == Experiment::exp1_linear ? build_exp1_bank(cfg.overrides) : build_exp2_bank(cfg.overrides);
}

// ---------------------------------------------------------------------------
// Simulation

/// Initial state and estimator prior of a scenario.
struct InitialCondition {
  StateVec state;
  Mat prior_cov;
  Mat offset_cov;  // prior mean = state + N(0, offset_cov)
};

inline InitialCondition default_initial_condition(const ScenarioConfig& cfg) {
  const auto& o = cfg.overrides;
  InitialCondition ic;
  if (cfg.experiment == Experiment::exp1_linear) {
    ic.state = Vec(4);
    ic.state << detail::get(o, "init_x", 0.0), detail::get(o, "init_y", 0.0), detail::get(o, "init_vx", 1.0),
        detail::get(o, "init_vy", 0.5);
    ic.prior_cov = detail::get(o, "prior_var", 10.0) * Mat::Identity(4, 4);
    ic.offset_cov = std::pow(detail::get(o, "prior_offset_sd", 1.0), 2) * Mat::Identity(4, 4);
  } else {
    const double speed_component = 10.0 * std::numbers::sqrt2 / 2.0;
    ic.state = Vec(5);
    ic.state << detail::get(o, "init_x", 1000.0), detail::get(o, "init_vx", speed_component),
        detail::get(o, "init_y", 1000.0), detail::get(o, "init_vy", speed_component),
        detail::get(o, "init_omega", std::numbers::pi / 36.0);
    const double pv = detail::get(o, "prior_var", 10.0);
    Vec d(5);
    d << pv, pv, pv, pv, detail::get(o, "prior_omega_var", std::pow(std::numbers::pi / 36.0, 2));
    ic.prior_cov = d.asDiagonal();
    const double sd = detail::get(o, "prior_offset_sd", 1.0);
    Vec od(5);
    od << sd * sd, sd * sd, sd * sd, sd * sd, std::pow(sd * std::numbers::pi / 180.0, 2);
    ic.offset_cov = od.asDiagonal();
  }
  return ic;
}

/// Sensor domain: an observation (and the true state generating it) must satisfy this.
using DomainCheck = std::function<bool(const StateVec& state, const ObsVec& obs)>;

inline DomainCheck exp2_domain() {
  return [](const StateVec& x, const ObsVec& y) {
    const double true_range_km = std::hypot(x[0], x[2]) / 1000.0;
    const double half_pi = 0.5 * std::numbers::pi;
    return true_range_km > 0.0 && true_range_km < 2.0 && x[0] != 0.0 && y[0] > -half_pi && y[0] < half_pi &&
           y[1] > 0.0 && y[1] < 2.0;
  };
}

namespace detail {

inline std::optional<ScenarioTruth> simulate_once(const ModelBank& bank, const ScenarioConfig& cfg,
                                                  const InitialCondition& ic, const DomainCheck& domain,
                                                  RandomSource& rng) {
  constexpr int kRedraws = 64;
  const int l = bank.model_count();
  ScenarioTruth truth;
  truth.initial_state = ic.state;
  std::vector<double> uniform(static_cast<std::size_t>(l), 1.0);
  truth.initial_model = ModelId::from_zero_based(rng.categorical(uniform));
  ModelId prev = truth.initial_model;
  StateVec x = ic.state;
  for (int k = 1; k <= cfg.horizon; ++k) {
    const Eigen::VectorXd row = bank.jump_map().jump_prob().row(prev.zero_based()).transpose();
    const ModelId cur = ModelId::from_zero_based(rng.categorical(std::span<const double>(row.data(), row.size())));
    const auto& kernel = bank.transition(prev, cur);
    const auto& meas = bank.measurement(cur);
    const auto hierarchy = MeasurementHierarchy::single(meas.noise_cov());

    StateVec next = propagate_state(x, kernel, rng);
    if (domain) {
      int tries = 0;
      while (!domain(next, meas.predict(next)) && ++tries < kRedraws) next = propagate_state(x, kernel, rng);
      if (!domain(next, meas.predict(next))) return std::nullopt;
    }
    std::vector<ObsVec> ys;
    ys.reserve(static_cast<std::size_t>(cfg.measurements_per_step));
    for (int m = 0; m < cfg.measurements_per_step; ++m) {
      ObsVec y = sample_measurements(next, meas, hierarchy, 1, rng).front();
      if (domain) {
        int tries = 0;
        while (!domain(next, y) && ++tries < kRedraws) y = sample_measurements(next, meas, hierarchy, 1, rng).front();
        if (!domain(next, y)) return std::nullopt;
      }
      ys.push_back(std::move(y));
    }
    truth.model_seq.push_back(cur);
    truth.states.push_back(next);
    truth.measurements.push_back(std::move(ys));
    x = next;
    prev = cur;
  }
  return truth;
}

}  // namespace detail

/// Draws a model path from the uniform initial model, states through the
/// transition kernels and measurements through the measurement kernels.
/// When `domain` is set, process and measurement noise are redrawn (bounded)
/// to keep the truth and observations inside the sensor domain, and the whole
/// trajectory is redrawn from a derived seed if that fails.
inline ScenarioTruth simulate(const ModelBank& bank, const ScenarioConfig& cfg, const InitialCondition& ic,
                              const DomainCheck& domain = {}, int max_attempts = 1000) {
  cfg.validate();
  if (ic.state.size() != bank.state_dim()) throw ConfigError("simulate: initial state dimension mismatch");
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    RandomSource rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(attempt)));
    auto truth = detail::simulate_once(bank, cfg, ic, domain, rng);
    if (!truth) continue;
    RandomSource prior_rng(derive_seed(cfg.seed, 7));
    truth->prior_mean = ic.offset_cov.size() > 0
                            ? sample_mvn_chol(ic.state, numerical_cholesky(ic.offset_cov, "prior offset"), prior_rng)
                            : ic.state;
    truth->prior_cov = ic.prior_cov;
    truth->attempts = attempt + 1;
    return *truth;
  }
  throw SimulationError("simulate: trajectory left the sensor domain in all " + std::to_string(max_attempts) +
                        " attempts");
}

inline ScenarioTruth simulate(const ModelBank& bank, const ScenarioConfig& cfg) {
  const auto ic = default_initial_condition(cfg);
  if (cfg.experiment == Experiment::exp2_turn) {
    const int attempts = static_cast<int>(detail::get(cfg.overrides, "max_attempts", 1000));
    return simulate(bank, cfg, ic, exp2_domain(), attempts);
  }
  return simulate(bank, cfg, ic);
}

}  // namespace bkt
