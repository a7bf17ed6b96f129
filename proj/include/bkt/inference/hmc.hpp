#pragma once

// Hamiltonian Monte Carlo with a diagonal mass matrix, plus the burn-in
// adaptation helpers (dual-averaging step size, windowed variance for the mass).

#include "bkt/core/error.hpp"
#include "bkt/core/random.hpp"

#include <Eigen/Core>

#include <cmath>
#include <concepts>
#include <limits>

namespace bkt {

/// A differentiable log density: returns log p(q) and writes the gradient when `grad` is non-null.
template <class T>
concept LogDensity = requires(const T& t, const Eigen::VectorXd& q, Eigen::VectorXd* g) {
  { t(q, g) } -> std::convertible_to<double>;
};

struct HmcSettings {
  double step_size = 0.02;
  int leapfrog_steps = 20;
  double step_jitter = 0.0;  // per-transition step size drawn from step_size * U(1 - j, 1 + j)
  Eigen::VectorXd inv_mass;  // diagonal of M^{-1}; empty means identity
};

struct HmcResult {
  bool accepted = false;
  double accept_prob = 0.0;
  double energy_error = 0.0;  // H(end) - H(start); +inf for a diverged trajectory
};

/// Point on the chain with its cached log density and gradient.
struct HmcPoint {
  Eigen::VectorXd q;
  double log_density = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd grad;

  template <LogDensity Target>
  void refresh(const Target& target) {
    grad.resize(q.size());
    log_density = target(q, &grad);
  }
};

namespace detail {

inline Eigen::VectorXd inv_mass_or_ones(const HmcSettings& s, Eigen::Index n) {
  if (s.inv_mass.size() == 0) return Eigen::VectorXd::Ones(n);
  expects(s.inv_mass.size() == n, "hmc: inverse mass dimension mismatch");
  return s.inv_mass;
}

}  // namespace detail

/// Integrates a leapfrog trajectory in place. Returns false on a non-finite state.
template <LogDensity Target>
bool leapfrog(const Target& target, HmcPoint& point, Eigen::VectorXd& momentum, const Eigen::VectorXd& inv_mass,
              double step_size, int steps) {
  momentum += 0.5 * step_size * point.grad;
  for (int s = 0; s < steps; ++s) {
    point.q += step_size * inv_mass.cwiseProduct(momentum);
    point.log_density = target(point.q, &point.grad);
    if (!std::isfinite(point.log_density) || !point.grad.allFinite()) return false;
    const double scale = (s + 1 == steps) ? 0.5 : 1.0;
    momentum += scale * step_size * point.grad;
  }
  return true;
}

inline double kinetic_energy(const Eigen::VectorXd& momentum, const Eigen::VectorXd& inv_mass) {
  return 0.5 * momentum.cwiseProduct(inv_mass).dot(momentum);
}

/// One HMC transition. `point` must hold a finite log density and gradient;
/// it is replaced by the proposal on acceptance. Non-finite trajectories are rejections.
template <LogDensity Target>
HmcResult hmc_step(const Target& target, HmcPoint& point, const HmcSettings& settings, RandomSource& rng) {
  expects(settings.step_size > 0.0 && settings.leapfrog_steps >= 1, "hmc: step size and leapfrog steps must be positive");
  expects(settings.step_jitter >= 0.0 && settings.step_jitter < 1.0, "hmc: step jitter must be in [0, 1)");
  const Eigen::Index n = point.q.size();
  const Eigen::VectorXd inv_mass = detail::inv_mass_or_ones(settings, n);
  Eigen::VectorXd momentum(n);
  for (Eigen::Index i = 0; i < n; ++i) momentum[i] = rng.normal() / std::sqrt(inv_mass[i]);

  const double h0 = -point.log_density + kinetic_energy(momentum, inv_mass);
  HmcPoint proposal = point;
  HmcResult result;
  double eps = settings.step_size;
  if (settings.step_jitter > 0.0) eps *= 1.0 + settings.step_jitter * (2.0 * rng.uniform() - 1.0);
  const bool ok = leapfrog(target, proposal, momentum, inv_mass, eps, settings.leapfrog_steps);
  const double h1 = ok ? -proposal.log_density + kinetic_energy(momentum, inv_mass)
                       : std::numeric_limits<double>::infinity();
  result.energy_error = std::isfinite(h1) ? h1 - h0 : std::numeric_limits<double>::infinity();
  result.accept_prob = std::isfinite(result.energy_error) ? std::min(1.0, std::exp(-result.energy_error)) : 0.0;
  // The uniform is drawn unconditionally so the random stream does not depend on divergences.
  const double u = rng.uniform();
  if (u < result.accept_prob) {
    point = std::move(proposal);
    result.accepted = true;
  }
  return result;
}

/// Dual averaging of log step size toward a target acceptance probability.
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double initial_step, double target_accept = 0.8)
      : mu_(std::log(10.0 * initial_step)), target_(target_accept), log_step_(std::log(initial_step)) {}

  double step_size() const { return std::exp(log_step_); }
  double final_step_size() const { return std::exp(log_step_avg_); }

  void update(double accept_prob) {
    ++count_;
    const double t = static_cast<double>(count_);
    const double eta = 1.0 / (t + kT0);
    h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_prob);
    log_step_ = mu_ - std::sqrt(t) / kGamma * h_bar_;
    const double w = std::pow(t, -kKappa);
    log_step_avg_ = w * log_step_ + (1.0 - w) * log_step_avg_;
  }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;

  double mu_;
  double target_;
  double log_step_;
  double log_step_avg_ = 0.0;
  double h_bar_ = 0.0;
  long count_ = 0;
};

/// Running per-coordinate variance (Welford).
class VarianceAccumulator {
 public:
  explicit VarianceAccumulator(Eigen::Index n) : mean_(Eigen::VectorXd::Zero(n)), m2_(Eigen::VectorXd::Zero(n)) {}

  void add(const Eigen::VectorXd& x) {
    ++count_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  long count() const { return count_; }

  /// Variance shrunk toward 1e-3 for short windows.
  Eigen::VectorXd regularized_variance() const {
    const double n = static_cast<double>(count_);
    if (count_ < 2) return Eigen::VectorXd::Ones(mean_.size());
    const Eigen::VectorXd var = m2_ / (n - 1.0);
    return (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
  long count_ = 0;
};

}  // namespace bkt
