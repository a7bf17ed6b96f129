#pragma once

// Random chain states, step targets and finite-difference helpers shared by
// the unit tests and the acceptance runner.

#include "bkt/bkt.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace bkt::testing {

struct JointFixture {
  MeasurementSet y;
  ChainState cs;
  StateVec prior_mean;
  Mat prior_cov;
};

inline Vec random_state(const ModelBank& bank, RandomSource& rng) {
  if (bank.state_dim() == 5) {
    Vec x(5);
    x << 1000 + 100 * rng.normal(), 7 + rng.normal(), 1000 + 100 * rng.normal(), 7 + rng.normal(),
        0.05 + 0.02 * rng.normal();
    return x;
  }
  return 2.0 * rng.standard_normal_small(bank.state_dim());
}

inline Mat random_spd(int d, double scale, RandomSource& rng) {
  Mat a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  }
  return scale * (a * a.transpose() / d + 0.5 * Mat::Identity(d, d));
}

/// Random but plausible full-trajectory state: dynamics followed with inflated
/// noise, measurements around the predicted observation, random hierarchy.
inline JointFixture random_joint_fixture(const ModelBank& bank, int horizon, int meas_per_step, int max_clusters,
                                         RandomSource& rng, bool freeze_transition = false) {
  JointFixture f;
  const int l = bank.model_count();
  const int np = bank.param_dim();
  auto pick = [&]() { return ModelId::from_zero_based(static_cast<int>(rng.uniform() * l) % l); };
  f.cs.initial_model = pick();
  f.cs.initial_state = random_state(bank, rng);
  f.cs.initial_param = ParamVec::Zero(np);
  f.prior_mean = f.cs.initial_state + 0.5 * rng.standard_normal_small(bank.state_dim());
  f.prior_cov = random_spd(bank.state_dim(), 2.0, rng);
  ModelId prev = f.cs.initial_model;
  StateVec x = f.cs.initial_state;
  ParamVec theta = f.cs.initial_param;
  for (int k = 1; k <= horizon; ++k) {
    const ModelId cur = pick();
    if (!freeze_transition) {
      theta = bank.jump_map().forward(prev, cur, theta);
      for (int i = 0; i < np; ++i) theta[i] += 0.3 * rng.normal();
    }
    const auto& kernel = bank.transition(prev, cur);
    x = kernel.mean(x) + 2.0 * (kernel.scaled_chol(theta) * rng.standard_normal_small(bank.state_dim()));
    f.cs.models.push_back(cur);
    f.cs.states.push_back(x);
    f.cs.params.push_back(theta);

    const auto& meas = bank.measurement(cur);
    const int c = 1 + static_cast<int>(rng.uniform() * max_clusters) % max_clusters;
    MeasurementHierarchy h;
    h.cluster_count = c;
    h.weights = c == 1 ? std::vector<double>{1.0} : rng.dirichlet(std::vector<double>(static_cast<std::size_t>(c), 2.0));
    const Mat rchol = meas.noise_chol();
    for (int i = 0; i < c; ++i) {
      const Mat s = random_spd(bank.obs_dim(), 1.0, rng);
      h.components.push_back({rchol * rng.standard_normal_small(bank.obs_dim()), rchol * s * rchol.transpose()});
    }
    std::vector<ObsVec> ys;
    for (int m = 0; m < meas_per_step; ++m) {
      const int a = static_cast<int>(rng.uniform() * c) % c;
      h.assignments.push_back(a);
      ys.push_back(meas.predict(x) + h.components[static_cast<std::size_t>(a)].mean +
                   1.5 * (rchol * rng.standard_normal_small(bank.obs_dim())));
    }
    h.niw_prior = bank.niw_prior(cur);
    f.cs.hierarchies.push_back(std::move(h));
    f.y.push_back(std::move(ys));
    prev = cur;
  }
  return f;
}

struct EnumerationCheck {
  double max_abs = 0.0;    // largest |gibbs - enumeration|
  double max_ratio = 0.0;  // largest |gibbs - enumeration| / max(tol, ulp of the largest |log joint|)
  double max_floor = 0.0;  // largest rounding floor of the oracle itself
};

/// Conditionals of every M_k at every model path, against normalized full joints.
inline EnumerationCheck enumeration_check(const ModelBank& bank, int horizon, std::uint64_t seed, bool ft, bool fm,
                                          double tol = 1e-10) {
  RandomSource rng(seed);
  auto f = random_joint_fixture(bank, horizon, 2, 2, rng, ft);
  const PosteriorContext ctx(bank, f.y, f.prior_mean, f.prior_cov, ft, fm);
  const int l = bank.model_count();
  int paths = 1;
  for (int k = 0; k <= horizon; ++k) paths *= l;
  EnumerationCheck out;
  for (int path = 0; path < paths; ++path) {
    ChainState cs = f.cs;
    int code = path;
    for (int k = 0; k <= horizon; ++k) {
      cs.set_model(k, ModelId::from_zero_based(code % l));
      code /= l;
    }
    for (int k = 0; k <= horizon; ++k) {
      std::vector<double> lp;
      for (int j = 0; j < l; ++j) {
        ChainState alt = cs;
        alt.set_model(k, ModelId::from_zero_based(j));
        lp.push_back(log_posterior(alt, ctx));
      }
      const double top = *std::max_element(lp.begin(), lp.end());
      double z = 0.0;
      for (double v : lp) z += std::exp(v - top);
      double scale = 0.0;
      for (double v : lp) {
        if (std::isfinite(v)) scale = std::max(scale, std::abs(v));
      }
      const double floor = std::nextafter(scale, std::numeric_limits<double>::infinity()) - scale;
      out.max_floor = std::max(out.max_floor, floor);
      const auto probs = model_conditional(cs, ctx, k);
      for (int j = 0; j < l; ++j) {
        const double d = std::abs(probs[static_cast<std::size_t>(j)] - std::exp(lp[static_cast<std::size_t>(j)] - top) / z);
        out.max_abs = std::max(out.max_abs, d);
        out.max_ratio = std::max(out.max_ratio, d / std::max(tol, floor));
      }
    }
  }
  return out;
}

inline double enumeration_discrepancy(const ModelBank& bank, int horizon, std::uint64_t seed, bool ft, bool fm) {
  return enumeration_check(bank, horizon, seed, ft, fm).max_abs;
}

/// Central differences with a per-coordinate step h * max(1, |q_i|).
template <class F>
Eigen::VectorXd finite_difference_gradient(const F& f, const Eigen::VectorXd& q, double h = 1e-5) {
  Eigen::VectorXd g(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(q[i]));
    Eigen::VectorXd hi = q, lo = q;
    hi[i] += step;
    lo[i] -= step;
    g[i] = (f(hi) - f(lo)) / (hi[i] - lo[i]);
  }
  return g;
}

/// Largest violation ratio of |a - b| <= max(rel * max(|a|, |b|), abs_floor); <= 1 passes.
inline double gradient_mismatch(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double rel = 1e-4,
                                double abs_floor = 1e-7) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double tol = std::max(rel * std::max(std::abs(analytic[i]), std::abs(numeric[i])), abs_floor);
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / tol);
  }
  return worst;
}

struct StepFixture {
  std::vector<ObsVec> y;
  CarriedPrior prior;
  StepDiscrete discrete;
  Eigen::VectorXd q;
  int clusters = 1;
};

/// Random carried prior, measurements and whitened point for a step target.
inline StepFixture random_step_fixture(const ModelBank& bank, int meas_per_step, int max_clusters, RandomSource& rng,
                                       bool freeze_transition = false) {
  StepFixture f;
  const int l = bank.model_count();
  const int n = bank.state_dim();
  const int np = freeze_transition ? 0 : bank.param_dim();
  f.prior.state_dim = n;
  f.prior.param_dim = np;
  const Vec center = random_state(bank, rng);
  Eigen::VectorXd scale(n + np);
  for (int i = 0; i < n; ++i) scale[i] = n == 5 ? (i == 4 ? 0.01 : (i % 2 == 0 ? 5.0 : 1.0)) : 0.5;
  for (int i = n; i < n + np; ++i) scale[i] = 0.2;
  for (int j = 0; j < l; ++j) {
    CarriedPrior::Component c;
    c.log_weight = std::log((1.0 + rng.uniform()) / (1.5 * l));
    c.mean = Eigen::VectorXd::Zero(n + np);
    c.mean.head(n) = center;
    for (int i = 0; i < n + np; ++i) c.mean[i] += 0.5 * scale[i] * rng.normal();
    Eigen::MatrixXd lc = Eigen::MatrixXd::Zero(n + np, n + np);
    for (int i = 0; i < n + np; ++i) {
      lc(i, i) = scale[i] * (0.5 + rng.uniform());
      for (int k = 0; k < i; ++k) lc(i, k) = 0.2 * std::sqrt(scale[i] * scale[k]) * rng.normal();
    }
    c.chol = lc;
    f.prior.models.push_back(c);
  }
  f.clusters = 1 + static_cast<int>(rng.uniform() * max_clusters) % max_clusters;
  const auto& meas = bank.measurement(ModelId(1));
  for (int m = 0; m < meas_per_step; ++m) {
    f.y.push_back(meas.predict(center) + 2.0 * (meas.noise_chol() * rng.standard_normal_small(bank.obs_dim())));
  }
  f.discrete.prev = static_cast<int>(rng.uniform() * l) % l;
  f.discrete.cur = static_cast<int>(rng.uniform() * l) % l;
  for (int m = 0; m < meas_per_step; ++m) f.discrete.assignments.push_back(static_cast<int>(rng.uniform() * f.clusters) % f.clusters);
  f.discrete.weights = f.clusters == 1 ? std::vector<double>{1.0}
                                       : rng.dirichlet(std::vector<double>(static_cast<std::size_t>(f.clusters), 2.0));
  return f;
}

}  // namespace bkt::testing

namespace bkt::testing {

/// Scalar linear-Gaussian bank: model j has x' = a_j x + N(0, q_j), y = x + N(0, r_j).
/// One transition parameter scales the process noise; the destination model sets the dynamics.
inline ModelBank scalar_bank(const std::vector<double>& a, const std::vector<double>& q, const std::vector<double>& r,
                             double tau = 0.1) {
  const int l = static_cast<int>(a.size());
  std::vector<ModelBank::Model> models;
  std::vector<std::vector<TransitionKernel>> transitions(static_cast<std::size_t>(l));
  auto [h, hj] = linear_map(Mat::Identity(1, 1));
  for (int j = 0; j < l; ++j) {
    NIWParams prior{Vec::Zero(1), 100.0, 97.0 * r[static_cast<std::size_t>(j)] * Mat::Identity(1, 1), 100.0};
    models.push_back({MeasurementKernel(ModelId::from_zero_based(j), h, hj,
                                        r[static_cast<std::size_t>(j)] * Mat::Identity(1, 1)),
                      prior});
  }
  for (int from = 0; from < l; ++from) {
    for (int to = 0; to < l; ++to) {
      auto [g, gj] = linear_map(a[static_cast<std::size_t>(to)] * Mat::Identity(1, 1));
      transitions[static_cast<std::size_t>(from)].emplace_back(ModelId::from_zero_based(from), ModelId::from_zero_based(to),
                                                               g, gj, q[static_cast<std::size_t>(to)] * Mat::Identity(1, 1),
                                                               std::vector<int>{0});
    }
  }
  return ModelBank("scalar", std::move(models), std::move(transitions), JumpMap::affine(l, 1, tau), {"x"}, {"y"});
}

inline Vec scalar(double v) { return Vec::Constant(1, v); }

}  // namespace bkt::testing
