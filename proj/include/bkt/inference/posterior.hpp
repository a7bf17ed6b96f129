#pragma once

// Full-trajectory joint posterior p(X, Theta, Phi, M | Y) in natural
// coordinates, its gradient over the continuous coordinates, and the
// HMC / Gibbs operations on a ChainState.

#include "bkt/core/error.hpp"
#include "bkt/core/gaussian.hpp"
#include "bkt/core/random.hpp"
#include "bkt/inference/hmc.hpp"
#include "bkt/model_core.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace bkt {

/// Y: measurements[k - 1] is the set observed at step k.
using MeasurementSet = std::vector<std::vector<ObsVec>>;

/// One complete assignment of the sampler variables over k = 0..K.
/// x_0 is continuous with a Gaussian prior, theta_0 is held fixed, M_0 is discrete.
struct ChainState {
  ModelId initial_model{1};
  StateVec initial_state;
  ParamVec initial_param;
  std::vector<StateVec> states;  // x_1..x_K
  std::vector<ModelId> models;   // M_1..M_K
  std::vector<ParamVec> params;  // theta_1..theta_K
  std::vector<MeasurementHierarchy> hierarchies;

  int horizon() const { return static_cast<int>(states.size()); }
  ModelId model_at(int k) const { return k == 0 ? initial_model : models[static_cast<std::size_t>(k - 1)]; }
  const StateVec& state_at(int k) const { return k == 0 ? initial_state : states[static_cast<std::size_t>(k - 1)]; }
  const ParamVec& param_at(int k) const { return k == 0 ? initial_param : params[static_cast<std::size_t>(k - 1)]; }
  void set_model(int k, ModelId j) {
    if (k == 0) {
      initial_model = j;
    } else {
      models[static_cast<std::size_t>(k - 1)] = j;
    }
  }
};

/// Fixed inputs of the posterior. Frozen transition parameters stay at
/// theta_0 and drop the jump-kernel factor; a frozen measurement model uses
/// the nominal noise R_j of each model and drops the GMM hierarchy.
struct PosteriorContext {
  const ModelBank* bank = nullptr;
  const MeasurementSet* measurements = nullptr;
  StateVec prior_mean;
  Mat prior_chol;
  bool freeze_transition = false;
  bool freeze_measurement = false;

  PosteriorContext(const ModelBank& b, const MeasurementSet& y, StateVec mean, const Mat& cov,
                   bool freeze_theta = false, bool freeze_meas = false)
      : bank(&b), measurements(&y), prior_mean(std::move(mean)), prior_chol(numerical_cholesky(cov, "x0 prior")),
        freeze_transition(freeze_theta), freeze_measurement(freeze_meas) {}

  int horizon() const { return static_cast<int>(measurements->size()); }
  const std::vector<ObsVec>& y(int k) const { return (*measurements)[static_cast<std::size_t>(k - 1)]; }
};

// ---------------------------------------------------------------------------
// Log-Cholesky coordinates of a covariance: Sigma = L L^T, L_ii = exp(eta_ii).

inline int tri_size(int d) { return d * (d + 1) / 2; }

inline Eigen::VectorXd log_cholesky(const Mat& cov) {
  const Mat l = numerical_cholesky(cov, "log_cholesky");
  const int d = static_cast<int>(l.rows());
  Eigen::VectorXd eta(tri_size(d));
  int t = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) eta[t++] = i == j ? std::log(l(i, i)) : l(i, j);
  }
  return eta;
}

inline Mat cholesky_from_log(const double* eta, int d) {
  Mat l = Mat::Zero(d, d);
  int t = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j, ++t) l(i, j) = i == j ? std::exp(eta[t]) : eta[t];
  }
  return l;
}

/// log |d(L L^T) / d eta| = d log 2 + sum_i (d - i + 1) eta_ii, i 0-based.
inline double log_cholesky_log_jacobian(const double* eta, int d) {
  double out = d * std::numbers::ln2;
  int t = 0;
  for (int i = 0; i < d; ++i) {
    t += i;
    out += (d - i + 1) * eta[t];
    ++t;
  }
  return out;
}

/// Chains a gradient with respect to Sigma (symmetric G) and the Jacobian term
/// into eta coordinates.
inline void accumulate_log_cholesky_grad(const Mat& g_sigma, const Mat& l, double* out) {
  const int d = static_cast<int>(l.rows());
  const Mat g_l = 2.0 * g_sigma * l;
  int t = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j, ++t) out[t] += i == j ? g_l(i, i) * l(i, i) + (d - i + 1) : g_l(i, j);
  }
}

// ---------------------------------------------------------------------------
// Coordinate layout of the continuous variables.

struct JointLayout {
  int state_dim = 0;
  int param_dim = 0;  // 0 when frozen
  int obs_dim = 0;
  bool measurement_free = false;
  std::vector<int> step_offset;  // offset of x_k, k = 0..K
  int size = 0;

  JointLayout(const ChainState& cs, const PosteriorContext& ctx) {
    state_dim = ctx.bank->state_dim();
    param_dim = ctx.freeze_transition ? 0 : ctx.bank->param_dim();
    obs_dim = ctx.bank->obs_dim();
    measurement_free = !ctx.freeze_measurement;
    int off = 0;
    for (int k = 0; k <= cs.horizon(); ++k) {
      step_offset.push_back(off);
      off += state_dim;
      if (k == 0) continue;
      off += param_dim;
      if (measurement_free) off += cs.hierarchies[static_cast<std::size_t>(k - 1)].cluster_count * component_size();
    }
    size = off;
  }

  int component_size() const { return obs_dim + tri_size(obs_dim); }
  int x(int k) const { return step_offset[static_cast<std::size_t>(k)]; }
  int theta(int k) const { return x(k) + state_dim; }
  int component(int k, int l) const { return theta(k) + param_dim + l * component_size(); }
};

inline Eigen::VectorXd pack(const ChainState& cs, const PosteriorContext& ctx) {
  const JointLayout lay(cs, ctx);
  Eigen::VectorXd q(lay.size);
  for (int k = 0; k <= cs.horizon(); ++k) {
    q.segment(lay.x(k), lay.state_dim) = cs.state_at(k);
    if (k == 0) continue;
    if (lay.param_dim > 0) q.segment(lay.theta(k), lay.param_dim) = cs.param_at(k);
    if (!lay.measurement_free) continue;
    const auto& h = cs.hierarchies[static_cast<std::size_t>(k - 1)];
    for (int l = 0; l < h.cluster_count; ++l) {
      const auto& comp = h.components[static_cast<std::size_t>(l)];
      q.segment(lay.component(k, l), lay.obs_dim) = comp.mean;
      q.segment(lay.component(k, l) + lay.obs_dim, tri_size(lay.obs_dim)) = log_cholesky(comp.cov);
    }
  }
  return q;
}

inline void unpack(const Eigen::VectorXd& q, ChainState& cs, const PosteriorContext& ctx) {
  const JointLayout lay(cs, ctx);
  expects(q.size() == lay.size, "unpack: coordinate vector size mismatch");
  cs.initial_state = q.segment(lay.x(0), lay.state_dim);
  for (int k = 1; k <= cs.horizon(); ++k) {
    const auto idx = static_cast<std::size_t>(k - 1);
    cs.states[idx] = q.segment(lay.x(k), lay.state_dim);
    if (lay.param_dim > 0) cs.params[idx] = q.segment(lay.theta(k), lay.param_dim);
    if (!lay.measurement_free) continue;
    auto& h = cs.hierarchies[idx];
    for (int l = 0; l < h.cluster_count; ++l) {
      auto& comp = h.components[static_cast<std::size_t>(l)];
      comp.mean = q.segment(lay.component(k, l), lay.obs_dim);
      const Mat lc = cholesky_from_log(q.data() + lay.component(k, l) + lay.obs_dim, lay.obs_dim);
      comp.cov = lc * lc.transpose();
    }
  }
}

// ---------------------------------------------------------------------------
// Factors

namespace detail {

inline double dirichlet_log_pdf(const std::vector<double>& pi, double alpha) {
  const int c = static_cast<int>(pi.size());
  if (c == 1) return 0.0;
  double out = std::lgamma(alpha * c) - c * std::lgamma(alpha);
  for (double p : pi) out += (alpha - 1.0) * std::log(p);
  return out;
}

inline ParamVec effective_param(const ChainState& cs, const PosteriorContext& ctx, int k) {
  return ctx.freeze_transition ? cs.initial_param : cs.param_at(k);
}

/// Factors of step k >= 1 given the models at k - 1 and k: jump, parameter
/// kernel, state transition and the measurement block.
inline double step_log_factor(const ChainState& cs, const PosteriorContext& ctx, int k, ModelId prev, ModelId cur) {
  const ModelBank& bank = *ctx.bank;
  const double jp = bank.jump_map().jump_prob(prev, cur);
  if (!(jp > 0.0)) return -std::numeric_limits<double>::infinity();
  double out = std::log(jp);
  const ParamVec theta = effective_param(cs, ctx, k);
  if (!ctx.freeze_transition) {
    out += bank.jump_map().param_log_density(prev, cur, effective_param(cs, ctx, k - 1), theta);
  }
  const auto& kernel = bank.transition(prev, cur);
  const StateVec& x_prev = cs.state_at(k - 1);
  const StateVec& x = cs.state_at(k);
  out += mvn_log_pdf_chol(x, kernel.mean(x_prev), kernel.scaled_chol(theta));

  const auto& meas = bank.measurement(cur);
  const Vec predicted = meas.predict(x);
  const auto& ys = ctx.y(k);
  if (ctx.freeze_measurement) {
    for (const auto& y : ys) out += mvn_log_pdf_chol(y, predicted, meas.noise_chol());
    return out;
  }
  expects(static_cast<int>(cs.hierarchies.size()) == cs.horizon(), "log_posterior: missing measurement hierarchies");
  const auto& h = cs.hierarchies[static_cast<std::size_t>(k - 1)];
  expects(h.assignments.size() == ys.size() && static_cast<int>(h.weights.size()) == h.cluster_count &&
              static_cast<int>(h.components.size()) == h.cluster_count,
          "log_posterior: hierarchy inconsistent with the measurement set");
  const NIWParams& prior = bank.niw_prior(cur);
  out += dirichlet_log_pdf(h.weights, 1.0 / h.cluster_count);
  std::vector<Mat> chols;
  chols.reserve(h.components.size());
  for (const auto& comp : h.components) {
    out += niw_log_density(comp, prior);
    chols.push_back(numerical_cholesky(comp.cov, "GMM component"));
  }
  for (std::size_t m = 0; m < ys.size(); ++m) {
    const auto c = static_cast<std::size_t>(h.assignments[m]);
    out += std::log(h.weights[c]) + mvn_log_pdf_chol(ys[m], predicted + h.components[c].mean, chols[c]);
  }
  return out;
}

inline double origin_log_factor(const ChainState& cs, const PosteriorContext& ctx) {
  return ctx.bank->initial_log_prob() + mvn_log_pdf_chol(cs.initial_state, ctx.prior_mean, ctx.prior_chol);
}

}  // namespace detail

/// Unnormalized log p(X, Theta, Phi, M | Y) in natural coordinates.
inline double log_posterior(const ChainState& cs, const PosteriorContext& ctx) {
  expects(cs.horizon() == ctx.horizon(), "log_posterior: chain horizon != number of measurement sets");
  double out = detail::origin_log_factor(cs, ctx);
  for (int k = 1; k <= cs.horizon(); ++k) out += detail::step_log_factor(cs, ctx, k, cs.model_at(k - 1), cs.model_at(k));
  return out;
}

/// Log posterior in the unconstrained coordinates of pack(): covariances in
/// log-Cholesky form with their Jacobian. Writes the analytic gradient when
/// `grad` is non-null. `cs` supplies the discrete variables and weights.
inline double log_posterior_unconstrained(const Eigen::VectorXd& q, const ChainState& cs,
                                          const PosteriorContext& ctx, Eigen::VectorXd* grad) {
  const ModelBank& bank = *ctx.bank;
  const JointLayout lay(cs, ctx);
  expects(q.size() == lay.size, "log_posterior_unconstrained: coordinate vector size mismatch");
  const int n = lay.state_dim;
  const int dy = lay.obs_dim;
  const int np = lay.param_dim;
  if (grad) grad->setZero(lay.size);
  const double inf = std::numeric_limits<double>::infinity();

  auto state = [&](int k) -> Vec { return q.segment(lay.x(k), n); };
  auto param = [&](int k) -> ParamVec { return (k == 0 || np == 0) ? ParamVec(cs.initial_param) : ParamVec(q.segment(lay.theta(k), np)); };

  // Origin.
  const Vec x0 = state(0);
  double out = bank.initial_log_prob() + mvn_log_pdf_chol(x0, ctx.prior_mean, ctx.prior_chol);
  if (grad) grad->segment(lay.x(0), n) -= precision_times(x0 - ctx.prior_mean, ctx.prior_chol);

  for (int k = 1; k <= cs.horizon(); ++k) {
    const ModelId prev = cs.model_at(k - 1);
    const ModelId cur = cs.model_at(k);
    const double jp = bank.jump_map().jump_prob(prev, cur);
    if (!(jp > 0.0)) return -inf;
    out += std::log(jp);

    const ParamVec theta = param(k);
    if (np > 0) {
      const auto& jm = bank.jump_map();
      const ParamVec theta_prev = param(k - 1);
      out += jm.param_log_density(prev, cur, theta_prev, theta);
      if (grad && jm.tau() > 0.0) {
        const ParamVec r = (theta - jm.forward(prev, cur, theta_prev)) / (jm.tau() * jm.tau());
        grad->segment(lay.theta(k), np) -= r;
        if (k > 1) grad->segment(lay.theta(k - 1), np) += jm.forward_jacobian(prev, cur, theta_prev).transpose() * r;
      }
    }

    // State transition with Q(theta) = D Q D.
    const auto& kernel = bank.transition(prev, cur);
    const Vec x_prev = state(k - 1);
    const Vec x = state(k);
    const Vec dscale = kernel.scale_factors(theta);
    const Mat chol = dscale.asDiagonal() * kernel.noise_chol();
    const Vec r = x - kernel.mean(x_prev);
    out += mvn_log_pdf_chol(x, kernel.mean(x_prev), chol);
    if (grad) {
      const Vec a = precision_times(r, chol);
      grad->segment(lay.x(k), n) -= a;
      grad->segment(lay.x(k - 1), n) += kernel.jacobian(x_prev).transpose() * a;
      if (np > 0 && !kernel.scale_groups().empty()) {
        // d/d theta_g = sum_{i in g} (e_i w_i / 2 - 1/2), e = r / D, w = Q_nom^{-1} e.
        const Vec e = r.cwiseQuotient(dscale);
        const Vec w = precision_times(e, kernel.noise_chol());
        for (int i = 0; i < n; ++i) {
          (*grad)[lay.theta(k) + kernel.scale_groups()[static_cast<std::size_t>(i)]] += 0.5 * e[i] * w[i] - 0.5;
        }
      }
    }

    // Measurements.
    const auto& meas = bank.measurement(cur);
    const Vec predicted = meas.predict(x);
    const auto& ys = ctx.y(k);
    Vec g_x = Vec::Zero(n);
    Vec g_pred = Vec::Zero(dy);
    if (ctx.freeze_measurement) {
      for (const auto& y : ys) {
        out += mvn_log_pdf_chol(y, predicted, meas.noise_chol());
        if (grad) g_pred += precision_times(y - predicted, meas.noise_chol());
      }
    } else {
      const auto& h = cs.hierarchies[static_cast<std::size_t>(k - 1)];
      const NIWParams& prior = bank.niw_prior(cur);
      out += detail::dirichlet_log_pdf(h.weights, 1.0 / h.cluster_count);
      const int cc = h.cluster_count;
      std::vector<Vec> mu(static_cast<std::size_t>(cc));
      std::vector<Mat> lc(static_cast<std::size_t>(cc));
      std::vector<Mat> g_sigma(static_cast<std::size_t>(cc));
      std::vector<Vec> g_mu(static_cast<std::size_t>(cc));
      for (int l = 0; l < cc; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const int off = lay.component(k, l);
        mu[li] = q.segment(off, dy);
        lc[li] = cholesky_from_log(q.data() + off + dy, dy);
        out += log_cholesky_log_jacobian(q.data() + off + dy, dy);
        out += inverse_wishart_log_pdf_chol(lc[li], prior.psi, prior.nu);
        out += mvn_log_pdf_chol(mu[li], prior.mean, lc[li] / std::sqrt(prior.lambda));
        if (grad) {
          const Mat inv_l = lc[li].triangularView<Eigen::Lower>().solve(Mat::Identity(dy, dy));
          const Mat sigma_inv = inv_l.transpose() * inv_l;
          const Vec a = prior.lambda * (sigma_inv * (mu[li] - prior.mean));
          g_mu[li] = -a;
          // IW: -(nu + d + 1)/2 Sigma^{-1} + 1/2 Sigma^{-1} Psi Sigma^{-1};
          // N(mu; m, Sigma / lambda): lambda/2 Sigma^{-1} r r^T Sigma^{-1} - 1/2 Sigma^{-1}.
          const Mat sp = sigma_inv * prior.psi * sigma_inv;
          g_sigma[li] = -0.5 * (prior.nu + dy + 1) * sigma_inv + 0.5 * sp + 0.5 * a * a.transpose() / prior.lambda -
                        0.5 * sigma_inv;
        }
      }
      for (std::size_t m = 0; m < ys.size(); ++m) {
        const auto c = static_cast<std::size_t>(h.assignments[m]);
        out += std::log(h.weights[c]) + mvn_log_pdf_chol(ys[m], predicted + mu[c], lc[c]);
        if (grad) {
          const Vec a = precision_times(ys[m] - predicted - mu[c], lc[c]);
          const Mat inv_l = lc[c].triangularView<Eigen::Lower>().solve(Mat::Identity(dy, dy));
          g_pred += a;
          g_mu[c] += a;
          g_sigma[c] += 0.5 * (a * a.transpose() - inv_l.transpose() * inv_l);
        }
      }
      if (grad) {
        for (int l = 0; l < cc; ++l) {
          const auto li = static_cast<std::size_t>(l);
          const int off = lay.component(k, l);
          grad->segment(off, dy) += g_mu[li];
          accumulate_log_cholesky_grad(symmetrize(g_sigma[li]), lc[li], grad->data() + off + dy);
        }
      }
    }
    if (grad) {
      g_x = meas.jacobian(x).transpose() * g_pred;
      grad->segment(lay.x(k), n) += g_x;
    }
  }
  return out;
}

/// Gradient of the unconstrained log posterior at pack(cs).
inline Eigen::VectorXd grad_log_posterior(const ChainState& cs, const PosteriorContext& ctx) {
  Eigen::VectorXd g;
  const Eigen::VectorXd q = pack(cs, ctx);
  log_posterior_unconstrained(q, cs, ctx, &g);
  return g;
}

/// One HMC transition over all continuous coordinates; discrete ones untouched.
inline HmcResult hmc_update(ChainState& cs, const HmcSettings& settings, const PosteriorContext& ctx,
                            RandomSource& rng) {
  auto target = [&](const Eigen::VectorXd& q, Eigen::VectorXd* g) {
    return log_posterior_unconstrained(q, cs, ctx, g);
  };
  HmcPoint point;
  point.q = pack(cs, ctx);
  point.refresh(target);
  expects(std::isfinite(point.log_density), "hmc_update: log posterior at the current state is not finite");
  const HmcResult result = hmc_step(target, point, settings, rng);
  if (result.accepted) unpack(point.q, cs, ctx);
  return result;
}

/// Full conditional of M_k over j = 1..L with all other variables fixed.
inline std::vector<double> model_conditional(const ChainState& cs, const PosteriorContext& ctx, int k) {
  const int l = ctx.bank->model_count();
  std::vector<double> logw(static_cast<std::size_t>(l));
  ChainState probe = cs;
  double top = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < l; ++j) {
    const ModelId cand = ModelId::from_zero_based(j);
    probe.set_model(k, cand);
    double lw = k == 0 ? ctx.bank->initial_log_prob()
                       : detail::step_log_factor(probe, ctx, k, probe.model_at(k - 1), cand);
    if (k < cs.horizon()) lw += detail::step_log_factor(probe, ctx, k + 1, cand, probe.model_at(k + 1));
    logw[static_cast<std::size_t>(j)] = lw;
    top = std::max(top, lw);
  }
  if (!std::isfinite(top)) {
    std::string dump = "gibbs_model_update: every candidate model has zero conditional probability at step " +
                       std::to_string(k) + " (log-weights:";
    for (double v : logw) dump += " " + std::to_string(v);
    throw SamplerError(dump + ")");
  }
  double total = 0.0;
  for (double& v : logw) total += (v = std::exp(v - top));
  for (double& v : logw) v /= total;
  return logw;
}

/// Sequential sweep k = 0..K resampling each M_k from its full conditional.
inline void gibbs_model_update(ChainState& cs, const PosteriorContext& ctx, RandomSource& rng) {
  if (ctx.bank->model_count() == 1) return;
  for (int k = 0; k <= cs.horizon(); ++k) {
    const auto probs = model_conditional(cs, ctx, k);
    cs.set_model(k, ModelId::from_zero_based(rng.categorical(probs)));
  }
}

/// Categorical assignment update given the current state and components.
inline void resample_assignments(MeasurementHierarchy& h, const std::vector<ObsVec>& ys, const Vec& predicted,
                                 RandomSource& rng) {
  h.assignments.assign(ys.size(), 0);
  if (h.cluster_count == 1) return;
  std::vector<Mat> chols;
  for (const auto& comp : h.components) chols.push_back(numerical_cholesky(comp.cov, "GMM component"));
  std::vector<double> logw(static_cast<std::size_t>(h.cluster_count));
  for (std::size_t m = 0; m < ys.size(); ++m) {
    for (int l = 0; l < h.cluster_count; ++l) {
      const auto li = static_cast<std::size_t>(l);
      logw[li] = h.weights[li] > 0.0
                     ? std::log(h.weights[li]) + mvn_log_pdf_chol(ys[m], predicted + h.components[li].mean, chols[li])
                     : -std::numeric_limits<double>::infinity();
    }
    h.assignments[m] = rng.categorical_log(logw);
  }
}

/// pi ~ Dir(1/C + n_1, ..., 1/C + n_C). Weights are floored away from zero so
/// the log posterior stays finite.
inline void resample_weights(MeasurementHierarchy& h, RandomSource& rng) {
  if (h.cluster_count == 1) {
    h.weights = {1.0};
    return;
  }
  std::vector<double> alpha(static_cast<std::size_t>(h.cluster_count), 1.0 / h.cluster_count);
  for (int c : h.assignments) alpha[static_cast<std::size_t>(c)] += 1.0;
  h.weights = rng.dirichlet(alpha);
  double total = 0.0;
  for (double& w : h.weights) total += (w = std::max(w, 1e-300));
  for (double& w : h.weights) w /= total;
}

inline void gibbs_cluster_update(ChainState& cs, const PosteriorContext& ctx, RandomSource& rng) {
  if (ctx.freeze_measurement) return;
  for (int k = 1; k <= cs.horizon(); ++k) {
    auto& h = cs.hierarchies[static_cast<std::size_t>(k - 1)];
    const Vec predicted = ctx.bank->measurement(cs.model_at(k)).predict(cs.state_at(k));
    resample_assignments(h, ctx.y(k), predicted, rng);
    resample_weights(h, rng);
  }
}

}  // namespace bkt
