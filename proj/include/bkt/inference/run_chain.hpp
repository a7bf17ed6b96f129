#pragma once

// Sequential HMC-within-Gibbs tracker: one chain per time step over the
// variables of that step, with the previous step's retained samples carried
// forward as a per-model Gaussian prior. A full-trajectory joint chain is
// provided as a debug mode.

#include "bkt/core/error.hpp"
#include "bkt/core/random.hpp"
#include "bkt/inference/bic.hpp"
#include "bkt/inference/diagnostics.hpp"
#include "bkt/inference/hmc.hpp"
#include "bkt/inference/posterior.hpp"
#include "bkt/inference/step_chain.hpp"
#include "bkt/model_core.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace bkt {

struct SamplerConfig {
  int n_iterations = 2000;
  int burn_in = 500;
  double step_size = 0.02;
  int leapfrog_steps = 20;
  double step_jitter = 0.2;
  std::vector<double> mass;  // diagonal of M; empty means identity
  std::uint64_t seed = 1;
  bool adapt = true;
  bool freeze_transition = false;
  bool freeze_measurement = false;
  std::vector<int> cluster_candidates{1, 2, 3};
  bool keep_samples = false;

  void validate() const {
    if (n_iterations < 1) throw ConfigError("sampler: n_iterations must be >= 1");
    if (burn_in < 0 || burn_in >= n_iterations) throw ConfigError("sampler: burn_in must be in [0, n_iterations)");
    if (!(step_size > 0.0)) throw ConfigError("sampler: step_size must be > 0");
    if (leapfrog_steps < 1) throw ConfigError("sampler: leapfrog_steps must be >= 1");
    if (!(step_jitter >= 0.0 && step_jitter < 1.0)) throw ConfigError("sampler: step_jitter must be in [0, 1)");
    for (double m : mass) {
      if (!(m > 0.0)) throw ConfigError("sampler: mass entries must be > 0");
    }
    if (cluster_candidates.empty()) throw ConfigError("sampler: cluster_candidates must be nonempty");
    for (int c : cluster_candidates) {
      if (c < 1) throw ConfigError("sampler: cluster candidates must be >= 1");
    }
  }
};

/// Retained draws of step k.
struct StepSamples {
  std::vector<StateVec> states;
  std::vector<ParamVec> params;
  std::vector<ModelId> models;
};

struct PosteriorSummary {
  std::vector<StateVec> state_mean;  // E[x_k | Y, M_k = model_map[k]]
  std::vector<StateVec> state_sd;
  std::vector<ModelId> model_map;
  std::vector<std::vector<double>> model_marginals;
  std::vector<std::vector<double>> ess;  // per step, per state coordinate
  std::vector<double> acceptance;        // per step, after burn-in
  double acceptance_rate = 0.0;
  std::vector<int> cluster_counts;
  std::vector<double> step_sizes;
  std::vector<std::string> warnings;
  std::vector<StepSamples> samples;  // filled when keep_samples

  int horizon() const { return static_cast<int>(state_mean.size()); }
};

namespace detail {

/// Per-step estimates from retained draws.
inline void summarize_step(const StepSamples& s, int model_count, PosteriorSummary& out) {
  std::vector<double> marg(static_cast<std::size_t>(model_count), 0.0);
  for (ModelId m : s.models) marg[static_cast<std::size_t>(m.zero_based())] += 1.0;
  const double total = static_cast<double>(s.models.size());
  for (double& v : marg) v /= total;
  int best = 0;
  for (int j = 1; j < model_count; ++j) {
    if (marg[static_cast<std::size_t>(j)] > marg[static_cast<std::size_t>(best)]) best = j;
  }
  const int n = static_cast<int>(s.states.front().size());
  Vec mean = Vec::Zero(n);
  Vec sq = Vec::Zero(n);
  double cnt = 0.0;
  for (std::size_t i = 0; i < s.states.size(); ++i) {
    if (s.models[i].zero_based() != best) continue;
    mean += s.states[i];
    cnt += 1.0;
  }
  mean /= cnt;
  for (std::size_t i = 0; i < s.states.size(); ++i) {
    if (s.models[i].zero_based() != best) continue;
    sq += (s.states[i] - mean).cwiseAbs2();
  }
  Vec sd = cnt > 1.0 ? Vec((sq / (cnt - 1.0)).cwiseSqrt()) : Vec(Vec::Zero(n));
  std::vector<double> ess(static_cast<std::size_t>(n));
  std::vector<double> chain(s.states.size());
  for (int c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < s.states.size(); ++i) chain[i] = s.states[i][c];
    ess[static_cast<std::size_t>(c)] = effective_sample_size(chain);
  }
  out.state_mean.push_back(mean);
  out.state_sd.push_back(sd);
  out.model_map.push_back(ModelId::from_zero_based(best));
  out.model_marginals.push_back(std::move(marg));
  out.ess.push_back(std::move(ess));
}

/// Step-size dual averaging over the whole burn-in and a diagonal inverse mass
/// estimated on the window [15%, 75%) of it.
class Adaptation {
 public:
  Adaptation(HmcSettings& settings, int burn_in, Eigen::Index dim, bool enabled)
      : settings_(&settings), adapter_(settings.step_size), variance_(dim), burn_in_(burn_in), enabled_(enabled) {
    window_begin_ = static_cast<int>(0.15 * burn_in);
    window_end_ = static_cast<int>(0.75 * burn_in);
  }

  void after_hmc(int iteration, double accept_prob, const Eigen::VectorXd& q) {
    if (!enabled_ || iteration >= burn_in_) return;
    adapter_.update(accept_prob);
    settings_->step_size = adapter_.step_size();
    if (iteration >= window_begin_ && iteration < window_end_) variance_.add(q);
    if (iteration + 1 == window_end_ && variance_.count() >= 10) {
      settings_->inv_mass = variance_.regularized_variance();
      adapter_ = StepSizeAdapter(settings_->step_size);
    }
    if (iteration + 1 == burn_in_) settings_->step_size = adapter_.final_step_size();
  }

 private:
  HmcSettings* settings_;
  StepSizeAdapter adapter_;
  VarianceAccumulator variance_;
  int burn_in_;
  bool enabled_;
  int window_begin_ = 0;
  int window_end_ = 0;
};

inline HmcSettings initial_settings(const SamplerConfig& cfg, Eigen::Index dim) {
  HmcSettings hs;
  hs.step_size = cfg.step_size;
  hs.leapfrog_steps = cfg.leapfrog_steps;
  hs.step_jitter = cfg.step_jitter;
  if (static_cast<Eigen::Index>(cfg.mass.size()) == dim) {
    hs.inv_mass.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) hs.inv_mass[i] = 1.0 / cfg.mass[static_cast<std::size_t>(i)];
  }
  return hs;
}

}  // namespace detail

/// Sequential tracker over k = 1..K. The chain at step k reads only Y_1..Y_k
/// and is seeded with derive_seed(cfg.seed, k).
inline PosteriorSummary run_chain(const MeasurementSet& y, const ModelBank& bank, const SamplerConfig& cfg,
                                  const StateVec& prior_mean, const Mat& prior_cov) {
  cfg.validate();
  expects(!y.empty(), "run_chain: no measurements");
  expects(prior_mean.size() == bank.state_dim(), "run_chain: prior mean dimension mismatch");
  const int l = bank.model_count();
  const int n = bank.state_dim();
  const int np = cfg.freeze_transition ? 0 : bank.param_dim();
  PosteriorSummary out;
  CarriedPrior carried = CarriedPrior::initial(bank, prior_mean, prior_cov, np);
  HmcSettings warm;
  double accepted_total = 0.0;
  long retained_total = 0;

  for (int k = 1; k <= static_cast<int>(y.size()); ++k) {
    const auto& ys = y[static_cast<std::size_t>(k - 1)];
    expects(!ys.empty(), "run_chain: empty measurement set");
    RandomSource rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
    int clusters = 1;
    if (!cfg.freeze_measurement) {
      const auto sel = select_cluster_count_detailed(ys, cfg.cluster_candidates);
      clusters = sel.clusters;
      if (!sel.converged) out.warnings.push_back("step " + std::to_string(k) + ": EM did not converge for BIC");
    }
    StepTarget target(bank, ys, carried, clusters, cfg.freeze_transition, cfg.freeze_measurement);

    HmcSettings hs = detail::initial_settings(cfg, target.dim());
    if (k > 1) {
      hs.step_size = warm.step_size;
      if (warm.inv_mass.size() == target.dim()) hs.inv_mass = warm.inv_mass;
    }
    int best = 0;
    for (int p = 1; p < l; ++p) {
      if (carried.models[static_cast<std::size_t>(p)].log_weight > carried.models[static_cast<std::size_t>(best)].log_weight) best = p;
    }
    target.discrete.prev = best;
    target.discrete.cur = best;
    HmcPoint point;
    point.q = target.initial_point();
    target.gibbs_models(point.q, rng);
    target.gibbs_clusters(point.q, rng);
    point.refresh(target);
    if (!std::isfinite(point.log_density)) {
      throw SamplerError("run_chain: initial log density not finite at step " + std::to_string(k));
    }

    detail::Adaptation adapt(hs, cfg.burn_in, target.dim(), cfg.adapt);
    StepSamples kept;
    std::vector<Eigen::VectorXd> z;
    std::vector<int> zm;
    double accepted = 0.0;
    for (int it = 0; it < cfg.n_iterations; ++it) {
      const HmcResult res = hmc_step(target, point, hs, rng);
      adapt.after_hmc(it, res.accept_prob, point.q);
      if (l > 1) target.gibbs_models(point.q, rng);
      target.gibbs_clusters(point.q, rng);
      point.refresh(target);
      if (it < cfg.burn_in) continue;
      accepted += res.accepted ? 1.0 : 0.0;
      const StepNatural nat = target.natural(point.q, target.discrete);
      kept.states.push_back(nat.x);
      kept.params.push_back(nat.theta);
      kept.models.push_back(ModelId::from_zero_based(target.discrete.cur));
      Eigen::VectorXd zz(n + np);
      zz.head(n) = nat.x;
      if (np > 0) zz.tail(np) = nat.theta;
      z.push_back(std::move(zz));
      zm.push_back(target.discrete.cur);
    }
    const int retained = cfg.n_iterations - cfg.burn_in;
    const double rate = accepted / retained;
    out.acceptance.push_back(rate);
    out.step_sizes.push_back(hs.step_size);
    out.cluster_counts.push_back(clusters);
    if (rate < 0.05) {
      out.warnings.push_back("step " + std::to_string(k) + ": acceptance rate " + std::to_string(rate) +
                             " below 0.05");
    }
    accepted_total += accepted;
    retained_total += retained;
    detail::summarize_step(kept, l, out);
    carried = CarriedPrior::from_samples(z, zm, l, n, np);
    warm = hs;
    if (cfg.keep_samples) out.samples.push_back(std::move(kept));
  }
  out.acceptance_rate = accepted_total / static_cast<double>(retained_total);
  return out;
}

// ---------------------------------------------------------------------------
// Full-trajectory chain (debug mode).

/// Initial chain state: prior mean propagated under model 1 with nominal
/// parameters, measurement components at their prior means.
inline ChainState initial_chain_state(const PosteriorContext& ctx, const std::vector<int>& cluster_counts) {
  const ModelBank& bank = *ctx.bank;
  ChainState cs;
  cs.initial_model = ModelId(1);
  cs.initial_state = ctx.prior_mean;
  cs.initial_param = ParamVec::Zero(bank.param_dim());
  StateVec x = ctx.prior_mean;
  for (int k = 1; k <= ctx.horizon(); ++k) {
    x = bank.transition(ModelId(1), ModelId(1)).mean(x);
    cs.states.push_back(x);
    cs.models.push_back(ModelId(1));
    cs.params.push_back(cs.initial_param);
    const NIWParams& prior = bank.niw_prior(ModelId(1));
    const int c = cluster_counts.empty() ? 1 : cluster_counts[static_cast<std::size_t>(k - 1)];
    MeasurementHierarchy h;
    h.cluster_count = c;
    h.weights.assign(static_cast<std::size_t>(c), 1.0 / c);
    const double denom = prior.nu - prior.dim() - 1.0 > 0.0 ? prior.nu - prior.dim() - 1.0 : 1.0;
    for (int i = 0; i < c; ++i) h.components.push_back({prior.mean, prior.psi / denom});
    h.assignments.assign(ctx.y(k).size(), 0);
    h.niw_prior = prior;
    cs.hierarchies.push_back(std::move(h));
  }
  return cs;
}

struct JointChainResult {
  PosteriorSummary summary;  // smoothing estimates E[x_k | Y_1..Y_K]
  ChainState final_state;
};

inline JointChainResult run_joint_chain(const MeasurementSet& y, const ModelBank& bank, const SamplerConfig& cfg,
                                        const StateVec& prior_mean, const Mat& prior_cov) {
  cfg.validate();
  const PosteriorContext ctx(bank, y, prior_mean, prior_cov, cfg.freeze_transition, cfg.freeze_measurement);
  std::vector<int> counts;
  for (const auto& ys : y) counts.push_back(cfg.freeze_measurement ? 1 : select_cluster_count(ys, cfg.cluster_candidates));
  ChainState cs = initial_chain_state(ctx, counts);
  RandomSource rng(cfg.seed);
  gibbs_cluster_update(cs, ctx, rng);
  const Eigen::Index dim = JointLayout(cs, ctx).size;
  HmcSettings hs = detail::initial_settings(cfg, dim);
  detail::Adaptation adapt(hs, cfg.burn_in, dim, cfg.adapt);
  std::vector<StepSamples> kept(y.size());
  double accepted = 0.0;
  for (int it = 0; it < cfg.n_iterations; ++it) {
    const HmcResult res = hmc_update(cs, hs, ctx, rng);
    adapt.after_hmc(it, res.accept_prob, pack(cs, ctx));
    gibbs_model_update(cs, ctx, rng);
    gibbs_cluster_update(cs, ctx, rng);
    if (it < cfg.burn_in) continue;
    accepted += res.accepted ? 1.0 : 0.0;
    for (int k = 1; k <= cs.horizon(); ++k) {
      auto& s = kept[static_cast<std::size_t>(k - 1)];
      s.states.push_back(cs.state_at(k));
      s.params.push_back(cs.param_at(k));
      s.models.push_back(cs.model_at(k));
    }
  }
  JointChainResult out;
  for (const auto& s : kept) detail::summarize_step(s, bank.model_count(), out.summary);
  out.summary.acceptance_rate = accepted / (cfg.n_iterations - cfg.burn_in);
  out.summary.acceptance.assign(y.size(), out.summary.acceptance_rate);
  if (cfg.keep_samples) out.summary.samples = std::move(kept);
  out.final_state = std::move(cs);
  return out;
}

// ---------------------------------------------------------------------------
// Posterior predictive of y_{k+1}.

/// Equal-weight mixture over retained samples and next models j' of
/// N(T(g(x)), H Q(theta) H^T + R_j'), with T linearized at g(x).
class PredictiveDensity {
 public:
  struct Component {
    double log_weight;
    Vec mean;
    Mat chol;
  };

  explicit PredictiveDensity(std::vector<Component> comps) : comps_(std::move(comps)) {
    expects(!comps_.empty(), "predictive density: no components");
  }

  double log_density(const ObsVec& y) const {
    double top = -std::numeric_limits<double>::infinity();
    std::vector<double> t(comps_.size());
    for (std::size_t i = 0; i < comps_.size(); ++i) {
      t[i] = comps_[i].log_weight + mvn_log_pdf_chol(y, comps_[i].mean, comps_[i].chol);
      top = std::max(top, t[i]);
    }
    if (!std::isfinite(top)) return top;
    double s = 0.0;
    for (double v : t) s += std::exp(v - top);
    return top + std::log(s);
  }

  Vec mean() const {
    Vec m = Vec::Zero(comps_.front().mean.size());
    for (const auto& c : comps_) m += std::exp(c.log_weight) * c.mean;
    return m;
  }

  const std::vector<Component>& components() const { return comps_; }

 private:
  std::vector<Component> comps_;
};

inline PredictiveDensity posterior_predictive(const StepSamples& samples, const ModelBank& bank) {
  expects(!samples.states.empty(), "posterior_predictive: no retained samples");
  const auto& jm = bank.jump_map();
  const double log_s = std::log(static_cast<double>(samples.states.size()));
  std::vector<PredictiveDensity::Component> comps;
  for (std::size_t i = 0; i < samples.states.size(); ++i) {
    const ModelId from = samples.models[i];
    for (int t = 0; t < bank.model_count(); ++t) {
      const ModelId to = ModelId::from_zero_based(t);
      const double p = jm.jump_prob(from, to);
      if (!(p > 0.0)) continue;
      const auto& kernel = bank.transition(from, to);
      const ParamVec& theta = samples.params[i];
      const ParamVec next_theta = theta.size() > 0 ? jm.forward(from, to, theta) : theta;
      const Vec g = kernel.mean(samples.states[i]);
      const auto& meas = bank.measurement(to);
      const Mat h = meas.jacobian(g);
      const Mat qc = kernel.scaled_chol(next_theta);
      const Mat hq = h * qc;
      const Mat cov = hq * hq.transpose() + meas.noise_cov();
      comps.push_back({std::log(p) - log_s, meas.predict(g), numerical_cholesky(cov, "posterior_predictive")});
    }
  }
  return PredictiveDensity(std::move(comps));
}

inline PredictiveDensity posterior_predictive(const PosteriorSummary& summary, const ModelBank& bank, int k) {
  expects(k >= 1 && k <= static_cast<int>(summary.samples.size()),
          "posterior_predictive: samples for step k were not retained");
  return posterior_predictive(summary.samples[static_cast<std::size_t>(k - 1)], bank);
}

}  // namespace bkt
