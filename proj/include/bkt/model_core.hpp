#pragma once

// Domain types and probability kernels of the model-jump tracker: state
// transitions between motion models, the diffeomorphic parameter jump map,
// and the hierarchical Gaussian-mixture measurement model.

#include "bkt/core/error.hpp"
#include "bkt/core/gaussian.hpp"
#include "bkt/core/random.hpp"
#include "bkt/core/types.hpp"

#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace bkt {

using MeanMap = std::function<Vec(const Vec&)>;
using JacobianMap = std::function<Mat(const Vec&)>;

/// Linear mean map x -> A x with its constant Jacobian.
inline std::pair<MeanMap, JacobianMap> linear_map(const Mat& a) {
  return {[a](const Vec& x) -> Vec { return a * x; }, [a](const Vec&) -> Mat { return a; }};
}

/// x_k = g(x_{k-1}) + v, v ~ N(0, Q). Q is the nominal covariance; a
/// transition-parameter vector theta rescales it per coordinate group as
/// Q(theta) = D Q D with D_ii = exp(theta[group(i)] / 2).
class TransitionKernel {
 public:
  TransitionKernel(ModelId source, ModelId target, MeanMap mean_map, JacobianMap jacobian, Mat noise_cov,
                   std::vector<int> scale_groups = {})
      : source_(source),
        target_(target),
        mean_map_(std::move(mean_map)),
        jacobian_(std::move(jacobian)),
        noise_cov_(symmetrize(noise_cov)),
        scale_groups_(std::move(scale_groups)) {
    noise_chol_ = definition_cholesky(noise_cov_, "transition kernel " + std::to_string(source.index()) + "->" +
                                                      std::to_string(target.index()));
    if (!scale_groups_.empty() && static_cast<int>(scale_groups_.size()) != dim()) {
      throw ModelDefinitionError("transition kernel: scale_groups must have one entry per state coordinate");
    }
  }

  ModelId source() const { return source_; }
  ModelId target() const { return target_; }
  int dim() const { return static_cast<int>(noise_cov_.rows()); }

  Vec mean(const Vec& x) const { return mean_map_(x); }
  Mat jacobian(const Vec& x) const { return jacobian_(x); }
  const Mat& noise_cov() const { return noise_cov_; }
  const Mat& noise_chol() const { return noise_chol_; }
  const std::vector<int>& scale_groups() const { return scale_groups_; }

  /// Per-coordinate standard-deviation multipliers exp(theta[group(i)] / 2).
  Vec scale_factors(const ParamVec& theta) const {
    Vec d = Vec::Ones(dim());
    if (scale_groups_.empty() || theta.size() == 0) return d;
    for (int i = 0; i < dim(); ++i) d[i] = std::exp(0.5 * theta[scale_groups_[static_cast<std::size_t>(i)]]);
    return d;
  }

  /// Cholesky factor of Q(theta).
  Mat scaled_chol(const ParamVec& theta) const { return scale_factors(theta).asDiagonal() * noise_chol_; }

 private:
  ModelId source_;
  ModelId target_;
  MeanMap mean_map_;
  JacobianMap jacobian_;
  Mat noise_cov_;
  Mat noise_chol_;
  std::vector<int> scale_groups_;
};

/// y = T(x) + w, w ~ N(0, R). R is the nominal measurement noise of the model.
class MeasurementKernel {
 public:
  MeasurementKernel(ModelId model, MeanMap obs_map, JacobianMap obs_jacobian, Mat noise_cov)
      : model_(model), obs_map_(std::move(obs_map)), obs_jacobian_(std::move(obs_jacobian)),
        noise_cov_(symmetrize(noise_cov)) {
    noise_chol_ = definition_cholesky(noise_cov_, "measurement kernel " + std::to_string(model.index()));
  }

  ModelId model() const { return model_; }
  int obs_dim() const { return static_cast<int>(noise_cov_.rows()); }
  Vec predict(const Vec& x) const { return obs_map_(x); }
  Mat jacobian(const Vec& x) const { return obs_jacobian_(x); }
  const Mat& noise_cov() const { return noise_cov_; }
  const Mat& noise_chol() const { return noise_chol_; }

 private:
  ModelId model_;
  MeanMap obs_map_;
  JacobianMap obs_jacobian_;
  Mat noise_cov_;
  Mat noise_chol_;
};

/// Diffeomorphism between transition-parameter spaces of two models, paired
/// with the categorical model-jump probabilities J(j' -> j) and the Gaussian
/// parameter kernel mu(theta_j' , theta_j) = N(theta_j; forward(j', j, theta_j'), tau^2 I).
class JumpMap {
 public:
  using ParamMap = std::function<ParamVec(ModelId from, ModelId to, const ParamVec&)>;
  using LogJacobian = std::function<double(ModelId from, ModelId to, const ParamVec&)>;
  using ParamJacobian = std::function<Mat(ModelId from, ModelId to, const ParamVec&)>;

  /// `forward_jacobian` may be empty; central differences are used then.
  JumpMap(Eigen::MatrixXd jump_prob, int param_dim, double tau, ParamMap forward, ParamMap inverse,
          LogJacobian log_jacobian, ParamJacobian forward_jacobian = {})
      : jump_prob_(std::move(jump_prob)),
        param_dim_(param_dim),
        tau_(tau),
        forward_(std::move(forward)),
        inverse_(std::move(inverse)),
        log_jacobian_(std::move(log_jacobian)),
        forward_jacobian_(std::move(forward_jacobian)) {
    if (jump_prob_.rows() != jump_prob_.cols() || jump_prob_.rows() == 0) {
      throw ModelDefinitionError("jump map: jump probability matrix must be square and nonempty");
    }
    for (Eigen::Index r = 0; r < jump_prob_.rows(); ++r) {
      if ((jump_prob_.row(r).array() < 0.0).any() || std::abs(jump_prob_.row(r).sum() - 1.0) > 1e-12) {
        throw ModelDefinitionError("jump map: row " + std::to_string(r + 1) + " is not a probability vector");
      }
    }
    if (!(tau_ >= 0.0) || !std::isfinite(tau_)) throw ModelDefinitionError("jump map: tau must be >= 0");
    if (param_dim_ < 0 || param_dim_ > kMaxDim) throw ModelDefinitionError("jump map: bad parameter dimension");
  }

  /// Uniform rows 1/L with theta_j = P theta_j' + (anchor_j - anchor_j'); P = I and
  /// zero anchors give the identity mean.
  static JumpMap affine(int model_count, int param_dim, double tau, Mat p = {}, std::vector<ParamVec> anchors = {}) {
    if (p.size() == 0) p = Mat::Identity(param_dim, param_dim);
    if (anchors.empty()) anchors.assign(static_cast<std::size_t>(model_count), ParamVec::Zero(param_dim));
    if (p.rows() != param_dim || p.cols() != param_dim || static_cast<int>(anchors.size()) != model_count) {
      throw ModelDefinitionError("affine jump map: dimension mismatch");
    }
    Eigen::PartialPivLU<Mat> lu;
    if (param_dim > 0) lu.compute(p);
    if (param_dim > 0 && !(std::abs(lu.determinant()) > 0.0)) {
      throw ModelDefinitionError("affine jump map: P must be invertible");
    }
    const double log_det = param_dim > 0 ? std::log(std::abs(lu.determinant())) : 0.0;
    Eigen::MatrixXd rows = Eigen::MatrixXd::Constant(model_count, model_count, 1.0 / model_count);
    auto fwd = [p, anchors](ModelId from, ModelId to, const ParamVec& th) -> ParamVec {
      return p * th + anchors[static_cast<std::size_t>(to.zero_based())] -
             anchors[static_cast<std::size_t>(from.zero_based())];
    };
    auto inv = [lu, anchors](ModelId from, ModelId to, const ParamVec& th) -> ParamVec {
      if (th.size() == 0) return th;
      ParamVec shifted = th - anchors[static_cast<std::size_t>(to.zero_based())] +
                         anchors[static_cast<std::size_t>(from.zero_based())];
      return lu.solve(shifted);
    };
    auto lj = [log_det](ModelId, ModelId, const ParamVec&) { return log_det; };
    auto jac = [p](ModelId, ModelId, const ParamVec&) -> Mat { return p; };
    return JumpMap(std::move(rows), param_dim, tau, fwd, inv, lj, jac);
  }

  int model_count() const { return static_cast<int>(jump_prob_.rows()); }
  int param_dim() const { return param_dim_; }
  double tau() const { return tau_; }
  const Eigen::MatrixXd& jump_prob() const { return jump_prob_; }
  double jump_prob(ModelId from, ModelId to) const { return jump_prob_(from.zero_based(), to.zero_based()); }

  /// Deterministic part of h_{j',j}: (j', theta) -> (j, theta').
  ParamVec forward(ModelId from, ModelId to, const ParamVec& theta) const { return forward_(from, to, theta); }
  ParamVec inverse(ModelId from, ModelId to, const ParamVec& theta) const { return inverse_(from, to, theta); }
  double log_jacobian(ModelId from, ModelId to, const ParamVec& theta) const {
    return log_jacobian_(from, to, theta);
  }

  /// d forward / d theta.
  Mat forward_jacobian(ModelId from, ModelId to, const ParamVec& theta) const {
    if (forward_jacobian_) return forward_jacobian_(from, to, theta);
    Mat jac(param_dim_, param_dim_);
    for (int i = 0; i < param_dim_; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta[i]));
      ParamVec hi = theta, lo = theta;
      hi[i] += h;
      lo[i] -= h;
      jac.col(i) = (forward(from, to, hi) - forward(from, to, lo)) / (2.0 * h);
    }
    return jac;
  }

  /// log mu(theta_prev, theta_next) for the jump from -> to. With tau = 0 the
  /// kernel is a point mass and this returns 0 on its support, -inf elsewhere.
  double param_log_density(ModelId from, ModelId to, const ParamVec& theta_prev, const ParamVec& theta_next) const {
    if (param_dim_ == 0) return 0.0;
    const ParamVec mean = forward(from, to, theta_prev);
    if (tau_ == 0.0) {
      return (theta_next - mean).lpNorm<Eigen::Infinity>() == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    }
    const double z2 = (theta_next - mean).squaredNorm() / (tau_ * tau_);
    return -0.5 * z2 - param_dim_ * std::log(tau_) - 0.5 * param_dim_ * kLog2Pi;
  }

 private:
  Eigen::MatrixXd jump_prob_;
  int param_dim_;
  double tau_;
  ParamMap forward_;
  ParamMap inverse_;
  LogJacobian log_jacobian_;
  ParamJacobian forward_jacobian_;
};

struct NIWParams {
  Vec mean;
  double lambda = 1.0;
  Mat psi;
  double nu = 1.0;

  int dim() const { return static_cast<int>(mean.size()); }

  void validate() const {
    const int d = dim();
    if (d == 0 || psi.rows() != d || psi.cols() != d) throw ModelDefinitionError("NIW: dimension mismatch");
    if (!(lambda > 0.0)) throw ModelDefinitionError("NIW: lambda must be > 0");
    if (!(nu > d - 1)) throw ModelDefinitionError("NIW: nu must exceed dimension - 1");
    if (!is_positive_definite(psi)) throw ModelDefinitionError("NIW: psi must be positive definite");
  }
};

struct GMMComponentParams {
  Vec mean;
  Mat cov;
};

/// Per-step measurement parameters: weights pi ~ Dir(1/C, ..., 1/C),
/// assignments c_m ~ Cat(pi), components phi_l ~ NIW.
/// Assignments are stored 0-based (cluster l is index l - 1).
struct MeasurementHierarchy {
  int cluster_count = 1;
  std::vector<double> weights{1.0};
  std::vector<int> assignments;
  std::vector<GMMComponentParams> components;
  NIWParams niw_prior;

  void validate() const {
    expects(cluster_count >= 1, "hierarchy: cluster_count must be >= 1");
    expects(static_cast<int>(weights.size()) == cluster_count, "hierarchy: weights length != cluster_count");
    expects(static_cast<int>(components.size()) == cluster_count, "hierarchy: components length != cluster_count");
    double s = 0.0;
    for (double w : weights) {
      expects(w >= 0.0, "hierarchy: negative weight");
      s += w;
    }
    expects(std::abs(s - 1.0) <= 1e-12, "hierarchy: weights must sum to 1");
    for (int c : assignments) expects(c >= 0 && c < cluster_count, "hierarchy: assignment out of range");
  }

  /// A single centered component with covariance `cov`: the plain measurement equation.
  static MeasurementHierarchy single(const Mat& cov, NIWParams prior = {}) {
    MeasurementHierarchy h;
    h.components.push_back({Vec::Zero(cov.rows()), cov});
    h.niw_prior = std::move(prior);
    return h;
  }
};

/// Immutable registry of L models with their kernels, jump map and priors.
class ModelBank {
 public:
  struct Model {
    MeasurementKernel measurement;
    NIWParams niw_prior;
  };

  ModelBank(std::string name, std::vector<Model> models, std::vector<std::vector<TransitionKernel>> transitions,
            JumpMap jump_map, std::vector<std::string> state_labels, std::vector<std::string> obs_labels)
      : name_(std::move(name)),
        models_(std::move(models)),
        transitions_(std::move(transitions)),
        jump_map_(std::move(jump_map)),
        state_labels_(std::move(state_labels)),
        obs_labels_(std::move(obs_labels)) {
    validate();
  }

  const std::string& name() const { return name_; }
  int model_count() const { return static_cast<int>(models_.size()); }
  int state_dim() const { return static_cast<int>(state_labels_.size()); }
  int obs_dim() const { return static_cast<int>(obs_labels_.size()); }
  int param_dim() const { return jump_map_.param_dim(); }

  const Model& model(ModelId j) const { return models_.at(static_cast<std::size_t>(j.zero_based())); }
  const MeasurementKernel& measurement(ModelId j) const { return model(j).measurement; }
  const NIWParams& niw_prior(ModelId j) const { return model(j).niw_prior; }
  const TransitionKernel& transition(ModelId from, ModelId to) const {
    return transitions_.at(static_cast<std::size_t>(from.zero_based())).at(static_cast<std::size_t>(to.zero_based()));
  }
  const JumpMap& jump_map() const { return jump_map_; }
  double initial_log_prob() const { return -std::log(static_cast<double>(model_count())); }

  const std::vector<std::string>& state_labels() const { return state_labels_; }
  const std::vector<std::string>& obs_labels() const { return obs_labels_; }

 private:
  void validate() const;

  std::string name_;
  std::vector<Model> models_;
  std::vector<std::vector<TransitionKernel>> transitions_;
  JumpMap jump_map_;
  std::vector<std::string> state_labels_;
  std::vector<std::string> obs_labels_;
};

// ---------------------------------------------------------------------------
// Operations

/// g(x) + v with v ~ N(0, Q).
inline StateVec propagate_state(const StateVec& x, const TransitionKernel& kernel, RandomSource& rng) {
  if (x.size() != kernel.dim()) throw ConfigError("propagate_state: state dimension does not match kernel");
  return sample_mvn_chol(kernel.mean(x), kernel.noise_chol(), rng);
}

/// log N(x_next; g(x), Q).
inline double transition_log_density(const StateVec& x_next, const StateVec& x, const TransitionKernel& kernel) {
  expects(x.size() == kernel.dim() && x_next.size() == kernel.dim(), "transition_log_density: dimension mismatch");
  return mvn_log_pdf_chol(x_next, kernel.mean(x), kernel.noise_chol());
}

/// Samples j ~ J(j_prev -> .), then theta_j ~ mu(theta_prev, .).
inline std::pair<ModelId, ParamVec> jump_forward(ModelId j_prev, const ParamVec& theta_prev, const JumpMap& map,
                                                 RandomSource& rng) {
  const Eigen::VectorXd row = map.jump_prob().row(j_prev.zero_based()).transpose();
  const ModelId j = ModelId::from_zero_based(rng.categorical(std::span<const double>(row.data(), row.size())));
  ParamVec theta = map.forward(j_prev, j, theta_prev);
  if (map.tau() > 0.0) {
    for (int i = 0; i < theta.size(); ++i) theta[i] += map.tau() * rng.normal();
  }
  return {j, theta};
}

/// Max relative error of inverse(forward(theta)) over random (j', j, theta).
inline double jump_roundtrip_check(const JumpMap& map, int samples, RandomSource& rng) {
  expects(samples >= 1, "jump_roundtrip_check: samples must be >= 1");
  const int l = map.model_count();
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const ModelId from = ModelId::from_zero_based(static_cast<int>(rng.uniform() * l) % l);
    const ModelId to = ModelId::from_zero_based(static_cast<int>(rng.uniform() * l) % l);
    ParamVec theta(map.param_dim());
    for (int i = 0; i < theta.size(); ++i) theta[i] = 10.0 * rng.normal();
    const ParamVec back = map.inverse(from, to, map.forward(from, to, theta));
    if (back.size() != theta.size() || !back.allFinite()) return std::numeric_limits<double>::infinity();
    const double denom = std::max(theta.norm(), 1.0);
    worst = std::max(worst, (back - theta).norm() / denom);
  }
  return worst;
}

/// log sum_l pi_l N(y; T(x) + mu_l, Sigma_l).
inline double gmm_log_likelihood(const ObsVec& y, const StateVec& x, const MeasurementKernel& kernel,
                                 const MeasurementHierarchy& h) {
  const Vec predicted = kernel.predict(x);
  double top = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(h.components.size());
  for (std::size_t l = 0; l < h.components.size(); ++l) {
    const auto& comp = h.components[l];
    terms[l] = h.weights[l] > 0.0 ? std::log(h.weights[l]) + mvn_log_pdf(y, predicted + comp.mean, comp.cov)
                                  : -std::numeric_limits<double>::infinity();
    top = std::max(top, terms[l]);
  }
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - top);
  return top + std::log(acc);
}

/// Sigma ~ IW(psi, nu), mu ~ N(m, Sigma / lambda). Degenerate draws are retried.
inline GMMComponentParams niw_sample(const NIWParams& prior, RandomSource& rng, int max_retries = 16) {
  prior.validate();
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Mat sigma = sample_inverse_wishart(prior.psi, prior.nu, rng);
    auto chol = try_cholesky(sigma);
    if (!chol || !sigma.allFinite()) continue;
    Vec mu = sample_mvn_chol(prior.mean, *chol / std::sqrt(prior.lambda), rng);
    return {std::move(mu), std::move(sigma)};
  }
  throw NumericalError("niw_sample: inverse-Wishart draw not positive definite after retries");
}

/// log NIW(mu, Sigma; m, lambda, psi, nu).
inline double niw_log_density(const GMMComponentParams& phi, const NIWParams& prior) {
  auto chol = try_cholesky(phi.cov);
  if (!chol) throw std::domain_error("niw_log_density: covariance is not positive definite");
  const double log_iw = inverse_wishart_log_pdf_chol(*chol, prior.psi, prior.nu);
  const double log_n = mvn_log_pdf_chol(phi.mean, prior.mean, *chol / std::sqrt(prior.lambda));
  return log_iw + log_n;
}

/// Draws m_count observations around T(x) from the mixture.
inline std::vector<ObsVec> sample_measurements(const StateVec& x, const MeasurementKernel& kernel,
                                               const MeasurementHierarchy& h, int m_count, RandomSource& rng,
                                               std::vector<int>* assignments = nullptr) {
  expects(m_count >= 1, "sample_measurements: m_count must be >= 1");
  const Vec predicted = kernel.predict(x);
  std::vector<Mat> chols;
  chols.reserve(h.components.size());
  for (const auto& c : h.components) {
    // Zero-noise components are allowed here (simulation limit cases).
    auto l = try_cholesky(c.cov);
    chols.push_back(l ? *l : Mat::Zero(c.cov.rows(), c.cov.cols()));
  }
  std::vector<ObsVec> out;
  out.reserve(static_cast<std::size_t>(m_count));
  if (assignments) assignments->clear();
  for (int m = 0; m < m_count; ++m) {
    const int l = h.cluster_count == 1 ? 0 : rng.categorical(h.weights);
    const auto& comp = h.components[static_cast<std::size_t>(l)];
    out.push_back(sample_mvn_chol(predicted + comp.mean, chols[static_cast<std::size_t>(l)], rng));
    if (assignments) assignments->push_back(l);
  }
  return out;
}

inline void ModelBank::validate() const {
  const int l = model_count();
  if (l == 0) throw ModelDefinitionError("model bank: no models");
  if (state_dim() == 0 || state_dim() > kMaxDim) throw ModelDefinitionError("model bank: bad state dimension");
  if (obs_dim() == 0 || obs_dim() > kMaxDim) throw ModelDefinitionError("model bank: bad observation dimension");
  if (jump_map_.model_count() != l) throw ModelDefinitionError("model bank: jump map size != model count");
  if (static_cast<int>(transitions_.size()) != l) throw ModelDefinitionError("model bank: transitions not L x L");
  for (int a = 0; a < l; ++a) {
    const auto& row = transitions_[static_cast<std::size_t>(a)];
    if (static_cast<int>(row.size()) != l) throw ModelDefinitionError("model bank: transitions not L x L");
    for (int b = 0; b < l; ++b) {
      const auto& k = row[static_cast<std::size_t>(b)];
      if (k.dim() != state_dim()) throw ModelDefinitionError("model bank: transition dimension mismatch");
      if (k.source() != ModelId::from_zero_based(a) || k.target() != ModelId::from_zero_based(b)) {
        throw ModelDefinitionError("model bank: transition kernel registered under wrong model pair");
      }
      for (int g : k.scale_groups()) {
        if (g < 0 || g >= param_dim()) throw ModelDefinitionError("model bank: scale group outside parameter vector");
      }
    }
  }
  for (int j = 0; j < l; ++j) {
    const auto& m = models_[static_cast<std::size_t>(j)];
    if (m.measurement.obs_dim() != obs_dim()) throw ModelDefinitionError("model bank: measurement dimension mismatch");
    if (m.measurement.model() != ModelId::from_zero_based(j)) {
      throw ModelDefinitionError("model bank: measurement kernel registered under wrong model");
    }
    m.niw_prior.validate();
    if (m.niw_prior.dim() != obs_dim()) throw ModelDefinitionError("model bank: NIW dimension mismatch");
  }
  RandomSource rng(0x5eedULL);
  if (jump_roundtrip_check(jump_map_, 1000, rng) > 1e-8) {
    throw ModelDefinitionError("model bank: invalid jump map (inverse(forward(theta)) != theta)");
  }
}

}  // namespace bkt
