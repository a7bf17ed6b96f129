#pragma once

// Per-step target of the sequential sampler. The chain at step k runs over
// (M_{k-1}, x_{k-1}, theta_{k-1}) drawn from the carried prior of step k - 1,
// the jump to (M_k, theta_k), the new state x_k, and the measurement hierarchy
// of step k. Continuous variables are expressed in whitened coordinates so that
// a Gibbs move on the model indices transports them consistently:
//
//   (x_{k-1}, theta_{k-1}) = m_p + L_p u0
//   theta_k = F_pj(theta_{k-1}) + tau u_theta
//   x_k = g_pj(x_{k-1}) + D(theta_k) L_pj u_x
//   Sigma_l = B_j S_l B_j^T,  S_l = L_l L_l^T (log-Cholesky eta_l),  B_j B_j^T = Psi_j / (nu_j - d - 1)
//   mu_l = m_j + B_j L_l v_l / sqrt(lambda_j)

#include "bkt/core/error.hpp"
#include "bkt/core/gaussian.hpp"
#include "bkt/core/random.hpp"
#include "bkt/inference/posterior.hpp"
#include "bkt/model_core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace bkt {

/// Gaussian approximation of p(x_{k-1}, theta_{k-1}, M_{k-1} = p | Y_{1:k-1}).
struct CarriedPrior {
  struct Component {
    double log_weight = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd mean;
    Eigen::MatrixXd chol;
  };

  int state_dim = 0;
  int param_dim = 0;
  std::vector<Component> models;  // indexed by zero-based model

  /// x_0 ~ N(mean, cov) under every model with P(M_0) uniform; theta_0 pinned at 0.
  static CarriedPrior initial(const ModelBank& bank, const StateVec& mean, const Mat& cov, int param_dim) {
    CarriedPrior out;
    out.state_dim = bank.state_dim();
    out.param_dim = param_dim;
    const int nz = out.state_dim + param_dim;
    Component c;
    c.log_weight = bank.initial_log_prob();
    c.mean = Eigen::VectorXd::Zero(nz);
    c.mean.head(out.state_dim) = mean;
    c.chol = Eigen::MatrixXd::Zero(nz, nz);
    c.chol.topLeftCorner(out.state_dim, out.state_dim) = numerical_cholesky(cov, "x0 prior");
    for (int i = out.state_dim; i < nz; ++i) c.chol(i, i) = 1e-6;
    out.models.assign(static_cast<std::size_t>(bank.model_count()), c);
    return out;
  }

  /// Moment-matched per-model Gaussians from retained samples z = (x, theta).
  /// Per-model covariances are shrunk toward the pooled covariance with weight
  /// dim + 2 pseudo-samples.
  static CarriedPrior from_samples(const std::vector<Eigen::VectorXd>& z, const std::vector<int>& model, int model_count,
                                   int state_dim, int param_dim) {
    expects(!z.empty() && z.size() == model.size(), "carried prior: empty or inconsistent samples");
    CarriedPrior out;
    out.state_dim = state_dim;
    out.param_dim = param_dim;
    const int nz = state_dim + param_dim;
    const double total = static_cast<double>(z.size());

    auto moments = [&](int which, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
      mean = Eigen::VectorXd::Zero(nz);
      cov = Eigen::MatrixXd::Zero(nz, nz);
      double n = 0.0;
      for (std::size_t s = 0; s < z.size(); ++s) {
        if (which >= 0 && model[s] != which) continue;
        mean += z[s];
        n += 1.0;
      }
      if (n == 0.0) return 0.0;
      mean /= n;
      for (std::size_t s = 0; s < z.size(); ++s) {
        if (which >= 0 && model[s] != which) continue;
        const Eigen::VectorXd d = z[s] - mean;
        cov.noalias() += d * d.transpose();
      }
      if (n > 1.0) cov /= (n - 1.0);
      return n;
    };

    Eigen::VectorXd pooled_mean;
    Eigen::MatrixXd pooled_cov;
    moments(-1, pooled_mean, pooled_cov);
    const double kappa = nz + 2.0;
    out.models.resize(static_cast<std::size_t>(model_count));
    for (int j = 0; j < model_count; ++j) {
      Eigen::VectorXd mean;
      Eigen::MatrixXd cov;
      const double n = moments(j, mean, cov);
      if (n == 0.0) continue;
      Eigen::MatrixXd blended = n >= 2.0 ? ((n * cov + kappa * pooled_cov) / (n + kappa)).eval() : pooled_cov;
      for (int i = 0; i < nz; ++i) blended(i, i) += 1e-9 * pooled_cov(i, i) + 1e-12;
      Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (blended + blended.transpose()));
      if (llt.info() != Eigen::Success) throw NumericalError("carried prior: covariance not positive definite");
      auto& c = out.models[static_cast<std::size_t>(j)];
      c.log_weight = std::log(n / total);
      c.mean = mean;
      c.chol = llt.matrixL();
    }
    return out;
  }
};

/// Discrete variables of the step chain (zero-based model indices).
struct StepDiscrete {
  int prev = 0;
  int cur = 0;
  std::vector<int> assignments;
  std::vector<double> weights;
};

/// Natural-coordinate values of a step-chain point.
struct StepNatural {
  StateVec x_prev;
  ParamVec theta_prev;
  ParamVec theta;
  StateVec x;
  std::vector<GMMComponentParams> components;
};

class StepTarget {
 public:
  StepTarget(const ModelBank& bank, const std::vector<ObsVec>& ys, const CarriedPrior& prior, int clusters,
             bool freeze_transition, bool freeze_measurement)
      : bank_(&bank), ys_(&ys), prior_(&prior), clusters_(clusters), freeze_measurement_(freeze_measurement) {
    expects(clusters >= 1, "step target: clusters must be >= 1");
    n_ = bank.state_dim();
    np_ = freeze_transition ? 0 : bank.param_dim();
    expects(prior.state_dim == n_ && prior.param_dim == np_, "step target: carried prior dimension mismatch");
    tau_ = bank.jump_map().tau();
    nut_ = (np_ > 0 && tau_ > 0.0) ? np_ : 0;
    dy_ = bank.obs_dim();
    tri_ = tri_size(dy_);
    off_ut_ = n_ + np_;
    off_ux_ = off_ut_ + nut_;
    off_comp_ = off_ux_ + n_;
    dim_ = off_comp_ + (freeze_measurement_ ? 0 : clusters_ * (dy_ + tri_));

    const int l = bank.model_count();
    for (int j = 0; j < l; ++j) {
      const NIWParams& p = bank.niw_prior(ModelId::from_zero_based(j));
      ModelPrior mp;
      mp.c = p.nu - dy_ - 1.0 > 0.0 ? p.nu - dy_ - 1.0 : 1.0;
      mp.b = numerical_cholesky(p.psi / mp.c, "NIW psi");
      mp.mean = p.mean;
      mp.sqrt_lambda = std::sqrt(p.lambda);
      mp.nu = p.nu;
      mp.iw_const = 0.5 * p.nu * dy_ * std::log(mp.c) - 0.5 * p.nu * dy_ * std::numbers::ln2 -
                    log_multivariate_gamma(dy_, 0.5 * p.nu);
      model_priors_.push_back(mp);
    }
    discrete.assignments.assign(ys.size(), 0);
    discrete.weights.assign(static_cast<std::size_t>(clusters_), 1.0 / clusters_);
  }

  int dim() const { return dim_; }
  int clusters() const { return clusters_; }
  int param_dim() const { return np_; }

  StepDiscrete discrete;

  double operator()(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const { return log_density(q, discrete, grad); }

  /// Starting point: prior means of every whitened block, S = I.
  Eigen::VectorXd initial_point() const { return Eigen::VectorXd::Zero(dim_); }

  /// Log target with all constants kept.
  double log_density(const Eigen::VectorXd& q, const StepDiscrete& d, Eigen::VectorXd* grad) const {
    const double inf = std::numeric_limits<double>::infinity();
    expects(q.size() == dim_, "step target: coordinate vector size mismatch");
    const auto& carried = prior_->models[static_cast<std::size_t>(d.prev)];
    const ModelId prev = ModelId::from_zero_based(d.prev);
    const ModelId cur = ModelId::from_zero_based(d.cur);
    const double jp = bank_->jump_map().jump_prob(prev, cur);
    if (!std::isfinite(carried.log_weight) || !(jp > 0.0)) return -inf;
    if (grad) grad->setZero(dim_);

    double out = carried.log_weight + std::log(jp);
    const int gauss_dims = n_ + np_ + nut_ + n_;
    out += -0.5 * q.head(gauss_dims).squaredNorm() - 0.5 * gauss_dims * kLog2Pi;
    if (grad) grad->head(gauss_dims) = -q.head(gauss_dims);

    // Forward map of the dynamic block.
    const Eigen::VectorXd z0 = carried.mean + carried.chol.triangularView<Eigen::Lower>() * q.head(n_ + np_);
    const Vec x_prev = z0.head(n_);
    const ParamVec theta_prev = z0.segment(n_, np_);
    const auto& jm = bank_->jump_map();
    ParamVec theta = np_ > 0 ? jm.forward(prev, cur, theta_prev) : ParamVec();
    if (nut_ > 0) theta += tau_ * q.segment(off_ut_, nut_);
    const auto& kernel = bank_->transition(prev, cur);
    const Vec dscale = kernel.scale_factors(theta);
    const Vec lux = kernel.noise_chol().triangularView<Eigen::Lower>() * Vec(q.segment(off_ux_, n_));
    const Vec step = dscale.cwiseProduct(lux);
    const Vec x = kernel.mean(x_prev) + step;

    const auto& meas = bank_->measurement(cur);
    const Vec predicted = meas.predict(x);
    Vec g_pred = Vec::Zero(dy_);
    const auto& ys = *ys_;

    if (freeze_measurement_) {
      const FixedCovGaussian noise(meas.noise_chol());
      Vec a;
      for (const auto& y : ys) {
        if (grad) {
          out += noise.log_pdf(y - predicted, a);
          g_pred += a;
        } else {
          out += noise.log_pdf(y - predicted);
        }
      }
    } else {
      const ModelPrior& mp = model_priors_[static_cast<std::size_t>(d.cur)];
      out += detail::dirichlet_log_pdf(d.weights, 1.0 / clusters_);
      std::vector<Mat> kc(static_cast<std::size_t>(clusters_));
      std::vector<Mat> lc(static_cast<std::size_t>(clusters_));
      std::vector<Vec> v(static_cast<std::size_t>(clusters_));
      std::vector<Vec> mu(static_cast<std::size_t>(clusters_));
      std::vector<Mat> g_sigma(static_cast<std::size_t>(clusters_), Mat::Zero(dy_, dy_));
      std::vector<Vec> g_mu(static_cast<std::size_t>(clusters_), Vec::Zero(dy_));
      for (int l = 0; l < clusters_; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const int off = off_comp_ + l * (dy_ + tri_);
        v[li] = q.segment(off, dy_);
        const double* eta = q.data() + off + dy_;
        lc[li] = cholesky_from_log(eta, dy_);
        kc[li] = mp.b * lc[li];
        mu[li] = mp.mean + kc[li] * v[li] / mp.sqrt_lambda;
        // log IW(S; c I, nu) + log |dS/d eta| - |v|^2 / 2
        const Mat inv_l = lc[li].triangularView<Eigen::Lower>().solve(Mat::Identity(dy_, dy_));
        double sum_eta_diag = 0.0;
        for (int i = 0; i < dy_; ++i) sum_eta_diag += eta[tri_index(i, i)];
        out += mp.iw_const - (mp.nu + dy_ + 1) * sum_eta_diag - 0.5 * mp.c * inv_l.squaredNorm();
        out += log_cholesky_log_jacobian(eta, dy_);
        out += -0.5 * v[li].squaredNorm() - 0.5 * dy_ * kLog2Pi;
        if (grad) grad->segment(off, dy_) -= v[li];
      }
      std::vector<FixedCovGaussian> comp_pdf;
      std::vector<double> log_w;
      for (int l = 0; l < clusters_; ++l) {
        comp_pdf.emplace_back(kc[static_cast<std::size_t>(l)]);
        log_w.push_back(std::log(d.weights[static_cast<std::size_t>(l)]));
      }
      Vec a;
      for (std::size_t m = 0; m < ys.size(); ++m) {
        const auto c = static_cast<std::size_t>(d.assignments[m]);
        if (!grad) {
          out += log_w[c] + comp_pdf[c].log_pdf(ys[m] - predicted - mu[c]);
        } else {
          out += log_w[c] + comp_pdf[c].log_pdf(ys[m] - predicted - mu[c], a);
          g_pred += a;
          g_mu[c] += a;
          g_sigma[c] += 0.5 * a * a.transpose();
        }
      }
      if (grad) {
        std::vector<int> counts(static_cast<std::size_t>(clusters_), 0);
        for (int c : d.assignments) ++counts[static_cast<std::size_t>(c)];
        for (int l = 0; l < clusters_; ++l) {
          const auto li = static_cast<std::size_t>(l);
          const int off = off_comp_ + l * (dy_ + tri_);
          const Mat& inv_k = comp_pdf[li].inverse_chol();
          g_sigma[li] -= 0.5 * counts[li] * (inv_k.transpose() * inv_k);
          // d/dv
          grad->segment(off, dy_) += kc[li].transpose() * g_mu[li] / mp.sqrt_lambda;
          // d/dL through Sigma = K K^T, mu = m + K v / sqrt(lambda), and c tr(S^{-1}).
          const Mat inv_l = lc[li].triangularView<Eigen::Lower>().solve(Mat::Identity(dy_, dy_));
          const Mat g_l = mp.b.transpose() * (2.0 * g_sigma[li] * kc[li] +
                                              g_mu[li] * v[li].transpose() / mp.sqrt_lambda) +
                          mp.c * inv_l.transpose() * inv_l * inv_l.transpose();
          double* out_eta = grad->data() + off + dy_;
          for (int i = 0; i < dy_; ++i) {
            for (int j = 0; j <= i; ++j) {
              const int t = tri_index(i, j);
              out_eta[t] += i == j ? g_l(i, i) * lc[li](i, i) - (mp.nu + dy_ + 1) + (dy_ - i + 1) : g_l(i, j);
            }
          }
        }
      }
    }

    if (grad) {
      const Vec g_x = meas.jacobian(x).transpose() * g_pred;
      // u_x
      grad->segment(off_ux_, n_) += kernel.noise_chol().transpose() * dscale.cwiseProduct(g_x);
      // theta_k through D(theta_k)
      ParamVec g_theta = ParamVec::Zero(np_);
      if (np_ > 0 && !kernel.scale_groups().empty()) {
        for (int i = 0; i < n_; ++i) g_theta[kernel.scale_groups()[static_cast<std::size_t>(i)]] += 0.5 * g_x[i] * step[i];
      }
      if (nut_ > 0) grad->segment(off_ut_, nut_) += tau_ * g_theta;
      // u0 through (x_{k-1}, theta_{k-1})
      Eigen::VectorXd g_z0(n_ + np_);
      g_z0.head(n_) = kernel.jacobian(x_prev).transpose() * g_x;
      if (np_ > 0) g_z0.tail(np_) = jm.forward_jacobian(prev, cur, theta_prev).transpose() * g_theta;
      grad->head(n_ + np_) += carried.chol.transpose() * g_z0;
    }
    return out;
  }

  StepNatural natural(const Eigen::VectorXd& q, const StepDiscrete& d) const {
    StepNatural nat;
    const auto& carried = prior_->models[static_cast<std::size_t>(d.prev)];
    const ModelId prev = ModelId::from_zero_based(d.prev);
    const ModelId cur = ModelId::from_zero_based(d.cur);
    const Eigen::VectorXd z0 = carried.mean + carried.chol.triangularView<Eigen::Lower>() * q.head(n_ + np_);
    nat.x_prev = z0.head(n_);
    nat.theta_prev = z0.segment(n_, np_);
    nat.theta = np_ > 0 ? bank_->jump_map().forward(prev, cur, nat.theta_prev) : ParamVec();
    if (nut_ > 0) nat.theta += tau_ * q.segment(off_ut_, nut_);
    const auto& kernel = bank_->transition(prev, cur);
    nat.x = kernel.mean(nat.x_prev) +
            kernel.scale_factors(nat.theta).cwiseProduct(kernel.noise_chol() * Vec(q.segment(off_ux_, n_)));
    if (!freeze_measurement_) {
      const ModelPrior& mp = model_priors_[static_cast<std::size_t>(d.cur)];
      for (int l = 0; l < clusters_; ++l) {
        const int off = off_comp_ + l * (dy_ + tri_);
        const Mat k = mp.b * cholesky_from_log(q.data() + off + dy_, dy_);
        nat.components.push_back({mp.mean + k * Vec(q.segment(off, dy_)) / mp.sqrt_lambda, k * k.transpose()});
      }
    }
    return nat;
  }

  /// Joint Gibbs draw of (M_{k-1}, M_k) at fixed whitened coordinates.
  /// Returns the conditional probabilities over pairs (row-major prev * L + cur).
  std::vector<double> gibbs_models(const Eigen::VectorXd& q, RandomSource& rng) {
    const int l = bank_->model_count();
    std::vector<double> logw(static_cast<std::size_t>(l * l), -std::numeric_limits<double>::infinity());
    StepDiscrete probe = discrete;
    for (int p = 0; p < l; ++p) {
      if (!std::isfinite(prior_->models[static_cast<std::size_t>(p)].log_weight)) continue;
      for (int j = 0; j < l; ++j) {
        probe.prev = p;
        probe.cur = j;
        const double lw = log_density(q, probe, nullptr);
        logw[static_cast<std::size_t>(p * l + j)] = std::isnan(lw) ? -std::numeric_limits<double>::infinity() : lw;
      }
    }
    const int pick = rng.categorical_log(logw);
    discrete.prev = pick / l;
    discrete.cur = pick % l;
    return logw;
  }

  /// Assignments from their categorical conditionals, then pi from Dir(1/C + n).
  void gibbs_clusters(const Eigen::VectorXd& q, RandomSource& rng) {
    if (freeze_measurement_) return;
    const StepNatural nat = natural(q, discrete);
    MeasurementHierarchy h;
    h.cluster_count = clusters_;
    h.weights = discrete.weights;
    h.components = nat.components;
    const Vec predicted = bank_->measurement(ModelId::from_zero_based(discrete.cur)).predict(nat.x);
    resample_assignments(h, *ys_, predicted, rng);
    resample_weights(h, rng);
    discrete.assignments = std::move(h.assignments);
    discrete.weights = std::move(h.weights);
  }

 private:
  struct ModelPrior {
    Mat b;
    double c = 1.0;
    Vec mean;
    double sqrt_lambda = 1.0;
    double nu = 1.0;
    double iw_const = 0.0;
  };

  static int tri_index(int i, int j) { return i * (i + 1) / 2 + j; }

  const ModelBank* bank_;
  const std::vector<ObsVec>* ys_;
  const CarriedPrior* prior_;
  int clusters_;
  bool freeze_measurement_;
  int n_ = 0, np_ = 0, nut_ = 0, dy_ = 0, tri_ = 0;
  double tau_ = 0.0;
  int off_ut_ = 0, off_ux_ = 0, off_comp_ = 0, dim_ = 0;
  std::vector<ModelPrior> model_priors_;
};

}  // namespace bkt
