#pragma once

// Kalman-filter baseline: single-model (E)KF recursions and a static
// multiple-model bank combined by cumulative predictive likelihood.

#include "bkt/core/error.hpp"
#include "bkt/core/gaussian.hpp"
#include "bkt/model_core.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <vector>

namespace bkt {

struct KalmanModel {
  Mat A, C, Q, R;
  Vec x0;
  Mat P0;

  void validate() const {
    const auto n = A.rows();
    expects(A.cols() == n && C.cols() == n && Q.rows() == n && P0.rows() == n && x0.size() == n &&
                R.rows() == C.rows(),
            "KalmanModel: inconsistent dimensions");
    if (!is_positive_definite(Q) || !is_positive_definite(R) || !is_positive_definite(P0)) {
      throw ModelDefinitionError("KalmanModel: Q, R and P0 must be positive definite");
    }
  }
};

/// Possibly nonlinear model filtered by first-order linearization.
struct FilterModel {
  MeanMap f;
  JacobianMap f_jacobian;
  Mat Q;
  MeanMap h;
  JacobianMap h_jacobian;
  Mat R;
  Vec x0;
  Mat P0;

  static FilterModel from(const KalmanModel& m) {
    auto [f, fj] = linear_map(m.A);
    auto [h, hj] = linear_map(m.C);
    return {f, fj, m.Q, h, hj, m.R, m.x0, m.P0};
  }
};

struct KalmanTrack {
  std::vector<StateVec> means;
  std::vector<Mat> covs;
  std::vector<double> loglik;  // log N(y_k; predicted observation, S_k)
};

/// One observation per step.
inline KalmanTrack ekf_filter(const FilterModel& model, const std::vector<ObsVec>& y) {
  KalmanTrack out;
  Vec x = model.x0;
  Mat p = model.P0;
  const auto n = x.size();
  for (const auto& yk : y) {
    const Mat fj = model.f_jacobian(x);
    x = model.f(x);
    p = symmetrize(fj * p * fj.transpose() + model.Q);
    const Mat hj = model.h_jacobian(x);
    const Vec innov = yk - model.h(x);
    Mat s = symmetrize(hj * p * hj.transpose() + model.R);
    auto chol = try_cholesky(s);
    if (!chol) {
      s.diagonal().array() += 1e-9;
      chol = try_cholesky(s);
      if (!chol) throw NumericalError("kf_filter: innovation covariance not positive definite");
    }
    out.loglik.push_back(mvn_log_pdf_chol(yk, model.h(x), *chol));
    // K = P H^T S^{-1}
    const Mat pht = p * hj.transpose();
    const Mat gain = chol->transpose().triangularView<Eigen::Upper>().solve(
                         chol->triangularView<Eigen::Lower>().solve(pht.transpose()))
                         .transpose();
    x = x + gain * innov;
    // Joseph form keeps P symmetric positive semidefinite.
    const Mat ikh = Mat::Identity(n, n) - gain * hj;
    p = symmetrize(ikh * p * ikh.transpose() + gain * model.R * gain.transpose());
    out.means.push_back(x);
    out.covs.push_back(p);
  }
  return out;
}

inline KalmanTrack kf_filter(const KalmanModel& model, const std::vector<ObsVec>& y) {
  model.validate();
  return ekf_filter(FilterModel::from(model), y);
}

/// First measurement of each step; the baseline operates on these when M_k > 1.
inline std::vector<ObsVec> first_measurements(const std::vector<std::vector<ObsVec>>& y) {
  std::vector<ObsVec> out;
  out.reserve(y.size());
  for (const auto& ys : y) {
    expects(!ys.empty(), "first_measurements: empty measurement set");
    out.push_back(ys.front());
  }
  return out;
}

struct BankTrack {
  std::vector<StateVec> estimates;
  std::vector<std::vector<double>> weights;  // per step, per model
  std::vector<ModelId> model_map;            // argmax weight (ties to the smaller index)
  std::vector<KalmanTrack> tracks;
};

inline BankTrack kf_bank_track(const std::vector<FilterModel>& models, const std::vector<ObsVec>& y) {
  expects(!models.empty(), "kf_bank_track: empty bank");
  BankTrack out;
  for (const auto& m : models) out.tracks.push_back(ekf_filter(m, y));
  const std::size_t l = models.size();
  std::vector<double> cum(l, 0.0);
  for (std::size_t k = 0; k < y.size(); ++k) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < l; ++j) {
      cum[j] += out.tracks[j].loglik[k];
      top = std::max(top, cum[j]);
    }
    std::vector<double> w(l);
    double s = 0.0;
    for (std::size_t j = 0; j < l; ++j) s += (w[j] = std::exp(cum[j] - top));
    Vec est = Vec::Zero(out.tracks[0].means[k].size());
    std::size_t best = 0;
    for (std::size_t j = 0; j < l; ++j) {
      w[j] /= s;
      est += w[j] * out.tracks[j].means[k];
      if (w[j] > w[best]) best = j;
    }
    out.estimates.push_back(est);
    out.model_map.push_back(ModelId::from_zero_based(static_cast<int>(best)));
    out.weights.push_back(std::move(w));
  }
  return out;
}

inline BankTrack kf_bank_track(const std::vector<KalmanModel>& models, const std::vector<ObsVec>& y) {
  std::vector<FilterModel> fm;
  for (const auto& m : models) {
    m.validate();
    fm.push_back(FilterModel::from(m));
  }
  return kf_bank_track(fm, y);
}

/// Per-model filters of a bank: model j uses the transition into j averaged
/// over a uniform previous model (mean map, Jacobian and noise), and the
/// nominal measurement model of j. For a bank whose dynamics do not depend on
/// the previous model this is the exact Kalman model of j.
inline std::vector<FilterModel> bank_filter_models(const ModelBank& bank, const StateVec& x0, const Mat& p0) {
  const int l = bank.model_count();
  std::vector<FilterModel> out;
  for (int t = 0; t < l; ++t) {
    const ModelId to = ModelId::from_zero_based(t);
    Mat q = Mat::Zero(bank.state_dim(), bank.state_dim());
    for (int s = 0; s < l; ++s) q += bank.transition(ModelId::from_zero_based(s), to).noise_cov();
    q /= l;
    const ModelBank* b = &bank;
    auto f = [b, to, l](const Vec& x) -> Vec {
      Vec acc = Vec::Zero(x.size());
      for (int s = 0; s < l; ++s) acc += b->transition(ModelId::from_zero_based(s), to).mean(x);
      return acc / l;
    };
    auto fj = [b, to, l](const Vec& x) -> Mat {
      Mat acc = Mat::Zero(x.size(), x.size());
      for (int s = 0; s < l; ++s) acc += b->transition(ModelId::from_zero_based(s), to).jacobian(x);
      return acc / l;
    };
    const auto& meas = bank.measurement(to);
    auto h = [b, to](const Vec& x) -> Vec { return b->measurement(to).predict(x); };
    auto hj = [b, to](const Vec& x) -> Mat { return b->measurement(to).jacobian(x); };
    out.push_back({f, fj, q, h, hj, meas.noise_cov(), x0, p0});
  }
  return out;
}

}  // namespace bkt
