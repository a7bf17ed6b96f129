#pragma once

#include "bkt/core/error.hpp"
#include "bkt/core/random.hpp"
#include "bkt/core/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <optional>
#include <string>

namespace bkt {

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Lower Cholesky factor, or nullopt when `m` is not numerically positive definite.
inline std::optional<Mat> try_cholesky(const Mat& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return std::nullopt;
  if (!m.allFinite()) return std::nullopt;
  Eigen::LLT<Mat> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) return std::nullopt;
  Mat l = llt.matrixL();
  for (int i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) return std::nullopt;
  }
  return l;
}

inline bool is_positive_definite(const Mat& m) { return try_cholesky(m).has_value(); }

/// Cholesky factor of a covariance supplied at model-definition time.
inline Mat definition_cholesky(const Mat& m, const std::string& what) {
  auto l = try_cholesky(m);
  if (!l) throw ModelDefinitionError(what + ": covariance is not symmetric positive definite");
  return *l;
}

inline Mat numerical_cholesky(const Mat& m, const std::string& what) {
  auto l = try_cholesky(m);
  if (!l) throw NumericalError(what + ": matrix is not positive definite");
  return *l;
}

inline double log_det_from_cholesky(const Mat& chol) {
  return 2.0 * chol.diagonal().array().log().sum();
}

/// Whitened residual L^{-1}(x - mean).
inline Vec whiten(const Vec& x, const Vec& mean, const Mat& chol) {
  return chol.triangularView<Eigen::Lower>().solve(x - mean);
}

/// log N(x; mean, L L^T).
inline double mvn_log_pdf_chol(const Vec& x, const Vec& mean, const Mat& chol) {
  const Vec z = whiten(x, mean, chol);
  return -0.5 * z.squaredNorm() - chol.diagonal().array().log().sum() -
         0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

inline double mvn_log_pdf(const Vec& x, const Vec& mean, const Mat& cov) {
  return mvn_log_pdf_chol(x, mean, numerical_cholesky(cov, "mvn_log_pdf"));
}

/// Precision-weighted residual (L L^T)^{-1}(x - mean): the gradient of log N
/// with respect to the mean, and its negative with respect to x.
inline Vec precision_times(const Vec& residual, const Mat& chol) {
  const Vec z = chol.triangularView<Eigen::Lower>().solve(residual);
  return chol.transpose().triangularView<Eigen::Upper>().solve(z);
}

/// Gaussian with a fixed covariance evaluated at many residuals.
class FixedCovGaussian {
 public:
  explicit FixedCovGaussian(const Mat& chol)
      : inv_chol_(chol.triangularView<Eigen::Lower>().solve(Mat::Identity(chol.rows(), chol.cols()))),
        log_norm_(-chol.diagonal().array().log().sum() - 0.5 * static_cast<double>(chol.rows()) * kLog2Pi) {}

  double log_pdf(const Vec& residual) const {
    return log_norm_ - 0.5 * (inv_chol_.triangularView<Eigen::Lower>() * residual).squaredNorm();
  }

  /// Also writes Sigma^{-1} residual.
  double log_pdf(const Vec& residual, Vec& precision_residual) const {
    const Vec z = inv_chol_.triangularView<Eigen::Lower>() * residual;
    precision_residual = inv_chol_.transpose().triangularView<Eigen::Upper>() * z;
    return log_norm_ - 0.5 * z.squaredNorm();
  }

  const Mat& inverse_chol() const { return inv_chol_; }

 private:
  Mat inv_chol_;
  double log_norm_;
};

inline Vec sample_mvn_chol(const Vec& mean, const Mat& chol, RandomSource& rng) {
  return mean + chol.triangularView<Eigen::Lower>() * rng.standard_normal_small(static_cast<int>(mean.size()));
}

/// log Gamma_d(a), the multivariate gamma function.
inline double log_multivariate_gamma(int d, double a) {
  double out = 0.25 * d * (d - 1) * std::log(std::numbers::pi);
  for (int j = 0; j < d; ++j) out += std::lgamma(a - 0.5 * j);
  return out;
}

/// log IW(sigma; psi, nu) with E[sigma] = psi / (nu - d - 1).
inline double inverse_wishart_log_pdf_chol(const Mat& sigma_chol, const Mat& psi, double nu) {
  const int d = static_cast<int>(psi.rows());
  const Mat psi_chol = numerical_cholesky(psi, "inverse_wishart_log_pdf: psi");
  const Mat inv_l = sigma_chol.triangularView<Eigen::Lower>().solve(Mat::Identity(d, d));
  // tr(psi sigma^{-1}) = ||L_sigma^{-1} L_psi||_F^2
  const double trace = (inv_l * psi_chol).squaredNorm();
  return 0.5 * nu * log_det_from_cholesky(psi_chol) - 0.5 * nu * d * std::numbers::ln2 -
         log_multivariate_gamma(d, 0.5 * nu) - 0.5 * (nu + d + 1) * log_det_from_cholesky(sigma_chol) -
         0.5 * trace;
}

/// Sigma ~ IW(psi, nu) via the Bartlett decomposition of sigma^{-1} ~ W(psi^{-1}, nu).
inline Mat sample_inverse_wishart(const Mat& psi, double nu, RandomSource& rng) {
  const int d = static_cast<int>(psi.rows());
  const Mat psi_chol = numerical_cholesky(psi, "sample_inverse_wishart: psi");
  // W(psi^{-1}) scale factor: psi^{-1} = L_psi^{-T} L_psi^{-1}; any square root works,
  // use B = L_psi^{-T} so that B A A^T B^T ~ W(psi^{-1}, nu).
  Mat a = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(nu - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  // sigma = (B A A^T B^T)^{-1} = L_psi A^{-T} A^{-1} L_psi^T
  const Mat a_inv = a.triangularView<Eigen::Lower>().solve(Mat::Identity(d, d));
  const Mat f = psi_chol * a_inv.transpose();
  return symmetrize(f * f.transpose());
}

}  // namespace bkt
