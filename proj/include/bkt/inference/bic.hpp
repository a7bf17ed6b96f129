#pragma once

// Cluster-count selection for the measurement mixture: EM fit of a full-covariance
// Gaussian mixture per candidate count, scored by BIC.

#include "bkt/core/error.hpp"
#include "bkt/core/gaussian.hpp"
#include "bkt/core/types.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace bkt {

struct GmmFit {
  int clusters = 1;
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Mat> covs;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

inline int gmm_parameter_count(int clusters, int dim) {
  return clusters - 1 + clusters * (dim + dim * (dim + 1) / 2);
}

inline double bic_score(double log_likelihood, int clusters, int dim, int n_points) {
  return -2.0 * log_likelihood + gmm_parameter_count(clusters, dim) * std::log(static_cast<double>(n_points));
}

/// EM with deterministic farthest-point initialisation in standardized
/// coordinates. A small diagonal floor keeps component covariances PD.
inline GmmFit fit_gmm_em(const std::vector<ObsVec>& data, int clusters, int max_iter = 200, double tol = 1e-8) {
  expects(!data.empty() && clusters >= 1, "fit_gmm_em: empty data or bad cluster count");
  const int n = static_cast<int>(data.size());
  const int d = static_cast<int>(data.front().size());

  Vec mean = Vec::Zero(d);
  for (const auto& y : data) mean += y;
  mean /= n;
  Mat pooled = Mat::Zero(d, d);
  for (const auto& y : data) pooled += (y - mean) * (y - mean).transpose();
  pooled /= n;
  Vec floor(d);
  for (int i = 0; i < d; ++i) floor[i] = 1e-6 * pooled(i, i) + 1e-12;
  Vec scale(d);
  for (int i = 0; i < d; ++i) scale[i] = std::sqrt(pooled(i, i) + floor[i]);

  GmmFit fit;
  fit.clusters = clusters;
  auto dist2 = [&](const Vec& a, const Vec& b) { return (a - b).cwiseQuotient(scale).squaredNorm(); };
  std::vector<int> centers;
  int first = 0;
  for (int i = 1; i < n; ++i) {
    if (dist2(data[static_cast<std::size_t>(i)], mean) < dist2(data[static_cast<std::size_t>(first)], mean)) first = i;
  }
  centers.push_back(first);
  while (static_cast<int>(centers.size()) < clusters) {
    int best = 0;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      double dmin = std::numeric_limits<double>::infinity();
      for (int c : centers) dmin = std::min(dmin, dist2(data[static_cast<std::size_t>(i)], data[static_cast<std::size_t>(c)]));
      if (dmin > best_d) {
        best_d = dmin;
        best = i;
      }
    }
    centers.push_back(best);
  }
  Mat init_cov = pooled / std::max(1, clusters * clusters);
  init_cov.diagonal() += floor;
  for (int c : centers) {
    fit.means.push_back(data[static_cast<std::size_t>(c)]);
    fit.covs.push_back(init_cov);
    fit.weights.push_back(1.0 / clusters);
  }

  Eigen::MatrixXd resp(n, clusters);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    fit.iterations = it + 1;
    // E step
    std::vector<Mat> chols;
    for (const auto& c : fit.covs) chols.push_back(numerical_cholesky(c, "fit_gmm_em"));
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      double top = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < clusters; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        resp(i, c) = fit.weights[ci] > 0.0
                         ? std::log(fit.weights[ci]) + mvn_log_pdf_chol(data[static_cast<std::size_t>(i)], fit.means[ci], chols[ci])
                         : -std::numeric_limits<double>::infinity();
        top = std::max(top, resp(i, c));
      }
      double s = 0.0;
      for (int c = 0; c < clusters; ++c) s += (resp(i, c) = std::exp(resp(i, c) - top));
      resp.row(i) /= s;
      ll += top + std::log(s);
    }
    fit.log_likelihood = ll;
    if (std::abs(ll - prev_ll) <= tol * (1.0 + std::abs(ll))) {
      fit.converged = true;
      break;
    }
    prev_ll = ll;
    // M step
    for (int c = 0; c < clusters; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const double nk = resp.col(c).sum();
      fit.weights[ci] = nk / n;
      if (nk <= 1e-12) {
        fit.means[ci] = mean;
        fit.covs[ci] = pooled;
        fit.covs[ci].diagonal() += floor;
        continue;
      }
      Vec mk = Vec::Zero(d);
      for (int i = 0; i < n; ++i) mk += resp(i, c) * data[static_cast<std::size_t>(i)];
      mk /= nk;
      Mat ck = Mat::Zero(d, d);
      for (int i = 0; i < n; ++i) {
        const Vec r = data[static_cast<std::size_t>(i)] - mk;
        ck += resp(i, c) * r * r.transpose();
      }
      ck /= nk;
      ck.diagonal() += floor;
      fit.means[ci] = mk;
      fit.covs[ci] = symmetrize(ck);
    }
  }
  return fit;
}

struct ClusterSelection {
  int clusters = 1;
  bool converged = true;
  std::vector<int> candidates;  // candidates actually scored
  std::vector<double> scores;
};

/// argmin BIC over the candidates that leave at least d + 1 points per
/// component; ties go to the smaller count. When none qualifies the smallest
/// candidate is returned unscored.
inline ClusterSelection select_cluster_count_detailed(const std::vector<ObsVec>& data, std::vector<int> candidates) {
  expects(!candidates.empty() && !data.empty(), "select_cluster_count: empty candidates or data");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  expects(candidates.front() >= 1, "select_cluster_count: candidates must be positive");
  ClusterSelection out;
  out.clusters = candidates.front();
  if (candidates.size() == 1) return out;
  const int n = static_cast<int>(data.size());
  const int d = static_cast<int>(data.front().size());
  double best = std::numeric_limits<double>::infinity();
  for (int c : candidates) {
    if (c * (d + 1) > n) continue;
    const GmmFit fit = fit_gmm_em(data, c);
    const double score = bic_score(fit.log_likelihood, c, d, n);
    out.candidates.push_back(c);
    out.scores.push_back(score);
    if (score < best) {
      best = score;
      out.clusters = c;
      out.converged = fit.converged;
    }
  }
  return out;
}

inline int select_cluster_count(const std::vector<ObsVec>& data, const std::vector<int>& candidates) {
  return select_cluster_count_detailed(data, candidates).clusters;
}

}  // namespace bkt
