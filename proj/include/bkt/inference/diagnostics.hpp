#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace bkt {

/// Autocorrelations rho_0..rho_{n-1} of a scalar chain (biased estimator).
inline std::vector<double> autocorrelation(std::span<const double> chain) {
  const std::size_t n = chain.size();
  std::vector<double> rho(n, 0.0);
  if (n == 0) return rho;
  double mean = 0.0;
  for (double v : chain) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : chain) var += (v - mean) * (v - mean);
  if (!(var > 0.0)) {
    rho[0] = 1.0;
    return rho;
  }
  for (std::size_t lag = 0; lag < n; ++lag) {
    double acc = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) acc += (chain[t] - mean) * (chain[t + lag] - mean);
    rho[lag] = acc / var;
  }
  return rho;
}

/// Effective sample size with Geyer's initial monotone sequence truncation.
/// A constant chain returns n. Lags are evaluated only up to the truncation point.
inline double effective_sample_size(std::span<const double> chain) {
  const std::size_t n = chain.size();
  if (n < 4) return static_cast<double>(n);
  double mean = 0.0;
  for (double v : chain) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : chain) var += (v - mean) * (v - mean);
  if (!(var > 0.0)) return static_cast<double>(n);
  auto rho = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) acc += (chain[t] - mean) * (chain[t + lag] - mean);
    return acc / var;
  };

  // Sums of adjacent pairs rho_{2m} + rho_{2m+1}, kept while positive and forced monotone.
  double sum = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (m == 0 ? 1.0 : rho(2 * m)) + rho(2 * m + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    sum += pair;
    prev_pair = pair;
  }
  const double tau = std::max(2.0 * sum - 1.0, 1.0 / static_cast<double>(n));
  return std::min(static_cast<double>(n) / tau, static_cast<double>(n) * std::log10(static_cast<double>(n)));
}

}  // namespace bkt
