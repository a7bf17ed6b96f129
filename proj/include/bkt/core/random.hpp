#pragma once

#include "bkt/core/error.hpp"
#include "bkt/core/types.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace bkt {

/// SplitMix64 finalizer. Used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for stream `stream` of `parent`. Realization r of a run seeded
/// with s uses derive_seed(s, r); sub-streams inside a realization derive again.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  return mix_seed(mix_seed(parent) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

/// Owned by exactly one worker. Identical seed gives bit-identical draws.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double normal() { return normal_(engine_); }

  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

  Eigen::VectorXd standard_normal(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  Vec standard_normal_small(int n) {
    Vec z(n);
    for (int i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  /// Draws an index with probability proportional to `weights` (nonnegative).
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    expects(total > 0.0 && std::isfinite(total), "categorical: weights must have positive finite sum");
    double u = uniform() * total;
    int last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      last_positive = static_cast<int>(i);
      if (u < weights[i]) return static_cast<int>(i);
      u -= weights[i];
    }
    return last_positive;
  }

  /// Same as categorical but from unnormalized log-weights; -inf entries are never drawn.
  int categorical_log(std::span<const double> log_weights) {
    double top = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) top = std::max(top, lw);
    expects(std::isfinite(top), "categorical_log: all log-weights are -inf or non-finite");
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - top);
    return categorical(w);
  }

  std::vector<double> dirichlet(std::span<const double> alpha) {
    std::vector<double> out(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      out[i] = gamma(alpha[i]);
      total += out[i];
    }
    if (!(total > 0.0)) {
      // Every gamma draw underflowed (tiny concentrations); fall back to a vertex.
      std::fill(out.begin(), out.end(), 0.0);
      std::vector<double> a(alpha.begin(), alpha.end());
      out[static_cast<std::size_t>(categorical(a))] = 1.0;
      return out;
    }
    for (double& v : out) v /= total;
    return out;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace bkt
