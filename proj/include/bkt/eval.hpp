#pragma once

// Estimation metrics and Monte Carlo aggregation.

#include "bkt/core/error.hpp"
#include "bkt/core/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

namespace bkt {

/// (1/N) sum_i ||truth_i - estimate_i||^2.
inline double mse(const std::vector<StateVec>& truth, const std::vector<StateVec>& estimates) {
  expects(!truth.empty() && truth.size() == estimates.size(), "mse: sequences must be nonempty and equally long");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    expects(truth[i].size() == estimates[i].size(), "mse: state dimension mismatch");
    acc += (truth[i] - estimates[i]).squaredNorm();
  }
  return acc / static_cast<double>(truth.size());
}

inline double model_accuracy(const std::vector<ModelId>& truth, const std::vector<ModelId>& estimates) {
  expects(!truth.empty() && truth.size() == estimates.size(),
          "model_accuracy: sequences must be nonempty and equally long");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == estimates[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

struct RunResult {
  std::string estimator;
  std::vector<double> per_step_sq_error;
  std::vector<bool> model_correct;
  std::uint64_t seed = 0;

  int horizon() const { return static_cast<int>(per_step_sq_error.size()); }
};

inline RunResult make_run_result(std::string estimator, const std::vector<StateVec>& truth,
                                 const std::vector<StateVec>& estimates, const std::vector<ModelId>& true_models,
                                 const std::vector<ModelId>& est_models, std::uint64_t seed) {
  expects(truth.size() == estimates.size() && true_models.size() == est_models.size() &&
              truth.size() == true_models.size(),
          "make_run_result: length mismatch");
  RunResult r;
  r.estimator = std::move(estimator);
  r.seed = seed;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    r.per_step_sq_error.push_back((truth[i] - estimates[i]).squaredNorm());
    r.model_correct.push_back(true_models[i] == est_models[i]);
  }
  return r;
}

struct AggregateReport {
  std::string estimator;
  double mse = 0.0;
  std::vector<double> mse_per_step;
  double model_accuracy = 0.0;
  std::vector<double> accuracy_per_step;
  int n_realizations = 0;
};

/// Averages over realizations and time steps (N = K * realizations).
inline AggregateReport aggregate(const std::vector<RunResult>& results) {
  expects(!results.empty(), "aggregate: no results");
  const int k = results.front().horizon();
  expects(k >= 1, "aggregate: empty run");
  AggregateReport out;
  out.estimator = results.front().estimator;
  out.n_realizations = static_cast<int>(results.size());
  out.mse_per_step.assign(static_cast<std::size_t>(k), 0.0);
  out.accuracy_per_step.assign(static_cast<std::size_t>(k), 0.0);
  double total = 0.0;
  double hits = 0.0;
  for (const auto& r : results) {
    expects(r.horizon() == k && static_cast<int>(r.model_correct.size()) == k, "aggregate: inconsistent horizon");
    for (int i = 0; i < k; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      out.mse_per_step[ii] += r.per_step_sq_error[ii];
      out.accuracy_per_step[ii] += r.model_correct[ii] ? 1.0 : 0.0;
      total += r.per_step_sq_error[ii];
      hits += r.model_correct[ii] ? 1.0 : 0.0;
    }
  }
  const double n = static_cast<double>(results.size());
  for (double& v : out.mse_per_step) v /= n;
  for (double& v : out.accuracy_per_step) v /= n;
  out.mse = total / (n * k);
  out.model_accuracy = hits / (n * k);
  return out;
}

inline nlohmann::json to_json(const AggregateReport& r) {
  return {{"estimator", r.estimator},         {"mse", r.mse},
          {"mse_per_step", r.mse_per_step},   {"model_accuracy", r.model_accuracy},
          {"accuracy_per_step", r.accuracy_per_step}, {"n_realizations", r.n_realizations}};
}

/// Columns: k, estimator, mse, model_accuracy (per-step rows, k from 1).
inline void write_report_csv(std::ostream& os, const std::vector<AggregateReport>& reports) {
  os << "k,estimator,mse,model_accuracy\n";
  os << std::setprecision(17);
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.mse_per_step.size(); ++i) {
      os << (i + 1) << ',' << r.estimator << ',' << r.mse_per_step[i] << ',' << r.accuracy_per_step[i] << '\n';
    }
  }
}

}  // namespace bkt
