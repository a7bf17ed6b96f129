#include "bkt/model_core.hpp"
#include "bkt/scenarios.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace bkt;

namespace {

Mat mat2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

TransitionKernel linear_kernel(const Mat& a, const Mat& q) {
  auto [g, gj] = linear_map(a);
  return TransitionKernel(ModelId(1), ModelId(1), g, gj, q);
}

MeasurementKernel identity_measurement(int d, double var) {
  auto [t, tj] = linear_map(Mat::Identity(d, d));
  return MeasurementKernel(ModelId(1), t, tj, var * Mat::Identity(d, d));
}

// Dense log N(x; m, S) through an explicit inverse and determinant.
double dense_mvn_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& m, const Eigen::MatrixXd& s) {
  const Eigen::VectorXd r = x - m;
  const double quad = r.dot(s.inverse() * r);
  return -0.5 * quad - 0.5 * std::log(s.determinant()) - 0.5 * x.size() * std::log(2.0 * std::numbers::pi);
}

}  // namespace

TEST(PropagateState, ZeroStateIsFixedPoint) {
  const auto k = linear_kernel(mat2(1, 0.1, 0, 1), 1e-30 * Mat::Identity(2, 2));
  RandomSource rng(3);
  const Vec out = propagate_state(Vec::Zero(2), k, rng);
  EXPECT_NEAR(out[0], 0.0, 1e-12);
  EXPECT_NEAR(out[1], 0.0, 1e-12);
}

TEST(PropagateState, PaperDeltaArithmetic) {
  const auto k = linear_kernel(mat2(1, 0.1, 0, 1), 1e-30 * Mat::Identity(2, 2));
  RandomSource rng(3);
  const Vec out = propagate_state(vec2(1, 2), k, rng);
  EXPECT_NEAR(out[0], 1.2, 1e-12);
  EXPECT_NEAR(out[1], 2.0, 1e-12);
}

TEST(PropagateState, NoiseMomentsMatchQ1) {
  const double delta = 0.1, alpha = 0.01;
  Mat q = Mat::Zero(2, 2);
  q(0, 0) = alpha * delta * delta / 4.0;
  q(1, 1) = alpha * delta / 3.0;
  const auto k = linear_kernel(mat2(1, delta, 0, 1), q);
  RandomSource rng(11);
  const int n = 100000;
  Vec sum = Vec::Zero(2);
  const Vec x = vec2(1, 0);
  const Vec g = k.mean(x);
  for (int i = 0; i < n; ++i) sum += propagate_state(x, k, rng) - g;
  for (int i = 0; i < 2; ++i) EXPECT_LT(std::abs(sum[i] / n), 3.0 * std::sqrt(q(i, i)) / std::sqrt(n));
}

TEST(PropagateState, DimensionMismatchIsConfigError) {
  const auto k = linear_kernel(mat2(1, 0.1, 0, 1), Mat::Identity(2, 2));
  RandomSource rng(1);
  EXPECT_THROW(propagate_state(Vec::Zero(3), k, rng), ConfigError);
}

TEST(TransitionKernel, NonPositiveDefiniteCovarianceRejected) {
  EXPECT_THROW(linear_kernel(Mat::Identity(2, 2), mat2(1, 2, 2, 1)), ModelDefinitionError);
  EXPECT_THROW(linear_kernel(Mat::Identity(2, 2), Mat::Zero(2, 2)), ModelDefinitionError);
}

TEST(TransitionLogDensity, ModeValue) {
  Mat s(3, 3);
  s << 2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.5;
  const auto k = linear_kernel(Mat::Identity(3, 3), s);
  Vec x(3);
  x << 0.4, -1.0, 2.0;
  const double expected = -1.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(s.determinant());
  EXPECT_NEAR(transition_log_density(x, x, k), expected, 1e-12);
}

TEST(TransitionLogDensity, StandardNormalAtOne) {
  const auto k = linear_kernel(Mat::Identity(1, 1), Mat::Identity(1, 1));
  EXPECT_NEAR(transition_log_density(Vec::Ones(1), Vec::Zero(1), k), -1.4189385332046727, 1e-12);
}

TEST(TransitionLogDensity, MatchesDenseOracleOnExp1Kernel) {
  const auto bank = build_exp1_bank();
  const auto& k = bank.transition(ModelId(1), ModelId(2));
  RandomSource rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = rng.standard_normal_small(4);
    const Vec xn = k.mean(x) + 0.05 * rng.standard_normal_small(4);
    const Eigen::MatrixXd a = exp1_transition_matrix(0.1);
    const Eigen::MatrixXd q = exp1_process_noise(2, 0.1, 0.01);
    const double oracle = dense_mvn_log_pdf(xn, a * Eigen::VectorXd(x), q);
    EXPECT_NEAR(transition_log_density(xn, x, k), oracle, 1e-10 * std::max(1.0, std::abs(oracle)));
  }
}

TEST(TransitionLogDensity, OneDimensionalReductionIntegratesToOne) {
  // A three-model 1-D bank: x_k = a_j x_{k-1} + v, var depends on the pair.
  for (int from = 1; from <= 3; ++from) {
    for (int to = 1; to <= 3; ++to) {
      Mat a = Mat::Constant(1, 1, 1.0 - 0.1 * to);
      Mat q = Mat::Constant(1, 1, 0.2 * to + 0.05 * std::abs(from - to));
      auto [g, gj] = linear_map(a);
      TransitionKernel k(ModelId(from), ModelId(to), g, gj, q);
      const Vec x = Vec::Constant(1, 0.7);
      const double h = 1e-3;
      double total = 0.0;
      for (double z = -10.0; z <= 10.0; z += h) total += std::exp(transition_log_density(Vec::Constant(1, z), x, k)) * h;
      EXPECT_NEAR(total, 1.0, 1e-3) << from << "->" << to;
    }
  }
}

TEST(JumpForward, SingleModelAlwaysStays) {
  const auto map = JumpMap::affine(1, 2, 0.1);
  RandomSource rng(2);
  const ParamVec theta = vec2(0.3, -0.2);
  for (int i = 0; i < 100; ++i) {
    const auto [j, th] = jump_forward(ModelId(1), theta, map, rng);
    EXPECT_EQ(j, ModelId(1));
    EXPECT_EQ(th.size(), 2);
  }
}

TEST(JumpForward, UniformRowsGiveUniformTargets) {
  const auto map = JumpMap::affine(3, 1, 0.1);
  RandomSource rng(9);
  std::vector<int> counts(3, 0);
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(jump_forward(ModelId(2), Vec::Zero(1), map, rng).first.zero_based())];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 1.0 / 3.0, 0.02);
}

TEST(JumpForward, ZeroVarianceKernelKeepsParameters) {
  const auto map = JumpMap::affine(3, 2, 0.0);
  RandomSource rng(4);
  const ParamVec theta = vec2(1.25, -3.5);
  for (int i = 0; i < 50; ++i) {
    const auto [j, th] = jump_forward(ModelId(1), theta, map, rng);
    EXPECT_EQ(th, theta);
  }
}

TEST(JumpForward, KernelMomentsMatchTau) {
  const double tau = 0.3;
  const auto map = JumpMap::affine(2, 1, tau);
  RandomSource rng(21);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = jump_forward(ModelId(1), Vec::Constant(1, 2.0), map, rng).second[0] - 2.0;
    s += v;
    s2 += v * v;
  }
  EXPECT_LT(std::abs(s / n), 3.0 * tau / std::sqrt(n));
  EXPECT_NEAR(s2 / n, tau * tau, 3.0 * tau * tau * std::sqrt(2.0 / n));
}

TEST(JumpRoundtrip, IdentityMapIsExact) {
  const auto map = JumpMap::affine(4, 3, 0.1);
  RandomSource rng(1);
  EXPECT_EQ(jump_roundtrip_check(map, 1000, rng), 0.0);
}

TEST(JumpRoundtrip, AffineShiftMapBelowTolerance) {
  Mat p(2, 2);
  p << 1.5, 0.2, -0.3, 0.8;
  std::vector<ParamVec> anchors{vec2(0, 0), vec2(1, -2), vec2(0.5, 3)};
  const auto map = JumpMap::affine(3, 2, 0.1, p, anchors);
  RandomSource rng(1);
  EXPECT_LT(jump_roundtrip_check(map, 1000, rng), 1e-10);
}

TEST(JumpRoundtrip, RegisteredBankMapsPassOverManyPoints) {
  for (const auto& bank : {build_exp1_bank(), build_exp2_bank()}) {
    RandomSource rng(77);
    EXPECT_LE(jump_roundtrip_check(bank.jump_map(), 5000, rng), 1e-8) << bank.name();
  }
}

TEST(JumpRoundtrip, BankRejectsNonInvertibleMap) {
  auto fwd = [](ModelId, ModelId, const ParamVec& th) -> ParamVec { return 2.0 * th; };
  auto bad_inv = [](ModelId, ModelId, const ParamVec& th) -> ParamVec { return th; };
  auto lj = [](ModelId, ModelId, const ParamVec&) { return std::log(2.0); };
  JumpMap bad(Eigen::MatrixXd::Ones(1, 1), 1, 0.1, fwd, bad_inv, lj);
  auto [t, tj] = linear_map(Mat::Identity(1, 1));
  std::vector<ModelBank::Model> models{{MeasurementKernel(ModelId(1), t, tj, Mat::Identity(1, 1)),
                                        NIWParams{Vec::Zero(1), 1.0, Mat::Identity(1, 1), 3.0}}};
  std::vector<std::vector<TransitionKernel>> trans(1);
  trans[0].push_back(linear_kernel(Mat::Identity(1, 1), Mat::Identity(1, 1)));
  EXPECT_THROW(ModelBank("bad", models, trans, bad, {"x"}, {"y"}), ModelDefinitionError);
}

TEST(JumpMap, RowsMustBeStochastic) {
  Eigen::MatrixXd rows(2, 2);
  rows << 0.5, 0.5, 0.6, 0.5;
  auto id = [](ModelId, ModelId, const ParamVec& th) { return th; };
  auto lj = [](ModelId, ModelId, const ParamVec&) { return 0.0; };
  EXPECT_THROW(JumpMap(rows, 1, 0.1, id, id, lj), ModelDefinitionError);
}

TEST(GmmLogLikelihood, SingleCenteredComponentAtMode) {
  const auto meas = identity_measurement(2, 1.0);
  const auto h = MeasurementHierarchy::single(Mat::Identity(2, 2));
  const Vec x = vec2(0.3, 4.0);
  EXPECT_NEAR(gmm_log_likelihood(x, x, meas, h), -std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(GmmLogLikelihood, IdenticalComponentsCollapse) {
  const auto meas = identity_measurement(2, 1.0);
  MeasurementHierarchy two;
  two.cluster_count = 2;
  two.weights = {0.5, 0.5};
  Mat s = mat2(0.7, 0.1, 0.1, 0.4);
  two.components = {{vec2(0.2, -0.1), s}, {vec2(0.2, -0.1), s}};
  MeasurementHierarchy one = MeasurementHierarchy::single(s);
  one.components[0].mean = vec2(0.2, -0.1);
  const Vec x = vec2(1, 1), y = vec2(1.5, 0.3);
  EXPECT_NEAR(gmm_log_likelihood(y, x, meas, two), gmm_log_likelihood(y, x, meas, one), 1e-13);
}

TEST(GmmLogLikelihood, ThreeComponentsMatchBruteForceSum) {
  RandomSource rng(8);
  const auto meas = identity_measurement(2, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    MeasurementHierarchy h;
    h.cluster_count = 3;
    h.weights = rng.dirichlet(std::vector<double>{1.0, 1.0, 1.0});
    for (int c = 0; c < 3; ++c) {
      Mat a = Mat::Random(2, 2);
      h.components.push_back({rng.standard_normal_small(2), a * a.transpose() + 0.2 * Mat::Identity(2, 2)});
    }
    const Vec x = rng.standard_normal_small(2), y = rng.standard_normal_small(2);
    double direct = 0.0;
    for (int c = 0; c < 3; ++c) {
      const auto& comp = h.components[static_cast<std::size_t>(c)];
      direct += h.weights[static_cast<std::size_t>(c)] * std::exp(dense_mvn_log_pdf(y, x + comp.mean, comp.cov));
    }
    EXPECT_NEAR(gmm_log_likelihood(y, x, meas, h), std::log(direct), 1e-12);
  }
}

TEST(GmmLogLikelihood, SingleComponentEqualsMeasurementDensity) {
  const auto bank = build_exp1_bank();
  const auto& meas = bank.measurement(ModelId(3));
  const auto h = MeasurementHierarchy::single(meas.noise_cov());
  RandomSource rng(2);
  const Vec x = rng.standard_normal_small(4), y = rng.standard_normal_small(2);
  EXPECT_EQ(gmm_log_likelihood(y, x, meas, h), mvn_log_pdf_chol(y, meas.predict(x), meas.noise_chol()));
}

TEST(NiwSample, LargeDofConcentratesSigma) {
  const double nu = 1e6;
  NIWParams p{Vec::Zero(2), 1.0, nu * Mat::Identity(2, 2), nu};
  RandomSource rng(12);
  for (int i = 0; i < 20; ++i) {
    const auto phi = niw_sample(p, rng);
    EXPECT_NEAR(phi.cov(0, 0), 1.0, 0.01);
    EXPECT_NEAR(phi.cov(1, 1), 1.0, 0.01);
    EXPECT_NEAR(phi.cov(0, 1), 0.0, 0.01);
  }
}

TEST(NiwSample, LargeLambdaConcentratesMean) {
  NIWParams p{vec2(1.0, -2.0), 1e8, Mat::Identity(2, 2), 5.0};
  RandomSource rng(13);
  const int n = 2000;
  Vec sum = Vec::Zero(2), sum2 = Vec::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vec mu = niw_sample(p, rng).mean - p.mean;
    sum += mu;
    sum2 += mu.cwiseAbs2();
  }
  for (int i = 0; i < 2; ++i) {
    const double sd = std::sqrt(sum2[i] / n);
    EXPECT_LT(sd, 1e-3);
    EXPECT_LT(std::abs(sum[i] / n), 3.0 * sd / std::sqrt(n));
  }
}

TEST(NiwSample, InverseWishartMeanIdentity) {
  Mat psi = mat2(3.0, 0.6, 0.6, 2.0);
  const double nu = 9.0;
  NIWParams p{Vec::Zero(2), 1.0, psi, nu};
  RandomSource rng(14);
  const int n = 100000;
  Eigen::Matrix2d sum = Eigen::Matrix2d::Zero(), sum2 = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Matrix2d s = niw_sample(p, rng).cov;
    sum += s;
    sum2 += s.cwiseAbs2();
  }
  const Eigen::Matrix2d mean = sum / n;
  const Eigen::Matrix2d var = sum2 / n - mean.cwiseAbs2();
  const Eigen::Matrix2d expected = psi / (nu - 2 - 1);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_LT(std::abs(mean(i, j) - expected(i, j)), 3.0 * std::sqrt(var(i, j) / n));
  }
}

TEST(NiwSample, Reproducible) {
  NIWParams p{Vec::Zero(2), 2.0, Mat::Identity(2, 2), 6.0};
  RandomSource a(99), b(99);
  for (int i = 0; i < 10; ++i) {
    const auto x = niw_sample(p, a), y = niw_sample(p, b);
    EXPECT_EQ(x.mean, y.mean);
    EXPECT_EQ(x.cov, y.cov);
  }
}

namespace {

// Normal-inverse-gamma: sigma^2 ~ InvGamma(nu/2, psi/2), mu | sigma^2 ~ N(m, sigma^2 / lambda).
double nig_log_pdf(double mu, double s2, double m, double lambda, double psi, double nu) {
  const double a = 0.5 * nu, b = 0.5 * psi;
  const double log_ig = a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(s2) - b / s2;
  const double v = s2 / lambda;
  const double log_n = -0.5 * (mu - m) * (mu - m) / v - 0.5 * std::log(2.0 * std::numbers::pi * v);
  return log_ig + log_n;
}

}  // namespace

TEST(NiwLogDensity, OneDimensionalMatchesNormalInverseGamma) {
  const double m = 0.4, lambda = 2.5, psi = 3.0, nu = 6.0;
  NIWParams p{Vec::Constant(1, m), lambda, Mat::Constant(1, 1, psi), nu};
  for (double mu : {-1.0, 0.0, 0.4, 2.2}) {
    for (double s2 : {0.05, 0.6, 1.0, 7.5}) {
      const double got = niw_log_density({Vec::Constant(1, mu), Mat::Constant(1, 1, s2)}, p);
      EXPECT_NEAR(got, nig_log_pdf(mu, s2, m, lambda, psi, nu), 1e-10);
    }
  }
}

TEST(NiwLogDensity, OneDimensionalQuadratureIntegratesToOne) {
  const double m = -0.5, lambda = 1.5, psi = 2.0, nu = 5.0;
  NIWParams p{Vec::Constant(1, m), lambda, Mat::Constant(1, 1, psi), nu};
  // Grid in log sigma^2 and in the standardized mean offset t = (mu - m) sqrt(lambda) / sigma.
  const double hu = 0.01, ht = 0.05;
  double total = 0.0;
  for (double u = -12.0; u <= 12.0; u += hu) {
    const double s2 = std::exp(u);
    const double sd = std::sqrt(s2 / lambda);
    for (double t = -8.0; t <= 8.0; t += ht) {
      const double mu = m + sd * t;
      total += std::exp(niw_log_density({Vec::Constant(1, mu), Mat::Constant(1, 1, s2)}, p)) * s2 * sd * hu * ht;
    }
  }
  EXPECT_NEAR(total, 1.0, 0.02);
}

TEST(NiwLogDensity, MaximalNearPriorMode) {
  Mat psi = mat2(2.0, 0.3, 0.3, 1.0);
  const double nu = 7.0;
  NIWParams p{vec2(1.0, 2.0), 3.0, psi, nu};
  const GMMComponentParams mode{p.mean, psi / (nu + 2 + 2)};
  const double at_mode = niw_log_density(mode, p);
  RandomSource rng(31);
  for (int i = 0; i < 500; ++i) {
    Mat e = 0.2 * Mat::Random(2, 2);
    Mat cov = mode.cov + 0.1 * symmetrize(e);
    if (!is_positive_definite(cov)) continue;
    const GMMComponentParams probe{mode.mean + 0.3 * rng.standard_normal_small(2), cov};
    EXPECT_LE(niw_log_density(probe, p), at_mode + 1e-12);
  }
}

TEST(NiwLogDensity, NonPositiveDefiniteIsDomainError) {
  NIWParams p{Vec::Zero(2), 1.0, Mat::Identity(2, 2), 4.0};
  EXPECT_THROW(niw_log_density({Vec::Zero(2), mat2(1, 2, 2, 1)}, p), std::domain_error);
}

TEST(SampleMeasurements, ZeroNoiseReturnsPrediction) {
  const auto meas = identity_measurement(2, 1.0);
  auto h = MeasurementHierarchy::single(Mat::Zero(2, 2));
  RandomSource rng(1);
  const Vec x = vec2(3.0, -1.0);
  for (const auto& y : sample_measurements(x, meas, h, 25, rng)) EXPECT_EQ(y, x);
}

TEST(SampleMeasurements, Exp1NoiseCovariance) {
  const auto bank = build_exp1_bank();
  const auto& meas = bank.measurement(ModelId(1));
  const auto h = MeasurementHierarchy::single(meas.noise_cov());
  RandomSource rng(17);
  Vec x(4);
  x << 1.0, 2.0, 0.5, 0.5;
  const auto ys = sample_measurements(x, meas, h, 100000, rng);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& y : ys) {
    const Eigen::Vector2d r = y - meas.predict(x);
    cov += r * r.transpose();
  }
  cov /= static_cast<double>(ys.size());
  const Eigen::Matrix2d expected = 0.5 * Eigen::Matrix2d::Identity();
  EXPECT_LT((cov - expected).norm(), 0.05 * expected.norm());
}

TEST(SampleMeasurements, DegenerateWeightsUseFirstComponent) {
  const auto meas = identity_measurement(2, 1.0);
  MeasurementHierarchy h;
  h.cluster_count = 2;
  h.weights = {1.0, 0.0};
  h.components = {{vec2(0, 0), Mat::Identity(2, 2)}, {vec2(100, 100), Mat::Identity(2, 2)}};
  RandomSource rng(6);
  std::vector<int> assign;
  sample_measurements(Vec::Zero(2), meas, h, 1000, rng, &assign);
  for (int a : assign) EXPECT_EQ(a, 0);
}

TEST(SampleMeasurements, ReproducibleForSameSeed) {
  const auto bank = build_exp1_bank();
  const auto& meas = bank.measurement(ModelId(2));
  const auto h = MeasurementHierarchy::single(meas.noise_cov());
  RandomSource a(5), b(5);
  const auto ya = sample_measurements(Vec::Ones(4), meas, h, 50, a);
  const auto yb = sample_measurements(Vec::Ones(4), meas, h, 50, b);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(ModelId, ComparableAndHashable) {
  EXPECT_LT(ModelId(1), ModelId(2));
  EXPECT_EQ(ModelId::from_zero_based(2), ModelId(3));
  EXPECT_EQ(std::hash<ModelId>{}(ModelId(4)), std::hash<ModelId>{}(ModelId(4)));
}
