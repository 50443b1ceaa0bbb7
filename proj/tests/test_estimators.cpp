#include <cmath>

#include <gtest/gtest.h>

#include "advbv/estimators.hpp"

using namespace advbv;

namespace {

PredictionTensor make_tensor(Index points, Index K, Index N, Index C) {
  PredictionTensor t;
  t.points = points;
  t.repetitions = K;
  t.splits = N;
  t.outputs = C;
  t.values.assign(static_cast<std::size_t>(points * K * N * C), 0.0);
  t.labels = Matrix::Zero(points, C);
  return t;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

ModelEnsemble train_ensemble(const Dataset& ds, const ModelSpec& spec, TrainConfig cfg, Index K, Index N) {
  const SplitPlan plan = make_split_plan(ds.size(), K, N, 99);
  ModelEnsemble e{K, N, {}};
  for (Index k = 0; k < K; ++k) {
    const auto parts = plan.parts(k);
    for (Index j = 0; j < N; ++j) {
      cfg.seed = static_cast<std::uint64_t>(k * N + j);
      e.models.push_back(train(spec, subset(ds, parts[static_cast<std::size_t>(j)]), cfg).model);
    }
  }
  return e;
}

}  // namespace

TEST(Squared, HandExample) {
  PredictionTensor t = make_tensor(1, 1, 2, 2);
  t.labels.row(0) = vec({1, 0}).transpose();
  t.prediction(0, 0, 0) = vec({1, 0});
  t.prediction(0, 0, 1) = vec({0, 1});
  const auto d = bv_squared(t);
  EXPECT_DOUBLE_EQ(d.variance, 1.0);
  EXPECT_DOUBLE_EQ(d.risk, 1.0);
  EXPECT_DOUBLE_EQ(d.bias, 0.0);
}

TEST(Squared, IdenticalPredictionsHaveZeroVariance) {
  Rng rng(1);
  PredictionTensor t = make_tensor(10, 3, 4, 3);
  for (Index p = 0; p < 10; ++p) {
    t.labels(p, static_cast<Index>(rng.uniform_index(3))) = 1.0;
    const Vector f = softmax(Vector(rng.normal_matrix(3, 1, 1.0).col(0)));
    for (Index k = 0; k < 3; ++k)
      for (Index j = 0; j < 4; ++j) t.prediction(p, k, j) = f;
  }
  const auto d = bv_squared(t);
  EXPECT_EQ(d.variance, 0.0);
  EXPECT_NEAR(d.bias, d.risk, 1e-15);
}

TEST(Squared, AdditivityAndStandardErrors) {
  Rng rng(2);
  PredictionTensor t = make_tensor(30, 6, 3, 4);
  for (Index p = 0; p < 30; ++p) t.labels(p, static_cast<Index>(rng.uniform_index(4))) = 1.0;
  for (double& v : t.values) v = rng.uniform();
  const auto d = bv_squared(t);
  EXPECT_LE(std::abs(d.risk - d.bias - d.variance), 1e-8 * std::max(1.0, d.risk));
  ASSERT_EQ(d.variance_per_k.size(), 6u);
  double m = 0.0, ss = 0.0;
  for (double v : d.variance_per_k) m += v / 6.0;
  for (double v : d.variance_per_k) ss += (v - m) * (v - m);
  EXPECT_NEAR(d.stderr_variance(), std::sqrt(ss / 5.0 / 6.0), 1e-15);
  EXPECT_TRUE(std::isnan(BVDecomposition::standard_error({1.0})));
}

TEST(Squared, VarianceEstimatorIsConsistent) {
  // Scalar linear heads with theta ~ N(mu, s^2 I): E_x Var = s^2 E||x||^2.
  Rng rng(3);
  const Index P = 50, K = 200, N = 2, d = 4;
  const double s = 0.3;
  const Matrix X = rng.normal_matrix(P, d, 1.0);
  const Vector mu = rng.normal_matrix(d, 1, 1.0).col(0);
  PredictionTensor t = make_tensor(P, K, N, 1);
  for (Index k = 0; k < K; ++k)
    for (Index j = 0; j < N; ++j) {
      const Vector theta = mu + rng.normal_matrix(d, 1, s).col(0);
      for (Index p = 0; p < P; ++p) t.prediction(p, k, j)[0] = X.row(p).dot(theta);
    }
  const double analytic = s * s * X.rowwise().squaredNorm().mean();
  const auto dec = bv_squared(t);
  EXPECT_NEAR(dec.variance, analytic, 3.0 * dec.stderr_variance());
}

TEST(CrossEntropy, HandExample) {
  PredictionTensor t = make_tensor(1, 1, 2, 2);
  t.labels.row(0) = vec({1, 0}).transpose();
  t.prediction(0, 0, 0) = vec({0.8, 0.2});
  t.prediction(0, 0, 1) = vec({0.2, 0.8});
  const auto d = bv_cross_entropy(t);
  EXPECT_NEAR(d.bias, std::log(2.0), 1e-12);
  // 0.5 log(1.5625) and -(log 0.8 + log 0.2)/2, 30-digit references.
  EXPECT_NEAR(d.variance, 0.223143551314209700, 1e-12);
  EXPECT_NEAR(d.risk, 0.916290731874155010, 1e-12);
  EXPECT_NEAR(d.risk, d.bias + d.variance, 1e-12);
}

TEST(CrossEntropy, IdenticalModelsHaveZeroVariance) {
  PredictionTensor t = make_tensor(2, 2, 3, 3);
  t.labels(0, 0) = 1.0;
  t.labels(1, 2) = 1.0;
  for (Index p = 0; p < 2; ++p)
    for (Index k = 0; k < 2; ++k)
      for (Index j = 0; j < 3; ++j) t.prediction(p, k, j) = vec({0.5, 0.3, 0.2});
  const auto d = bv_cross_entropy(t);
  EXPECT_NEAR(d.variance, 0.0, 1e-15);
  EXPECT_NEAR(d.bias, -(std::log(0.5) + std::log(0.2)) / 2.0, 1e-14);
}

TEST(CrossEntropy, ConfidentCorrectModelsApproachZero) {
  PredictionTensor t = make_tensor(1, 1, 2, 2);
  t.labels(0, 1) = 1.0;
  t.prediction(0, 0, 0) = vec({0.0, 1.0});
  t.prediction(0, 0, 1) = vec({0.0, 1.0});
  const auto d = bv_cross_entropy(t);
  EXPECT_LT(d.bias, 1e-11);
  EXPECT_LT(d.variance, 1e-11);
  EXPECT_LT(d.risk, 1e-11);
}

TEST(CrossEntropy, AdditivityOnRandomTensors) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    PredictionTensor t = make_tensor(15, 3, 3, 4);
    for (Index p = 0; p < 15; ++p) t.labels(p, static_cast<Index>(rng.uniform_index(4))) = 1.0;
    for (Index p = 0; p < 15; ++p)
      for (Index k = 0; k < 3; ++k)
        for (Index j = 0; j < 3; ++j) t.prediction(p, k, j) = softmax(Vector(rng.normal_matrix(4, 1, 8.0).col(0)));
    const auto d = bv_cross_entropy(t);
    EXPECT_LE(std::abs(d.risk - d.bias - d.variance), 1e-8 * std::max(1.0, d.risk));
    EXPECT_GE(d.variance, -1e-10);
  }
}

TEST(Logistic, HandExample) {
  Dataset test;
  test.X = Matrix::Ones(1, 1);
  test.labels = {1};
  const std::vector<Vector> thetas = {vec({1.0}), vec({-1.0})};
  const Vector log_z = logistic_log_normalizers(thetas, test.X);
  // Z = 2 exp(-(l(1) + l(-1)) / 2), 30-digit reference.
  EXPECT_NEAR(std::exp(log_z[0]), 0.886818883970073909, 1e-14);
  const auto d = bv_logistic(thetas, test);
  EXPECT_NEAR(d.variance, 0.120114506958277525, 1e-14);
  EXPECT_NEAR(d.risk, 0.813261687518222834, 1e-14);
  EXPECT_NEAR(d.risk, d.bias + d.variance, 1e-14);
}

TEST(Logistic, SingleModelHasUnitNormalizer) {
  Rng rng(5);
  const Matrix X = rng.normal_matrix(20, 3, 2.0);
  const Vector log_z = logistic_log_normalizers({rng.normal_matrix(3, 1, 1.0).col(0)}, X);
  EXPECT_LT(log_z.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Logistic, NormalizerTwoPathAgreement) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vector> thetas;
    for (int m = 0; m < 5; ++m) thetas.push_back(rng.normal_matrix(3, 1, 1.0).col(0));
    const Matrix X = rng.normal_matrix(4, 3, 1.0);
    const Vector log_z = logistic_log_normalizers(thetas, X);
    for (Index i = 0; i < 4; ++i) {
      double pos = 0.0, neg = 0.0;
      for (const auto& th : thetas) {
        const double s = X.row(i).dot(th);
        pos += std::log1p(std::exp(-s));
        neg += std::log1p(std::exp(s));
      }
      const double z = std::exp(-pos / 5.0) + std::exp(-neg / 5.0);
      EXPECT_NEAR(std::exp(log_z[i]), z, 1e-12);
      EXPECT_LE(z, 1.0 + 1e-12);
    }
  }
}

TEST(Logistic, PerRepetitionAverage) {
  const Dataset test = sample_mog(50, 3, 0.7, 7);
  Rng rng(8);
  ModelEnsemble e{3, 2, {}};
  for (int m = 0; m < 6; ++m) e.models.push_back(LinearModel{rng.normal_matrix(3, 1, 1.0).col(0)});
  const auto d = bv_logistic(e, test);
  ASSERT_EQ(d.bias_per_k.size(), 3u);
  double v = 0.0;
  for (Index k = 0; k < 3; ++k) {
    const auto dk = bv_logistic({std::get<LinearModel>(e.at(k, 0)).theta, std::get<LinearModel>(e.at(k, 1)).theta}, test);
    v += dk.variance / 3.0;
  }
  EXPECT_NEAR(d.variance, v, 1e-15);
  EXPECT_LE(std::abs(d.risk - d.bias - d.variance), 1e-10);
}

TEST(Tensor, ShapeAndProbabilityRows) {
  const Dataset ds = sample_box(40, 3, 0.25, 9);
  ModelSpec spec;
  spec.hidden = {8};
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto e = train_ensemble(ds, spec, cfg, 2, 2);
  const Dataset test = sample_box(25, 3, 0.25, 10);
  const auto t = build_prediction_tensor(e, test);
  EXPECT_EQ(t.points, 25);
  EXPECT_EQ(t.repetitions, 2);
  EXPECT_EQ(t.splits, 2);
  EXPECT_EQ(t.outputs, 2);
  EXPECT_EQ(t.values.size(), 25u * 2 * 2 * 2);
  EXPECT_NO_THROW(t.validate());
}

TEST(Tensor, ZeroEpsilonAttackEqualsNoAttack) {
  const Dataset ds = sample_box(40, 3, 0.25, 11);
  ModelSpec spec;
  spec.hidden = {8};
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto e = train_ensemble(ds, spec, cfg, 2, 2);
  const Dataset test = sample_box(25, 3, 0.25, 12);
  EvalAttack attack{PerturbationSet(Norm::Linf, 0.0)};
  EXPECT_EQ(build_prediction_tensor(e, test, attack).values, build_prediction_tensor(e, test).values);
}

TEST(Tensor, StoredPerturbationsAreFeasibleAndThreadIndependent) {
  const Dataset ds = sample_box(40, 3, 0.25, 13);
  ModelSpec spec;
  spec.hidden = {8};
  TrainConfig cfg;
  cfg.epochs = 10;
  const auto e = train_ensemble(ds, spec, cfg, 2, 3);
  const Dataset test = sample_box(30, 3, 0.25, 14);
  EvalAttack attack{PerturbationSet(Norm::Linf, 0.1), PgdConfig{20, 0.015, true, true}, std::nullopt, 5};
  const auto t1 = build_prediction_tensor(e, test, attack, 1);
  const auto t4 = build_prediction_tensor(e, test, attack, 4);
  EXPECT_EQ(t1.values, t4.values);
  EXPECT_EQ(t1.perturbations, t4.perturbations);
  for (Index p = 0; p < t1.points; ++p)
    for (Index k = 0; k < 2; ++k)
      for (Index j = 0; j < 3; ++j) {
        const Vector d = t1.perturbation(p, k, j);
        EXPECT_TRUE(attack.set.contains(d));
        EXPECT_TRUE(test.domain->contains(test.X.row(p).transpose() + d));
      }
}

TEST(Tensor, LinearModelsUseClosedFormWorstCase) {
  Rng rng(15);
  ModelEnsemble e{1, 2, {LinearModel{vec({1.0, 2.0})}, LinearModel{vec({-0.5, 1.0})}}};
  const Dataset test = sample_mog(10, 2, 0.7, 16);
  EvalAttack attack{PerturbationSet(Norm::L2, 0.3)};
  const auto t = build_prediction_tensor(e, test, attack);
  for (Index p = 0; p < 10; ++p)
    for (Index j = 0; j < 2; ++j) {
      const Vector& th = std::get<LinearModel>(e.at(0, j)).theta;
      const Vector want = linear_worst_case_delta(th, test.signed_label(p), attack.set);
      EXPECT_TRUE(Vector(t.perturbation(p, 0, j)).isApprox(want, 1e-15));
    }
}

TEST(Tensor, ShapeMismatchRejected) {
  ModelEnsemble e{2, 2, {LinearModel{vec({1.0})}}};
  EXPECT_THROW(build_prediction_tensor(e, sample_mog(3, 1, 0.7, 1)), ContractError);
}
