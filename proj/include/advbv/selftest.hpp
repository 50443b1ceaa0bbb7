#pragma once

// Fast invariant checks run by `advbv selftest`.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "advbv/estimators.hpp"
#include "advbv/training.hpp"

namespace advbv {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

inline SelfTestResult check_logistic_gradient() {
  Rng rng(101);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Index n = 5, d = 4;
    const Matrix X = rng.normal_matrix(n, d, 1.0);
    Vector y(n);
    for (Index i = 0; i < n; ++i) y[i] = rng.sign();
    LinearModel m{rng.normal_matrix(d, 1, 1.0).col(0)};
    const double eps = rng.uniform(0.0, 0.5);
    const auto g = adv_logistic_grad(m, X, y, eps);
    for (Index i = 0; i < d; ++i) {
      LinearModel p = m, q = m;
      p.theta[i] += 1e-5;
      q.theta[i] -= 1e-5;
      const double fd = (adv_logistic_grad(p, X, y, eps).loss - adv_logistic_grad(q, X, y, eps).loss) / 2e-5;
      worst = std::max(worst, rel_err(fd, g.params[i]));
    }
  }
  return {"logistic gradient vs finite differences", worst < 1e-4, "max rel err " + format_double(worst)};
}

inline SelfTestResult check_mlp_gradient() {
  Rng rng(202);
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    MlpModel m = MlpModel::he_uniform({3, 6, 5, 2}, Activation::Tanh, Head::SoftmaxCE, rng);
    const Vector x = rng.normal_matrix(3, 1, 1.0).col(0);
    Vector y = Vector::Zero(2);
    y[rng.uniform_index(2)] = 1.0;
    const auto g = mlp_backward(m, x, y, LossKind::CrossEntropy);
    for (Index i = 0; i < m.params().size(); ++i) {
      MlpModel p = m, q = m;
      p.params()[i] += 1e-5;
      q.params()[i] -= 1e-5;
      const double fd =
          (mlp_backward(p, x, y, LossKind::CrossEntropy).loss - mlp_backward(q, x, y, LossKind::CrossEntropy).loss) / 2e-5;
      worst = std::max(worst, std::abs(fd - g.params[i]) / std::max(1e-4, std::abs(fd)));
    }
  }
  return {"mlp gradient vs finite differences", worst < 1e-4, "max rel err " + format_double(worst)};
}

inline SelfTestResult check_exact_inner_max() {
  Rng rng(303);
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    Vector theta = rng.normal_matrix(2, 1, 1.0).col(0);
    Matrix X = rng.normal_matrix(1, 2, 1.0);
    Vector y(1);
    y[0] = rng.sign();
    const double eps = rng.uniform(0.1, 1.0);
    const double exact = exact_l2_margin_loss(theta, X, y, eps);
    double best = -1e300;
    constexpr int kAngles = 2000;
    for (int a = 0; a < kAngles; ++a) {
      const double phi = 2.0 * M_PI * a / kAngles;
      const double z = y[0] * (X(0, 0) + eps * std::cos(phi)) * theta[0] + y[0] * (X(0, 1) + eps * std::sin(phi)) * theta[1];
      best = std::max(best, softplus(z));
    }
    worst = std::max(worst, std::abs(best - exact));
  }
  return {"exact l2 inner maximum vs boundary grid", worst < 1e-4, "max abs err " + format_double(worst)};
}

inline SelfTestResult check_additivity() {
  Rng rng(404);
  PredictionTensor t;
  t.points = 20;
  t.repetitions = 4;
  t.splits = 3;
  t.outputs = 3;
  t.labels = Matrix::Zero(t.points, t.outputs);
  for (Index p = 0; p < t.points; ++p) t.labels(p, rng.uniform_index(3)) = 1.0;
  t.values.resize(static_cast<std::size_t>(t.points * t.repetitions * t.splits * t.outputs));
  for (Index p = 0; p < t.points; ++p)
    for (Index k = 0; k < t.repetitions; ++k)
      for (Index j = 0; j < t.splits; ++j) {
        Vector z = rng.normal_matrix(3, 1, 2.0).col(0);
        t.prediction(p, k, j) = softmax(z);
      }
  const auto sq = bv_squared(t);
  const auto ce = bv_cross_entropy(t);
  const double r1 = std::abs(sq.risk - sq.bias - sq.variance) / std::max(1.0, sq.risk);
  const double r2 = std::abs(ce.risk - ce.bias - ce.variance) / std::max(1.0, ce.risk);
  const bool ok = r1 <= 1e-8 && r2 <= 1e-8 && sq.variance >= 0 && ce.variance >= 0;
  return {"squared and cross-entropy additivity", ok,
          "residuals " + format_double(r1) + ", " + format_double(r2)};
}

inline SelfTestResult check_logistic_normalizer() {
  Rng rng(505);
  double max_z = 0.0, min_var = 1e300;
  for (int t = 0; t < 200; ++t) {
    std::vector<Vector> thetas;
    for (int m = 0; m < 4; ++m) thetas.push_back(rng.normal_matrix(3, 1, 2.0).col(0));
    const Matrix X = rng.normal_matrix(5, 3, 1.0);
    const Vector logz = logistic_log_normalizers(thetas, X);
    max_z = std::max(max_z, logz.array().exp().maxCoeff());
    min_var = std::min(min_var, (-logz.array()).minCoeff());
  }
  return {"logistic normalizer Z <= 1", max_z <= 1.0 + 1e-12 && min_var >= -1e-12,
          "max Z " + format_double(max_z)};
}

inline SelfTestResult check_projection() {
  PerturbationSet l2(Norm::L2, 1.0), linf(Norm::Linf, 0.5);
  Vector v(2);
  v << 3.0, 4.0;
  const Vector p = project(v, l2);
  const Vector q = project(v, linf);
  const bool ok = std::abs(p[0] - 0.6) < 1e-15 && std::abs(p[1] - 0.8) < 1e-15 && q[0] == 0.5 && q[1] == 0.5;
  return {"ball projections", ok, "l2 (" + format_double(p[0]) + ", " + format_double(p[1]) + ")"};
}

inline SelfTestResult check_determinism() {
  const Dataset ds = sample_box(20, 2, 0.25, 7);
  TrainConfig cfg;
  cfg.mode = TrainMode::Adversarial;
  cfg.set = PerturbationSet(Norm::Linf, 0.1);
  cfg.pgd = PgdConfig{3, 0.04, false, true};
  cfg.epochs = 5;
  cfg.seed = 9;
  ModelSpec spec;
  spec.hidden = {8, 8};
  spec.head = Head::SoftmaxSquared;
  const auto a = train(spec, ds, cfg);
  const auto b = train(spec, ds, cfg);
  const bool ok = parameters(a.model) == parameters(b.model);
  return {"training determinism", ok, ok ? "identical parameters" : "parameters differ"};
}

}  // namespace detail

inline std::vector<SelfTestResult> run_selftest() {
  std::vector<std::function<SelfTestResult()>> checks = {
      detail::check_projection,         detail::check_exact_inner_max, detail::check_logistic_gradient,
      detail::check_mlp_gradient,       detail::check_additivity,      detail::check_logistic_normalizer,
      detail::check_determinism,
  };
  std::vector<SelfTestResult> out;
  for (auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"exception", false, e.what()});
    }
  }
  return out;
}

}  // namespace advbv
