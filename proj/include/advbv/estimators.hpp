#pragma once

// Bias-variance decompositions over a K x N ensemble of trained models:
// squared loss on output vectors, cross entropy with the geometric-mean
// average prediction, and the logistic decomposition through Z_x. Each can be
// taken at clean test points or at per-model worst-case perturbations.

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "advbv/attacks.hpp"
#include "advbv/datasets.hpp"
#include "advbv/models.hpp"
#include "advbv/parallel.hpp"
#include "advbv/training.hpp"

namespace advbv {

/// Trained models indexed by (repetition k, split j).
struct ModelEnsemble {
  Index repetitions = 0;  // K
  Index splits = 0;       // N
  std::vector<Model> models;  // k * N + j

  const Model& at(Index k, Index j) const { return models[static_cast<std::size_t>(k * splits + j)]; }
  Index size() const { return static_cast<Index>(models.size()); }
};

/// Outputs of every model at every test point: values[((p*K + k)*N + j)*C + c].
/// For adversarial evaluation, `perturbations` holds each model's own delta
/// at each point with the same (p, k, j) order and stride `input_dim`.
struct PredictionTensor {
  Index points = 0;
  Index repetitions = 0;
  Index splits = 0;
  Index outputs = 0;
  std::vector<double> values;
  Matrix labels;  // points x outputs, one-hot
  Index input_dim = 0;
  std::vector<double> perturbations;

  std::size_t offset(Index p, Index k, Index j) const {
    return static_cast<std::size_t>(((p * repetitions + k) * splits + j) * outputs);
  }
  Eigen::Map<const Vector> prediction(Index p, Index k, Index j) const {
    return {values.data() + offset(p, k, j), outputs};
  }
  Eigen::Map<Vector> prediction(Index p, Index k, Index j) {
    return {values.data() + offset(p, k, j), outputs};
  }
  Eigen::Map<const Vector> perturbation(Index p, Index k, Index j) const {
    return {perturbations.data() + static_cast<std::size_t>((p * repetitions + k) * splits + j) *
                                       static_cast<std::size_t>(input_dim),
            input_dim};
  }

  void validate(double tol = 1e-10) const {
    if (static_cast<Index>(values.size()) != points * repetitions * splits * outputs) {
      throw ContractError("PredictionTensor: value count does not match shape");
    }
    require_dim(labels.rows(), points, "PredictionTensor labels");
    require_dim(labels.cols(), outputs, "PredictionTensor label width");
    for (Index p = 0; p < points; ++p)
      for (Index k = 0; k < repetitions; ++k)
        for (Index j = 0; j < splits; ++j) {
          const auto f = prediction(p, k, j);
          if (std::abs(f.sum() - 1.0) > tol || (f.array() < 0).any()) {
            throw ContractError("PredictionTensor: entry is not a probability vector");
          }
        }
  }
};

/// One decomposition, with the per-repetition values it averages.
struct BVDecomposition {
  double bias = 0.0;
  double variance = 0.0;
  double risk = 0.0;
  std::vector<double> bias_per_k;
  std::vector<double> variance_per_k;
  std::vector<double> risk_per_k;

  double stderr_bias() const { return standard_error(bias_per_k); }
  double stderr_variance() const { return standard_error(variance_per_k); }

  /// Sample standard deviation over repetitions divided by sqrt(K); NaN for K < 2.
  static double standard_error(const std::vector<double>& v) {
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
};

inline BVDecomposition average_over_k(std::vector<double> bias, std::vector<double> variance,
                                      std::vector<double> risk) {
  BVDecomposition out;
  const double K = static_cast<double>(bias.size());
  for (std::size_t k = 0; k < bias.size(); ++k) {
    out.bias += bias[k] / K;
    out.variance += variance[k] / K;
    out.risk += risk[k] / K;
  }
  out.bias_per_k = std::move(bias);
  out.variance_per_k = std::move(variance);
  out.risk_per_k = std::move(risk);
  return out;
}

/// Squared-loss decomposition.
///
/// For each point and repetition: unbiased variance
/// (1/(N-1)) sum_j ||f_j - mean_j f||^2 and risk mean_j ||f_j - y||^2; both
/// are averaged over points, then over repetitions. Bias = risk - variance.
inline BVDecomposition bv_squared(const PredictionTensor& t) {
  if (t.splits < 2) throw ContractError("bv_squared: need N >= 2 to estimate the variance");
  if (t.points == 0 || t.repetitions == 0) throw ContractError("bv_squared: empty tensor");
  std::vector<double> var_k(static_cast<std::size_t>(t.repetitions), 0.0);
  std::vector<double> risk_k(var_k.size(), 0.0);
  Vector mean(t.outputs);
  for (Index k = 0; k < t.repetitions; ++k) {
    double var_sum = 0.0, risk_sum = 0.0;
    for (Index p = 0; p < t.points; ++p) {
      mean.setZero();
      for (Index j = 0; j < t.splits; ++j) mean += t.prediction(p, k, j);
      mean /= static_cast<double>(t.splits);
      double spread = 0.0, err = 0.0;
      for (Index j = 0; j < t.splits; ++j) {
        spread += (t.prediction(p, k, j) - mean).squaredNorm();
        err += (t.prediction(p, k, j) - t.labels.row(p).transpose()).squaredNorm();
      }
      var_sum += spread / static_cast<double>(t.splits - 1);
      risk_sum += err / static_cast<double>(t.splits);
    }
    var_k[static_cast<std::size_t>(k)] = var_sum / static_cast<double>(t.points);
    risk_k[static_cast<std::size_t>(k)] = risk_sum / static_cast<double>(t.points);
  }
  std::vector<double> bias_k(var_k.size());
  for (std::size_t k = 0; k < var_k.size(); ++k) bias_k[k] = risk_k[k] - var_k[k];
  BVDecomposition out = average_over_k(std::move(bias_k), std::move(var_k), std::move(risk_k));
  out.bias = out.risk - out.variance;
  return out;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Floors at 1e-12 and renormalizes.
inline Vector floor_probabilities(const Eigen::Ref<const Vector>& p) {
  Vector out = p.cwiseMax(kProbabilityFloor);
  return out / out.sum();
}

/// Cross-entropy decomposition within each repetition.
///
/// The average prediction is the normalized geometric mean over the N models,
/// fbar ∝ exp(mean_j log f_j). Bias = mean_x KL(y || fbar), variance =
/// mean_{x,j} KL(fbar || f_j), risk = mean_{x,j} H(y, f_j) = bias + variance.
inline BVDecomposition bv_cross_entropy(const PredictionTensor& t) {
  if (t.points == 0 || t.repetitions == 0 || t.splits == 0) throw ContractError("bv_cross_entropy: empty tensor");
  const auto K = static_cast<std::size_t>(t.repetitions);
  std::vector<double> bias_k(K, 0.0), var_k(K, 0.0), risk_k(K, 0.0);
  std::vector<Vector> logs(static_cast<std::size_t>(t.splits));
  Vector mean_log(t.outputs);
  for (Index k = 0; k < t.repetitions; ++k) {
    double b = 0.0, v = 0.0, r = 0.0;
    for (Index p = 0; p < t.points; ++p) {
      const Vector y = t.labels.row(p).transpose();
      mean_log.setZero();
      for (Index j = 0; j < t.splits; ++j) {
        logs[static_cast<std::size_t>(j)] = floor_probabilities(t.prediction(p, k, j)).array().log().matrix();
        mean_log += logs[static_cast<std::size_t>(j)];
      }
      mean_log /= static_cast<double>(t.splits);
      const double log_z = log_sum_exp(mean_log);
      const Vector log_fbar = mean_log.array() - log_z;
      const Vector fbar = log_fbar.array().exp().matrix();
      for (Index c = 0; c < t.outputs; ++c) {
        if (y[c] > 0) b += y[c] * (std::log(y[c]) - log_fbar[c]);
      }
      for (Index j = 0; j < t.splits; ++j) {
        const Vector& lf = logs[static_cast<std::size_t>(j)];
        v += fbar.dot(log_fbar - lf);
        r -= y.dot(lf);
      }
    }
    const double P = static_cast<double>(t.points);
    const double PN = P * static_cast<double>(t.splits);
    bias_k[static_cast<std::size_t>(k)] = b / P;
    var_k[static_cast<std::size_t>(k)] = v / PN;
    risk_k[static_cast<std::size_t>(k)] = r / PN;
    if (!std::isfinite(b) || !std::isfinite(v) || !std::isfinite(r)) {
      throw NumericError("bv_cross_entropy: non-finite term after flooring");
    }
  }
  return average_over_k(std::move(bias_k), std::move(var_k), std::move(risk_k));
}

/// log Z_x for each row of X over an ensemble of linear models:
/// Z_x = exp(-mean ell(<theta, x>)) + exp(-mean ell(-<theta, x>)).
inline Vector logistic_log_normalizers(const std::vector<Vector>& thetas, const Matrix& X) {
  if (thetas.empty()) throw ContractError("logistic decomposition: empty ensemble");
  Vector pos = Vector::Zero(X.rows()), neg = Vector::Zero(X.rows());
  for (const auto& theta : thetas) {
    require_dim(theta.size(), X.cols(), "logistic decomposition");
    const Vector s = X * theta;
    for (Index i = 0; i < X.rows(); ++i) {
      pos[i] += softplus(s[i]);
      neg[i] += softplus(-s[i]);
    }
  }
  const double m = static_cast<double>(thetas.size());
  Vector log_z(X.rows());
  for (Index i = 0; i < X.rows(); ++i) log_z[i] = log_sum_exp({-pos[i] / m, -neg[i] / m});
  return log_z;
}

/// Logistic decomposition of one ensemble: variance = -E_x log Z_x,
/// bias = E_x log Z_x + mean_theta R(theta), risk = mean_theta R(theta).
inline BVDecomposition bv_logistic(const std::vector<Vector>& thetas, const Dataset& test) {
  if (test.empty()) throw ContractError("bv_logistic: empty test set");
  const Vector log_z = logistic_log_normalizers(thetas, test.X);
  const Vector y = test.signed_labels();
  double risk = 0.0;
  for (const auto& theta : thetas) {
    const Vector s = test.X * theta;
    double r = 0.0;
    for (Index i = 0; i < s.size(); ++i) r += softplus(y[i] * s[i]);
    risk += r / static_cast<double>(s.size());
  }
  risk /= static_cast<double>(thetas.size());
  const double mean_log_z = log_z.mean();
  BVDecomposition out;
  out.variance = -mean_log_z;
  out.bias = mean_log_z + risk;
  out.risk = risk;
  out.bias_per_k = {out.bias};
  out.variance_per_k = {out.variance};
  out.risk_per_k = {out.risk};
  return out;
}

/// Logistic decomposition per repetition (over its N models), averaged over K.
inline BVDecomposition bv_logistic(const ModelEnsemble& ensemble, const Dataset& test) {
  std::vector<double> b, v, r;
  for (Index k = 0; k < ensemble.repetitions; ++k) {
    std::vector<Vector> thetas;
    for (Index j = 0; j < ensemble.splits; ++j) {
      const auto* lin = std::get_if<LinearModel>(&ensemble.at(k, j));
      if (!lin) throw ContractError("bv_logistic: ensemble contains a non-linear model");
      thetas.push_back(lin->theta);
    }
    const auto d = bv_logistic(thetas, test);
    b.push_back(d.bias);
    v.push_back(d.variance);
    r.push_back(d.risk);
  }
  return average_over_k(std::move(b), std::move(v), std::move(r));
}

/// Evaluation-time attack for adversarial decompositions.
struct EvalAttack {
  PerturbationSet set;
  PgdConfig pgd{20, 0.0, false, true};
  std::optional<LossKind> loss;  // default: the model head's training loss
  std::uint64_t seed = 0;
};

/// Evaluates every model at every test point. With an attack, each model is
/// evaluated at its own worst case x + delta(x, y, model) (PGD for MLPs, the
/// closed form for linear models).
inline PredictionTensor build_prediction_tensor(const ModelEnsemble& ensemble, const Dataset& test,
                                                const std::optional<EvalAttack>& attack = std::nullopt,
                                                unsigned threads = 1) {
  if (ensemble.size() != ensemble.repetitions * ensemble.splits || ensemble.size() == 0) {
    throw ContractError("build_prediction_tensor: ensemble shape does not match model count");
  }
  PredictionTensor t;
  t.points = test.size();
  t.repetitions = ensemble.repetitions;
  t.splits = ensemble.splits;
  t.outputs = test.num_classes;
  t.labels = test.one_hot();
  t.values.assign(static_cast<std::size_t>(t.points * t.repetitions * t.splits * t.outputs), 0.0);
  const bool attacked = attack && attack->set.epsilon > 0;
  if (attacked) {
    t.input_dim = test.dim();
    t.perturbations.assign(static_cast<std::size_t>(t.points * t.repetitions * t.splits * t.input_dim), 0.0);
  }
  const DomainBox* domain = test.domain ? &*test.domain : nullptr;

  parallel_for(static_cast<std::size_t>(ensemble.size()), threads, [&](std::size_t idx) {
    const Index k = static_cast<Index>(idx) / t.splits;
    const Index j = static_cast<Index>(idx) % t.splits;
    const Model& model = ensemble.at(k, j);
    Matrix deltas;
    if (attacked) {
      if (const auto* lin = std::get_if<LinearModel>(&model)) {
        deltas.resize(t.points, test.dim());
        for (Index p = 0; p < t.points; ++p) {
          deltas.row(p) = linear_worst_case_delta(lin->theta, test.signed_label(p), attack->set).transpose();
        }
        if (attack->pgd.clip_to_domain && domain) {
          Matrix moved = test.X + deltas;
          domain->clamp_rows(moved);
          deltas = moved - test.X;
        }
      } else {
        const auto& mlp = std::get<MlpModel>(model);
        const Matrix Y = mlp_targets(mlp, test);
        Rng rng(Rng::derive_seed(attack->seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(j)}));
        const LossKind loss = attack->loss.value_or(default_loss(mlp.head()));
        try {
          deltas = mlp_pgd_deltas(mlp, test.X, Y, attack->set, attack->pgd, domain, &rng, loss);
        } catch (const AttackError& e) {
          throw AttackError(std::string(e.what()) + " for model (k=" + std::to_string(k) +
                                ", j=" + std::to_string(j) + ")",
                            e.iterate());
        }
      }
    }
    const Matrix probs = predict_proba(model, attacked ? Matrix(test.X + deltas) : test.X);
    for (Index p = 0; p < t.points; ++p) {
      t.prediction(p, k, j) = probs.row(p).transpose();
      if (attacked) {
        std::copy(deltas.row(p).data(), deltas.row(p).data() + t.input_dim,
                  t.perturbations.begin() +
                      static_cast<std::ptrdiff_t>(((p * t.repetitions + k) * t.splits + j) * t.input_dim));
      }
    }
  });
  return t;
}

/// CSV dump: `point,k,j,label,p0..p{C-1}` (plus `delta0..` columns when the
/// tensor carries perturbations).
inline void save_tensor_csv(const PredictionTensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "point,k,j,label";
  for (Index c = 0; c < t.outputs; ++c) out << ",p" << c;
  for (Index c = 0; c < t.input_dim; ++c) out << ",delta" << c;
  out << '\n';
  for (Index p = 0; p < t.points; ++p) {
    Index label = 0;
    t.labels.row(p).maxCoeff(&label);
    for (Index k = 0; k < t.repetitions; ++k)
      for (Index j = 0; j < t.splits; ++j) {
        out << p << ',' << k << ',' << j << ',' << label;
        const auto f = t.prediction(p, k, j);
        for (Index c = 0; c < t.outputs; ++c) out << ',' << format_double(f[c]);
        if (t.input_dim > 0) {
          const auto d = t.perturbation(p, k, j);
          for (Index c = 0; c < t.input_dim; ++c) out << ',' << format_double(d[c]);
        }
        out << '\n';
      }
  }
  if (!out) throw IoError(path, "write failed");
}

}  // namespace advbv
