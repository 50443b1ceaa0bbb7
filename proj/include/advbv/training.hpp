#pragma once

// Outer minimization for standard, adversarial, randomized-smoothing and
// fixed-noise training; training-set error measurement; threshold detection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advbv/attacks.hpp"
#include "advbv/datasets.hpp"
#include "advbv/models.hpp"

namespace advbv {

enum class TrainMode { Standard, Adversarial, Smoothing, FixedNoise };
enum class Optimizer { SgdMomentum, Adam, FullBatchGd };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Standard: return "standard";
    case TrainMode::Adversarial: return "adversarial";
    case TrainMode::Smoothing: return "smoothing";
    case TrainMode::FixedNoise: return "fixed_noise";
  }
  return "?";
}
inline std::string_view to_string(Optimizer o) {
  switch (o) {
    case Optimizer::SgdMomentum: return "sgd_momentum";
    case Optimizer::Adam: return "adam";
    case Optimizer::FullBatchGd: return "full_batch_gd";
  }
  return "?";
}
inline TrainMode parse_mode(std::string_view s) {
  if (s == "standard") return TrainMode::Standard;
  if (s == "adversarial") return TrainMode::Adversarial;
  if (s == "smoothing") return TrainMode::Smoothing;
  if (s == "fixed_noise") return TrainMode::FixedNoise;
  throw ContractError("unknown training mode '" + std::string(s) + "'");
}
inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd_momentum") return Optimizer::SgdMomentum;
  if (s == "adam") return Optimizer::Adam;
  if (s == "full_batch_gd") return Optimizer::FullBatchGd;
  throw ContractError("unknown optimizer '" + std::string(s) + "'");
}

/// Architecture to build for a dataset; input width comes from the data.
struct ModelSpec {
  enum class Kind { Linear, Mlp };
  Kind kind = Kind::Mlp;
  std::vector<Index> hidden{100, 100, 100};
  Activation activation = Activation::ReLU;
  Head head = Head::SoftmaxCE;

  Model init(Index input_dim, int num_classes, Rng& rng) const {
    if (kind == Kind::Linear) return LinearModel{Vector::Zero(input_dim)};
    std::vector<Index> widths{input_dim};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(head == Head::BinarySign ? 1 : num_classes);
    return MlpModel::he_uniform(std::move(widths), activation, head, rng);
  }
};

struct TrainConfig {
  TrainMode mode = TrainMode::Standard;
  Optimizer optimizer = Optimizer::Adam;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<int> lr_milestones;  // lr *= lr_decay at each listed epoch
  double lr_decay = 0.1;
  int epochs = 100;
  Index batch_size = 128;
  PerturbationSet set;
  PgdConfig pgd;
  double sigma = 0.0;  // smoothing / fixed_noise
  std::uint64_t seed = 0;
  // Full-batch gradient descent with backtracking (linear models).
  int max_iters = 10'000;
  double grad_tol = 1e-8;
  bool record_trace = true;

  void validate() const {
    if (epochs < 0 || batch_size < 1) throw ContractError("TrainConfig: epochs >= 0 and batch_size >= 1");
    if (!(lr > 0) && optimizer != Optimizer::FullBatchGd) throw ContractError("TrainConfig: lr must be > 0");
    if (!(sigma >= 0)) throw ContractError("TrainConfig: sigma must be >= 0");
    if (!(set.epsilon >= 0)) throw ContractError("TrainConfig: epsilon must be >= 0");
  }

  /// SGD recipe for image-scale runs: lr 0.1, momentum 0.9, weight decay
  /// 5e-4, batch 128, 200 epochs with lr x0.1 at epochs 100 and 150.
  static TrainConfig sgd_preset() {
    TrainConfig c;
    c.optimizer = Optimizer::SgdMomentum;
    c.lr = 0.1;
    c.momentum = 0.9;
    c.weight_decay = 5e-4;
    c.batch_size = 128;
    c.epochs = 200;
    c.lr_milestones = {100, 150};
    c.lr_decay = 0.1;
    return c;
  }

  bool pgd_usable() const { return pgd.steps >= 1 && pgd.step_size > 0; }
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  /// Misclassified fraction of the inputs the model was trained on this
  /// epoch (perturbed, noised or clean depending on mode).
  double robust_train_error = 0.0;
};

struct TrainedModel {
  Model model;
  double robust_train_error = 0.0;
  double std_train_error = 0.0;
  std::vector<EpochRecord> trace;
  int iterations = 0;
  double final_grad_norm = 0.0;  // full-batch runs only
};

/// Observer of the inputs each gradient step is taken at: (epoch, inputs).
using BatchObserver = std::function<void(int, const Matrix&)>;

// ---------------------------------------------------------------------------
// Error measurement
// ---------------------------------------------------------------------------

inline double misclassified_fraction(const Model& m, const Matrix& X, const Dataset& labels_from) {
  if (X.rows() == 0) return 0.0;
  const auto pred = predict_class(m, X);
  Index wrong = 0;
  for (Index i = 0; i < X.rows(); ++i) wrong += pred[static_cast<std::size_t>(i)] != labels_from.class_of(i);
  return static_cast<double>(wrong) / static_cast<double>(X.rows());
}

inline double std_error(const Model& m, const Dataset& ds) { return misclassified_fraction(m, ds.X, ds); }

/// Training targets in the layout mlp_backward_batch expects.
inline Matrix mlp_targets(const MlpModel& mlp, const Dataset& ds) {
  if (mlp.head() == Head::BinarySign) return ds.signed_labels();
  Matrix y = ds.one_hot();
  require_dim(y.cols(), mlp.output_dim(), "mlp targets");
  return y;
}

/// Worst-case perturbations of every row of `ds` against a frozen MLP.
inline Matrix mlp_pgd_deltas(const MlpModel& mlp, const Matrix& X, const Matrix& Y,
                             const PerturbationSet& set, const PgdConfig& pgd,
                             const DomainBox* domain, Rng* rng, LossKind loss) {
  auto callback = [&](const Matrix& Xp) {
    auto g = mlp_backward_batch(mlp, Xp, Y, loss, /*want_params=*/false, /*want_input=*/true);
    return BatchLossGrad{std::move(g.losses), std::move(g.input_grad)};
  };
  return pgd_attack_batch(callback, X, set, pgd, domain, rng);
}

/// Fraction of training points misclassified at x + delta. Linear models use
/// the exact margin test y <x, theta> - eps ||theta||_* <= 0 (dual norm of the
/// set's norm); MLPs use PGD on the head's loss.
inline double robust_train_error(const Model& m, const Dataset& ds, const PerturbationSet& set,
                                 const PgdConfig& pgd_eval, Rng* rng = nullptr) {
  if (ds.empty()) return 0.0;
  if (set.epsilon == 0.0) return std_error(m, ds);
  if (const auto* lin = std::get_if<LinearModel>(&m)) {
    const double dual = set.norm == Norm::L2 ? lin->theta.norm() : lin->theta.lpNorm<1>();
    const Vector scores = ds.X * lin->theta;
    Index wrong = 0;
    for (Index i = 0; i < ds.size(); ++i) {
      wrong += ds.signed_label(i) * scores[i] - set.epsilon * dual <= 0.0;
    }
    return static_cast<double>(wrong) / static_cast<double>(ds.size());
  }
  const auto& mlp = std::get<MlpModel>(m);
  const Matrix Y = mlp_targets(mlp, ds);
  const DomainBox* domain = ds.domain ? &*ds.domain : nullptr;
  const Matrix deltas = mlp_pgd_deltas(mlp, ds.X, Y, set, pgd_eval, domain, rng, default_loss(mlp.head()));
  return misclassified_fraction(m, ds.X + deltas, ds);
}

/// Error on the training points with fresh N(0, sigma^2) noise (clamped to
/// the domain box); the robust error of a smoothing-trained model.
inline double noisy_train_error(const Model& m, const Dataset& ds, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix noisy = smoothing_noise(ds.X, sigma, rng, ds.domain ? &*ds.domain : nullptr);
  return misclassified_fraction(m, noisy, ds);
}

/// First grid value whose robust training error exceeds `level`.
inline std::optional<double> interpolation_threshold(
    const std::vector<std::pair<double, double>>& curve, double level = 0.02) {
  if (curve.empty()) throw ContractError("interpolation_threshold: empty curve");
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (!(curve[i].first >= curve[i - 1].first)) {
      throw ContractError("interpolation_threshold: curve not sorted by parameter");
    }
  }
  for (const auto& [param, err] : curve) {
    if (err > level) return param;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

enum : std::uint64_t {
  kStreamInit = 0,
  kStreamShuffle = 1,
  kStreamAttack = 2,
  kStreamSmoothing = 3,
  kStreamFixedNoise = 4,
  kStreamEval = 5,
};

inline double lr_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int m : cfg.lr_milestones) {
    if (epoch >= m) lr *= cfg.lr_decay;
  }
  return lr;
}

/// First-order optimizer state over a flat parameter vector.
class StepRule {
 public:
  StepRule(const TrainConfig& cfg, Index size)
      : cfg_(cfg), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

  void apply(Vector& params, const Vector& grad, double lr) {
    switch (cfg_.optimizer) {
      case Optimizer::Adam: {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t_;
        m_ = b1 * m_ + (1 - b1) * grad;
        v_ = b2 * v_ + (1 - b2) * grad.cwiseAbs2();
        const double c1 = 1 - std::pow(b1, t_);
        const double c2 = 1 - std::pow(b2, t_);
        params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
        break;
      }
      case Optimizer::SgdMomentum:
        m_ = cfg_.momentum * m_ + grad;
        params -= lr * m_;
        break;
      case Optimizer::FullBatchGd:
        params -= lr * grad;
        break;
    }
  }

 private:
  const TrainConfig& cfg_;
  Vector m_, v_;
  int t_ = 0;
};

/// Full-batch gradient descent with Armijo backtracking on the exact
/// adversarial logistic objective (plus L2 weight decay).
inline TrainedModel train_linear_backtracking(LinearModel model, const Dataset& ds, double epsilon,
                                              const TrainConfig& cfg) {
  const Vector y = ds.signed_labels();
  const double wd = cfg.weight_decay;
  auto objective = [&](const LinearModel& m) {
    auto g = adv_logistic_grad(m, ds.X, y, epsilon);
    if (wd > 0) {
      g.loss += 0.5 * wd * m.theta.squaredNorm();
      g.params += wd * m.theta;
    }
    return g;
  };
  TrainedModel out;
  GradientBundle g = objective(model);
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    const double gnorm = g.params.norm();
    if (!std::isfinite(g.loss) || !std::isfinite(gnorm)) throw TrainingError("loss diverged", it);
    if (gnorm <= cfg.grad_tol) break;
    double step = 1.0;
    LinearModel trial;
    GradientBundle tg;
    bool accepted = false;
    for (int halvings = 0; halvings < 80; ++halvings, step *= 0.5) {
      trial.theta = model.theta - step * g.params;
      tg = objective(trial);
      if (std::isfinite(tg.loss) && tg.loss <= g.loss - 1e-4 * step * gnorm * gnorm) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // no representable decrease left
    model = std::move(trial);
    g = std::move(tg);
    if (cfg.record_trace) {
      const double err = robust_train_error(model, ds, PerturbationSet(Norm::L2, epsilon), {});
      out.trace.push_back({it + 1, g.loss, err});
    }
  }
  out.iterations = it;
  out.final_grad_norm = g.params.norm();
  out.model = std::move(model);
  return out;
}

}  // namespace detail

/// Trains a fresh model on `ds`, deterministically in cfg.seed.
///
/// Adversarial MLP steps differentiate at x + delta with delta from PGD
/// against the current parameters; adversarial linear models with an L2 set
/// minimize the exact closed-form adversarial logistic loss instead.
/// Smoothing adds fresh noise to each minibatch; fixed_noise noises the data
/// once and then trains as standard. Final errors are measured on the clean
/// `ds` (std) and under the mode's perturbation (robust).
inline TrainedModel train(const ModelSpec& spec, const Dataset& ds, const TrainConfig& cfg,
                          const BatchObserver& observer = {}) {
  if (ds.empty()) throw ContractError("train: empty dataset");
  cfg.validate();
  const Rng root(cfg.seed);
  Rng init_rng = root.child(detail::kStreamInit);
  Rng shuffle_rng = root.child(detail::kStreamShuffle);
  Rng attack_rng = root.child(detail::kStreamAttack);
  Rng noise_rng = root.child(detail::kStreamSmoothing);

  const Dataset fit_data = cfg.mode == TrainMode::FixedNoise
                               ? add_fixed_gaussian_noise(ds, cfg.sigma, root.child(detail::kStreamFixedNoise).seed())
                               : ds;
  const DomainBox* domain = fit_data.domain ? &*fit_data.domain : nullptr;
  const bool adversarial = cfg.mode == TrainMode::Adversarial && cfg.set.epsilon > 0;

  Model model = spec.init(ds.dim(), ds.num_classes, init_rng);
  TrainedModel out;

  auto* linear = std::get_if<LinearModel>(&model);
  if (linear && adversarial && cfg.set.norm != Norm::L2) {
    throw ContractError("train: adversarial linear training supports the l2 norm only");
  }
  if (!linear && adversarial && !cfg.pgd_usable()) {
    throw ContractError("train: adversarial mode needs pgd.steps >= 1 and pgd.step_size > 0");
  }

  if (linear && cfg.optimizer == Optimizer::FullBatchGd) {
    if (cfg.mode == TrainMode::Smoothing) {
      throw ContractError("train: backtracking full-batch descent needs a deterministic objective");
    }
    if (observer) observer(0, fit_data.X);
    const double eps = cfg.mode == TrainMode::Adversarial ? cfg.set.epsilon : 0.0;
    out = detail::train_linear_backtracking(std::move(*linear), fit_data, eps, cfg);
  } else {
    Vector* params = linear ? &linear->theta : &std::get<MlpModel>(model).params();
    auto* mlp = std::get_if<MlpModel>(&model);
    const Matrix targets = mlp ? mlp_targets(*mlp, fit_data) : Matrix(fit_data.signed_labels());
    const LossKind loss = mlp ? default_loss(mlp->head()) : LossKind::Logistic;
    const Index n = fit_data.size();
    const Index batch = cfg.optimizer == Optimizer::FullBatchGd ? n : std::min(cfg.batch_size, n);
    detail::StepRule rule(cfg, params->size());

    Matrix Xb, Yb;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto order = shuffle_rng.permutation(n);
      const double lr = detail::lr_at(cfg, epoch);
      double loss_sum = 0.0;
      Index wrong = 0;
      for (Index start = 0; start < n; start += batch) {
        const Index len = std::min(batch, n - start);
        Xb.resize(len, fit_data.dim());
        Yb.resize(len, targets.cols());
        for (Index r = 0; r < len; ++r) {
          Xb.row(r) = fit_data.X.row(order[static_cast<std::size_t>(start + r)]);
          Yb.row(r) = targets.row(order[static_cast<std::size_t>(start + r)]);
        }
        if (cfg.mode == TrainMode::Smoothing) Xb = smoothing_noise(Xb, cfg.sigma, noise_rng, domain);

        Vector grad;
        double batch_loss = 0.0;
        try {
          if (mlp) {
            if (adversarial) {
              Xb += mlp_pgd_deltas(*mlp, Xb, Yb, cfg.set, cfg.pgd, domain, &attack_rng, loss);
            }
            if (observer) observer(epoch, Xb);
            auto g = mlp_backward_batch(*mlp, Xb, Yb, loss, true, false);
            batch_loss = g.mean_loss;
            grad = std::move(g.param_grad);
          } else {
            if (observer) observer(epoch, Xb);
            auto g = adv_logistic_grad(*linear, Xb, Yb.col(0), adversarial ? cfg.set.epsilon : 0.0);
            batch_loss = g.loss;
            grad = std::move(g.params);
          }
        } catch (const NumericError& e) {
          throw TrainingError(e.what(), static_cast<std::size_t>(epoch));
        } catch (const AttackError& e) {
          throw TrainingError(e.what(), static_cast<std::size_t>(epoch));
        }
        if (!std::isfinite(batch_loss) || !all_finite(grad)) {
          throw TrainingError("loss diverged", static_cast<std::size_t>(epoch));
        }
        if (cfg.record_trace) {
          const auto pred = predict_class(model, Xb);
          const bool one_hot = mlp && mlp->head() != Head::BinarySign;
          for (Index r = 0; r < len; ++r) {
            Index cls = Yb(r, 0) > 0 ? 1 : 0;
            if (one_hot) Yb.row(r).maxCoeff(&cls);
            wrong += pred[static_cast<std::size_t>(r)] != cls;
          }
        }
        loss_sum += batch_loss * static_cast<double>(len);
        if (cfg.weight_decay > 0) grad += cfg.weight_decay * *params;
        rule.apply(*params, grad, lr);
      }
      const double epoch_loss = loss_sum / static_cast<double>(n);
      if (!std::isfinite(epoch_loss) || !all_finite(*params)) {
        throw TrainingError("loss diverged", static_cast<std::size_t>(epoch));
      }
      if (cfg.record_trace) {
        out.trace.push_back({epoch, epoch_loss, static_cast<double>(wrong) / static_cast<double>(n)});
      }
    }
    out.iterations = cfg.epochs;
    out.model = std::move(model);
  }

  out.std_train_error = std_error(out.model, ds);
  switch (cfg.mode) {
    case TrainMode::Standard:
      out.robust_train_error = out.std_train_error;
      break;
    case TrainMode::Adversarial: {
      Rng eval_rng = root.child(detail::kStreamEval);
      out.robust_train_error = robust_train_error(out.model, ds, cfg.set, cfg.pgd, &eval_rng);
      break;
    }
    case TrainMode::Smoothing:
      out.robust_train_error = noisy_train_error(out.model, ds, cfg.sigma, root.child(detail::kStreamEval).seed());
      break;
    case TrainMode::FixedNoise:
      out.robust_train_error = std_error(out.model, fit_data);
      break;
  }
  return out;
}

/// `epoch,loss,robust_train_error` rows.
inline void save_trace_csv(const TrainedModel& tm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "epoch,loss,robust_train_error\n";
  for (const auto& r : tm.trace) {
    out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.robust_train_error) << '\n';
  }
  if (!out) throw IoError(path, "write failed");
}

}  // namespace advbv
