#pragma once

// Norm-ball perturbation sets, the PGD inner maximization with best-iterate
// tracking, the closed-form worst case for linear scores, and per-minibatch
// Gaussian smoothing noise.

#include <cmath>
#include <string>
#include <string_view>

#include "advbv/datasets.hpp"
#include "advbv/numerics.hpp"

namespace advbv {

enum class Norm { L2, Linf };

inline std::string_view to_string(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

inline Norm parse_norm(std::string_view s) {
  if (s == "l2") return Norm::L2;
  if (s == "linf") return Norm::Linf;
  throw ContractError("unknown norm '" + std::string(s) + "' (expected l2 or linf)");
}

template <typename Derived>
double norm_of(const Eigen::MatrixBase<Derived>& v, Norm norm) {
  return norm == Norm::L2 ? v.norm() : v.template lpNorm<Eigen::Infinity>();
}

/// {delta : ||delta||_norm <= epsilon}.
struct PerturbationSet {
  Norm norm = Norm::Linf;
  double epsilon = 0.0;

  PerturbationSet() = default;
  PerturbationSet(Norm n, double eps) : norm(n), epsilon(eps) {
    if (!(eps >= 0)) throw ContractError("PerturbationSet: epsilon must be >= 0");
  }

  /// Euclidean projection onto the set, in place.
  template <typename Derived>
  void project_in_place(Eigen::MatrixBase<Derived>& delta) const {
    if (norm == Norm::Linf) {
      delta = delta.cwiseMax(-epsilon).cwiseMin(epsilon);
    } else {
      const double len = delta.norm();
      if (len > epsilon) delta *= epsilon / len;
    }
  }

  /// Projects every row of `deltas`.
  void project_rows(Matrix& deltas) const {
    for (Index r = 0; r < deltas.rows(); ++r) {
      auto row = deltas.row(r);
      project_in_place(row);
    }
  }

  bool contains(const Eigen::Ref<const Vector>& delta, double tol = 1e-12) const {
    return norm_of(delta, norm) <= epsilon + tol;
  }
};

inline Vector project(const Eigen::Ref<const Vector>& delta, const PerturbationSet& set) {
  if (!all_finite(delta)) throw ContractError("project: non-finite delta");
  Vector out = delta;
  set.project_in_place(out);
  return out;
}

struct PgdConfig {
  int steps = 10;
  double step_size = 0.0;
  bool random_start = false;
  bool clip_to_domain = true;
};

/// Per-row losses and per-row input gradients of a batch.
struct BatchLossGrad {
  Vector loss;
  Matrix input_grad;
};

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// PGD on a batch of inputs, one independent attack per row.
///
/// `loss_and_grad(X')` returns the per-row loss and its gradient with respect
/// to each row of X'. Linf steps move by step_size * sign(g), L2 steps by
/// step_size * g / ||g||; each step is followed by projection onto `set` and,
/// when `cfg.clip_to_domain` and a domain box is given, by clamping x + delta
/// into the box. The returned delta of each row is the highest-loss iterate
/// seen, starting from delta = 0, so loss(x + delta) >= loss(x) holds exactly.
template <typename LossGradFn>
Matrix pgd_attack_batch(LossGradFn&& loss_and_grad, const Matrix& X, const PerturbationSet& set,
                        const PgdConfig& cfg, const DomainBox* domain = nullptr,
                        Rng* rng = nullptr) {
  Matrix best = Matrix::Zero(X.rows(), X.cols());
  if (set.epsilon == 0.0 || X.rows() == 0) return best;
  if (cfg.steps < 1 || !(cfg.step_size > 0)) {
    throw ContractError("pgd_attack: need steps >= 1 and step_size > 0");
  }
  if (cfg.random_start && rng == nullptr) throw ContractError("pgd_attack: random_start needs an Rng");
  const bool clip = cfg.clip_to_domain && domain != nullptr;

  auto evaluate = [&](const Matrix& delta, std::size_t iterate) {
    BatchLossGrad out = loss_and_grad(Matrix(X + delta));
    if (out.loss.size() != X.rows()) throw ContractError("pgd_attack: callback returned wrong loss count");
    require_same_shape(out.input_grad, X, "pgd_attack gradient");
    if (!all_finite(out.loss) || !all_finite(out.input_grad)) {
      throw AttackError("non-finite loss or gradient from model", iterate);
    }
    return out;
  };
  auto clamp_to_domain = [&](Matrix& delta) {
    if (!clip) return;
    Matrix moved = X + delta;
    domain->clamp_rows(moved);
    delta = moved - X;
  };

  BatchLossGrad current = evaluate(best, 0);
  Vector best_loss = current.loss;
  Matrix delta = Matrix::Zero(X.rows(), X.cols());

  if (cfg.random_start) {
    for (Index i = 0; i < delta.size(); ++i) delta.data()[i] = rng->uniform(-set.epsilon, set.epsilon);
    set.project_rows(delta);
    clamp_to_domain(delta);
    current = evaluate(delta, 0);
    for (Index r = 0; r < X.rows(); ++r) {
      if (current.loss[r] > best_loss[r]) {
        best_loss[r] = current.loss[r];
        best.row(r) = delta.row(r);
      }
    }
  }

  for (int t = 1; t <= cfg.steps; ++t) {
    if (set.norm == Norm::Linf) {
      delta += cfg.step_size * current.input_grad.unaryExpr([](double g) {
        return static_cast<double>((g > 0) - (g < 0));
      });
    } else {
      for (Index r = 0; r < X.rows(); ++r) {
        const double len = current.input_grad.row(r).norm();
        if (len > 0) delta.row(r) += (cfg.step_size / len) * current.input_grad.row(r);
      }
    }
    set.project_rows(delta);
    clamp_to_domain(delta);
    current = evaluate(delta, static_cast<std::size_t>(t));
    for (Index r = 0; r < X.rows(); ++r) {
      if (current.loss[r] > best_loss[r]) {
        best_loss[r] = current.loss[r];
        best.row(r) = delta.row(r);
      }
    }
  }
  return best;
}

/// Single-input PGD; `loss_and_grad(x')` returns LossGrad at x'.
template <typename LossGradFn>
Vector pgd_attack(LossGradFn&& loss_and_grad, const Vector& x, const PerturbationSet& set,
                  const PgdConfig& cfg, const DomainBox* domain = nullptr, Rng* rng = nullptr) {
  auto batched = [&](const Matrix& Xb) {
    LossGrad lg = loss_and_grad(Vector(Xb.row(0).transpose()));
    BatchLossGrad out{Vector::Constant(1, lg.loss), Matrix(1, Xb.cols())};
    if (lg.grad.size() != Xb.cols()) throw ContractError("pgd_attack: gradient has wrong size");
    out.input_grad.row(0) = lg.grad.transpose();
    return out;
  };
  Matrix X = x.transpose();
  return pgd_attack_batch(batched, X, set, cfg, domain, rng).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Linear scores
// ---------------------------------------------------------------------------

/// (1/n) sum softplus(y_i <x_i, theta> - epsilon ||theta||_2): the logistic
/// loss at the exact worst case over the L2 ball of radius epsilon.
inline double exact_l2_margin_loss(const Vector& theta, const Matrix& X, const Vector& y,
                                   double epsilon) {
  require_dim(X.cols(), theta.size(), "exact_l2_margin_loss");
  require_dim(y.size(), X.rows(), "exact_l2_margin_loss labels");
  if (X.rows() == 0) return 0.0;
  const double shrink = epsilon * theta.norm();
  const Vector margins = (y.array() * (X * theta).array()).matrix();
  double total = 0.0;
  for (Index i = 0; i < margins.size(); ++i) total += softplus(margins[i] - shrink);
  return total / static_cast<double>(X.rows());
}

/// Maximizer of the loss of a signed linear score y <x + delta, theta> over
/// the set: -eps * y * theta / ||theta||_2 (L2) or -eps * y * sign(theta) (Linf).
inline Vector linear_worst_case_delta(const Vector& theta, double y, const PerturbationSet& set) {
  if (set.norm == Norm::L2) {
    const double len = theta.norm();
    if (len == 0.0) return Vector::Zero(theta.size());
    return (-set.epsilon * y / len) * theta;
  }
  return theta.unaryExpr([&](double t) {
    return -set.epsilon * y * static_cast<double>((t > 0) - (t < 0));
  });
}

// ---------------------------------------------------------------------------
// Smoothing noise
// ---------------------------------------------------------------------------

/// batch + N(0, sigma^2) per element, fresh on every call; clamped into the
/// domain box when one is given.
inline Matrix smoothing_noise(const Matrix& batch, double sigma, Rng& rng,
                              const DomainBox* domain = nullptr) {
  if (!(sigma >= 0)) throw ContractError("smoothing_noise: sigma must be >= 0");
  if (sigma == 0.0) return batch;
  Matrix out = batch + rng.normal_matrix(batch.rows(), batch.cols(), sigma);
  if (domain) domain->clamp_rows(out);
  return out;
}

}  // namespace advbv
