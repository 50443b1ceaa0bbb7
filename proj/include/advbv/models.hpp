#pragma once

// Linear logistic model and a fully connected network with hand-written
// forward/backward passes, plus text checkpoints.

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "advbv/attacks.hpp"
#include "advbv/numerics.hpp"

namespace advbv {

enum class Activation { ReLU, Tanh };

/// Output head. Softmax heads emit class probabilities and train with cross
/// entropy or squared loss; the binary head emits one score whose sign is the
/// prediction and trains with the logistic loss.
enum class Head { SoftmaxCE, SoftmaxSquared, BinarySign };

enum class LossKind { CrossEntropy, Squared, Logistic };

inline std::string_view to_string(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }
inline std::string_view to_string(Head h) {
  switch (h) {
    case Head::SoftmaxCE: return "softmax_ce";
    case Head::SoftmaxSquared: return "softmax_squared";
    case Head::BinarySign: return "binary_sign";
  }
  return "?";
}
inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::Squared: return "squared";
    case LossKind::Logistic: return "logistic";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  throw ContractError("unknown activation '" + std::string(s) + "'");
}
inline Head parse_head(std::string_view s) {
  if (s == "softmax_ce") return Head::SoftmaxCE;
  if (s == "softmax_squared") return Head::SoftmaxSquared;
  if (s == "binary_sign") return Head::BinarySign;
  throw ContractError("unknown head '" + std::string(s) + "'");
}
inline LossKind parse_loss(std::string_view s) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "squared") return LossKind::Squared;
  if (s == "logistic") return LossKind::Logistic;
  throw ContractError("unknown loss '" + std::string(s) + "'");
}

inline LossKind default_loss(Head h) {
  switch (h) {
    case Head::SoftmaxCE: return LossKind::CrossEntropy;
    case Head::SoftmaxSquared: return LossKind::Squared;
    case Head::BinarySign: return LossKind::Logistic;
  }
  return LossKind::CrossEntropy;
}

/// Loss value plus gradients. `params` has the layout of the owner's
/// parameter vector; `input` is the gradient with respect to the input for
/// single-sample calls and empty otherwise.
struct GradientBundle {
  double loss = 0.0;
  Vector params;
  Vector input;
};

// ---------------------------------------------------------------------------
// Linear logistic
// ---------------------------------------------------------------------------

struct LinearModel {
  Vector theta;

  Index dim() const { return theta.size(); }
};

inline double linear_forward(const LinearModel& model, const Eigen::Ref<const Vector>& x) {
  require_dim(x.size(), model.dim(), "linear_forward");
  return model.theta.dot(x);
}

/// Gradient of exact_l2_margin_loss in theta:
/// (1/n) sum sigmoid(-m_i) (-y_i x_i + eps theta / ||theta||), with
/// m_i = y_i <x_i, theta> - eps ||theta||. At theta = 0 the eps term is the
/// zero subgradient.
inline GradientBundle adv_logistic_grad(const LinearModel& model, const Matrix& X, const Vector& y,
                                        double epsilon) {
  require_dim(X.cols(), model.dim(), "adv_logistic_grad");
  require_dim(y.size(), X.rows(), "adv_logistic_grad labels");
  if (!(epsilon >= 0)) throw ContractError("adv_logistic_grad: epsilon must be >= 0");
  GradientBundle out;
  out.params = Vector::Zero(model.dim());
  const Index n = X.rows();
  if (n == 0) return out;
  const double len = model.theta.norm();
  const Vector margins = (y.array() * (X * model.theta).array()).matrix();
  Vector weights(n);  // sigmoid(-m_i)
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double m = margins[i] - epsilon * len;
    loss += softplus(m);
    weights[i] = sigmoid(-m);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss = loss * inv_n;
  out.params = -(X.transpose() * (weights.array() * y.array()).matrix()) * inv_n;
  if (epsilon > 0 && len > 0) out.params += (epsilon * weights.sum() * inv_n / len) * model.theta;
  return out;
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// Fully connected network stored as one flat parameter vector.
///
/// Layer l maps widths[l] -> widths[l+1]; its weight is a row-major
/// widths[l+1] x widths[l] block followed by a bias of length widths[l+1].
/// Hidden layers use `activation`; the last layer feeds the head.
class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(std::vector<Index> widths, Activation activation, Head head)
      : widths_(std::move(widths)), activation_(activation), head_(head) {
    if (widths_.size() < 2) throw ContractError("MlpModel: need at least input and output widths");
    for (Index w : widths_) {
      if (w < 1) throw ContractError("MlpModel: widths must be positive");
    }
    if (head_ == Head::BinarySign && widths_.back() != 1) {
      throw ContractError("MlpModel: binary head needs output width 1");
    }
    if (head_ != Head::BinarySign && widths_.back() < 2) {
      throw ContractError("MlpModel: softmax head needs at least two outputs");
    }
    Index offset = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      offsets_.push_back(offset);
      offset += widths_[l + 1] * widths_[l] + widths_[l + 1];
    }
    params_ = Vector::Zero(offset);
  }

  /// Uniform He-style init: W ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), b = 0.
  static MlpModel he_uniform(std::vector<Index> widths, Activation activation, Head head, Rng& rng) {
    MlpModel m(std::move(widths), activation, head);
    for (Index l = 0; l < m.num_layers(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(m.widths_[static_cast<std::size_t>(l)]));
      auto w = m.weight(l);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
    }
    return m;
  }

  Index num_layers() const { return static_cast<Index>(widths_.size()) - 1; }
  Index input_dim() const { return widths_.front(); }
  Index output_dim() const { return widths_.back(); }
  const std::vector<Index>& widths() const { return widths_; }
  Activation activation() const { return activation_; }
  Head head() const { return head_; }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<Matrix> weight(Index l) {
    return {params_.data() + offsets_[static_cast<std::size_t>(l)], out_of(l), in_of(l)};
  }
  Eigen::Map<const Matrix> weight(Index l) const {
    return {params_.data() + offsets_[static_cast<std::size_t>(l)], out_of(l), in_of(l)};
  }
  Eigen::Map<Vector> bias(Index l) {
    return {params_.data() + offsets_[static_cast<std::size_t>(l)] + out_of(l) * in_of(l), out_of(l)};
  }
  Eigen::Map<const Vector> bias(Index l) const {
    return {params_.data() + offsets_[static_cast<std::size_t>(l)] + out_of(l) * in_of(l), out_of(l)};
  }

  /// Offset of layer l's weight block inside params().
  Index offset(Index l) const { return offsets_[static_cast<std::size_t>(l)]; }

 private:
  Index in_of(Index l) const { return widths_[static_cast<std::size_t>(l)]; }
  Index out_of(Index l) const { return widths_[static_cast<std::size_t>(l) + 1]; }

  std::vector<Index> widths_;
  std::vector<Index> offsets_;
  Activation activation_ = Activation::ReLU;
  Head head_ = Head::SoftmaxCE;
  Vector params_;
};

namespace detail {

inline void check_layer(const Matrix& m, Index layer) {
  if (!all_finite(m)) {
    throw NumericError("mlp: non-finite activation at layer " + std::to_string(layer));
  }
}

inline void check_loss_head(Head head, LossKind loss) {
  const bool binary = head == Head::BinarySign;
  if (binary != (loss == LossKind::Logistic)) {
    throw ContractError("mlp: loss '" + std::string(to_string(loss)) + "' does not match head '" +
                        std::string(to_string(head)) + "'");
  }
}

/// Pre-activations of every layer for a batch (row per sample).
struct ForwardCache {
  std::vector<Matrix> pre;   // pre[l] = A[l] W_l^T + b_l
  std::vector<Matrix> post;  // post[0] = X, post[l+1] = act(pre[l]) for hidden layers
};

inline ForwardCache forward_cache(const MlpModel& model, const Matrix& X) {
  require_dim(X.cols(), model.input_dim(), "mlp_forward");
  ForwardCache cache;
  const Index L = model.num_layers();
  cache.pre.reserve(static_cast<std::size_t>(L));
  cache.post.reserve(static_cast<std::size_t>(L));
  cache.post.push_back(X);
  for (Index l = 0; l < L; ++l) {
    Matrix z = cache.post.back() * model.weight(l).transpose();
    z.rowwise() += model.bias(l).transpose();
    check_layer(z, l);
    if (l + 1 < L) {
      Matrix a = model.activation() == Activation::ReLU ? Matrix(z.cwiseMax(0.0))
                                                        : Matrix(z.array().tanh().matrix());
      cache.post.push_back(std::move(a));
    }
    cache.pre.push_back(std::move(z));
  }
  return cache;
}

}  // namespace detail

/// Outputs for a batch: softmax probabilities (softmax heads) or the raw
/// score column (binary head).
inline Matrix mlp_forward_batch(const MlpModel& model, const Matrix& X) {
  auto cache = detail::forward_cache(model, X);
  if (model.head() == Head::BinarySign) return std::move(cache.pre.back());
  return softmax_rows(cache.pre.back());
}

inline Vector mlp_forward(const MlpModel& model, const Eigen::Ref<const Vector>& x) {
  Matrix X = x.transpose();
  return mlp_forward_batch(model, X).row(0).transpose();
}

/// Class probabilities for a batch, for either head (binary head ->
/// (sigmoid(-s), sigmoid(s)), class 0 = label -1).
inline Matrix mlp_probabilities(const MlpModel& model, const Matrix& X) {
  Matrix out = mlp_forward_batch(model, X);
  if (model.head() != Head::BinarySign) return out;
  Matrix p(out.rows(), 2);
  for (Index r = 0; r < out.rows(); ++r) {
    p(r, 0) = sigmoid(-out(r, 0));
    p(r, 1) = sigmoid(out(r, 0));
  }
  return p;
}

/// Batch losses and gradients.
///
/// `Y` is one-hot (B x k) for softmax heads and a B x 1 column of +-1 for the
/// binary head. `param_grad` is the gradient of the mean loss; rows of
/// `input_grad` are gradients of each sample's own loss.
struct BatchGradient {
  Vector losses;
  double mean_loss = 0.0;
  Vector param_grad;
  Matrix input_grad;
};

inline BatchGradient mlp_backward_batch(const MlpModel& model, const Matrix& X, const Matrix& Y,
                                        LossKind loss, bool want_params = true,
                                        bool want_input = true) {
  detail::check_loss_head(model.head(), loss);
  const Index B = X.rows();
  require_dim(Y.rows(), B, "mlp_backward targets");
  require_dim(Y.cols(), model.output_dim(), "mlp_backward target width");
  auto cache = detail::forward_cache(model, X);
  const Index L = model.num_layers();
  const Matrix& logits = cache.pre.back();

  BatchGradient out;
  out.losses.resize(B);
  Matrix dz(B, model.output_dim());
  if (loss == LossKind::Logistic) {
    for (Index r = 0; r < B; ++r) {
      const double m = Y(r, 0) * logits(r, 0);
      out.losses[r] = softplus(m);
      dz(r, 0) = -Y(r, 0) * sigmoid(-m);
    }
  } else {
    const Matrix P = softmax_rows(logits);
    if (loss == LossKind::CrossEntropy) {
      for (Index r = 0; r < B; ++r) {
        // -log p_y via log-sum-exp on the logits.
        out.losses[r] = log_sum_exp(logits.row(r)) - logits.row(r).dot(Y.row(r));
      }
      dz = P - Y;
    } else {
      const Matrix diff = P - Y;
      out.losses = diff.rowwise().squaredNorm();
      const Matrix g = 2.0 * diff;
      for (Index r = 0; r < B; ++r) {
        const double inner = P.row(r).dot(g.row(r));
        dz.row(r) = (P.row(r).array() * (g.row(r).array() - inner)).matrix();
      }
    }
  }
  out.mean_loss = B > 0 ? out.losses.mean() : 0.0;
  if (!std::isfinite(out.mean_loss)) throw NumericError("mlp: non-finite loss at layer " + std::to_string(L - 1));

  if (want_params) out.param_grad = Vector::Zero(model.params().size());
  const double inv_b = B > 0 ? 1.0 / static_cast<double>(B) : 0.0;
  for (Index l = L - 1; l >= 0; --l) {
    if (want_params) {
      Eigen::Map<Matrix> gw(out.param_grad.data() + model.offset(l), model.weight(l).rows(),
                            model.weight(l).cols());
      gw.noalias() = dz.transpose() * cache.post[static_cast<std::size_t>(l)];
      gw *= inv_b;
      Eigen::Map<Vector> gb(out.param_grad.data() + model.offset(l) + gw.size(), gw.rows());
      gb = dz.colwise().sum().transpose() * inv_b;
    }
    if (l == 0 && !want_input) break;
    Matrix da = dz * model.weight(l);
    detail::check_layer(da, l);
    if (l == 0) {
      out.input_grad = std::move(da);
      break;
    }
    const Matrix& z = cache.pre[static_cast<std::size_t>(l) - 1];
    if (model.activation() == Activation::ReLU) {
      dz = (z.array() > 0.0).select(da, 0.0);
    } else {
      const Matrix& a = cache.post[static_cast<std::size_t>(l)];
      dz = (da.array() * (1.0 - a.array().square())).matrix();
    }
  }
  return out;
}

/// Single-sample gradient bundle. `y` is one-hot (softmax heads) or a
/// length-1 vector holding +-1 (binary head).
inline GradientBundle mlp_backward(const MlpModel& model, const Eigen::Ref<const Vector>& x,
                                   const Eigen::Ref<const Vector>& y, LossKind loss) {
  if (loss != LossKind::Logistic) {
    if (std::abs(y.sum() - 1.0) > 1e-12 || (y.array() != 0.0 && y.array() != 1.0).any()) {
      throw ContractError("mlp_backward: target is not one-hot");
    }
  }
  Matrix X = x.transpose();
  Matrix Y = y.transpose();
  auto batch = mlp_backward_batch(model, X, Y, loss);
  return {batch.mean_loss, std::move(batch.param_grad), batch.input_grad.row(0).transpose()};
}

// ---------------------------------------------------------------------------
// Model variant and checkpoints
// ---------------------------------------------------------------------------

using Model = std::variant<LinearModel, MlpModel>;

inline Index input_dim(const Model& m) {
  return std::visit([](const auto& v) -> Index {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, LinearModel>) return v.dim();
    else return v.input_dim();
  }, m);
}

inline const Vector& parameters(const Model& m) {
  return std::visit([](const auto& v) -> const Vector& {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, LinearModel>) return v.theta;
    else return v.params();
  }, m);
}

/// Class probabilities (class 0 = label -1 for binary models) for each row.
inline Matrix predict_proba(const Model& m, const Matrix& X) {
  if (const auto* lin = std::get_if<LinearModel>(&m)) {
    require_dim(X.cols(), lin->dim(), "predict_proba");
    const Vector s = X * lin->theta;
    Matrix p(X.rows(), 2);
    for (Index r = 0; r < X.rows(); ++r) {
      p(r, 0) = sigmoid(-s[r]);
      p(r, 1) = sigmoid(s[r]);
    }
    return p;
  }
  return mlp_probabilities(std::get<MlpModel>(m), X);
}

/// Predicted class index per row.
inline std::vector<int> predict_class(const Model& m, const Matrix& X) {
  std::vector<int> out(static_cast<std::size_t>(X.rows()));
  if (const auto* lin = std::get_if<LinearModel>(&m)) {
    const Vector s = X * lin->theta;
    for (Index r = 0; r < X.rows(); ++r) out[static_cast<std::size_t>(r)] = s[r] > 0 ? 1 : 0;
    return out;
  }
  const auto& mlp = std::get<MlpModel>(m);
  const Matrix o = mlp_forward_batch(mlp, X);
  for (Index r = 0; r < X.rows(); ++r) {
    if (mlp.head() == Head::BinarySign) {
      out[static_cast<std::size_t>(r)] = o(r, 0) > 0 ? 1 : 0;
    } else {
      Index best = 0;
      o.row(r).maxCoeff(&best);
      out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
  }
  return out;
}

/// Text checkpoint: a header with kind and shapes, then one parameter per
/// line with 17 significant digits (exact round trip).
inline void save_model(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "advbv-model 1\n";
  if (const auto* lin = std::get_if<LinearModel>(&m)) {
    out << "kind linear\ndim " << lin->dim() << '\n';
  } else {
    const auto& mlp = std::get<MlpModel>(m);
    out << "kind mlp\nactivation " << to_string(mlp.activation()) << "\nhead " << to_string(mlp.head())
        << "\nwidths " << mlp.widths().size();
    for (Index w : mlp.widths()) out << ' ' << w;
    out << '\n';
  }
  const Vector& p = parameters(m);
  out << "params " << p.size() << '\n';
  for (Index i = 0; i < p.size(); ++i) out << format_double(p[i]) << '\n';
  if (!out) throw IoError(path, "write failed");
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  auto expect = [&](const std::string& key) {
    std::string got;
    in >> got;
    if (got != key) throw IoError(path, "expected '" + key + "', found '" + got + "'");
  };
  int version = 0;
  expect("advbv-model");
  in >> version;
  if (version != 1) throw IoError(path, "unsupported checkpoint version");
  std::string kind;
  expect("kind");
  in >> kind;
  auto read_params = [&](Vector& p) {
    Index count = 0;
    expect("params");
    in >> count;
    if (count != p.size()) throw IoError(path, "parameter count does not match shape header");
    std::string token;
    for (Index i = 0; i < count; ++i) {
      if (!(in >> token)) throw IoError(path, "truncated parameter list");
      p[i] = parse_double(token);
    }
  };
  if (kind == "linear") {
    Index dim = 0;
    expect("dim");
    in >> dim;
    LinearModel lin{Vector::Zero(dim)};
    read_params(lin.theta);
    return lin;
  }
  if (kind != "mlp") throw IoError(path, "unknown model kind '" + kind + "'");
  std::string act, head;
  expect("activation");
  in >> act;
  expect("head");
  in >> head;
  std::size_t layers = 0;
  expect("widths");
  in >> layers;
  std::vector<Index> widths(layers);
  for (auto& w : widths) in >> w;
  if (!in) throw IoError(path, "malformed shape header");
  MlpModel mlp(widths, parse_activation(act), parse_head(head));
  read_params(mlp.params());
  return mlp;
}

}  // namespace advbv
