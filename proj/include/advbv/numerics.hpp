#pragma once

// Dense linear algebra aliases, the seeded random stream, and numerically
// stable special functions shared by every other module.

#include <Eigen/Dense>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "advbv/errors.hpp"

namespace advbv {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer. Used for seeding and for deriving child streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seeded random stream.
///
/// The generator is xoshiro256** with its 256-bit state filled by four
/// successive SplitMix64 outputs of the seed. Uniform doubles take the top 53
/// bits of a draw; normal draws use Box-Muller on that uniform stream (pairs,
/// second value cached). All of this is integer arithmetic up to the final
/// conversion, so a seed yields the same stream on every platform.
///
/// Child streams are a pure function of (seed, stream id) and do not depend on
/// how much of the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {
    for (std::size_t i = 0; i < state_.size(); ++i) {
      state_[i] = splitmix64(seed + i * 0x9E3779B97F4A7C15ULL);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }

  /// Seed of child stream `id` of a stream seeded with `seed`.
  static constexpr std::uint64_t child_seed(std::uint64_t seed, std::uint64_t id) noexcept {
    return splitmix64(splitmix64(seed) ^ splitmix64(id + 0x632BE59BD9B4E019ULL));
  }

  /// Seed reached by following `path` from `seed`, one child per element.
  static constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                             std::initializer_list<std::uint64_t> path) noexcept {
    for (auto id : path) seed = child_seed(seed, id);
    return seed;
  }

  Rng child(std::uint64_t id) const noexcept { return Rng(child_seed(seed_, id)); }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n); unbiased (rejection on the top of the range).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw ContractError("uniform_index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t draw;
    do {
      draw = next_u64();
    } while (draw >= limit);
    return draw % n;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Random sign, +1 or -1 with equal probability.
  int sign() noexcept { return (next_u64() >> 63) ? 1 : -1; }

  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal();
    return m;
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<Index> permutation(Index n) {
    std::vector<Index> p(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    for (Index i = n - 1; i > 0; --i) {
      auto j = static_cast<Index>(uniform_index(static_cast<std::uint64_t>(i) + 1));
      std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Shape and finiteness checks
// ---------------------------------------------------------------------------

template <typename A, typename B>
void require_same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b,
                        std::string_view what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) +
                        "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                        "x" + std::to_string(b.cols()) + ")");
  }
}

inline void require_dim(Index got, Index want, std::string_view what) {
  if (got != want) {
    throw ContractError(std::string(what) + ": dimension mismatch (" + std::to_string(got) +
                        " vs " + std::to_string(want) + ")");
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

template <typename Derived>
void ensure_finite(const Eigen::DenseBase<Derived>& m, std::string_view what) {
  if (!all_finite(m)) throw NumericError(std::string(what) + ": non-finite value");
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// log(sum(exp(v))) with max shift.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& values) {
  if (values.size() == 0) throw ContractError("log_sum_exp: empty input");
  const double top = values.maxCoeff();
  if (!std::isfinite(top)) throw ContractError("log_sum_exp: non-finite input");
  return top + std::log((values.derived().array() - top).exp().sum());
}

inline double log_sum_exp(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return log_sum_exp(v);
}

/// Logistic loss log(1 + exp(-t)).
inline double softplus(double t) noexcept {
  if (t > 0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

/// 1 / (1 + exp(-t)).
inline double sigmoid(double t) noexcept {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

template <typename Derived>
Vector softmax(const Eigen::MatrixBase<Derived>& logits) {
  if (logits.size() == 0) throw ContractError("softmax: empty input");
  Vector p = (logits.array() - logits.maxCoeff()).exp().matrix();
  p /= p.sum();
  return p;
}

/// Row-wise softmax of a batch of logits.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    auto row = p.row(r);
    row = (logits.row(r).array() - logits.row(r).maxCoeff()).exp().matrix();
    row /= row.sum();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Decimal text for doubles
// ---------------------------------------------------------------------------

/// Shortest-round-trip is not required; 17 significant digits always
/// reproduces the exact double on parse.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 40> buf{};
  auto [end, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
  (void)ec;
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ContractError("not a number: '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace advbv
