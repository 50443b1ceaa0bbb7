#pragma once

// Synthetic distributions (Gaussian mixture, planted robust feature, box),
// Gaussian-noise dataset transforms, and the repeated K x N split plan used to
// build model ensembles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "advbv/numerics.hpp"

namespace advbv {

/// Per-coordinate interval [lower_i, upper_i].
struct DomainBox {
  Vector lower;
  Vector upper;

  static DomainBox cube(Index dim, double lo, double hi) {
    return {Vector::Constant(dim, lo), Vector::Constant(dim, hi)};
  }
  Index dim() const { return lower.size(); }

  bool contains(const Eigen::Ref<const Vector>& x) const {
    return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
  }

  /// Clamp every row of `m` into the box.
  void clamp_rows(Matrix& m) const {
    require_dim(m.cols(), dim(), "DomainBox::clamp_rows");
    for (Index r = 0; r < m.rows(); ++r) {
      m.row(r) = m.row(r).cwiseMax(lower.transpose()).cwiseMin(upper.transpose());
    }
  }
};

enum class LabelEncoding { Signed, Class };

/// Generator name, numeric parameters and seed a dataset came from.
struct DatasetMeta {
  std::string generator;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;
};

/// n x d features with labels.
///
/// Signed encoding stores +-1; class encoding stores indices in [0, k).
/// `one_hot()` materializes the n x k indicator matrix for either (signed
/// labels map -1 -> class 0, +1 -> class 1).
struct Dataset {
  Matrix X;
  std::vector<int> labels;
  LabelEncoding encoding = LabelEncoding::Signed;
  int num_classes = 2;
  std::optional<DomainBox> domain;
  DatasetMeta meta;

  Index size() const { return X.rows(); }
  Index dim() const { return X.cols(); }
  bool empty() const { return X.rows() == 0; }

  int class_of(Index i) const {
    const int y = labels[static_cast<std::size_t>(i)];
    return encoding == LabelEncoding::Signed ? (y > 0 ? 1 : 0) : y;
  }
  double signed_label(Index i) const {
    const int y = labels[static_cast<std::size_t>(i)];
    if (encoding == LabelEncoding::Signed) return y;
    if (num_classes != 2) throw ContractError("signed_label: dataset is not binary");
    return y == 1 ? 1.0 : -1.0;
  }

  Vector signed_labels() const {
    Vector y(size());
    for (Index i = 0; i < size(); ++i) y[i] = signed_label(i);
    return y;
  }

  Matrix one_hot() const {
    Matrix y = Matrix::Zero(size(), num_classes);
    for (Index i = 0; i < size(); ++i) y(i, class_of(i)) = 1.0;
    return y;
  }

  /// Throws ContractError when an invariant is broken.
  void validate() const {
    if (static_cast<Index>(labels.size()) != X.rows()) {
      throw ContractError("Dataset: label count does not match rows");
    }
    for (int y : labels) {
      const bool ok = encoding == LabelEncoding::Signed ? (y == 1 || y == -1)
                                                        : (y >= 0 && y < num_classes);
      if (!ok) throw ContractError("Dataset: invalid label " + std::to_string(y));
    }
    if (encoding == LabelEncoding::Signed && num_classes != 2) {
      throw ContractError("Dataset: signed labels require two classes");
    }
    ensure_finite(X, "Dataset features");
    if (domain) {
      require_dim(domain->dim(), X.cols(), "Dataset domain box");
      for (Index i = 0; i < X.rows(); ++i) {
        if (!domain->contains(X.row(i).transpose())) {
          throw ContractError("Dataset: row " + std::to_string(i) + " outside domain box");
        }
      }
    }
  }
};

inline Dataset subset(const Dataset& ds, const std::vector<Index>& rows) {
  Dataset out;
  out.X.resize(static_cast<Index>(rows.size()), ds.dim());
  out.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.X.row(static_cast<Index>(r)) = ds.X.row(rows[r]);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(rows[r])]);
  }
  out.encoding = ds.encoding;
  out.num_classes = ds.num_classes;
  out.domain = ds.domain;
  out.meta = ds.meta;
  return out;
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// y uniform on {-1, +1}, x | y ~ N(y v, sigma^2 I), v = (1, ..., 1) / sqrt(d).
inline Dataset sample_mog(Index n, Index d, double sigma, std::uint64_t seed) {
  if (n < 0 || d < 1 || !(sigma >= 0)) throw ContractError("sample_mog: need n>=0, d>=1, sigma>=0");
  Rng rng(seed);
  const double center = 1.0 / std::sqrt(static_cast<double>(d));
  Dataset ds;
  ds.X.resize(n, d);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int y = rng.sign();
    ds.labels[static_cast<std::size_t>(i)] = y;
    for (Index c = 0; c < d; ++c) ds.X(i, c) = y * center + sigma * rng.normal();
  }
  ds.meta = {"mog", {{"n", double(n)}, {"d", double(d)}, {"sigma", sigma}}, seed};
  return ds;
}

/// First coordinate is +y with probability 0.95 and -y otherwise; the other
/// d-1 coordinates are N(y v, I) with v = (1, ..., 1) / sqrt(d).
inline Dataset sample_planted(Index n, Index d, std::uint64_t seed,
                              double robust_accuracy = 0.95) {
  if (n < 0 || d < 2) throw ContractError("sample_planted: need n>=0, d>=2");
  Rng rng(seed);
  const double center = 1.0 / std::sqrt(static_cast<double>(d));
  Dataset ds;
  ds.X.resize(n, d);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int y = rng.sign();
    ds.labels[static_cast<std::size_t>(i)] = y;
    ds.X(i, 0) = rng.uniform() < robust_accuracy ? y : -y;
    for (Index c = 1; c < d; ++c) ds.X(i, c) = y * center + rng.normal();
  }
  ds.meta = {"planted", {{"n", double(n)}, {"d", double(d)}, {"p", robust_accuracy}}, seed};
  return ds;
}

/// Default margin threshold of the box sampler: gamma / sqrt(2) on |x1 - x2|
/// for d = 2, gamma on |<x, 1/sqrt(d)>| for d > 2.
inline double box_default_threshold(Index d, double gamma) {
  return d == 2 ? gamma / std::sqrt(2.0) : gamma;
}

/// Uniform on [-1, 1]^d restricted to the margin region.
///
/// d = 2 keeps |x1 - x2| >= threshold with y = sign(x1 - x2); d > 2 keeps
/// |<x, 1/sqrt(d)>| >= threshold with y = sign(<x, 1>). `threshold_override`
/// replaces the default threshold.
inline Dataset sample_box(Index n, Index d, double gamma, std::uint64_t seed,
                          std::optional<double> threshold_override = std::nullopt) {
  if (n < 0 || d < 2 || !(gamma > 0 && gamma < 1)) {
    throw ContractError("sample_box: need n>=0, d>=2, 0<gamma<1");
  }
  const double threshold = threshold_override.value_or(box_default_threshold(d, gamma));
  const double scale = d == 2 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(d));
  constexpr std::uint64_t kMinAttempts = 10'000'000;
  constexpr double kMinAcceptance = 1e-6;

  Rng rng(seed);
  Dataset ds;
  ds.X.resize(n, d);
  ds.labels.resize(static_cast<std::size_t>(n));
  Vector x(d);
  std::uint64_t attempts = 0;
  Index accepted = 0;
  while (accepted < n) {
    ++attempts;
    for (Index c = 0; c < d; ++c) x[c] = rng.uniform(-1.0, 1.0);
    const double score = d == 2 ? x[0] - x[1] : x.sum() * scale;
    if (std::abs(score) >= threshold) {
      ds.X.row(accepted) = x.transpose();
      ds.labels[static_cast<std::size_t>(accepted)] = score > 0 ? 1 : -1;
      ++accepted;
    } else if (attempts >= kMinAttempts &&
               static_cast<double>(accepted) < kMinAcceptance * static_cast<double>(attempts)) {
      throw GenerationError("sample_box: acceptance probability below 1e-6 (gamma too large for d)");
    }
  }
  ds.domain = DomainBox::cube(d, -1.0, 1.0);
  ds.meta = {"box",
             {{"n", double(n)}, {"d", double(d)}, {"gamma", gamma}, {"threshold", threshold}},
             seed};
  return ds;
}

/// X + sigma * G with G drawn once from `seed`; clipped to the domain box if any.
inline Dataset add_fixed_gaussian_noise(const Dataset& ds, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0)) throw ContractError("add_fixed_gaussian_noise: sigma must be >= 0");
  Dataset out = ds;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  out.X += rng.normal_matrix(ds.size(), ds.dim(), sigma);
  if (out.domain) out.domain->clamp_rows(out.X);
  out.meta.params["fixed_noise_sigma"] = sigma;
  return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// K independent partitions of 0..n-1 into N near-equal disjoint parts.
struct SplitPlan {
  Index n = 0;
  Index repetitions = 1;  // K
  Index splits = 2;       // N
  std::vector<std::uint64_t> seeds;  // one per repetition

  /// Parts of repetition k; sizes differ by at most one, larger parts first.
  std::vector<std::vector<Index>> parts(Index k) const {
    if (k < 0 || k >= repetitions) throw ContractError("SplitPlan::parts: repetition out of range");
    Rng rng(seeds[static_cast<std::size_t>(k)]);
    const auto perm = rng.permutation(n);
    std::vector<std::vector<Index>> out(static_cast<std::size_t>(splits));
    const Index base = n / splits;
    const Index extra = n % splits;
    Index pos = 0;
    for (Index j = 0; j < splits; ++j) {
      const Index len = base + (j < extra ? 1 : 0);
      auto& part = out[static_cast<std::size_t>(j)];
      part.assign(perm.begin() + pos, perm.begin() + pos + len);
      std::sort(part.begin(), part.end());
      pos += len;
    }
    return out;
  }
};

inline SplitPlan make_split_plan(Index n, Index K, Index N, std::uint64_t seed) {
  if (N < 2 || K < 1) throw ContractError("make_split_plan: need N>=2 and K>=1");
  if (n < N) throw ContractError("make_split_plan: need n >= N");
  SplitPlan plan{n, K, N, {}};
  plan.seeds.reserve(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k) plan.seeds.push_back(Rng::child_seed(seed, static_cast<std::uint64_t>(k)));
  return plan;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Header `x0,...,x{d-1},y`, values with 17 significant digits.
inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  for (Index c = 0; c < ds.dim(); ++c) out << 'x' << c << ',';
  out << "y\n";
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index c = 0; c < ds.dim(); ++c) out << format_double(ds.X(i, c)) << ',';
    out << ds.labels[static_cast<std::size_t>(i)] << '\n';
  }
  if (!out) throw IoError(path, "write failed");
}

inline Dataset load_csv(const std::string& path, LabelEncoding encoding = LabelEncoding::Signed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path, "missing header");
  const auto columns = static_cast<Index>(std::count(line.begin(), line.end(), ',') + 1);
  if (columns < 1 || line.substr(line.rfind(',') + 1) != "y") {
    throw IoError(path, "header must end with column 'y'");
  }
  const Index d = columns - 1;
  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    Index c = 0;
    while (std::getline(row, cell, ',')) {
      if (c < d) {
        values.push_back(parse_double(cell));
      } else if (c == d) {
        labels.push_back(std::stoi(cell));
      }
      ++c;
    }
    if (c != columns) throw IoError(path, "row " + std::to_string(labels.size()) + " has wrong width");
  }
  Dataset ds;
  ds.X = Eigen::Map<Matrix>(values.data(), static_cast<Index>(labels.size()), d);
  ds.labels = std::move(labels);
  ds.encoding = encoding;
  if (encoding == LabelEncoding::Class) {
    int top = 0;
    for (int y : ds.labels) top = std::max(top, y);
    ds.num_classes = std::max(2, top + 1);
  }
  ds.meta.generator = "csv";
  ds.validate();
  return ds;
}

}  // namespace advbv
