#pragma once
// Shape checks on sweep curves: smoothing, unimodality, rank correlation,
// peak location and bias dominance.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "advbv/errors.hpp"
#include "advbv/harness.hpp"

namespace advbv {

/// Centered 3-point moving average; endpoints average their two available values.
inline std::vector<double> moving_average3(const std::vector<double>& v) {
  const std::size_t m = v.size();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1, hi = std::min(m - 1, i + 1);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += v[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

inline std::size_t argmax(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("argmax: empty input");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct UnimodalCheck {
  bool passed = false;
  std::size_t peak = 0;   // argmax of the smoothed curve
  double decline = 0.0;   // (peak - min after peak) / peak on the smoothed curve
};

/// Smoothed curve has its maximum strictly inside the grid and falls by at
/// least `min_decline` of the peak value somewhere after it.
inline UnimodalCheck check_unimodal(const std::vector<double>& v, double min_decline = 0.2) {
  UnimodalCheck c;
  if (v.size() < 3) return c;
  const auto s = moving_average3(v);
  c.peak = argmax(s);
  if (c.peak == 0 || c.peak + 1 == s.size() || !(s[c.peak] > 0)) return c;
  const double after = *std::min_element(s.begin() + static_cast<std::ptrdiff_t>(c.peak) + 1, s.end());
  c.decline = (s[c.peak] - after) / s[c.peak];
  c.passed = c.decline >= min_decline;
  return c;
}

/// Ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = rank;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ContractError("pearson: need two equal-length series");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Spearman rank correlation of v against its grid order.
inline double spearman_with_order(const std::vector<double>& v) {
  std::vector<double> order(v.size());
  std::iota(order.begin(), order.end(), 0.0);
  return pearson(average_ranks(order), average_ranks(v));
}

/// Grid index holding `value`, if any.
inline std::optional<std::size_t> grid_index_of(const std::vector<BVPoint>& pts, double value) {
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (pts[i].sweep_param == value) return i;
  return std::nullopt;
}

inline std::vector<double> column(const std::vector<BVPoint>& pts, double BVPoint::*field) {
  std::vector<double> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(p.*field);
  return out;
}

/// Shape checks on one sweep against its robust interpolation threshold.
struct CurveReport {
  UnimodalCheck unimodal;
  std::size_t variance_peak = 0;  // raw argmax of variance
  std::optional<std::size_t> threshold_index;
  bool peak_near_threshold = false;
  bool bias_dominates = false;
  std::size_t dominance_from = 0;
  bool bias_endpoints = false;
  double spearman = 0.0;
};

inline CurveReport analyze_curve(const std::vector<BVPoint>& pts, std::optional<double> threshold) {
  CurveReport r;
  if (pts.empty()) return r;
  for (const auto& p : pts)
    if (p.failed()) return r;
  const auto var = column(pts, &BVPoint::variance);
  r.unimodal = check_unimodal(var);
  r.variance_peak = argmax(var);
  r.spearman = spearman_with_order(var);
  if (threshold) r.threshold_index = grid_index_of(pts, *threshold);
  if (r.threshold_index) {
    const auto t = static_cast<long>(*r.threshold_index), p = static_cast<long>(r.variance_peak);
    r.peak_near_threshold = std::abs(t - p) <= 1;
  }
  const std::size_t m = pts.size();
  r.dominance_from = (m + 3) / 4;
  r.bias_dominates = true;
  for (std::size_t i = r.dominance_from; i < m; ++i)
    if (pts[i].bias < pts[i].variance) r.bias_dominates = false;
  r.bias_endpoints = pts.back().bias > pts.front().bias;
  return r;
}

}  // namespace advbv
