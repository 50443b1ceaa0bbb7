#pragma once

// Sweep orchestration: run_sweep, CSV/SVG emission, presets and provenance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "advbv/config.hpp"
#include "advbv/estimators.hpp"
#include "advbv/parallel.hpp"
#include "advbv/training.hpp"

namespace advbv {

inline constexpr const char* kCodeVersion = "advbv 1.0.0";

inline constexpr const char* kCsvHeader =
    "sweep_param,bias,variance,risk,robust_train_error,std_train_error,std_test_error,n_models,stderr_bias,"
    "stderr_variance";

struct BVPoint {
  double sweep_param = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  double risk = 0.0;
  double robust_train_error = 0.0;
  double std_train_error = 0.0;
  double std_test_error = 0.0;
  Index n_models = 0;
  double stderr_bias = 0.0;
  double stderr_variance = 0.0;

  bool failed() const { return n_models == 0; }
  bool operator==(const BVPoint&) const = default;
};

inline BVPoint failure_point(double param) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {param, nan, nan, nan, nan, nan, nan, 0, nan, nan};
}

/// Per-repetition values behind one point's averages.
struct PerKValues {
  std::vector<double> bias;
  std::vector<double> variance;
  std::vector<double> risk;
};

struct SweepResult {
  std::vector<BVPoint> points;
  std::optional<double> threshold;
  std::vector<PerKValues> per_k;
  std::vector<std::string> failures;  // diagnostic per point, empty on success
  json provenance;
};

/// Threshold over the successful rows of a curve.
inline std::optional<double> detect_threshold(const std::vector<BVPoint>& points, double level = 0.02) {
  std::vector<std::pair<double, double>> curve;
  for (const auto& p : points) {
    if (!p.failed()) curve.emplace_back(p.sweep_param, p.robust_train_error);
  }
  if (curve.empty()) return std::nullopt;
  return interpolation_threshold(curve, level);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string csv_row(const BVPoint& p) {
  std::string row;
  for (double v : {p.sweep_param, p.bias, p.variance, p.risk, p.robust_train_error, p.std_train_error,
                   p.std_test_error}) {
    row += format_double(v);
    row += ',';
  }
  row += std::to_string(p.n_models);
  row += ',';
  row += format_double(p.stderr_bias);
  row += ',';
  row += format_double(p.stderr_variance);
  return row;
}

inline BVPoint parse_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (cells.size() != 10) throw ContractError("sweep csv row: expected 10 fields, got " + std::to_string(cells.size()));
  BVPoint p;
  p.sweep_param = parse_double(cells[0]);
  p.bias = parse_double(cells[1]);
  p.variance = parse_double(cells[2]);
  p.risk = parse_double(cells[3]);
  p.robust_train_error = parse_double(cells[4]);
  p.std_train_error = parse_double(cells[5]);
  p.std_test_error = parse_double(cells[6]);
  p.n_models = static_cast<Index>(std::stoll(cells[7]));
  p.stderr_bias = parse_double(cells[8]);
  p.stderr_variance = parse_double(cells[9]);
  return p;
}

inline void emit_csv(const std::vector<BVPoint>& points, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << kCsvHeader << '\n';
  for (const auto& p : points) out << csv_row(p) << '\n';
  if (!out) throw IoError(path, "write failed");
}

inline void emit_csv(const SweepResult& result, const std::string& path) { emit_csv(result.points, path); }

inline std::vector<BVPoint> load_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw IoError(path, "missing or unexpected header");
  std::vector<BVPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      points.push_back(parse_csv_row(line));
    } catch (const std::exception& e) {
      throw IoError(path, e.what());
    }
  }
  return points;
}

/// Per-repetition dump: grid_index,sweep_param,k,bias,variance,risk.
inline void emit_per_k_csv(const SweepResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "grid_index,sweep_param,k,bias,variance,risk\n";
  for (std::size_t g = 0; g < result.points.size(); ++g) {
    const auto& pk = result.per_k[g];
    for (std::size_t k = 0; k < pk.bias.size(); ++k) {
      out << g << ',' << format_double(result.points[g].sweep_param) << ',' << k << ','
          << format_double(pk.bias[k]) << ',' << format_double(pk.variance[k]) << ','
          << format_double(pk.risk[k]) << '\n';
    }
  }
  if (!out) throw IoError(path, "write failed");
}

// ---------------------------------------------------------------------------
// SVG plot
// ---------------------------------------------------------------------------

namespace detail {

inline std::string svg_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render_svg(const std::vector<BVPoint>& all_points, std::optional<double> threshold,
                              std::string_view x_label = "sweep parameter", std::string_view title = "") {
  std::vector<BVPoint> points;
  for (const auto& p : all_points) {
    if (!p.failed()) points.push_back(p);
  }
  if (points.empty()) throw ContractError("render_svg: no successful points to plot");

  const double W = 640, H = 420, left = 70, right = 150, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;

  double xmin = points.front().sweep_param, xmax = points.back().sweep_param;
  if (threshold) {
    xmin = std::min(xmin, *threshold);
    xmax = std::max(xmax, *threshold);
  }
  if (xmax - xmin <= 0) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  double ymin = 0.0, ymax = 0.0;
  for (const auto& p : points) {
    for (double v : {p.bias, p.variance, p.risk}) {
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  }
  if (ymax - ymin <= 0) ymax = ymin + 1.0;
  ymax += 0.05 * (ymax - ymin);

  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + ph - (y - ymin) / (ymax - ymin) * ph; };
  using detail::svg_number;

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  if (!title.empty()) {
    os << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"15\">" << detail::xml_escape(title) << "</text>\n";
  }

  // Axes and ticks.
  os << "<g stroke=\"black\" stroke-width=\"1\" fill=\"none\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n";
  os << "</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  constexpr int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double xv = xmin + (xmax - xmin) * i / ticks;
    const double yv = ymin + (ymax - ymin) * i / ticks;
    os << "<line x1=\"" << svg_number(sx(xv)) << "\" y1=\"" << top + ph << "\" x2=\"" << svg_number(sx(xv))
       << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << svg_number(sx(xv)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
       << svg_number(xv) << "</text>\n";
    os << "<line x1=\"" << left - 5 << "\" y1=\"" << svg_number(sy(yv)) << "\" x2=\"" << left << "\" y2=\""
       << svg_number(sy(yv)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << svg_number(sy(yv) + 4) << "\" text-anchor=\"end\">"
       << svg_number(yv) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\" font-size=\"13\">"
     << detail::xml_escape(x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
     << top + ph / 2 << ")\">value</text>\n";
  os << "</g>\n";

  if (threshold) {
    os << "<line x1=\"" << svg_number(sx(*threshold)) << "\" y1=\"" << top << "\" x2=\"" << svg_number(sx(*threshold))
       << "\" y2=\"" << top + ph << "\" stroke=\"gray\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n";
  }

  struct Series {
    const char* name;
    const char* color;
    double BVPoint::*field;
  };
  const Series series[] = {{"bias", "#1f77b4", &BVPoint::bias},
                           {"variance", "#ff7f0e", &BVPoint::variance},
                           {"risk", "#2ca02c", &BVPoint::risk}};
  for (const auto& s : series) {
    if (points.size() > 1) {
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < points.size(); ++i) {
        os << (i ? " " : "") << svg_number(sx(points[i].sweep_param)) << ',' << svg_number(sy(points[i].*s.field));
      }
      os << "\"/>\n";
    }
    for (const auto& p : points) {
      os << "<circle cx=\"" << svg_number(sx(p.sweep_param)) << "\" cy=\"" << svg_number(sy(p.*s.field))
         << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    }
  }

  // Legend.
  const double lx = left + pw + 15;
  double ly = top + 10;
  os << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  for (const auto& s : series) {
    os << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 22 << "\" y2=\"" << ly << "\" stroke=\""
       << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << lx + 28 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
    ly += 20;
  }
  if (threshold) {
    os << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 22 << "\" y2=\"" << ly
       << "\" stroke=\"gray\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n";
    os << "<text x=\"" << lx + 28 << "\" y=\"" << ly + 4 << "\">2% threshold</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

inline void emit_plot(const std::vector<BVPoint>& points, std::optional<double> threshold, const std::string& path,
                      std::string_view x_label = "sweep parameter", std::string_view title = "") {
  const std::string svg = render_svg(points, threshold, x_label, title);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << svg;
  if (!out) throw IoError(path, "write failed");
}

inline void emit_plot(const SweepResult& result, const std::string& path, std::string_view x_label = "sweep parameter") {
  emit_plot(result.points, result.threshold, path, x_label);
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> linspace(double a, double b, int count) {
  std::vector<double> v;
  for (int i = 0; i < count; ++i) v.push_back(count == 1 ? a : a + (b - a) * i / (count - 1));
  return v;
}

inline SweepSpec logistic_preset(std::string name, std::string kind, Index n, std::vector<double> grid) {
  SweepSpec s;
  s.name = name;
  s.dataset.kind = std::move(kind);
  s.dataset.n = n;
  s.dataset.d = 100;
  s.dataset.sigma = 0.7;
  s.model.kind = ModelSpec::Kind::Linear;
  s.training.mode = TrainMode::Adversarial;
  s.training.optimizer = Optimizer::FullBatchGd;
  s.training.set = PerturbationSet(Norm::L2, 0.0);
  s.training.max_iters = 10'000;
  s.training.grad_tol = 1e-8;
  s.axis = SweepAxis::Epsilon;
  s.grid = std::move(grid);
  s.estimation.loss = LossKind::Logistic;
  s.estimation.repetitions = 30;
  s.estimation.splits = 2;
  s.estimation.test_size = 10'000;
  s.out_dir = "runs/" + name;
  return s;
}

inline SweepSpec box_preset(std::string name, Index d, Index n_per_dim) {
  SweepSpec s;
  s.name = name;
  s.dataset.kind = "box";
  s.dataset.d = d;
  s.dataset.n = n_per_dim * d;
  s.dataset.gamma = 0.25;
  s.model.kind = ModelSpec::Kind::Mlp;
  s.model.hidden = {100, 100, 100};
  s.model.head = Head::SoftmaxCE;
  s.training.mode = TrainMode::Adversarial;
  s.training.optimizer = Optimizer::Adam;
  s.training.lr = 1e-3;
  s.training.epochs = 2000;
  s.training.batch_size = 128;
  s.training.set = PerturbationSet(Norm::Linf, 0.0);
  s.training.pgd = PgdConfig{10, 0.0, false, true};
  s.pgd_step_ratio = 0.4;
  s.axis = SweepAxis::Epsilon;
  s.grid = linspace(0.0, 0.5, 9);
  s.estimation.loss = LossKind::Squared;
  s.estimation.repetitions = 30;
  s.estimation.splits = 2;
  s.estimation.test_size = 10'000;
  s.out_dir = "runs/" + name;
  return s;
}

inline SweepSpec noise_preset(std::string name, TrainMode mode) {
  SweepSpec s = box_preset(name, 20, 10);
  s.training.mode = mode;
  s.axis = SweepAxis::Sigma;
  s.grid = linspace(0.0, 1.0, 9);
  return s;
}

}  // namespace detail

inline std::vector<SweepSpec> presets() {
  return {
      detail::logistic_preset("mog-logistic", "mog", 100, detail::linspace(0.0, 1.9, 20)),
      detail::logistic_preset("planted-logistic", "planted", 150, detail::linspace(0.0, 1.9, 20)),
      detail::box_preset("box-2d", 2, 10),
      detail::box_preset("box-highd", 20, 10),
      detail::noise_preset("smoothing", TrainMode::Smoothing),
      detail::noise_preset("fixed-noise", TrainMode::FixedNoise),
  };
}

inline SweepSpec preset(std::string_view name) {
  for (auto& s : presets()) {
    if (s.name == name) return s;
  }
  throw ConfigError("name", "unknown preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

namespace detail {

enum : std::uint64_t { kSeedData = 11, kSeedTest = 12, kSeedSplit = 13, kSeedJob = 14, kSeedEval = 15 };

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Resolved config without fields that do not affect results.
inline json result_relevant_config(const SweepSpec& spec) {
  json j = to_json(spec);
  j.erase("threads");
  j.erase("out");
  j.erase("name");
  return j;
}

inline std::string point_hash(const SweepSpec& spec, std::size_t grid_index) {
  const json key = {{"config", result_relevant_config(spec)},
                    {"code_version", kCodeVersion},
                    {"grid_index", grid_index},
                    {"value", format_double(spec.grid[grid_index])}};
  return fnv1a_hex(key.dump());
}

struct CachedPoint {
  BVPoint point;
  PerKValues per_k;
};

inline std::vector<std::string> format_all(const std::vector<double>& v) {
  std::vector<std::string> out;
  for (double x : v) out.push_back(format_double(x));
  return out;
}

inline std::vector<double> parse_all(const json& arr) {
  std::vector<double> out;
  for (const auto& x : arr) out.push_back(parse_double(x.get<std::string>()));
  return out;
}

inline void save_point_cache(const std::string& path, const std::string& hash, const CachedPoint& c) {
  const json j = {{"hash", hash},
                  {"row", csv_row(c.point)},
                  {"bias_per_k", format_all(c.per_k.bias)},
                  {"variance_per_k", format_all(c.per_k.variance)},
                  {"risk_per_k", format_all(c.per_k.risk)}};
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(tmp, "cannot open for writing");
    out << j.dump(1) << '\n';
    if (!out) throw IoError(tmp, "write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::optional<CachedPoint> load_point_cache(const std::string& path, const std::string& hash) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    const json j = json::parse(in);
    if (j.at("hash").get<std::string>() != hash) return std::nullopt;
    CachedPoint c;
    c.point = parse_csv_row(j.at("row").get<std::string>());
    c.per_k.bias = parse_all(j.at("bias_per_k"));
    c.per_k.variance = parse_all(j.at("variance_per_k"));
    c.per_k.risk = parse_all(j.at("risk_per_k"));
    return c;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/// Relative additivity residual |risk - bias - variance| / max(1, |risk|).
inline double additivity_residual(const BVPoint& p) {
  return std::abs(p.risk - p.bias - p.variance) / std::max(1.0, std::abs(p.risk));
}

inline double additivity_tolerance(LossKind loss) { return loss == LossKind::Logistic ? 1e-10 : 1e-8; }

struct SweepOptions {
  int threads = 0;
  bool resume = true;           // reuse cached points under out_dir/points
  bool write_outputs = true;    // sweep.csv, per_k.csv, provenance.json, plot.svg
  bool seed_overridden = false;
  std::function<void(const std::string&)> log;
};

/// Trains and decomposes one grid point. Throws on any job failure.
inline detail::CachedPoint run_point(const SweepSpec& base, std::size_t g, unsigned threads,
                                     const std::string& tensor_dir = "") {
  const SweepSpec spec = base.at(base.grid[g]);
  const bool per_grid_data = base.axis == SweepAxis::Dimension;
  const std::uint64_t data_seed =
      per_grid_data ? Rng::derive_seed(base.seed, {detail::kSeedData, g}) : Rng::derive_seed(base.seed, {detail::kSeedData});
  const std::uint64_t test_seed =
      per_grid_data ? Rng::derive_seed(base.seed, {detail::kSeedTest, g}) : Rng::derive_seed(base.seed, {detail::kSeedTest});

  const Index n = spec.dataset.resolved_n();
  const Dataset train_set = spec.dataset.sample(n, data_seed);
  const Dataset test_set = spec.dataset.sample(spec.estimation.test_size, test_seed);
  const Index K = spec.estimation.repetitions, N = spec.estimation.splits;
  const SplitPlan plan = make_split_plan(n, K, N, Rng::derive_seed(base.seed, {detail::kSeedSplit}));

  ModelEnsemble ensemble{K, N, std::vector<Model>(static_cast<std::size_t>(K * N), Model{LinearModel{}})};
  std::vector<double> robust(static_cast<std::size_t>(K * N)), std_train(robust.size()), std_test(robust.size());
  parallel_for(static_cast<std::size_t>(K * N), threads, [&](std::size_t idx) {
    const Index k = static_cast<Index>(idx) / N, j = static_cast<Index>(idx) % N;
    try {
      const Dataset part = subset(train_set, plan.parts(k)[static_cast<std::size_t>(j)]);
      TrainConfig cfg = spec.training;
      cfg.seed = Rng::derive_seed(base.seed, {detail::kSeedJob, g, static_cast<std::uint64_t>(k),
                                              static_cast<std::uint64_t>(j)});
      cfg.record_trace = false;
      TrainedModel tm = train(spec.model, part, cfg);
      robust[idx] = tm.robust_train_error;
      std_train[idx] = tm.std_train_error;
      std_test[idx] = std_error(tm.model, test_set);
      ensemble.models[idx] = std::move(tm.model);
    } catch (const std::exception& e) {
      throw std::runtime_error("job (k=" + std::to_string(k) + ", j=" + std::to_string(j) + "): " + e.what());
    }
  });

  const auto attack = spec.eval_attack(Rng::derive_seed(base.seed, {detail::kSeedEval, g}));
  BVDecomposition d;
  const bool needs_tensor = spec.estimation.loss != LossKind::Logistic || (attack && attack->set.epsilon > 0) ||
                            spec.estimation.dump_tensors;
  std::optional<PredictionTensor> tensor;
  if (needs_tensor) tensor = build_prediction_tensor(ensemble, test_set, attack, threads);
  switch (spec.estimation.loss) {
    case LossKind::Squared: d = bv_squared(*tensor); break;
    case LossKind::CrossEntropy: d = bv_cross_entropy(*tensor); break;
    case LossKind::Logistic:
      d = (attack && attack->set.epsilon > 0) ? bv_cross_entropy(*tensor) : bv_logistic(ensemble, test_set);
      break;
  }
  if (tensor && spec.estimation.dump_tensors && !tensor_dir.empty()) {
    std::filesystem::create_directories(tensor_dir);
    save_tensor_csv(*tensor, tensor_dir + "/point_" + std::to_string(g) + ".csv");
  }

  detail::CachedPoint c;
  c.point.sweep_param = base.grid[g];
  c.point.bias = d.bias;
  c.point.variance = d.variance;
  c.point.risk = d.risk;
  c.point.robust_train_error = detail::mean_of(robust);
  c.point.std_train_error = detail::mean_of(std_train);
  c.point.std_test_error = detail::mean_of(std_test);
  c.point.n_models = K * N;
  c.point.stderr_bias = d.stderr_bias();
  c.point.stderr_variance = d.stderr_variance();
  c.per_k = {d.bias_per_k, d.variance_per_k, d.risk_per_k};

  const double tol = additivity_tolerance(spec.estimation.loss);
  if (!(additivity_residual(c.point) <= tol)) {
    throw NumericError("additivity identity violated at grid point " + std::to_string(g) + ": residual " +
                       format_double(additivity_residual(c.point)));
  }
  return c;
}

inline SweepResult run_sweep(const SweepSpec& spec, const SweepOptions& opts = {}) {
  spec.validate();
  const unsigned threads = resolve_threads(opts.threads > 0 ? opts.threads : spec.threads);
  const std::string out = spec.out_dir;
  const std::string cache_dir = out + "/points";
  if (opts.write_outputs || opts.resume) std::filesystem::create_directories(cache_dir);

  SweepResult result;
  json additivity = json::array();
  for (std::size_t g = 0; g < spec.grid.size(); ++g) {
    const std::string hash = detail::point_hash(spec, g);
    const std::string cache_path = cache_dir + "/point_" + std::to_string(g) + ".json";
    std::optional<detail::CachedPoint> c;
    if (opts.resume) c = detail::load_point_cache(cache_path, hash);
    std::string failure;
    if (c) {
      if (opts.log) opts.log("point " + std::to_string(g) + " (" + format_double(spec.grid[g]) + "): cached");
    } else {
      try {
        c = run_point(spec, g, threads, opts.write_outputs ? out + "/tensors" : "");
        if (opts.resume || opts.write_outputs) detail::save_point_cache(cache_path, hash, *c);
      } catch (const std::exception& e) {
        failure = e.what();
        c = detail::CachedPoint{failure_point(spec.grid[g]), {}};
      }
      if (opts.log) {
        const auto& p = c->point;
        opts.log("point " + std::to_string(g) + " (" + format_double(spec.grid[g]) + "): " +
                 (failure.empty() ? "bias " + format_double(p.bias) + " variance " + format_double(p.variance) +
                                        " risk " + format_double(p.risk) + " robust_err " +
                                        format_double(p.robust_train_error)
                                  : "FAILED " + failure));
      }
    }
    result.points.push_back(c->point);
    result.per_k.push_back(c->per_k);
    result.failures.push_back(failure);
    additivity.push_back(c->point.failed() ? json(nullptr) : json(additivity_residual(c->point)));
  }
  result.threshold = detect_threshold(result.points);

  json seeds = {{"master", spec.seed},
                {"seed_overridden", opts.seed_overridden},
                {"data", Rng::derive_seed(spec.seed, {detail::kSeedData})},
                {"test", Rng::derive_seed(spec.seed, {detail::kSeedTest})},
                {"split", Rng::derive_seed(spec.seed, {detail::kSeedSplit})},
                {"job_rule", "derive_seed(master, [14, grid_index, k, j])"}};
  json failures = json::array();
  for (std::size_t g = 0; g < result.failures.size(); ++g) {
    if (!result.failures[g].empty()) failures.push_back({{"grid_index", g}, {"error", result.failures[g]}});
  }
  result.provenance = {{"code_version", kCodeVersion},
                       {"config", to_json(spec)},
                       {"seeds", seeds},
                       {"threshold", result.threshold ? json(*result.threshold) : json(nullptr)},
                       {"threshold_level", 0.02},
                       {"additivity_residuals", additivity},
                       {"additivity_tolerance", additivity_tolerance(spec.estimation.loss)},
                       {"failures", failures}};

  if (opts.write_outputs) {
    emit_csv(result, out + "/sweep.csv");
    emit_per_k_csv(result, out + "/per_k.csv");
    const std::string prov_path = out + "/provenance.json";
    std::ofstream prov(prov_path, std::ios::binary);
    if (!prov) throw IoError(prov_path, "cannot open for writing");
    prov << result.provenance.dump(2) << '\n';
    const bool any_ok = std::any_of(result.points.begin(), result.points.end(), [](const BVPoint& p) { return !p.failed(); });
    if (any_ok) emit_plot(result, out + "/plot.svg", to_string(spec.axis));
  }
  return result;
}

inline SweepSpec load_sweep_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<syntax>", std::string("malformed JSON in ") + path + ": " + e.what());
  }
  return parse_sweep_spec(j);
}

}  // namespace advbv
