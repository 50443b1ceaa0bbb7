// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance [--criterion N]... [--out DIR] [--threads T] [--fresh]

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "advbv/advbv.hpp"

using namespace advbv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
  bool exploratory = false;
};

struct Context {
  std::string out = "acceptance_out";
  int threads = 0;
  bool fresh = false;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double rel_err(double a, double b, double floor) { return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)}); }

SweepResult run_preset(const Context& ctx, const std::string& name, const std::string& dir_name = "",
                       std::optional<int> threads = std::nullopt, bool fresh = false) {
  SweepSpec s = preset(name);
  s.out_dir = ctx.out + "/" + (dir_name.empty() ? name : dir_name);
  SweepOptions o;
  o.threads = threads.value_or(ctx.threads);
  o.resume = !(ctx.fresh || fresh);
  o.log = [&](const std::string& line) { std::cerr << "[" << name << "] " << line << "\n"; };
  return run_sweep(s, o);
}

void print_curve(const SweepResult& r) {
  std::cout << "  param      bias       variance   risk       robust_err\n";
  for (const auto& p : r.points) {
    std::cout << "  " << std::left << std::setw(10) << fmt(p.sweep_param) << " " << std::setw(10) << fmt(p.bias) << " "
              << std::setw(10) << fmt(p.variance) << " " << std::setw(10) << fmt(p.risk) << " "
              << fmt(p.robust_train_error) << "\n";
  }
  std::cout << "  threshold: " << (r.threshold ? fmt(*r.threshold) : "none") << "\n";
}

std::string first_failure(const SweepResult& r) {
  for (std::size_t g = 0; g < r.failures.size(); ++g)
    if (!r.failures[g].empty()) return "grid point " + std::to_string(g) + " failed: " + r.failures[g];
  return "";
}

bool no_failures(const SweepResult& r, std::string& detail) {
  detail = first_failure(r);
  return detail.empty();
}

// ---------------------------------------------------------------------------

PredictionTensor random_tensor(Rng& rng, Index outputs, bool sharp) {
  PredictionTensor t;
  t.points = 1 + static_cast<Index>(rng.uniform_index(30));
  t.repetitions = 1 + static_cast<Index>(rng.uniform_index(5));
  t.splits = 2 + static_cast<Index>(rng.uniform_index(3));
  t.outputs = outputs;
  t.labels = Matrix::Zero(t.points, outputs);
  for (Index p = 0; p < t.points; ++p) t.labels(p, static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(outputs)))) = 1.0;
  t.values.resize(static_cast<std::size_t>(t.points * t.repetitions * t.splits * outputs));
  for (Index p = 0; p < t.points; ++p)
    for (Index k = 0; k < t.repetitions; ++k)
      for (Index j = 0; j < t.splits; ++j) t.prediction(p, k, j) = softmax(rng.normal_matrix(outputs, 1, sharp ? 40.0 : 2.0).col(0));
  return t;
}

double residual(const BVDecomposition& d) { return std::abs(d.risk - d.bias - d.variance) / std::max(1.0, std::abs(d.risk)); }

Outcome criterion1(const Context& ctx) {
  Rng rng(1001);
  double sq = 0.0, ce = 0.0, lg = 0.0;
  for (int t = 0; t < 300; ++t) {
    const auto tensor = random_tensor(rng, 2 + static_cast<Index>(rng.uniform_index(4)), t % 3 == 0);
    sq = std::max(sq, residual(bv_squared(tensor)));
    ce = std::max(ce, residual(bv_cross_entropy(tensor)));
    std::vector<Vector> thetas;
    const Index d = 1 + static_cast<Index>(rng.uniform_index(6));
    for (int m = 0; m < 2 + t % 5; ++m) thetas.push_back(rng.normal_matrix(d, 1, t % 2 ? 10.0 : 1.0).col(0));
    const Dataset test = sample_mog(1 + static_cast<Index>(rng.uniform_index(40)), d, 0.7, rng.next_u64());
    lg = std::max(lg, residual(bv_logistic(thetas, test)));
  }

  // End-to-end sweeps for each loss; run_point rejects any violation.
  std::vector<SweepSpec> sweeps;
  SweepSpec logistic = preset("mog-logistic");
  logistic.dataset.n = 40;
  logistic.dataset.d = 20;
  logistic.grid = {0.0, 0.5, 1.0};
  logistic.estimation.repetitions = 4;
  logistic.estimation.test_size = 500;
  sweeps.push_back(logistic);
  SweepSpec logistic_adv = logistic;
  logistic_adv.estimation.adversarial = EvalAttackSpec{Norm::L2};
  sweeps.push_back(logistic_adv);
  SweepSpec box = preset("box-2d");
  box.model.hidden = {16, 16};
  box.training.epochs = 100;
  box.grid = {0.0, 0.25};
  box.estimation.repetitions = 3;
  box.estimation.test_size = 300;
  sweeps.push_back(box);
  SweepSpec box_adv = box;
  box_adv.estimation.adversarial = EvalAttackSpec{};
  sweeps.push_back(box_adv);
  SweepSpec box_ce = box;
  box_ce.estimation.loss = LossKind::CrossEntropy;
  sweeps.push_back(box_ce);

  double sweep_worst = 0.0;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < sweeps.size(); ++i) {
    sweeps[i].out_dir = ctx.out + "/additivity_" + std::to_string(i);
    SweepOptions o;
    o.threads = ctx.threads;
    o.resume = false;
    const auto r = run_sweep(sweeps[i], o);
    if (const auto f = first_failure(r); !f.empty()) return {false, "sweep " + std::to_string(i) + " " + f};
    for (const auto& p : r.points) {
      const double res = additivity_residual(p) / additivity_tolerance(sweeps[i].estimation.loss);
      sweep_worst = std::max(sweep_worst, res);
      ++rows;
    }
  }

  // Every acceptance sweep already written under the output directory.
  std::size_t scanned = 0;
  for (const auto& entry : fs::directory_iterator(ctx.out)) {
    const auto csv = entry.path() / "sweep.csv";
    const auto prov = entry.path() / "provenance.json";
    if (!fs::exists(csv) || !fs::exists(prov)) continue;
    const json j = json::parse(read_file(prov.string()));
    const double tol = j.value("additivity_tolerance", 1e-8);
    for (const auto& p : load_sweep_csv(csv.string())) {
      if (p.failed()) continue;
      sweep_worst = std::max(sweep_worst, additivity_residual(p) / tol);
      ++scanned;
    }
  }

  const bool ok = sq <= 1e-8 && ce <= 1e-8 && lg <= 1e-10 && sweep_worst <= 1.0;
  return {ok, "random tensors: squared " + fmt(sq) + ", cross-entropy " + fmt(ce) + ", logistic " + fmt(lg) +
                  "; " + std::to_string(rows + scanned) + " sweep rows, worst residual/tolerance " + fmt(sweep_worst)};
}

Outcome criterion2(const Context&) {
  constexpr double h = 1e-5;
  Rng rng(2002);
  double worst_lin = 0.0;
  for (int t = 0; t < 60; ++t) {
    const Index n = 1 + static_cast<Index>(rng.uniform_index(10)), d = 1 + static_cast<Index>(rng.uniform_index(8));
    const Matrix X = rng.normal_matrix(n, d, 1.0);
    Vector y(n);
    for (Index i = 0; i < n; ++i) y[i] = rng.sign();
    const LinearModel m{rng.normal_matrix(d, 1, 1.5).col(0)};
    const double eps = rng.uniform(0.0, 1.5);
    const auto g = adv_logistic_grad(m, X, y, eps);
    for (Index i = 0; i < d; ++i) {
      LinearModel p = m, q = m;
      p.theta[i] += h;
      q.theta[i] -= h;
      const double fd = (adv_logistic_grad(p, X, y, eps).loss - adv_logistic_grad(q, X, y, eps).loss) / (2 * h);
      worst_lin = std::max(worst_lin, rel_err(fd, g.params[i], 1e-4));
    }
  }

  const std::pair<Head, LossKind> heads[] = {
      {Head::SoftmaxCE, LossKind::CrossEntropy}, {Head::SoftmaxSquared, LossKind::Squared}, {Head::BinarySign, LossKind::Logistic}};
  double worst_mlp = 0.0;
  int instances = 0;
  for (int t = 0; t < 60; ++t) {
    const auto [head, loss] = heads[t % 3];
    const Activation act = t % 2 ? Activation::Tanh : Activation::ReLU;
    const Index in = 2 + static_cast<Index>(rng.uniform_index(4)), out = head == Head::BinarySign ? 1 : 3;
    MlpModel m = MlpModel::he_uniform({in, 7, 5, out}, act, head, rng);
    const Vector x = rng.normal_matrix(in, 1, 1.0).col(0);
    Vector y = Vector::Zero(out);
    if (head == Head::BinarySign) y[0] = rng.sign();
    else y[static_cast<Index>(rng.uniform_index(3))] = 1.0;
    const auto g = mlp_backward(m, x, y, loss);
    // ReLU kinks within h of a pre-activation make central differences meaningless.
    bool near_kink = false;
    if (act == Activation::ReLU) {
      Vector a = x;
      for (std::size_t l = 0; l + 1 < m.widths().size() - 1; ++l) {
        const Vector z = m.weight(l) * a + m.bias(l);
        if ((z.array().abs() < 1e-3).any()) near_kink = true;
        a = z.cwiseMax(0.0);
      }
    }
    if (near_kink) continue;
    ++instances;
    for (Index i = 0; i < m.params().size(); ++i) {
      MlpModel p = m, q = m;
      p.params()[i] += h;
      q.params()[i] -= h;
      const double fd = (mlp_backward(p, x, y, loss).loss - mlp_backward(q, x, y, loss).loss) / (2 * h);
      worst_mlp = std::max(worst_mlp, rel_err(fd, g.params[i], 1e-4));
    }
    for (Index i = 0; i < in; ++i) {
      Vector xp = x, xq = x;
      xp[i] += h;
      xq[i] -= h;
      const double fd = (mlp_backward(m, xp, y, loss).loss - mlp_backward(m, xq, y, loss).loss) / (2 * h);
      worst_mlp = std::max(worst_mlp, rel_err(fd, g.input[i], 1e-4));
    }
  }
  const bool ok = worst_lin < 1e-4 && worst_mlp < 1e-4 && instances >= 50;
  return {ok, "adv_logistic_grad 60 instances max rel err " + fmt(worst_lin) + "; mlp_backward " +
                  std::to_string(instances) + " instances max rel err " + fmt(worst_mlp)};
}

Outcome criterion3(const Context&) {
  Rng rng(3003);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Index n = 1 + static_cast<Index>(rng.uniform_index(4));
    const Matrix X = rng.normal_matrix(n, 2, 1.0);
    Vector y(n);
    for (Index i = 0; i < n; ++i) y[i] = rng.sign();
    const Vector theta = rng.normal_matrix(2, 1, 1.5).col(0);
    const double eps = rng.uniform(0.05, 1.5);
    const double exact = exact_l2_margin_loss(theta, X, y, eps);
    // Polar grid over the disc, maximized per sample.
    constexpr int radii = 100, angles = 4000;
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      double best = -1.0;
      for (int a = 0; a <= radii; ++a) {
        const double r = eps * a / radii;
        for (int b = 0; b < angles; ++b) {
          const double phi = 2.0 * M_PI * b / angles;
          Vector x = X.row(i).transpose();
          x[0] += r * std::cos(phi);
          x[1] += r * std::sin(phi);
          best = std::max(best, std::log1p(std::exp(-y[i] * x.dot(theta))));
        }
      }
      total += best;
    }
    worst = std::max(worst, std::abs(total / static_cast<double>(n) - exact));
  }
  return {worst <= 1e-4, "20 instances, max |exact - grid| " + fmt(worst)};
}

Outcome criterion4(const Context&) {
  double max_z = 0.0, min_var = 1e300;
  std::size_t pairs = 0;
  auto record = [&](const std::vector<Vector>& thetas, const Matrix& X) {
    const Vector logz = logistic_log_normalizers(thetas, X);
    max_z = std::max(max_z, logz.array().exp().maxCoeff());
    min_var = std::min(min_var, (-logz.array()).minCoeff());
    pairs += static_cast<std::size_t>(X.rows());
  };

  // Adversarially trained ensembles on mixture data.
  const Dataset test = sample_mog(1000, 50, 0.7, 4004);
  for (double eps : {0.0, 0.3, 0.6, 0.9, 1.2, 1.5}) {
    std::vector<Vector> thetas;
    for (std::uint64_t m = 0; m < 4; ++m) {
      const Dataset train_set = sample_mog(30, 50, 0.7, 4100 + m);
      ModelSpec spec;
      spec.kind = ModelSpec::Kind::Linear;
      TrainConfig cfg;
      cfg.mode = TrainMode::Adversarial;
      cfg.optimizer = Optimizer::FullBatchGd;
      cfg.set = PerturbationSet(Norm::L2, eps);
      cfg.max_iters = 2000;
      cfg.record_trace = false;
      cfg.seed = m;
      thetas.push_back(std::get<LinearModel>(train(spec, train_set, cfg).model).theta);
    }
    record(thetas, test.X);
  }
  // Random ensembles, including large-norm members.
  Rng rng(4005);
  while (pairs < 10'000) {
    const Index d = 1 + static_cast<Index>(rng.uniform_index(10));
    std::vector<Vector> thetas;
    for (int m = 0; m < 2 + static_cast<int>(rng.uniform_index(6)); ++m)
      thetas.push_back(rng.normal_matrix(d, 1, rng.uniform(0.1, 20.0)).col(0));
    record(thetas, rng.normal_matrix(50, d, 1.0));
  }
  const bool ok = max_z <= 1.0 + 1e-12 && min_var >= 0.0;
  return {ok, std::to_string(pairs) + " pairs, max Z " + fmt(max_z) + ", min variance " + fmt(min_var)};
}

std::string describe(const CurveReport& c, const SweepResult& r) {
  std::ostringstream s;
  s << "unimodal " << (c.unimodal.passed ? "yes" : "no") << " (smoothed peak index " << c.unimodal.peak << ", decline "
    << fmt(c.unimodal.decline) << "); variance peak index " << c.variance_peak << ", threshold index "
    << (c.threshold_index ? std::to_string(*c.threshold_index) : "none") << "; bias>=variance from index "
    << c.dominance_from << ": " << (c.bias_dominates ? "yes" : "no") << "; bias end " << fmt(r.points.back().bias)
    << " vs start " << fmt(r.points.front().bias);
  return s.str();
}

Outcome logistic_reproduction(const Context& ctx, const std::string& name) {
  const auto r = run_preset(ctx, name);
  print_curve(r);
  std::string detail;
  if (!no_failures(r, detail)) return {false, detail};
  const auto c = analyze_curve(r.points, r.threshold);
  const bool ok = r.points.size() >= 15 && c.unimodal.passed && c.peak_near_threshold && c.bias_dominates && c.bias_endpoints;
  return {ok, name + ": " + describe(c, r)};
}

Outcome criterion7(const Context& ctx) {
  const auto low = run_preset(ctx, "box-2d");
  print_curve(low);
  const auto high = run_preset(ctx, "box-highd");
  print_curve(high);
  std::string detail;
  if (!no_failures(low, detail) || !no_failures(high, detail)) return {false, detail};
  const auto cl = analyze_curve(low.points, low.threshold);
  const auto ch = analyze_curve(high.points, high.threshold);
  const bool low_ok = cl.spearman > 0.8;
  const bool high_ok = ch.unimodal.passed && ch.peak_near_threshold;
  return {low_ok && high_ok, "d=2 Spearman " + fmt(cl.spearman) + (low_ok ? " (ok)" : " (needs > 0.8)") + "; d=20 " +
                                 describe(ch, high)};
}

Outcome criterion8(const Context& ctx) {
  const auto smooth = run_preset(ctx, "smoothing");
  print_curve(smooth);
  const auto fixed = run_preset(ctx, "fixed-noise");
  print_curve(fixed);
  std::string detail;
  if (!no_failures(smooth, detail) || !no_failures(fixed, detail)) return {false, detail, true};
  const auto cs = analyze_curve(smooth.points, smooth.threshold);
  const auto cf = analyze_curve(fixed.points, fixed.threshold);
  const bool ok = cs.unimodal.passed && cf.spearman > 0.6;
  return {ok,
          "smoothing unimodal " + std::string(cs.unimodal.passed ? "yes" : "no") + " (decline " + fmt(cs.unimodal.decline) +
              "); fixed-noise Spearman " + fmt(cf.spearman),
          true};
}

Outcome criterion9(const Context& ctx) {
  run_preset(ctx, "mog-logistic", "determinism_t1", 1, true);
  run_preset(ctx, "mog-logistic", "determinism_t4", 4, true);
  const std::string a = ctx.out + "/determinism_t1/", b = ctx.out + "/determinism_t4/";
  bool ok = true;
  std::string detail = "threads 1 vs 4:";
  for (const char* f : {"sweep.csv", "per_k.csv"}) {
    const bool same = read_file(a + f) == read_file(b + f) && !read_file(a + f).empty();
    ok = ok && same;
    detail += std::string(" ") + f + (same ? " identical" : " DIFFERS");
  }
  const std::string c5 = ctx.out + "/mog-logistic/sweep.csv";
  if (fs::exists(c5)) {
    const bool same = read_file(c5) == read_file(a + "sweep.csv");
    ok = ok && same;
    detail += std::string("; criterion 5 sweep.csv ") + (same ? "identical" : "DIFFERS");
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  Context ctx;
  app.add_option("--criterion", selected, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--out", ctx.out, "Directory for sweep outputs");
  app.add_option("--threads", ctx.threads, "Worker threads");
  app.add_flag("--fresh", ctx.fresh, "Ignore cached grid points");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  fs::create_directories(ctx.out);

  const std::map<int, std::function<Outcome(const Context&)>> criteria = {
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, [](const Context& c) { return logistic_reproduction(c, "mog-logistic"); }},
      {6, [](const Context& c) { return logistic_reproduction(c, "planted-logistic"); }},
      {7, criterion7},
      {8, criterion8},
      {9, criterion9},
  };

  int failed = 0;
  for (int id : selected) {
    Outcome o;
    try {
      o = criteria.at(id)(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what(), id == 8};
    }
    std::cout << "criterion " << id << ": " << (o.passed ? "PASS" : "FAIL") << (o.exploratory ? " (exploratory)" : "")
              << " - " << o.detail << std::endl;
    if (!o.passed && !o.exploratory) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
