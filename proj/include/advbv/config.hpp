#pragma once

// Sweep specification and its JSON config schema. Unknown keys are errors.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "advbv/estimators.hpp"
#include "advbv/training.hpp"

namespace advbv {

using json = nlohmann::ordered_json;

enum class SweepAxis { Epsilon, Sigma, Width, Dimension };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Epsilon: return "epsilon";
    case SweepAxis::Sigma: return "sigma";
    case SweepAxis::Width: return "width";
    case SweepAxis::Dimension: return "dimension";
  }
  return "?";
}

struct DatasetSpec {
  std::string kind = "mog";  // mog | planted | box
  Index n = 100;
  Index d = 100;
  double sigma = 0.7;  // mog cluster spread
  double gamma = 0.25;  // box margin
  std::optional<double> threshold;  // box raw margin override
  std::optional<Index> n_per_dim;   // n = n_per_dim * d (dimension sweeps)

  Index resolved_n() const { return n_per_dim ? *n_per_dim * d : n; }

  Dataset sample(Index count, std::uint64_t seed) const {
    if (kind == "mog") return sample_mog(count, d, sigma, seed);
    if (kind == "planted") return sample_planted(count, d, seed);
    if (kind == "box") return sample_box(count, d, gamma, seed, threshold);
    throw ConfigError("dataset.kind", "unknown dataset '" + kind + "'");
  }
};

struct EvalAttackSpec {
  Norm norm = Norm::Linf;
  std::optional<double> epsilon;  // unset: follow the swept epsilon
  int steps = 20;
  double step_ratio = 0.15;  // step size = step_ratio * epsilon
  bool random_start = false;
  bool clip_to_domain = true;
};

struct EstimationSpec {
  LossKind loss = LossKind::Squared;
  Index repetitions = 30;  // K
  Index splits = 2;        // N
  Index test_size = 10000;
  std::optional<EvalAttackSpec> adversarial;
  bool dump_tensors = false;
};

struct SweepSpec {
  std::string name = "sweep";
  DatasetSpec dataset;
  ModelSpec model;
  TrainConfig training;
  double pgd_step_ratio = 0.25;  // training PGD step size = ratio * epsilon
  SweepAxis axis = SweepAxis::Epsilon;
  std::vector<double> grid;
  EstimationSpec estimation;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int threads = 0;  // 0: ADVBV_THREADS or hardware concurrency

  void validate() const {
    if (grid.empty()) throw ConfigError("sweep.values", "grid must not be empty");
    for (std::size_t i = 1; i < grid.size(); ++i) {
      if (!(grid[i] > grid[i - 1])) throw ConfigError("sweep.values", "grid must be strictly increasing");
    }
    for (double v : grid) {
      if (!std::isfinite(v) || v < 0) throw ConfigError("sweep.values", "grid values must be finite and >= 0");
    }
    const bool noise_mode = training.mode == TrainMode::Smoothing || training.mode == TrainMode::FixedNoise;
    if (axis == SweepAxis::Sigma && !noise_mode) {
      throw ConfigError("sweep.axis", "sigma axis needs training.mode smoothing or fixed_noise");
    }
    if (axis == SweepAxis::Epsilon && training.mode != TrainMode::Adversarial && !estimation.adversarial) {
      throw ConfigError("sweep.axis", "epsilon axis needs adversarial training or adversarial evaluation");
    }
    if (axis == SweepAxis::Width && model.kind != ModelSpec::Kind::Mlp) {
      throw ConfigError("sweep.axis", "width axis needs an mlp model");
    }
    if ((axis == SweepAxis::Width || axis == SweepAxis::Dimension)) {
      for (double v : grid) {
        if (v < 1 || v != std::floor(v)) throw ConfigError("sweep.values", "width/dimension values must be positive integers");
      }
    }
    if (estimation.splits < 2) throw ConfigError("estimation.splits", "need at least 2 splits");
    if (estimation.repetitions < 1) throw ConfigError("estimation.repetitions", "need at least 1 repetition");
    if (estimation.test_size < 1) throw ConfigError("estimation.test_size", "need at least 1 test point");
    if (estimation.loss == LossKind::Logistic && model.kind != ModelSpec::Kind::Linear) {
      throw ConfigError("estimation.loss", "logistic decomposition needs a linear model");
    }
    if (dataset.resolved_n() < estimation.splits) throw ConfigError("dataset.n", "need n >= splits");
  }

  /// Copy with the grid value `v` applied to the swept axis.
  SweepSpec at(double v) const {
    SweepSpec s = *this;
    switch (axis) {
      case SweepAxis::Epsilon:
        s.training.set.epsilon = v;
        s.training.pgd.step_size = pgd_step_ratio * v;
        break;
      case SweepAxis::Sigma:
        s.training.sigma = v;
        break;
      case SweepAxis::Width:
        for (auto& w : s.model.hidden) w = static_cast<Index>(v);
        break;
      case SweepAxis::Dimension:
        s.dataset.d = static_cast<Index>(v);
        break;
    }
    if (axis != SweepAxis::Epsilon) s.training.pgd.step_size = pgd_step_ratio * s.training.set.epsilon;
    return s;
  }

  /// Evaluation attack for the resolved spec, if any.
  std::optional<EvalAttack> eval_attack(std::uint64_t seed_value) const {
    if (!estimation.adversarial) return std::nullopt;
    const auto& a = *estimation.adversarial;
    const double eps = a.epsilon.value_or(training.set.epsilon);
    EvalAttack out;
    out.set = PerturbationSet(a.norm, eps);
    out.pgd = PgdConfig{a.steps, a.step_ratio * eps, a.random_start, a.clip_to_domain};
    if (estimation.loss == LossKind::Squared) out.loss = LossKind::Squared;
    if (estimation.loss == LossKind::CrossEntropy) out.loss = LossKind::CrossEntropy;
    out.seed = seed_value;
    return out;
  }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(where.empty() ? "<root>" : where, "expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where.empty() ? key : where + "." + key, "unknown key");
  }
}

inline std::string join_key(const std::string& where, std::string_view key) {
  return where.empty() ? std::string(key) : where + "." + std::string(key);
}

template <typename T>
T get_or(const json& j, const std::string& where, std::string_view key, T fallback) {
  const auto it = j.find(std::string(key));
  if (it == j.end() || it->is_null()) return fallback;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(join_key(where, key), "expected a boolean");
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!it->is_number()) throw ConfigError(join_key(where, key), "expected a number");
      if constexpr (std::is_integral_v<T>) {
        const double v = it->template get<double>();
        if (v != std::floor(v)) throw ConfigError(join_key(where, key), "expected an integer");
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(join_key(where, key), "expected a string");
    }
    return it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(join_key(where, key), e.what());
  }
}

template <typename Fn>
auto parse_enum(const json& j, const std::string& where, std::string_view key, Fn&& parse,
                decltype(parse(std::string_view{})) fallback) {
  const auto text = get_or<std::string>(j, where, key, "");
  if (text.empty()) return fallback;
  try {
    return parse(text);
  } catch (const ContractError& e) {
    throw ConfigError(join_key(where, key), e.what());
  }
}

}  // namespace detail

inline json to_json(const SweepSpec& s) {
  json ds = {{"kind", s.dataset.kind}, {"n", s.dataset.n}, {"d", s.dataset.d}};
  if (s.dataset.kind == "mog") ds["sigma"] = s.dataset.sigma;
  if (s.dataset.kind == "box") ds["gamma"] = s.dataset.gamma;
  if (s.dataset.threshold) ds["threshold"] = *s.dataset.threshold;
  if (s.dataset.n_per_dim) ds["n_per_dim"] = *s.dataset.n_per_dim;

  json model = {{"kind", s.model.kind == ModelSpec::Kind::Linear ? "linear" : "mlp"}};
  if (s.model.kind == ModelSpec::Kind::Mlp) {
    model["hidden"] = s.model.hidden;
    model["activation"] = to_string(s.model.activation);
    model["head"] = to_string(s.model.head);
  }

  const auto& t = s.training;
  json training = {{"mode", to_string(t.mode)},
                   {"optimizer", to_string(t.optimizer)},
                   {"lr", t.lr},
                   {"momentum", t.momentum},
                   {"weight_decay", t.weight_decay},
                   {"lr_milestones", t.lr_milestones},
                   {"lr_decay", t.lr_decay},
                   {"epochs", t.epochs},
                   {"batch_size", t.batch_size},
                   {"norm", to_string(t.set.norm)},
                   {"epsilon", t.set.epsilon},
                   {"sigma", t.sigma},
                   {"max_iters", t.max_iters},
                   {"grad_tol", t.grad_tol},
                   {"pgd",
                    {{"steps", t.pgd.steps},
                     {"step_ratio", s.pgd_step_ratio},
                     {"random_start", t.pgd.random_start},
                     {"clip_to_domain", t.pgd.clip_to_domain}}}};

  json est = {{"loss", to_string(s.estimation.loss)},
              {"repetitions", s.estimation.repetitions},
              {"splits", s.estimation.splits},
              {"test_size", s.estimation.test_size},
              {"dump_tensors", s.estimation.dump_tensors}};
  if (s.estimation.adversarial) {
    const auto& a = *s.estimation.adversarial;
    json adv = {{"norm", to_string(a.norm)},
                {"steps", a.steps},
                {"step_ratio", a.step_ratio},
                {"random_start", a.random_start},
                {"clip_to_domain", a.clip_to_domain}};
    if (a.epsilon) adv["epsilon"] = *a.epsilon;
    est["adversarial_eval"] = adv;
  } else {
    est["adversarial_eval"] = nullptr;
  }

  return {{"name", s.name},
          {"seed", s.seed},
          {"threads", s.threads},
          {"out", s.out_dir},
          {"dataset", ds},
          {"model", model},
          {"training", training},
          {"sweep", {{"axis", to_string(s.axis)}, {"values", s.grid}}},
          {"estimation", est}};
}

inline SweepSpec parse_sweep_spec(const json& root) {
  using detail::get_or;
  using detail::parse_enum;
  detail::check_keys(root, "", {"name", "seed", "threads", "out", "dataset", "model", "training", "sweep", "estimation"});
  SweepSpec s;
  s.name = get_or<std::string>(root, "", "name", s.name);
  s.seed = get_or<std::uint64_t>(root, "", "seed", s.seed);
  s.threads = get_or<int>(root, "", "threads", s.threads);
  s.out_dir = get_or<std::string>(root, "", "out", s.out_dir);

  if (root.contains("dataset")) {
    const auto& j = root["dataset"];
    detail::check_keys(j, "dataset", {"kind", "n", "d", "sigma", "gamma", "threshold", "n_per_dim"});
    auto& d = s.dataset;
    d.kind = get_or<std::string>(j, "dataset", "kind", d.kind);
    if (d.kind != "mog" && d.kind != "planted" && d.kind != "box") {
      throw ConfigError("dataset.kind", "expected mog, planted or box");
    }
    d.n = get_or<Index>(j, "dataset", "n", d.n);
    d.d = get_or<Index>(j, "dataset", "d", d.d);
    d.sigma = get_or<double>(j, "dataset", "sigma", d.sigma);
    d.gamma = get_or<double>(j, "dataset", "gamma", d.gamma);
    if (j.contains("threshold") && !j["threshold"].is_null()) d.threshold = get_or<double>(j, "dataset", "threshold", 0.0);
    if (j.contains("n_per_dim") && !j["n_per_dim"].is_null()) d.n_per_dim = get_or<Index>(j, "dataset", "n_per_dim", 0);
    if (d.n < 1 || d.d < 1) throw ConfigError("dataset.n", "n and d must be positive");
  }

  if (root.contains("model")) {
    const auto& j = root["model"];
    detail::check_keys(j, "model", {"kind", "hidden", "activation", "head"});
    const auto kind = get_or<std::string>(j, "model", "kind", "mlp");
    if (kind == "linear") {
      s.model.kind = ModelSpec::Kind::Linear;
    } else if (kind == "mlp") {
      s.model.kind = ModelSpec::Kind::Mlp;
    } else {
      throw ConfigError("model.kind", "expected linear or mlp");
    }
    if (j.contains("hidden")) {
      if (!j["hidden"].is_array()) throw ConfigError("model.hidden", "expected an array of widths");
      s.model.hidden.clear();
      for (const auto& w : j["hidden"]) {
        if (!w.is_number_integer() || w.get<Index>() < 1) throw ConfigError("model.hidden", "widths must be positive integers");
        s.model.hidden.push_back(w.get<Index>());
      }
    }
    s.model.activation = parse_enum(j, "model", "activation", parse_activation, s.model.activation);
    s.model.head = parse_enum(j, "model", "head", parse_head, s.model.head);
  }

  if (root.contains("training")) {
    const auto& j = root["training"];
    detail::check_keys(j, "training", {"mode", "optimizer", "lr", "momentum", "weight_decay", "lr_milestones",
                                       "lr_decay", "epochs", "batch_size", "norm", "epsilon", "sigma",
                                       "max_iters", "grad_tol", "pgd"});
    auto& t = s.training;
    t.mode = parse_enum(j, "training", "mode", parse_mode, t.mode);
    t.optimizer = parse_enum(j, "training", "optimizer", parse_optimizer, t.optimizer);
    t.lr = get_or<double>(j, "training", "lr", t.lr);
    t.momentum = get_or<double>(j, "training", "momentum", t.momentum);
    t.weight_decay = get_or<double>(j, "training", "weight_decay", t.weight_decay);
    if (j.contains("lr_milestones")) {
      if (!j["lr_milestones"].is_array()) throw ConfigError("training.lr_milestones", "expected an array");
      t.lr_milestones = j["lr_milestones"].get<std::vector<int>>();
    }
    t.lr_decay = get_or<double>(j, "training", "lr_decay", t.lr_decay);
    t.epochs = get_or<int>(j, "training", "epochs", t.epochs);
    t.batch_size = get_or<Index>(j, "training", "batch_size", t.batch_size);
    const Norm norm = parse_enum(j, "training", "norm", parse_norm, t.set.norm);
    const double eps = get_or<double>(j, "training", "epsilon", t.set.epsilon);
    if (!(eps >= 0)) throw ConfigError("training.epsilon", "must be >= 0");
    t.set = PerturbationSet(norm, eps);
    t.sigma = get_or<double>(j, "training", "sigma", t.sigma);
    t.max_iters = get_or<int>(j, "training", "max_iters", t.max_iters);
    t.grad_tol = get_or<double>(j, "training", "grad_tol", t.grad_tol);
    if (j.contains("pgd")) {
      const auto& p = j["pgd"];
      detail::check_keys(p, "training.pgd", {"steps", "step_ratio", "random_start", "clip_to_domain"});
      t.pgd.steps = get_or<int>(p, "training.pgd", "steps", t.pgd.steps);
      s.pgd_step_ratio = get_or<double>(p, "training.pgd", "step_ratio", s.pgd_step_ratio);
      t.pgd.random_start = get_or<bool>(p, "training.pgd", "random_start", t.pgd.random_start);
      t.pgd.clip_to_domain = get_or<bool>(p, "training.pgd", "clip_to_domain", t.pgd.clip_to_domain);
    }
    t.pgd.step_size = s.pgd_step_ratio * t.set.epsilon;
  }

  if (root.contains("sweep")) {
    const auto& j = root["sweep"];
    detail::check_keys(j, "sweep", {"axis", "values", "linspace"});
    const auto axis = get_or<std::string>(j, "sweep", "axis", "epsilon");
    if (axis == "epsilon") s.axis = SweepAxis::Epsilon;
    else if (axis == "sigma") s.axis = SweepAxis::Sigma;
    else if (axis == "width") s.axis = SweepAxis::Width;
    else if (axis == "dimension") s.axis = SweepAxis::Dimension;
    else throw ConfigError("sweep.axis", "expected epsilon, sigma, width or dimension");
    if (j.contains("values") && j.contains("linspace")) {
      throw ConfigError("sweep.values", "give either values or linspace, not both");
    }
    if (j.contains("values")) {
      if (!j["values"].is_array()) throw ConfigError("sweep.values", "expected an array of numbers");
      for (const auto& v : j["values"]) {
        if (!v.is_number()) throw ConfigError("sweep.values", "expected an array of numbers");
        s.grid.push_back(v.get<double>());
      }
    } else if (j.contains("linspace")) {
      const auto& l = j["linspace"];
      if (!l.is_array() || l.size() != 3 || !l[0].is_number() || !l[1].is_number() || !l[2].is_number_integer()) {
        throw ConfigError("sweep.linspace", "expected [start, stop, count]");
      }
      const double a = l[0].get<double>(), b = l[1].get<double>();
      const int count = l[2].get<int>();
      if (count < 1) throw ConfigError("sweep.linspace", "count must be >= 1");
      for (int i = 0; i < count; ++i) s.grid.push_back(count == 1 ? a : a + (b - a) * i / (count - 1));
    }
  }

  if (root.contains("estimation")) {
    const auto& j = root["estimation"];
    detail::check_keys(j, "estimation", {"loss", "repetitions", "splits", "test_size", "adversarial_eval", "dump_tensors"});
    auto& e = s.estimation;
    e.loss = parse_enum(j, "estimation", "loss", parse_loss, e.loss);
    e.repetitions = get_or<Index>(j, "estimation", "repetitions", e.repetitions);
    e.splits = get_or<Index>(j, "estimation", "splits", e.splits);
    e.test_size = get_or<Index>(j, "estimation", "test_size", e.test_size);
    e.dump_tensors = get_or<bool>(j, "estimation", "dump_tensors", e.dump_tensors);
    if (j.contains("adversarial_eval") && !j["adversarial_eval"].is_null()) {
      const auto& a = j["adversarial_eval"];
      const std::string where = "estimation.adversarial_eval";
      detail::check_keys(a, where, {"norm", "epsilon", "steps", "step_ratio", "random_start", "clip_to_domain"});
      EvalAttackSpec spec;
      spec.norm = parse_enum(a, where, "norm", parse_norm, spec.norm);
      if (a.contains("epsilon") && !a["epsilon"].is_null()) spec.epsilon = get_or<double>(a, where, "epsilon", 0.0);
      spec.steps = get_or<int>(a, where, "steps", spec.steps);
      spec.step_ratio = get_or<double>(a, where, "step_ratio", spec.step_ratio);
      spec.random_start = get_or<bool>(a, where, "random_start", spec.random_start);
      spec.clip_to_domain = get_or<bool>(a, where, "clip_to_domain", spec.clip_to_domain);
      e.adversarial = spec;
    }
  }
  s.validate();
  return s;
}

}  // namespace advbv
