// advbv command line: sweep, plot, selftest, presets.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "advbv/advbv.hpp"

namespace {

int cmd_sweep(const std::string& config_path, const std::string& preset_name, std::optional<std::uint64_t> seed,
              int threads, const std::string& out_dir, bool fresh, bool quiet) {
  advbv::SweepSpec spec =
      preset_name.empty() ? advbv::load_sweep_spec(config_path) : advbv::preset(preset_name);
  advbv::SweepOptions opts;
  if (seed) {
    spec.seed = *seed;
    opts.seed_overridden = true;
  }
  if (!out_dir.empty()) spec.out_dir = out_dir;
  opts.threads = threads;
  opts.resume = !fresh;
  if (!quiet) opts.log = [](const std::string& line) { std::cerr << line << std::endl; };

  const auto result = advbv::run_sweep(spec, opts);
  int failed = 0;
  for (const auto& p : result.points) failed += p.failed();
  std::cout << "wrote " << spec.out_dir << "/sweep.csv (" << result.points.size() << " points, " << failed
            << " failed)\n";
  std::cout << "threshold: " << (result.threshold ? advbv::format_double(*result.threshold) : "none") << '\n';
  return failed == 0 ? 0 : 3;
}

int cmd_plot(const std::string& in, const std::string& out, const std::string& x_label, const std::string& title) {
  const auto points = advbv::load_sweep_csv(in);
  advbv::emit_plot(points, advbv::detect_threshold(points), out, x_label, title);
  std::cout << "wrote " << out << '\n';
  return 0;
}

int cmd_selftest() {
  int failures = 0;
  for (const auto& r : advbv::run_selftest()) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  (" << r.detail << ")\n";
    failures += !r.passed;
  }
  return failures == 0 ? 0 : 1;
}

int cmd_presets(const std::string& show, const std::string& write_dir) {
  if (!show.empty()) {
    std::cout << advbv::to_json(advbv::preset(show)).dump(2) << '\n';
    return 0;
  }
  if (!write_dir.empty()) std::filesystem::create_directories(write_dir);
  for (const auto& s : advbv::presets()) {
    std::printf("%-18s %-8s %-7s %-12s axis=%-9s points=%zu K=%lld N=%lld\n", s.name.c_str(), s.dataset.kind.c_str(),
                s.model.kind == advbv::ModelSpec::Kind::Linear ? "linear" : "mlp",
                std::string(advbv::to_string(s.training.mode)).c_str(), std::string(advbv::to_string(s.axis)).c_str(),
                s.grid.size(), static_cast<long long>(s.estimation.repetitions),
                static_cast<long long>(s.estimation.splits));
    if (!write_dir.empty()) {
      const std::string path = write_dir + "/" + s.name + ".json";
      std::ofstream out(path);
      if (!out) throw advbv::IoError(path, "cannot open for writing");
      out << advbv::to_json(s).dump(2) << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias-variance sweeps for adversarially trained models"};
  app.require_subcommand(1);

  auto* sweep = app.add_subcommand("sweep", "Run a sweep and write sweep.csv, per_k.csv, provenance.json, plot.svg");
  std::string config_path, preset_name, out_dir;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool fresh = false, quiet = false;
  auto* config_opt = sweep->add_option("--config", config_path, "Sweep config (JSON)")->check(CLI::ExistingFile);
  auto* preset_opt = sweep->add_option("--preset", preset_name, "Run a named preset instead of a config file");
  config_opt->excludes(preset_opt);
  sweep->add_option("--seed", seed, "Override the config's master seed");
  sweep->add_option("--threads", threads, "Worker threads (default: ADVBV_THREADS, then all cores)");
  sweep->add_option("--out", out_dir, "Output directory (overrides config)");
  sweep->add_flag("--fresh", fresh, "Ignore cached grid points");
  sweep->add_flag("--quiet", quiet, "No per-point progress on stderr");

  auto* plot = app.add_subcommand("plot", "Render a sweep CSV as SVG");
  std::string plot_in, plot_out, x_label = "sweep parameter", title;
  plot->add_option("--in", plot_in, "sweep.csv")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "Output .svg")->required();
  plot->add_option("--xlabel", x_label, "Horizontal axis label");
  plot->add_option("--title", title, "Plot title");

  auto* selftest = app.add_subcommand("selftest", "Run the fast invariant checks");

  auto* presets = app.add_subcommand("presets", "List the named sweep configurations");
  std::string show, write_dir;
  presets->add_option("--show", show, "Print one preset as JSON");
  presets->add_option("--write", write_dir, "Write every preset as <dir>/<name>.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << app.help();
    return code;
  }

  try {
    if (*sweep) {
      if (config_path.empty() && preset_name.empty()) {
        std::cerr << "sweep: one of --config or --preset is required\n" << sweep->help();
        return 2;
      }
      return cmd_sweep(config_path, preset_name, seed, threads, out_dir, fresh, quiet);
    }
    if (*plot) return cmd_plot(plot_in, plot_out, x_label, title);
    if (*selftest) return cmd_selftest();
    if (*presets) return cmd_presets(show, write_dir);
  } catch (const advbv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
