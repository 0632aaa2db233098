// lpnlab: experiment runner, gradient checker and checkpoint renderer.

#include "lpn/errors.hpp"
#include "lpn/experiment.hpp"
#include "lpn/gradcheck.hpp"
#include "lpn/io.hpp"
#include "lpn/model.hpp"
#include "lpn/render.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

int jobs_from_env(int jobs) {
  const char* env = std::getenv("LPNLAB_THREADS");
  if (env == nullptr || *env == '\0') return jobs;
  try {
    const int n = std::stoi(env);
    if (n >= 1) return n;
  } catch (const std::exception&) {
  }
  std::cerr << "warning: ignoring invalid LPNLAB_THREADS='" << env << "'\n";
  return jobs;
}

int cmd_run(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed, int jobs,
            bool overwrite) {
  lpn::ExperimentConfig cfg;
  try {
    cfg = lpn::parse_config(config_path);
  } catch (const lpn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  lpn::RunOptions opts;
  opts.out_dir = out;
  opts.seed = seed;
  opts.jobs = jobs_from_env(jobs);
  opts.overwrite = overwrite;
  opts.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
  try {
    const auto result = lpn::run_experiment(cfg, opts);
    std::cout << "wrote " << result.manifest.files.size() + 1 << " files to " << out << "\n";
    for (const auto& [key, stat] : result.manifest.summary) {
      std::cout << key << " = " << lpn::format_double(stat.mean) << " +- " << lpn::format_double(stat.ci95) << " (n="
                << stat.n << ")\n";
    }
  } catch (const lpn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

int cmd_gradcheck(int seeds) {
  lpn::GradCheckOptions opts;
  opts.seeds = seeds;
  const auto start = std::chrono::steady_clock::now();
  const auto results = lpn::run_gradcheck(opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "ok   " : "FAIL ") << r.name << "  checks=" << r.checks
              << "  worst_rel_error=" << r.worst_rel_error << "\n";
    ok = ok && r.passed;
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << " in " << secs << " s\n";
  return ok ? kExitOk : kExitFailure;
}

int cmd_render(const std::string& checkpoint, const std::string& out, int resolution) {
  const lpn::Classifier model = lpn::load_checkpoint(checkpoint);
  const lpn::Bounds bounds;
  const lpn::ClassGrid grid = lpn::decision_grid(model, bounds, resolution);
  const std::filesystem::path path(out);
  if (path.extension() == ".csv") {
    lpn::write_file_atomic(path, lpn::grid_csv(grid, bounds));
  } else if (path.extension() == ".pgm") {
    lpn::write_pgm(grid, model.spec().num_classes, path);
  } else {
    std::cerr << "error: --out must end in .pgm or .csv\n";
    return kExitConfig;
  }
  std::cout << "wrote " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lp-normalized softmax experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run an experiment config");
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool overwrite = false;
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--seed", seed, "master seed (overrides the config)");
  run->add_option("--jobs", jobs, "parallel cells")->check(CLI::PositiveNumber);
  run->add_flag("--overwrite", overwrite, "replace a non-empty output directory");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  int seeds = 100;
  grad->add_option("--seeds", seeds, "random cases per check")->check(CLI::PositiveNumber);

  auto* render = app.add_subcommand("render", "decision grid of a checkpoint");
  std::string checkpoint;
  std::string image;
  int resolution = 256;
  render->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  render->add_option("--out", image, "output .pgm or .csv")->required();
  render->add_option("--resolution", resolution, "grid cells per side")->check(CLI::Range(2, 8192));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, seed, jobs, overwrite);
    if (*grad) return cmd_gradcheck(seeds);
    if (*render) return cmd_render(checkpoint, image, resolution);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
