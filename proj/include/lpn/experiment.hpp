#pragma once

// Declarative experiment runner. A JSON config selects one experiment kind; the
// runner trains every (trial, setting) cell, writes CSVs, images and checkpoints
// under the output directory, and finishes with manifest.json.

#include "lpn/render.hpp"
#include "lpn/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lpn {

enum class ExperimentKind { Boundary, BayesDim, PSweep, AlphaSweep, ProbeSilhouette, Projection };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& text);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Boundary;
  std::uint64_t seed = 42;
  int trials = 5;
  std::string output_dir = "out";

  // data
  int train_per_class = 250;
  int val_per_class = 250;
  std::string train_csv;  // optional tabular data instead of the synthetic mixture
  std::string val_csv;

  // model
  int hidden_width = 128;
  int penultimate_dim = 2;
  std::vector<int> dims = {2, 4, 8, 16};
  std::vector<int> probe_hidden = {0, 128, 512, 2048, 4096};

  // norm
  bool norm_enabled = true;
  NormOrder p = NormOrder::two();
  RadiusParam alpha = RadiusParam::fixed(1.0);
  double epsilon = 1e-12;
  std::vector<std::string> settings;  // "none" or a norm order, per kind
  std::vector<RadiusParam> alphas = {RadiusParam::fixed(1.0), RadiusParam::learnable()};

  TrainConfig train;

  // eval
  std::int64_t bayes_samples = 100000;
  int curve_stride = 10;
  std::int64_t curve_samples = 20000;
  int grid_resolution = 256;
  Bounds bounds;

  /// Every field, defaults included.
  nlohmann::json to_json() const;
  void validate() const;
};

/// Kind-specific defaults (settings list, epochs, checkpoint epochs) applied before user keys.
ExperimentConfig default_config(ExperimentKind kind);

/// Strict parse: unknown keys, wrong types and invalid values raise ConfigError naming the key.
/// Syntax errors report the line number. Relative CSV paths resolve against `base_dir`.
ExperimentConfig parse_config_json(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Per-trial seed derived from the master seed.
std::uint64_t trial_seed(std::uint64_t master, int trial);

struct SummaryStat {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample sd / sqrt(n)
  int n = 0;
};
SummaryStat summarize(const std::vector<double>& values);

struct Manifest {
  std::string config_hash;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> files;  // relative to the output directory, sorted; excludes manifest.json
  std::map<std::string, SummaryStat> summary;

  nlohmann::json to_json() const;
};

/// One trained model of an experiment.
struct CellResult {
  int trial = 0;
  std::string setting;  // "none", "1", "2", "inf", "learnable", "alpha=1", ...
  int dim = 0;          // penultimate width (or probe hidden width)
  RunRecord record;
  std::map<std::string, double> metrics;
  /// Bayes deviation at checkpoint epochs.
  std::map<int, double> deviation;
  std::map<int, double> grid_disagreement;
};

struct ExperimentResult {
  Manifest manifest;
  std::vector<CellResult> cells;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty = config output_dir
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool overwrite = false;
  std::function<void(const std::string&)> log;
};

ExperimentResult run_boundary_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentResult run_bayes_dim_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});
/// p-sweep, alpha-sweep, probe-silhouette and projection kinds.
ExperimentResult run_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});
/// Dispatches on cfg.kind.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

}  // namespace lpn
