// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include "lpn/experiment.hpp"
#include "lpn/gradcheck.hpp"
#include "lpn/io.hpp"
#include "lpn/metrics.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <thread>

using namespace lpn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* id, const char* title, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s %s  %s  [%s] (%.2f s)\n", id, out.pass ? "PASS" : "FAIL", title, out.detail.c_str(), secs);
  std::fflush(stdout);
  if (!out.pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lpn_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, int d, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

// ---------------------------------------------------------------------------

constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 10.0;

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  GradCheckOptions opts;
  opts.seeds = 100;
  opts.step = 1e-5;
  opts.tolerance = kGradTol;
  const auto results = check_lp_layer(opts);
  const double secs = seconds_since(start);
  double worst = 0.0;
  bool ok = true;
  int checks = 0;
  for (const auto& r : results) {
    worst = std::max(worst, r.worst_rel_error);
    ok = ok && r.passed;
    checks += r.checks;
  }
  return {ok && secs < kGradSeconds,
          std::to_string(checks) + " checks, worst rel err " + fmt(worst) + ", " + fmt(secs) + " s"};
}

constexpr double kIdentityTol = 1e-10;
constexpr double kC2Tol = 1e-12;

Outcome magnitude_identities() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(derive_seed(2024, 2));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_identity = 0.0;
  double worst_c2 = 0.0;
  int outside = 0;
  for (int i = 0; i < 1000; ++i) {
    const int d = 2 + static_cast<int>(unit(rng) * 15);
    const auto x = random_vec(rng, d, std::pow(10.0, 4 * unit(rng) - 2));
    const double p = i % 7 == 0 ? kInf : 1.0 + 15.0 * unit(rng);
    const double alpha = 0.05 + 10.0 * unit(rng);
    const auto m = magnitude_interval(x, p, alpha);
    worst_identity = std::max(worst_identity, std::abs(m.actual - alpha * cp_ratio(x, p)));
    outside += m.actual < m.lo - kIdentityTol || m.actual > m.hi + kIdentityTol;
    worst_c2 = std::max(worst_c2, std::abs(cp_ratio(x, 2.0) - 1.0));
  }
  const double secs = seconds_since(start);
  return {worst_identity < kIdentityTol && outside == 0 && worst_c2 < kC2Tol && secs < 1.0,
          "max |‖x̄‖₂ − αCp| " + fmt(worst_identity) + ", outside interval " + std::to_string(outside) +
              ", max |C2 − 1| " + fmt(worst_c2)};
}

constexpr double kScaleTol = 1e-10;

Outcome scale_invariance() {
  std::mt19937_64 rng(derive_seed(2024, 3));
  const std::vector<double> orders = {1.0, 1.5, 2.0, 3.0, 8.0, kInf};
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto x = random_vec(rng, 2 + i % 15, 1.0);
    for (double p : orders) {
      const Eigen::VectorXd base = lp_normalize(x, p, 1.0);
      for (int e = -6; e <= 6; ++e) {
        const double c = std::pow(10.0, e);
        worst = std::max(worst, (lp_normalize(Eigen::VectorXd(c * x), p, 1.0) - base).cwiseAbs().maxCoeff());
      }
    }
  }
  // learnable mode through the layer
  LpNormLayer learnable(NormOrder::learnable(3.3), RadiusParam::learnable(1.7));
  for (int i = 0; i < 50; ++i) {
    const auto x = random_vec(rng, 8, 1.0);
    const Eigen::VectorXd base = learnable.forward(x);
    for (int e = -6; e <= 6; ++e) {
      worst = std::max(worst, (learnable.forward(std::pow(10.0, e) * x) - base).cwiseAbs().maxCoeff());
    }
  }
  // decision level
  int changed = 0;
  const Dataset probe = sample(poc_spec(), 200, 3);
  for (const char* order : {"1", "2", "3", "inf", "learnable"}) {
    const Classifier m = build_poc(4, NormConfig{NormOrder::parse(order), RadiusParam::fixed(1.0)}, 5);
    const auto out = m.forward(probe.points);
    const auto pred = argmax_rows(out.logits);
    for (int e = -6; e <= 6; ++e) changed += argmax_rows(m.logits_from_penultimate(std::pow(10.0, e) * out.penultimate)) != pred;
  }
  return {worst < kScaleTol && changed == 0,
          "max elementwise change " + fmt(worst) + ", prediction changes " + std::to_string(changed)};
}

constexpr double kSilhouetteTol = 1e-12;

Outcome silhouette_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(derive_seed(2024, 4));
  std::uniform_int_distribution<int> size(3, 2000);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < 200; ++inst) {
    const int rows = inst == 199 ? 2000 : size(rng);
    const int k = 2 + inst % 5;
    const int d = 1 + inst % 8;
    Matrix x(rows, d);
    std::vector<int> y(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) {
      y[static_cast<std::size_t>(i)] = i < k ? i : static_cast<int>(rng() % static_cast<unsigned>(k));
      for (int j = 0; j < d; ++j) x(i, j) = n(rng) + 1.5 * y[static_cast<std::size_t>(i)];
    }
    worst = std::max(worst, std::abs(silhouette(x, y).overall - silhouette_oracle(x, y)));
  }
  const double secs = seconds_since(start);
  return {worst < kSilhouetteTol && secs < 30.0, "max |fast − oracle| " + fmt(worst) + ", " + fmt(secs) + " s"};
}

constexpr double kConstantTol = 0.005;

Outcome bayes_machinery() {
  const GmmSpec spec = poc_spec();
  const BatchPredictor bayes = bayes_predictor(spec);
  const BatchPredictor flipped = [&](const Matrix& x) {
    auto y = bayes(x);
    for (int& v : y) v = 1 - v;
    return y;
  };
  const BatchPredictor constant = [](const Matrix& x) { return std::vector<int>(static_cast<std::size_t>(x.rows()), 0); };
  const double self = bayes_deviation(spec, bayes, 100'000, 11).estimate;
  const double flip = bayes_deviation(spec, flipped, 100'000, 12).estimate;
  const double cst = bayes_deviation(spec, constant, 100'000, 13).estimate;

  const Bounds box;
  const ClassGrid grid = decision_grid(bayes, box, 512);
  int mismatches = 0;
  for (int r = 0; r < 512; ++r) {
    for (int c = 0; c < 512; ++c) {
      const auto p = cell_center(box, 512, r, c);
      if (p.x() == 0.0 || p.y() == 0.0) continue;
      mismatches += grid.at(r, c) != (p.x() * p.y() > 0 ? 1 : 0);
    }
  }
  return {self == 0.0 && flip == 1.0 && std::abs(cst - 0.5) <= kConstantTol && mismatches == 0,
          "self " + fmt(self) + ", flipped " + fmt(flip) + ", constant " + fmt(cst) + ", grid mismatches " +
              std::to_string(mismatches)};
}

// PoC boundary study shared by the over-training and accuracy criteria.
constexpr double kStableDrift = 0.03;
constexpr double kNoNormMargin = 0.01;
constexpr double kMinValAcc = 0.85;
constexpr double kMaxDeviation = 0.10;

struct BoundaryStudy {
  ExperimentResult result;
  double seconds = 0.0;
};

const BoundaryStudy& boundary_study() {
  static const BoundaryStudy study = [] {
    ExperimentConfig cfg = default_config(ExperimentKind::Boundary);
    cfg.seed = 42;
    cfg.trials = 5;
    cfg.settings = {"none", "1", "2"};
    RunOptions opts{scratch("boundary")};
    opts.jobs = jobs();
    const auto start = std::chrono::steady_clock::now();
    BoundaryStudy s{run_experiment(cfg, opts), 0.0};
    s.seconds = seconds_since(start);
    return s;
  }();
  return study;
}

const CellResult& cell(const ExperimentResult& r, int trial, const std::string& setting) {
  for (const auto& c : r.cells) {
    if (c.trial == trial && c.setting == setting) return c;
  }
  throw std::runtime_error("missing cell " + setting);
}

Outcome overtraining_robustness() {
  const auto& study = boundary_study();
  int p2_stable = 0;
  int none_not_improving = 0;
  int p1_above_p2 = 0;
  std::string per_trial;
  for (int t = 0; t < 5; ++t) {
    const auto& none = cell(study.result, t, "none");
    const auto& p1 = cell(study.result, t, "1");
    const auto& p2 = cell(study.result, t, "2");
    p2_stable += std::abs(p2.deviation.at(500) - p2.deviation.at(100)) < kStableDrift;
    none_not_improving += none.deviation.at(500) >= none.deviation.at(100) - kNoNormMargin;
    p1_above_p2 += p1.deviation.at(500) > p2.deviation.at(500);
    per_trial += " t" + std::to_string(t) + "(none " + fmt(none.deviation.at(100)) + "→" + fmt(none.deviation.at(500)) +
                 ", p2 " + fmt(p2.deviation.at(100)) + "→" + fmt(p2.deviation.at(500)) + ", p1 " +
                 fmt(p1.deviation.at(500)) + ")";
  }
  const bool ok = p2_stable >= 3 && none_not_improving >= 3 && p1_above_p2 >= 3 && study.seconds < 600.0;
  return {ok, "votes p2-stable " + std::to_string(p2_stable) + "/5, no-norm-not-improving " +
                  std::to_string(none_not_improving) + "/5, p1>p2 " + std::to_string(p1_above_p2) + "/5, " +
                  fmt(study.seconds) + " s;" + per_trial};
}

Outcome poc_accuracy() {
  // master seed 42, trial 0: the p=2, d=2 model after 100 epochs
  const auto& p2 = cell(boundary_study().result, 0, "2");
  const EpochLog& e100 = p2.record.epochs.at(99);
  const double val = e100.val_acc.value_or(0.0);
  const double dev = p2.deviation.at(100);
  return {val > kMinValAcc && dev < kMaxDeviation,
          "val acc " + fmt(val) + ", Bayes deviation " + fmt(dev) + ", train loss " + fmt(e100.train_loss) +
              ", grid disagreement " + fmt(p2.grid_disagreement.at(100))};
}

Outcome determinism() {
  const std::vector<std::string> configs = {
      R"({"experiment": "boundary", "trials": 2, "train": {"epochs": 6, "eval_epochs": [3, 6]},
          "eval": {"bayes_samples": 4000, "grid_resolution": 32}})",
      R"({"experiment": "bayes-dim", "trials": 2, "model": {"dims": [2, 8]}, "train": {"epochs": 6},
          "eval": {"curve_stride": 2, "curve_samples": 2000, "bayes_samples": 2000}})",
      R"({"experiment": "p-sweep", "trials": 2, "train": {"epochs": 4}, "eval": {"bayes_samples": 2000}})",
      R"({"experiment": "alpha-sweep", "trials": 2, "train": {"epochs": 4}, "eval": {"bayes_samples": 2000}})",
      R"({"experiment": "probe-silhouette", "trials": 2, "model": {"probe_hidden": [0, 64]}, "train": {"epochs": 3}})",
      R"({"experiment": "projection", "trials": 2, "train": {"epochs": 4}, "eval": {"bayes_samples": 2000}})"};
  int compared = 0;
  std::vector<std::string> differing;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto cfg = parse_config_json(configs[i]);
    std::vector<fs::path> dirs;
    for (int j : {1, 3, 1}) {
      RunOptions opts{scratch("det_" + std::to_string(i) + "_" + std::to_string(dirs.size()))};
      opts.jobs = j;
      run_experiment(cfg, opts);
      dirs.push_back(opts.out_dir);
    }
    for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
      if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
      const auto rel = fs::relative(e.path(), dirs[0]);
      const std::string ref = read_file(e.path());
      for (std::size_t k = 1; k < dirs.size(); ++k) {
        ++compared;
        if (!fs::exists(dirs[k] / rel) || read_file(dirs[k] / rel) != ref) differing.push_back(rel.string());
      }
    }
    for (const auto& d : dirs) fs::remove_all(d);
  }
  return {differing.empty() && compared > 0,
          std::to_string(compared) + " file comparisons over 6 kinds, jobs 1/3/1, " +
              std::to_string(differing.size()) + " differ" + (differing.empty() ? "" : " (first " + differing[0] + ")")};
}

Outcome probe_silhouette_direction() {
  ExperimentConfig cfg = default_config(ExperimentKind::ProbeSilhouette);
  cfg.seed = 42;
  cfg.trials = 5;
  RunOptions opts{scratch("probe")};
  opts.jobs = jobs();
  const auto result = run_experiment(cfg, opts);
  const double h0 = result.manifest.summary.at("hidden0/silhouette_norm").mean;
  const double h4096 = result.manifest.summary.at("hidden4096/silhouette_norm").mean;
  std::string all;
  for (int h : cfg.probe_hidden) {
    all += " h" + std::to_string(h) + "=" + fmt(result.manifest.summary.at("hidden" + std::to_string(h) + "/silhouette_norm").mean);
  }
  return {h0 >= h4096, "mean normalized silhouette" + all};
}

}  // namespace

int main() {
  report("C1", "gradient suite", gradient_suite);
  report("C2", "magnitude identities", magnitude_identities);
  report("C3", "scale invariance", scale_invariance);
  report("C4", "silhouette oracle equivalence", silhouette_equivalence);
  report("C5", "Bayes machinery", bayes_machinery);
  report("C6", "over-training robustness", overtraining_robustness);
  report("C7", "PoC accuracy (seed 42)", poc_accuracy);
  report("C8", "determinism", determinism);
  report("C9", "probe silhouette direction", probe_silhouette_direction);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
