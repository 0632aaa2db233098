#include "lpn/errors.hpp"
#include "lpn/experiment.hpp"
#include "lpn/io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace lpn;
namespace fs = std::filesystem;

namespace {

std::string config_error_key(const std::string& text) {
  try {
    parse_config_json(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lpn_exp_" + name);
  fs::remove_all(p);
  return p;
}

std::set<std::string> files_on_disk(const fs::path& root) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), root).generic_string());
  }
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    for (auto f : split(line, ',')) row.emplace_back(f);
    rows.push_back(row);
  }
  return rows;
}

const char* kTinyBoundary = R"({
  "experiment": "boundary", "trials": 2,
  "train": {"epochs": 4, "eval_epochs": [2, 4]},
  "eval": {"bayes_samples": 2000, "grid_resolution": 16}
})";

}  // namespace

TEST_CASE("minimal config is fully defaulted") {
  const ExperimentConfig cfg = parse_config_json(R"({"experiment": "boundary"})");
  CHECK(cfg.kind == ExperimentKind::Boundary);
  CHECK(cfg.trials == 5);
  CHECK(cfg.seed == 42);
  CHECK(cfg.train.epochs == 500);
  CHECK(cfg.train.eval_epochs == std::vector<int>{100, 250, 500});
  CHECK(cfg.settings == std::vector<std::string>{"none", "1", "2", "inf", "learnable"});
  const auto echoed = cfg.to_json();
  CHECK(echoed["norm"]["p"] == "2");
  CHECK(echoed["train"]["batch_size"] == 32);
  CHECK(echoed["eval"]["bayes_samples"] == 100000);
  // the echo parses back to the same config
  CHECK(parse_config_json(echoed.dump()).to_json() == echoed);

  const auto probe = parse_config_json(R"({"experiment": "probe-silhouette"})");
  CHECK(probe.train.epochs == 50);
  CHECK(probe.probe_hidden == std::vector<int>{0, 128, 512, 2048, 4096});
  const auto proj = parse_config_json(R"({"experiment": "projection"})");
  CHECK(proj.settings == std::vector<std::string>{"1", "2", "inf"});
}

TEST_CASE("config values decode") {
  CHECK(parse_config_json(R"({"experiment": "p-sweep", "norm": {"p": "inf"}})").p.mode() == NormOrder::Mode::Infinity);
  CHECK(parse_config_json(R"({"experiment": "p-sweep", "norm": {"p": 3}})").p.value() == 3.0);
  CHECK(parse_config_json(R"({"experiment": "p-sweep", "norm": {"alpha": "learnable"}})").alpha.is_learnable());
  CHECK(parse_config_json(R"({"experiment": "p-sweep", "norm": {"settings": [1, "inf"]}})").settings ==
        std::vector<std::string>{"1", "inf"});
  const auto short_run = parse_config_json(R"({"experiment": "boundary", "train": {"epochs": 300}})");
  CHECK(short_run.train.eval_epochs == std::vector<int>{100, 250, 300});
  const auto off = parse_config_json(R"({"experiment": "p-sweep", "norm": {"enabled": false}})");
  CHECK(off.settings == std::vector<std::string>{"none"});
}

TEST_CASE("config errors name the offending key") {
  CHECK(config_error_key(R"({"experiment": "boundary", "norm": {"q": 1}})") == "norm.q");
  CHECK(config_error_key(R"({"experiment": "boundary", "colour": 1})") == "colour");
  CHECK(config_error_key(R"({"experiment": "boundary", "trials": 0})") == "trials");
  CHECK(config_error_key(R"({"experiment": "boundary", "trials": "five"})") == "trials");
  CHECK(config_error_key(R"({"experiment": "boundary", "norm": {"p": "0.5"}})") == "norm.p");
  CHECK(config_error_key(R"({"experiment": "boundary", "norm": {"settings": ["2", "x"]}})") == "norm.settings[1]");
  CHECK(config_error_key(R"({"experiment": "sideways"})") == "experiment");
  CHECK(config_error_key(R"({"trials": 2})") == "experiment");
  CHECK(config_error_key(R"({"experiment": "boundary", "train": {"eval_epochs": [600]}})") == "train");
  CHECK(config_error_key(R"({"experiment": "boundary", "eval": {"bayes_samples": 10}})") == "eval.bayes_samples");
  CHECK(config_error_key(R"({"experiment": "alpha-sweep", "norm": {"enabled": false}})") == "norm.enabled");
  CHECK(config_error_key(R"({"experiment": "boundary", "data": {"train_csv": "x.csv"}})") == "data.train_csv");
  CHECK(config_error_key(R"({"experiment": "p-sweep", "norm": {"enabled": false, "settings": ["2"]}})") ==
        "norm.settings");
}

TEST_CASE("syntax errors report the line") {
  try {
    parse_config_json("{\n  \"experiment\": \"boundary\",\n  \"trials\": ,\n}");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("/nonexistent/lpn.json"), ConfigError);
}

TEST_CASE("summary statistics") {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.n == 4);
  CHECK(s.mean == 2.5);
  CHECK(s.ci95 == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-14));
  CHECK(summarize({7.0}).ci95 == 0.0);
  CHECK(summarize({}).n == 0);
}

TEST_CASE("boundary experiment artifacts") {
  const fs::path out = scratch("boundary");
  const auto result = run_experiment(parse_config_json(kTinyBoundary), RunOptions{out});

  // 5 settings x 2 checkpoint epochs per trial plus the Bayes grid
  int grids = 0;
  for (const auto& f : result.manifest.files) grids += f.rfind("grids/", 0) == 0;
  CHECK(grids == 2 * 5 * 2 + 1);
  CHECK(fs::exists(out / "grids/p2_trial1_epoch4.pgm"));
  CHECK(fs::exists(out / "checkpoints/none_trial0_epoch2.lpn"));

  // manifest lists exactly the files on disk
  std::set<std::string> listed(result.manifest.files.begin(), result.manifest.files.end());
  listed.insert("manifest.json");
  CHECK(listed == files_on_disk(out));

  // summary CIs recompute from the per-trial CSV
  const auto rows = read_csv(out / "boundary.csv");
  REQUIRE(rows.size() == 1 + 2 * 5 * 2);
  std::map<std::string, std::vector<double>> groups;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    groups[rows[i][1] + "/epoch" + rows[i][2] + "/bayes_dev"].push_back(parse_double(rows[i][3]));
  }
  for (const auto& [key, values] : groups) {
    const auto s = summarize(values);
    const auto& m = result.manifest.summary.at(key);
    CHECK(std::abs(s.mean - m.mean) < 1e-12);
    CHECK(std::abs(s.ci95 - m.ci95) < 1e-12);
  }
  const auto manifest = nlohmann::json::parse(read_file(out / "manifest.json"));
  CHECK(manifest["seeds"].size() == 2);
  CHECK(manifest["config"]["trials"] == 2);

  // a second run into the same directory is refused without overwrite
  CHECK_THROWS_AS(run_experiment(parse_config_json(kTinyBoundary), RunOptions{out}), ConfigError);
  RunOptions again{out};
  again.overwrite = true;
  CHECK_NOTHROW(run_experiment(parse_config_json(kTinyBoundary), again));
  fs::remove_all(out);
}

TEST_CASE("artifacts are byte-identical across job counts") {
  const fs::path a = scratch("det_a");
  const fs::path b = scratch("det_b");
  const auto cfg = parse_config_json(kTinyBoundary);
  RunOptions oa{a};
  oa.jobs = 1;
  RunOptions ob{b};
  ob.jobs = 3;
  run_experiment(cfg, oa);
  run_experiment(cfg, ob);
  const auto files = files_on_disk(a);
  REQUIRE(files == files_on_disk(b));
  for (const auto& f : files) {
    if (f == "manifest.json") continue;
    INFO(f);
    CHECK(read_file(a / f) == read_file(b / f));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("bayes-dim curve schema") {
  const fs::path out = scratch("bayes_dim");
  const auto cfg = parse_config_json(R"({
    "experiment": "bayes-dim", "trials": 1, "model": {"dims": [2, 4]},
    "train": {"epochs": 6, "eval_epochs": [6]},
    "eval": {"curve_stride": 2, "curve_samples": 1000, "bayes_samples": 1000}
  })");
  run_experiment(cfg, RunOptions{out});
  const auto rows = read_csv(out / "bayes_dim.csv");
  CHECK(rows.front() == std::vector<std::string>{"trial", "dim", "setting", "epoch", "bayes_dev"});
  CHECK(rows.size() == 1 + 2 * 5 * 3);
  fs::remove_all(out);
}

TEST_CASE("sweep kinds") {
  SUBCASE("probe-silhouette: one score per hidden width per trial") {
    const fs::path out = scratch("probe");
    run_experiment(parse_config_json(R"({
      "experiment": "probe-silhouette", "trials": 2, "model": {"probe_hidden": [0, 16]},
      "data": {"train_per_class": 30, "val_per_class": 30},
      "train": {"epochs": 2}, "eval": {"bayes_samples": 1000}
    })"),
                   RunOptions{out});
    const auto rows = read_csv(out / "probe_silhouette.csv");
    CHECK(rows.size() == 1 + 2 * 2);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double s = parse_double(rows[i][2]);
      CHECK(s >= -1.0);
      CHECK(s <= 1.0);
    }
    fs::remove_all(out);
  }
  SUBCASE("projection: p=2 points sit on the unit circle") {
    const fs::path out = scratch("projection");
    const auto result = run_experiment(parse_config_json(R"({
      "experiment": "projection", "trials": 1, "data": {"train_per_class": 40},
      "train": {"epochs": 3}, "eval": {"bayes_samples": 1000}
    })"),
                                       RunOptions{out});
    CHECK(fs::exists(out / "projection/p2_trial0_norm.ppm"));
    CHECK(fs::exists(out / "projection/pinf_trial0_raw.ppm"));
    const auto rows = read_csv(out / "projection/p2_trial0.csv");
    int norm_rows = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i][3] != "norm") continue;
      ++norm_rows;
      CHECK(std::abs(std::hypot(parse_double(rows[i][0]), parse_double(rows[i][1])) - 1.0) < 1e-9);
    }
    CHECK(norm_rows == 80);
    fs::remove_all(out);
  }
  SUBCASE("alpha-sweep and p-sweep with tabular data") {
    const fs::path dir = scratch("csvdata");
    fs::create_directories(dir);
    write_dataset_csv(sample(poc_spec(), 20, 1), dir / "train.csv");
    write_dataset_csv(sample(poc_spec(), 20, 2), dir / "val.csv");
    std::ofstream(dir / "cfg.json") << R"({
      "experiment": "alpha-sweep", "trials": 1, "data": {"train_csv": "train.csv", "val_csv": "val.csv"},
      "train": {"epochs": 2}, "eval": {"bayes_samples": 1000}
    })";
    const auto result = run_experiment(parse_config(dir / "cfg.json"), RunOptions{dir / "out"});
    REQUIRE(result.cells.size() == 2);
    CHECK(result.cells[0].setting == "alpha=1");
    CHECK(result.cells[1].setting == "alpha=learnable");
    CHECK(result.cells[0].metrics.count("bayes_dev") == 0);
    CHECK(fs::exists(dir / "out/alpha_sweep.csv"));
    fs::remove_all(dir);
  }
}
