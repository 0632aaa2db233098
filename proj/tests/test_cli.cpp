#include "lpn/io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(LPNLAB_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("cli exit codes") {
  const fs::path out = fs::temp_directory_path() / "lpn_cli_out";
  fs::remove_all(out);
  const auto good = write_config("lpn_cli_good.json", R"({
    "experiment": "boundary", "trials": 1, "norm": {"settings": ["2"]},
    "train": {"epochs": 2, "eval_epochs": [2]}, "eval": {"bayes_samples": 1000, "grid_resolution": 8}
  })");
  const auto bad = write_config("lpn_cli_bad.json", R"({"experiment": "boundary", "norm": {"q": 1}})");
  const auto broken = write_config("lpn_cli_broken.json", "{ not json");

  CHECK(run("run --config " + good.string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(run("run --config " + good.string() + " --out " + out.string()) == 2);  // non-empty output dir
  CHECK(run("run --config " + good.string() + " --out " + out.string() + " --overwrite --jobs 2") == 0);
  CHECK(run("run --config " + bad.string() + " --out " + out.string() + "_x") == 2);
  CHECK(run("run --config " + broken.string() + " --out " + out.string() + "_x") == 2);
  CHECK(run("run --config /nonexistent.json --out " + out.string() + "_x") == 2);
  CHECK(run("run --out " + out.string()) == 2);
  CHECK(run("frobnicate") == 2);

  const fs::path ckpt = out / "checkpoints/p2_trial0_epoch2.lpn";
  const fs::path img = fs::temp_directory_path() / "lpn_cli_render.pgm";
  CHECK(run("render --checkpoint " + ckpt.string() + " --out " + img.string() + " --resolution 8") == 0);
  CHECK(lpn::read_file(img).size() == std::string("P5\n8 8\n255\n").size() + 64);
  CHECK(run("render --checkpoint " + good.string() + " --out " + img.string()) == 1);  // not a checkpoint
  CHECK(run("render --checkpoint " + ckpt.string() + " --out " + img.string() + ".png") == 2);

  CHECK(run("gradcheck --seeds 10") == 0);

  fs::remove_all(out);
  for (const auto& p : {good, bad, broken, img}) fs::remove(p);
}

TEST_CASE("thread override keeps outputs identical") {
  const fs::path a = fs::temp_directory_path() / "lpn_cli_threads_a";
  const fs::path b = fs::temp_directory_path() / "lpn_cli_threads_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto cfg = write_config("lpn_cli_threads.json", R"({
    "experiment": "p-sweep", "trials": 2, "data": {"train_per_class": 20, "val_per_class": 20},
    "train": {"epochs": 2}, "eval": {"bayes_samples": 1000}
  })");
  CHECK(run("run --config " + cfg.string() + " --out " + a.string()) == 0);
  const std::string cmd = "LPNLAB_THREADS=4 " + std::string(LPNLAB_BINARY) + " run --config " + cfg.string() +
                          " --out " + b.string() + " >/dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(lpn::read_file(a / "p_sweep.csv") == lpn::read_file(b / "p_sweep.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove(cfg);
}
