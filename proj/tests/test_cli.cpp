#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kCli = EMOTASK_CLI_PATH;

int run(const std::string& args) {
  std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

fs::path tmp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("emotask_cli_" + name);
  fs::remove_all(p);
  return p;
}

const std::string kSynthFlags =
    " --n 200 --seed 1 --frac-expr-only 0.2 --frac-au-only 0.5 --frac-both 0.3";
const std::string kTrainFlags =
    " --mode multitask --epochs 2 --batch 32 --hidden 8 --feature-dim 16 --seed 1";

}  // namespace

TEST_CASE("synth writes a dataset and is byte-deterministic") {
  fs::path a = tmp_dir("synth_a"), b = tmp_dir("synth_b");
  REQUIRE(run("synth --out " + a.string() + kSynthFlags) == 0);
  REQUIRE(run("synth --out " + b.string() + kSynthFlags) == 0);
  for (const char* f : {"manifest.csv", "images.bin", "synth_report.json"}) {
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("synth rejects fractions above one with the config exit code") {
  CHECK(run("synth --out /tmp/emotask_cli_bad --n 10 --frac-expr-only 0.6 "
            "--frac-au-only 0.6 --frac-both 0.0") == 2);
}

TEST_CASE("train / eval / report pipeline") {
  fs::path data = tmp_dir("data");
  REQUIRE(run("synth --out " + data.string() + kSynthFlags) == 0);

  fs::path run_a = tmp_dir("run_a"), run_b = tmp_dir("run_b");
  REQUIRE(run("train --data " + data.string() + " --out " + run_a.string() + kTrainFlags) == 0);
  REQUIRE(run("train --data " + data.string() + " --out " + run_b.string() + kTrainFlags) == 0);

  for (const char* f : {"run_manifest.json", "checkpoint.bin", "stats.jsonl",
                        "metrics.json", "metrics.txt"}) {
    CHECK(fs::exists(run_a / f));
  }
  // identical invocations produce byte-identical artifacts
  CHECK(slurp(run_a / "checkpoint.bin") == slurp(run_b / "checkpoint.bin"));
  CHECK(slurp(run_a / "metrics.json") == slurp(run_b / "metrics.json"));
  CHECK(slurp(run_a / "stats.jsonl") == slurp(run_b / "stats.jsonl"));

  CHECK(run("eval --checkpoint " + (run_a / "checkpoint.bin").string() + " --data " +
            data.string()) == 0);
  CHECK(run("report --metrics " + (run_a / "metrics.json").string()) == 0);

  CHECK(run("eval --checkpoint /nonexistent.bin --data " + data.string()) == 1);

  fs::remove_all(data);
  fs::remove_all(run_a);
  fs::remove_all(run_b);
}

TEST_CASE("train mode without matching labels fails with the config exit code") {
  fs::path data = tmp_dir("au_only_data");
  REQUIRE(run("synth --out " + data.string() +
              " --n 50 --seed 2 --frac-expr-only 0 --frac-au-only 1 --frac-both 0") == 0);
  CHECK(run("train --data " + data.string() + " --out " +
            tmp_dir("run_bad").string() +
            " --mode expr_only --epochs 1 --hidden 4 --feature-dim 8") == 2);
  fs::remove_all(data);
}

TEST_CASE("gradcheck passes clean and fails when corrupted") {
  CHECK(run("gradcheck --seed 1") == 0);
  CHECK(run("gradcheck --seed 2") == 0);
  CHECK(run("gradcheck --seed 1 --corrupt") == 4);
}
