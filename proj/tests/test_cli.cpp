// End-to-end checks of the command-line surface: exit codes, file outputs
// and the synth -> train -> report -> eval pipeline, run as subprocesses.
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef CDNAS_CLI_PATH
#error "CDNAS_CLI_PATH must point at the built binary"
#endif

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(CDNAS_CLI_PATH) + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_config(const fs::path& path, const std::string& extra_dataset = "") {
  std::ofstream out(path);
  out << R"({
  "dataset": {)"
      << (extra_dataset.empty()
              ? R"(
    "synth": {"n_users": 24, "n_items_per_domain": 24, "n_domains": 2,
              "positives_per_user": 6, "seed": 3},
    "split_seed": 5)"
              : extra_dataset)
      << R"(
  },
  "model": {"hidden_dim": 6, "head_widths": [8, 4], "perceptron_dim": 6, "perceptron_hidden": 6},
  "bilevel": {"warmup_epochs": 1, "max_epochs": 3, "patience": 3, "batch_size": 24,
              "K": 1, "T_inner": 2},
  "seeds": [1],
  "variant": "FULL"
})";
}

}  // namespace

TEST_CASE("cli usage errors exit with code 1") {
  auto dir = fresh_dir("cdnas_cli_usage");
  SUBCASE("missing subcommand") {
    auto r = run_cli("", dir);
    CHECK(r.exit_code != 0);
  }
  SUBCASE("missing config file") {
    auto r = run_cli("train --config /nonexistent/cfg.json", dir);
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("/nonexistent/cfg.json") != std::string::npos);
  }
  SUBCASE("config with an unknown key") {
    std::ofstream(dir / "bad.json") << R"({"dataset": {"synth": {}}, "nonsense": true})";
    auto r = run_cli("train --config " + (dir / "bad.json").string(), dir);
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("nonsense") != std::string::npos);
  }
  SUBCASE("missing dataset path is named in the error") {
    write_config(dir / "cfg.json", R"(
    "tsv": "/nonexistent/data.tsv", "target": "d0", "sources": ["d1"])");
    auto r = run_cli("train --config " + (dir / "cfg.json").string() + " --out " +
                         (dir / "run").string(),
                     dir);
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("/nonexistent/data.tsv") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("synth, train, report and eval pipeline") {
  auto dir = fresh_dir("cdnas_cli_pipe");
  write_config(dir / "cfg.json");

  auto synth = run_cli("synth --config " + (dir / "cfg.json").string() + " --out " +
                           (dir / "ds").string(),
                       dir);
  REQUIRE(synth.exit_code == 0);
  CHECK(fs::exists(dir / "ds" / "dataset.tsv"));
  CHECK(fs::exists(dir / "ds" / "synth_meta.json"));
  CHECK(fs::exists(dir / "ds" / "oracle_scores.tsv"));

  // train directly off the generated TSV (splits are already tagged)
  std::ofstream(dir / "train_cfg.json") << R"({
  "dataset": {"tsv": ")" << (dir / "ds" / "dataset.tsv").string()
                                        << R"(", "target": "d0", "sources": ["d1"]},
  "model": {"hidden_dim": 6, "head_widths": [8, 4], "perceptron_dim": 6, "perceptron_hidden": 6},
  "bilevel": {"warmup_epochs": 1, "max_epochs": 3, "patience": 3, "batch_size": 24,
              "K": 1, "T_inner": 2},
  "seeds": [1, 2],
  "variant": "FULL"
})";
  auto train = run_cli("train --config " + (dir / "train_cfg.json").string() + " --out " +
                           (dir / "run").string() + " --jobs 2",
                       dir);
  REQUIRE(train.exit_code == 0);
  CHECK(fs::exists(dir / "run" / "aggregate.json"));
  CHECK(fs::exists(dir / "run" / "seed_1" / "final.json"));
  CHECK(fs::exists(dir / "run" / "seed_2" / "checkpoint.json"));
  CHECK(train.out.find("mean AUC") != std::string::npos);

  auto report = run_cli("report " + (dir / "run").string(), dir);
  CHECK(report.exit_code == 0);
  CHECK(report.out.find("architecture mixtures") != std::string::npos);

  auto eval = run_cli("eval --config " + (dir / "train_cfg.json").string() + " --checkpoint " +
                          (dir / "run" / "seed_1" / "checkpoint.json").string(),
                      dir);
  CHECK(eval.exit_code == 0);
  CHECK(eval.out.find("test AUC") != std::string::npos);

  // seed override narrows the run set
  auto single = run_cli("train --config " + (dir / "train_cfg.json").string() + " --out " +
                            (dir / "run_one").string() + " --seed 7",
                        dir);
  CHECK(single.exit_code == 0);
  CHECK(fs::exists(dir / "run_one" / "seed_7"));
  CHECK_FALSE(fs::exists(dir / "run_one" / "seed_1"));

  auto missing = run_cli("report " + (dir / "empty").string(), dir);
  CHECK(missing.exit_code == 2);

  fs::remove_all(dir);
}

TEST_CASE("variant override reaches the run records") {
  auto dir = fresh_dir("cdnas_cli_variant");
  write_config(dir / "cfg.json");
  auto r = run_cli("train --config " + (dir / "cfg.json").string() + " --out " +
                       (dir / "run").string() + " --variant NO-IMPO",
                   dir);
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(dir / "run" / "seed_1" / "final.json").find("NO-IMPO") != std::string::npos);
  fs::remove_all(dir);
}
