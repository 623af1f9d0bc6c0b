#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <sys/wait.h>

#include "coevo/common.hpp"
#include "coevo/io.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("coevo-cli-" + std::to_string(coevo::CounterRng(std::random_device{}()).next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const TempDir& tmp, const std::string& args) {
  const fs::path out_file = tmp.path / "stdout.txt";
  const fs::path err_file = tmp.path / "stderr.txt";
  const std::string cmd = std::string(COEVO_CLI_PATH) + " " + args + " > " + out_file.string() +
                          " 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = fs::exists(out_file) ? coevo::read_file(out_file) : "";
  r.err = fs::exists(err_file) ? coevo::read_file(err_file) : "";
  return r;
}

// Fast config: tiny instance counts and a small policy.
std::string write_tiny_config(const TempDir& tmp, const std::string& extra = "") {
  const fs::path cfg = tmp.path / "config.json";
  coevo::write_file_atomic(cfg, std::string(R"({
  "env": {"kind": "minishop", "catalog_size": 30},
  "n_train": 6, "n_test": 4, "iterations": 1, "analysis_rollouts": 2,
  "policy_dim": 512, "seeds": [1],
  "sft": {"epochs": 2, "batch_size": 4},
  "dpo": {"epochs": 1, "batch_size": 8, "lr_dpo": 1e-4})") +
                                    extra + "\n}\n");
  return cfg.string();
}

}  // namespace

TEST_CASE("unknown subcommands print usage and exit 2") {
  TempDir tmp;
  CliResult r = run_cli(tmp, "no-such-command");
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("gen-env / gen-experts / sft / rollout / build-pairs / train-dpo / eval chain") {
  TempDir tmp;
  const std::string cfg = write_tiny_config(tmp);
  const std::string run_dir = (tmp.path / "run").string();
  const std::string common = " --config " + cfg + " --out " + run_dir;

  CHECK(run_cli(tmp, "gen-env" + common).code == 0);
  CHECK(fs::exists(fs::path(run_dir) / "env.json"));

  // re-invoking a completed stage is a verified no-op
  CliResult again = run_cli(tmp, "gen-env" + common);
  CHECK(again.code == 0);
  CHECK(again.out.find("already complete") != std::string::npos);

  CHECK(run_cli(tmp, "gen-experts" + common).code == 0);
  CHECK(run_cli(tmp, "sft" + common).code == 0);
  CHECK(fs::exists(fs::path(run_dir) / "sft_policy.json"));

  CHECK(run_cli(tmp, "rollout" + common + " --label target --tag target").code == 0);
  CHECK(run_cli(tmp, "build-pairs" + common + " --kind expert").code == 0);
  CHECK(fs::exists(fs::path(run_dir) / "pairs_expert.jsonl"));

  CliResult dpo = run_cli(tmp, "train-dpo" + common +
                                   " --pairs pairs_expert.jsonl --save dpo_policy.json");
  CHECK(dpo.code == 0);
  CHECK(fs::exists(fs::path(run_dir) / "dpo_policy.json"));

  CliResult eval = run_cli(tmp, "eval" + common + " --checkpoint dpo_policy.json --split train");
  CHECK(eval.code == 0);
  CHECK(eval.out.find("mean_reward") != std::string::npos);
}

TEST_CASE("eval with a missing checkpoint fails and names the path") {
  TempDir tmp;
  const std::string cfg = write_tiny_config(tmp);
  const std::string run_dir = (tmp.path / "run").string();
  const std::string common = " --config " + cfg + " --out " + run_dir;
  REQUIRE(run_cli(tmp, "gen-env" + common).code == 0);

  CliResult r = run_cli(tmp, "eval" + common + " --checkpoint nope.json --split train");
  CHECK(r.code == 1);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(r.err.find("nope.json") != std::string::npos);
}

TEST_CASE("invalid config values are reported with every violation") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "bad.json";
  coevo::write_file_atomic(cfg, R"({"hard_negative_threshold": 1.5, "iterations": 0})");
  CliResult r = run_cli(tmp, "gen-env --config " + cfg.string() + " --out " +
                                 (tmp.path / "run").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("hard_negative_threshold") != std::string::npos);
  CHECK(r.err.find("iterations") != std::string::npos);
}

TEST_CASE("coevolve and eto pipelines run end to end; analyze compares them") {
  TempDir tmp;
  const std::string cfg = write_tiny_config(tmp);
  const std::string run_co = (tmp.path / "co").string();
  const std::string run_eto = (tmp.path / "eto").string();

  CliResult co = run_cli(tmp, "coevolve --config " + cfg + " --out " + run_co);
  CHECK(co.code == 0);
  CHECK(co.out.find("mean final target test reward") != std::string::npos);
  CHECK(fs::exists(fs::path(run_co) / "report.json"));
  CHECK(fs::exists(fs::path(run_co) / "manifest.json"));
  CHECK(fs::exists(fs::path(run_co) / "seed1" / "metrics.csv"));

  CHECK(run_cli(tmp, "eto --config " + cfg + " --out " + run_eto).code == 0);

  const std::string analysis_dir = (tmp.path / "analysis").string();
  CliResult an = run_cli(tmp, "analyze --run " + run_co + " --run " + run_eto + " --out " +
                                  analysis_dir);
  CHECK(an.code == 0);
  CHECK(fs::exists(fs::path(analysis_dir) / "stats.csv"));
  CHECK(fs::exists(fs::path(analysis_dir) / "diversity.csv"));
  CHECK(fs::exists(fs::path(analysis_dir) / "summary.json"));

  const std::string summary = coevo::read_file(fs::path(analysis_dir) / "summary.json");
  CHECK(summary.find("comparison") != std::string::npos);
}

TEST_CASE("ablate-positive runs end to end") {
  TempDir tmp;
  const std::string cfg = write_tiny_config(tmp);
  const std::string run_dir = (tmp.path / "pos").string();
  CliResult r = run_cli(tmp, "ablate-positive --config " + cfg + " --out " + run_dir);
  CHECK(r.code == 0);
  const std::string report = coevo::read_file(fs::path(run_dir) / "report.json");
  CHECK(report.find("positive_agent") != std::string::npos);
}
