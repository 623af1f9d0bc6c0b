// coevo: drives instance generation, SFT, rollouts, preference-pair
// construction, DPO phases, the full co-evolution pipeline and its
// baselines, evaluation and analysis over a run directory.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coevo/analysis.hpp"
#include "coevo/coevolve.hpp"
#include "coevo/config.hpp"
#include "coevo/env.hpp"
#include "coevo/io.hpp"

namespace fs = std::filesystem;
using coevo::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "runs/out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
  cmd->add_option("--out", opts.out_dir, "run directory");
  cmd->add_option("--seed", opts.seed, "seed override")->each([&](const std::string&) {
    opts.seed_set = true;
  });
}

coevo::ExperimentConfig load_config(const CommonOpts& opts) {
  coevo::ExperimentConfig cfg;
  if (!opts.config_path.empty()) {
    json doc;
    try {
      doc = json::parse(coevo::read_file(opts.config_path));
    } catch (const json::exception& e) {
      throw coevo::IoError("parse error in " + opts.config_path + ": " + e.what());
    }
    cfg = coevo::parse_config(doc);
  }
  if (opts.seed_set) cfg.seeds = {opts.seed};
  return cfg;
}

std::uint64_t stage_seed(const coevo::ExperimentConfig& cfg) { return cfg.seeds.front(); }

void log_line(std::string_view msg) { std::cout << msg << "\n"; }

coevo::RunManifest open_manifest(const fs::path& out, const coevo::ExperimentConfig& cfg) {
  fs::create_directories(out);
  return coevo::RunManifest::open(out, coevo::config_to_json(cfg), cfg.seeds);
}

// Stage wrapper: no-op (with hash verification) when the stage is already
// recorded as complete.
bool stage_done(coevo::RunManifest& manifest, const fs::path& out, const std::string& stage) {
  if (manifest.stage_completed(stage)) {
    if (manifest.verify_stage(stage, out)) {
      log_line("stage " + stage + " already complete, hashes verified; nothing to do");
      return true;
    }
    throw coevo::IoError("stage " + stage + " is marked complete but its artifacts changed");
  }
  return false;
}

coevo::InstanceSet load_env(const fs::path& out) {
  return coevo::read_instance_set(out / "env.json");
}

std::vector<const coevo::Instruction*> split_of(const coevo::InstanceSet& set,
                                                const std::string& name) {
  auto instrs = set.by_split(coevo::split_from_string(name));
  if (instrs.empty()) throw coevo::DataError("no instructions in split " + name);
  return instrs;
}

int cmd_gen_env(const CommonOpts& opts) {
  auto cfg = load_config(opts);
  auto manifest = open_manifest(opts.out_dir, cfg);
  if (stage_done(manifest, opts.out_dir, "gen_env")) return 0;
  auto set = coevo::generate_instances(cfg.env, cfg.n_train, cfg.n_test,
                                       coevo::hash_parts(stage_seed(cfg), "env"));
  coevo::write_instance_set(fs::path(opts.out_dir) / "env.json", set);
  manifest.mark_stage("gen_env", {"env.json"}, opts.out_dir);
  log_line("wrote env.json with " + std::to_string(set.instructions.size()) + " instructions");
  return 0;
}

int cmd_gen_experts(const CommonOpts& opts) {
  auto cfg = load_config(opts);
  auto manifest = open_manifest(opts.out_dir, cfg);
  if (stage_done(manifest, opts.out_dir, "gen_experts")) return 0;
  auto set = load_env(opts.out_dir);
  coevo::Env env(set);
  std::vector<coevo::Trajectory> experts;
  for (const auto* ins : split_of(set, "train")) experts.push_back(env.expert_solve(ins->id));
  coevo::write_trajectories(fs::path(opts.out_dir) / "experts.jsonl", experts);
  manifest.mark_stage("gen_experts", {"experts.jsonl"}, opts.out_dir);
  log_line("wrote experts.jsonl with " + std::to_string(experts.size()) + " trajectories");
  return 0;
}

int cmd_sft(const CommonOpts& opts) {
  auto cfg = load_config(opts);
  auto manifest = open_manifest(opts.out_dir, cfg);
  if (stage_done(manifest, opts.out_dir, "sft")) return 0;
  auto set = load_env(opts.out_dir);
  coevo::Env env(set);
  auto experts = coevo::read_trajectories(fs::path(opts.out_dir) / "experts.jsonl");
  coevo::TrainConfig sft_cfg = cfg.sft;
  sft_cfg.seed = coevo::hash_parts(stage_seed(cfg), "sft");
  auto result = coevo::run_phase(coevo::PolicyParams::zeros(cfg.policy_dim), experts, env, sft_cfg,
                                 coevo::PhaseMode::sft);
  coevo::save_checkpoint(fs::path(opts.out_dir) / "sft_policy.json", result.params, stage_seed(cfg));
  coevo::MetricsCsv csv;
  for (const auto& em : result.history)
    csv.add({"sft", 0, em.epoch, em.mean_loss, em.mean_z, em.grad_norm, std::nullopt});
  csv.save(fs::path(opts.out_dir) / "sft_metrics.csv");
  manifest.mark_stage("sft", {"sft_policy.json", "sft_metrics.csv"}, opts.out_dir);
  log_line("wrote sft_policy.json, final epoch mean loss " +
           coevo::format_double(result.history.back().mean_loss));
  return 0;
}

struct RolloutOpts {
  std::string checkpoint = "sft_policy.json";
  std::string split = "train";
  std::string tag = "target";
  std::string label = "target";
  int budget = 1;
  double temperature = 1.0;
};

int cmd_rollout(const CommonOpts& opts, const RolloutOpts& ro) {
  auto cfg = load_config(opts);
  auto manifest = open_manifest(opts.out_dir, cfg);
  const std::string stage = "rollout_" + ro.label;
  if (stage_done(manifest, opts.out_dir, stage)) return 0;
  auto set = load_env(opts.out_dir);
  coevo::Env env(set);
  auto params = coevo::load_checkpoint(fs::path(opts.out_dir) / ro.checkpoint);
  auto rollouts = coevo::collect_rollouts(params, split_of(set, ro.split), env, ro.temperature,
                                          coevo::hash_parts(stage_seed(cfg), "rollout", ro.label),
                                          ro.tag, ro.budget);
  const std::string name = "rollouts_" + ro.label + ".jsonl";
  coevo::write_trajectories(fs::path(opts.out_dir) / name, rollouts);
  manifest.mark_stage(stage, {name}, opts.out_dir);
  log_line("wrote " + name + " with " + std::to_string(rollouts.size()) + " trajectories");
  return 0;
}

struct BuildPairsOpts {
  std::string kind = "target";  // fail | target | expert
  std::string target_rollouts = "rollouts_target.jsonl";
  std::string auxiliary_rollouts;
};

int cmd_build_pairs(const CommonOpts& opts, const BuildPairsOpts& bp) {
  auto cfg = load_config(opts);
  auto manifest = open_manifest(opts.out_dir, cfg);
  const std::string stage = "pairs_" + bp.kind;
  if (stage_done(manifest, opts.out_dir, stage)) return 0;

  coevo::FailureSets sets;
  sets.from_target = coevo::failures_of(
      coevo::read_trajectories(fs::path(opts.out_dir) / bp.target_rollouts));
  if (!bp.auxiliary_rollouts.empty())
    sets.from_failure_agent = coevo::failures_of(
        coevo::read_trajectories(fs::path(opts.out_dir) / bp.auxiliary_rollouts));
  for (auto& t : coevo::read_trajectories(fs::path(opts.out_dir) / "experts.jsonl"))
    sets.experts.emplace(t.instruction_id, std::move(t));

  std::vector<coevo::PreferencePair> pairs;
  if (bp.kind == "fail")
    pairs = coevo::build_failure_pairs(sets);
  else if (bp.kind == "target")
    pairs = coevo::build_target_pairs(sets);
  else if (bp.kind == "expert")
    pairs = coevo::build_expert_pairs(sets);
  else
    throw coevo::ConfigError("unknown pair kind: " + bp.kind);

  const std::string name = "pairs_" + bp.kind + ".jsonl";
  coevo::write_pairs(fs::path(opts.out_dir) / name, pairs);
  manifest.mark_stage(stage, {name}, opts.out_dir);
  log_line("wrote " + name + " with " + std::to_string(pairs.size()) + " pairs");
  return 0;
}

struct TrainDpoOpts {
  std::string checkpoint = "sft_policy.json";
  std::string pairs = "pairs_target.jsonl";
  std::string save = "dpo_policy.json";
  bool failure_agent = false;
};

int cmd_train_dpo(const CommonOpts& opts, const TrainDpoOpts& td) {
  auto cfg = load_config(opts);
  auto manifest = open_manifest(opts.out_dir, cfg);
  const std::string stage = "train_dpo_" + td.save;
  if (stage_done(manifest, opts.out_dir, stage)) return 0;
  auto set = load_env(opts.out_dir);
  coevo::Env env(set);
  auto params = coevo::load_checkpoint(fs::path(opts.out_dir) / td.checkpoint);
  auto pairs = coevo::read_pairs(fs::path(opts.out_dir) / td.pairs);
  if (pairs.empty()) throw coevo::DataError("no pairs in " + td.pairs);
  coevo::TrainConfig dpo_cfg = cfg.dpo;
  dpo_cfg.seed = coevo::hash_parts(stage_seed(cfg), "dpo", td.save);
  auto result = coevo::run_phase(std::move(params), pairs, env, dpo_cfg, coevo::PhaseMode::dpo,
                                 td.failure_agent ? 0.0 : -1.0);
  coevo::save_checkpoint(fs::path(opts.out_dir) / td.save, result.params, stage_seed(cfg));
  const std::string metrics_name = td.save + ".metrics.csv";
  coevo::MetricsCsv csv;
  for (const auto& em : result.history)
    csv.add({td.failure_agent ? "dpo_failure" : "dpo_target", 0, em.epoch, em.mean_loss, em.mean_z,
             em.grad_norm, std::nullopt});
  csv.save(fs::path(opts.out_dir) / metrics_name);
  manifest.mark_stage(stage, {td.save, metrics_name}, opts.out_dir);
  log_line("wrote " + td.save + ", final epoch mean loss " +
           coevo::format_double(result.history.back().mean_loss));
  return 0;
}

int cmd_pipeline(const CommonOpts& opts, coevo::Mode mode) {
  auto cfg = load_config(opts);
  cfg.mode = mode;
  json report = coevo::run_all_seeds(cfg, opts.out_dir, log_line);
  log_line("mean final target test reward: " +
           coevo::format_double(report.at("mean_final_target_test_reward").get<double>()));
  return 0;
}

struct EvalOpts {
  std::string checkpoint = "sft_policy.json";
  std::string split = "test-seen";
  std::string save;
};

int cmd_eval(const CommonOpts& opts, const EvalOpts& eo) {
  auto set = load_env(opts.out_dir);
  coevo::Env env(set);
  auto params = coevo::load_checkpoint(fs::path(opts.out_dir) / eo.checkpoint);
  auto result = coevo::evaluate_policy(params, split_of(set, eo.split), env);
  log_line("mean_reward " + coevo::format_double(result.mean_reward));
  if (!eo.save.empty()) {
    json doc{{"checkpoint", eo.checkpoint},
             {"split", eo.split},
             {"mean_reward", result.mean_reward},
             {"per_instruction", result.per_instruction}};
    coevo::write_file_atomic(fs::path(opts.out_dir) / eo.save, doc.dump(2) + "\n");
  }
  return 0;
}

// Comparative analysis over one or two pipeline run directories: class
// statistics and failure-diversity summaries from the dedicated analysis
// rollouts.
int cmd_analyze(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string stats_csv = "run,mode,seed,count,success_frac,hard_negative_frac,failure_frac\n";
  std::string div_csv = "run,mode,seed,instructions,global_mean,q1,median,q3\n";
  json summary = json::array();

  for (const std::string& dir : run_dirs) {
    json report;
    try {
      report = json::parse(coevo::read_file(fs::path(dir) / "report.json"));
    } catch (const json::exception& e) {
      throw coevo::IoError("parse error in " + dir + "/report.json: " + e.what());
    }
    const std::string mode = report.at("mode").get<std::string>();
    const double threshold =
        report.at("config").at("hard_negative_threshold").get<double>();

    double mean_hard = 0.0, mean_div = 0.0;
    std::size_t n_seeds = 0;
    for (const json& run : report.at("runs")) {
      const std::uint64_t seed = run.at("seed").get<std::uint64_t>();
      const fs::path seed_dir = fs::path(dir) / ("seed" + std::to_string(seed));
      auto rollouts = coevo::read_trajectories(seed_dir / "analysis_rollouts.jsonl");
      auto stats = coevo::traj_stats(rollouts, threshold);
      stats_csv += dir + ',' + mode + ',' + std::to_string(seed) + ',' +
                   std::to_string(stats.count) + ',' + coevo::format_double(stats.success_frac) +
                   ',' + coevo::format_double(stats.hard_negative_frac) + ',' +
                   coevo::format_double(stats.failure_frac) + '\n';

      auto failures = coevo::failures_of(rollouts);
      auto groups = coevo::group_by_instruction(failures);
      auto diversity = coevo::diversity_score(groups);
      div_csv += dir + ',' + mode + ',' + std::to_string(seed) + ',' +
                 std::to_string(diversity.per_instruction.size()) + ',' +
                 coevo::format_double(diversity.global_mean) + ',' +
                 coevo::format_double(diversity.q1) + ',' + coevo::format_double(diversity.median) +
                 ',' + coevo::format_double(diversity.q3) + '\n';

      mean_hard += stats.hard_negative_frac;
      mean_div += diversity.global_mean;
      ++n_seeds;
    }
    summary.push_back(json{{"run", dir},
                           {"mode", mode},
                           {"mean_hard_negative_frac", mean_hard / static_cast<double>(n_seeds)},
                           {"mean_diversity", mean_div / static_cast<double>(n_seeds)}});
  }

  json doc{{"runs", summary}};
  if (summary.size() == 2) {
    doc["comparison"] = json{
        {"hard_negative_frac_delta",
         summary[0].at("mean_hard_negative_frac").get<double>() -
             summary[1].at("mean_hard_negative_frac").get<double>()},
        {"diversity_delta", summary[0].at("mean_diversity").get<double>() -
                                summary[1].at("mean_diversity").get<double>()}};
  }
  coevo::write_file_atomic(fs::path(out_dir) / "stats.csv", stats_csv);
  coevo::write_file_atomic(fs::path(out_dir) / "diversity.csv", div_csv);
  coevo::write_file_atomic(fs::path(out_dir) / "summary.json", doc.dump(2) + "\n");
  log_line("wrote stats.csv, diversity.csv, summary.json to " + out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"co-evolving agents: preference optimization with a failure agent"};
  app.require_subcommand(1);

  CommonOpts opts;
  RolloutOpts rollout_opts;
  BuildPairsOpts pairs_opts;
  TrainDpoOpts dpo_opts;
  EvalOpts eval_opts;
  std::vector<std::string> analyze_runs;
  std::string analyze_out = "analysis";

  auto* gen_env = app.add_subcommand("gen-env", "generate an instance set");
  add_common(gen_env, opts);
  auto* gen_experts = app.add_subcommand("gen-experts", "solve every train instruction with the oracle");
  add_common(gen_experts, opts);
  auto* sft = app.add_subcommand("sft", "behavioral-cloning phase on the expert data");
  add_common(sft, opts);

  auto* rollout = app.add_subcommand("rollout", "sample rollouts from a checkpoint");
  add_common(rollout, opts);
  rollout->add_option("--checkpoint", rollout_opts.checkpoint, "policy checkpoint (in run dir)");
  rollout->add_option("--split", rollout_opts.split, "instruction split");
  rollout->add_option("--tag", rollout_opts.tag, "agent tag recorded on trajectories");
  rollout->add_option("--label", rollout_opts.label, "label for the output file");
  rollout->add_option("--budget", rollout_opts.budget, "rollouts per instruction");
  rollout->add_option("--temperature", rollout_opts.temperature, "sampling temperature");

  auto* build_pairs = app.add_subcommand("build-pairs", "construct a preference dataset");
  add_common(build_pairs, opts);
  build_pairs->add_option("--kind", pairs_opts.kind, "fail | target | expert");
  build_pairs->add_option("--target-rollouts", pairs_opts.target_rollouts, "target rollouts file");
  build_pairs->add_option("--auxiliary-rollouts", pairs_opts.auxiliary_rollouts,
                          "failure-agent rollouts file");

  auto* train_dpo = app.add_subcommand("train-dpo", "one DPO phase over a pair dataset");
  add_common(train_dpo, opts);
  train_dpo->add_option("--checkpoint", dpo_opts.checkpoint, "input checkpoint");
  train_dpo->add_option("--pairs", dpo_opts.pairs, "pair dataset");
  train_dpo->add_option("--save", dpo_opts.save, "output checkpoint name");
  train_dpo->add_flag("--failure-agent", dpo_opts.failure_agent,
                      "train a failure agent (disables the SFT term)");

  auto* coevolve = app.add_subcommand("coevolve", "full co-evolution pipeline over all seeds");
  add_common(coevolve, opts);
  auto* eto = app.add_subcommand("eto", "ETO baseline: expert-vs-own-failure DPO");
  add_common(eto, opts);
  auto* ablate = app.add_subcommand("ablate-positive", "parameter-matched positive-agent ablation");
  add_common(ablate, opts);

  auto* eval = app.add_subcommand("eval", "argmax evaluation of a checkpoint");
  add_common(eval, opts);
  eval->add_option("--checkpoint", eval_opts.checkpoint, "policy checkpoint (in run dir)");
  eval->add_option("--split", eval_opts.split, "instruction split");
  eval->add_option("--save", eval_opts.save, "also write a JSON result");

  auto* analyze = app.add_subcommand("analyze", "stats + diversity analysis over run directories");
  analyze->add_option("--run", analyze_runs, "pipeline run directory (repeat to compare)")
      ->required();
  analyze->add_option("--out", analyze_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (gen_env->parsed()) return cmd_gen_env(opts);
    if (gen_experts->parsed()) return cmd_gen_experts(opts);
    if (sft->parsed()) return cmd_sft(opts);
    if (rollout->parsed()) return cmd_rollout(opts, rollout_opts);
    if (build_pairs->parsed()) return cmd_build_pairs(opts, pairs_opts);
    if (train_dpo->parsed()) return cmd_train_dpo(opts, dpo_opts);
    if (coevolve->parsed()) return cmd_pipeline(opts, coevo::Mode::coevolve);
    if (eto->parsed()) return cmd_pipeline(opts, coevo::Mode::eto);
    if (ablate->parsed()) return cmd_pipeline(opts, coevo::Mode::positive_agent);
    if (eval->parsed()) return cmd_eval(opts, eval_opts);
    if (analyze->parsed()) return cmd_analyze(analyze_runs, analyze_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
