#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coevo/analysis.hpp"
#include "coevo/common.hpp"
#include "coevo/config.hpp"
#include "coevo/env.hpp"
#include "coevo/io.hpp"
#include "coevo/policy.hpp"
#include "coevo/prefdata.hpp"
#include "coevo/training.hpp"

namespace coevo {

using LogFn = std::function<void(std::string_view)>;

inline void log_to(const LogFn& log, std::string_view msg) {
  if (log) log(msg);
}

// ---------------------------------------------------------------------------
// Rollout collection and evaluation

// One sampled trajectory per instruction per rollout slot; each slot draws
// from its own (seed, instruction, slot) stream, so the set is deterministic
// and order-independent.
inline std::vector<Trajectory> collect_rollouts(const PolicyParams& params,
                                                const std::vector<const Instruction*>& instructions,
                                                const Env& env, double temperature,
                                                std::uint64_t seed, const std::string& agent_tag,
                                                int budget = 1) {
  if (instructions.empty()) throw UsageError("collect_rollouts with no instructions");
  std::vector<Trajectory> out;
  out.reserve(instructions.size() * static_cast<std::size_t>(budget));
  for (const Instruction* ins : instructions) {
    for (int r = 0; r < budget; ++r) {
      CounterRng rng = rng_stream(seed, "rollout", ins->id, r);
      try {
        out.push_back(rollout(params, env, ins->id, temperature, rng, agent_tag));
      } catch (const std::exception& e) {
        throw ReplayError("rollout failed on " + ins->id + ": " + e.what());
      }
    }
  }
  return out;
}

struct EvalResult {
  double mean_reward = 0.0;
  std::vector<double> per_instruction;
};

// Argmax decoding, one episode per instruction.
inline EvalResult evaluate_policy(const PolicyParams& params,
                                  const std::vector<const Instruction*>& instructions,
                                  const Env& env) {
  if (instructions.empty()) throw UsageError("evaluate_policy with no instructions");
  EvalResult res;
  res.per_instruction.reserve(instructions.size());
  CounterRng unused(0);
  double total = 0.0;
  for (const Instruction* ins : instructions) {
    Trajectory t = rollout(params, env, ins->id, /*temperature=*/0.0, unused, "eval");
    res.per_instruction.push_back(t.reward);
    total += t.reward;
  }
  res.mean_reward = total / static_cast<double>(instructions.size());
  return res;
}

// ---------------------------------------------------------------------------
// Per-run artifacts

struct AgentIterationReport {
  double train_reward = 0.0;
  double test_reward = 0.0;
  TrajStats rollout_stats;
};

struct IterationArtifacts {
  int iteration = 0;
  std::vector<Trajectory> target_rollouts;
  std::vector<Trajectory> auxiliary_rollouts;  // failure agent / positive agent; empty in eto
  std::vector<PreferencePair> d_fail;
  std::vector<PreferencePair> d_tgt;
  PolicyParams target_params;
  PolicyParams auxiliary_params;  // empty in eto
  AgentIterationReport target;
  AgentIterationReport auxiliary;
  bool auxiliary_phase_skipped = false;
  bool target_phase_skipped = false;
};

struct RunResult {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  InstanceSet instances;
  std::vector<Trajectory> experts;
  PolicyParams base_params;
  double base_train_reward = 0.0;
  double base_test_reward = 0.0;
  std::vector<IterationArtifacts> iterations;
  std::vector<Trajectory> analysis_rollouts;
  MetricsCsv metrics;
  json report;
};

namespace rundetail {

inline json stats_to_json(const TrajStats& s) {
  return json{{"count", s.count},
              {"success", s.success_frac},
              {"hard_negative", s.hard_negative_frac},
              {"failure", s.failure_frac}};
}

inline void add_phase_rows(MetricsCsv& csv, const std::string& phase, int iteration,
                           const std::vector<EpochMetrics>& history) {
  for (const EpochMetrics& em : history) {
    MetricsRow row;
    row.phase = phase;
    row.iteration = iteration;
    row.epoch = em.epoch;
    row.mean_loss = em.mean_loss;
    row.mean_z = em.mean_z;
    row.grad_norm = em.grad_norm;
    csv.add(std::move(row));
  }
}

inline void add_eval_row(MetricsCsv& csv, const std::string& phase, int iteration, double reward) {
  MetricsRow row;
  row.phase = phase;
  row.iteration = iteration;
  row.eval_reward = reward;
  csv.add(std::move(row));
}

}  // namespace rundetail

// ---------------------------------------------------------------------------
// The co-evolution pipeline (single seed). Shared SFT base, then alternating
// rollout / preference-optimization phases per mode:
//   coevolve       - failure agent on D_fail, target on D_tgt
//   eto            - one agent, expert-vs-own-failure pairs only
//   positive_agent - parameter-matched ablation: an auxiliary positive agent
//                    trained ETO-style, whose failures feed the target's
//                    expert pairs (no failure-failure training anywhere)
inline RunResult run_experiment_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                     const LogFn& log = {}) {
  validate_config(cfg);
  RunResult run;
  run.cfg = cfg;
  run.seed = seed;

  run.instances = generate_instances(cfg.env, cfg.n_train, cfg.n_test, hash_parts(seed, "env"));
  Env env(run.instances);
  const std::vector<const Instruction*> train = run.instances.by_split(Split::train);
  const std::vector<const Instruction*> test = run.instances.by_split(Split::test_seen);
  const std::vector<const Instruction*>& eval_set = test.empty() ? train : test;

  // Expert data from the oracle (reward exactly 1.0 on every instruction).
  std::map<std::string, Trajectory> expert_map;
  for (const Instruction* ins : train) {
    Trajectory t = env.expert_solve(ins->id);
    expert_map.emplace(t.instruction_id, t);
    run.experts.push_back(std::move(t));
  }

  // Shared SFT base.
  TrainConfig sft_cfg = cfg.sft;
  sft_cfg.seed = hash_parts(seed, "sft");
  PhaseResult base = run_phase(PolicyParams::zeros(cfg.policy_dim), run.experts, env, sft_cfg,
                               PhaseMode::sft);
  rundetail::add_phase_rows(run.metrics, "sft", 0, base.history);
  run.base_params = std::move(base.params);
  run.base_train_reward = evaluate_policy(run.base_params, train, env).mean_reward;
  run.base_test_reward = evaluate_policy(run.base_params, eval_set, env).mean_reward;
  rundetail::add_eval_row(run.metrics, "eval_base", 0, run.base_test_reward);

  // Both agents start from the shared base, bit-identical. eto has no second
  // policy at all.
  const bool has_auxiliary = cfg.mode != Mode::eto;
  PolicyParams target = run.base_params;
  PolicyParams auxiliary = has_auxiliary ? run.base_params : PolicyParams{};
  const std::string aux_tag = cfg.mode == Mode::coevolve ? "failure" : "other";

  json iter_reports = json::array();
  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    IterationArtifacts art;
    art.iteration = iter;

    art.target_rollouts =
        collect_rollouts(target, train, env, cfg.rollout_temperature,
                         hash_parts(seed, "rollout_target", iter), "target",
                         cfg.rollouts_per_instruction);
    if (has_auxiliary)
      art.auxiliary_rollouts =
          collect_rollouts(auxiliary, train, env, cfg.rollout_temperature,
                           hash_parts(seed, "rollout_auxiliary", iter), aux_tag,
                           cfg.rollouts_per_instruction);

    FailureSets sets;
    sets.from_target = failures_of(art.target_rollouts);
    sets.from_failure_agent = failures_of(art.auxiliary_rollouts);
    sets.experts = expert_map;

    TrainConfig dpo_cfg = cfg.dpo;

    // Auxiliary phase first; the target trains on this iteration's rollouts
    // either way (one rollout pass per iteration).
    if (cfg.mode == Mode::coevolve) {
      art.d_fail = build_failure_pairs(sets);
      if (art.d_fail.empty()) {
        art.auxiliary_phase_skipped = true;
        log_to(log, "iteration " + std::to_string(iter) + ": D_fail empty, failure-agent phase skipped");
      } else {
        dpo_cfg.seed = hash_parts(seed, "dpo_failure", iter);
        PhaseResult r = run_phase(std::move(auxiliary), art.d_fail, env, dpo_cfg, PhaseMode::dpo,
                                  /*lambda_sft_override=*/0.0);
        auxiliary = std::move(r.params);
        rundetail::add_phase_rows(run.metrics, "dpo_failure", iter, r.history);
      }
      art.d_tgt = build_target_pairs(sets);
    } else if (cfg.mode == Mode::positive_agent) {
      FailureSets aux_sets;
      aux_sets.from_target = sets.from_failure_agent;  // the positive agent's own failures
      aux_sets.experts = expert_map;
      std::vector<PreferencePair> aux_pairs = build_expert_pairs(aux_sets);
      if (aux_pairs.empty()) {
        art.auxiliary_phase_skipped = true;
        log_to(log, "iteration " + std::to_string(iter) + ": positive agent had no failures, phase skipped");
      } else {
        dpo_cfg.seed = hash_parts(seed, "dpo_auxiliary", iter);
        PhaseResult r = run_phase(std::move(auxiliary), aux_pairs, env, dpo_cfg, PhaseMode::dpo);
        auxiliary = std::move(r.params);
        rundetail::add_phase_rows(run.metrics, "dpo_positive", iter, r.history);
      }
      // expert pairs over both agents' failures; no failure-failure pairs
      art.d_tgt = build_expert_pairs(sets);
    } else {  // eto
      FailureSets own;
      own.from_target = sets.from_target;
      own.experts = expert_map;
      art.d_tgt = build_expert_pairs(own);
    }

    if (art.d_tgt.empty()) {
      art.target_phase_skipped = true;
      log_to(log, "iteration " + std::to_string(iter) + ": D_tgt empty, target phase skipped");
    } else {
      dpo_cfg.seed = hash_parts(seed, "dpo_target", iter);
      PhaseResult r = run_phase(std::move(target), art.d_tgt, env, dpo_cfg, PhaseMode::dpo);
      target = std::move(r.params);
      rundetail::add_phase_rows(run.metrics, "dpo_target", iter, r.history);
    }

    art.target.rollout_stats = traj_stats(art.target_rollouts, cfg.hard_negative_threshold);
    art.target.train_reward = evaluate_policy(target, train, env).mean_reward;
    art.target.test_reward = evaluate_policy(target, eval_set, env).mean_reward;
    rundetail::add_eval_row(run.metrics, "eval_target", iter, art.target.test_reward);
    if (has_auxiliary) {
      art.auxiliary.rollout_stats = traj_stats(art.auxiliary_rollouts, cfg.hard_negative_threshold);
      art.auxiliary.train_reward = evaluate_policy(auxiliary, train, env).mean_reward;
      art.auxiliary.test_reward = evaluate_policy(auxiliary, eval_set, env).mean_reward;
      rundetail::add_eval_row(run.metrics, "eval_auxiliary", iter, art.auxiliary.test_reward);
    }
    art.target_params = target;
    if (has_auxiliary) art.auxiliary_params = auxiliary;

    json ir{{"iteration", iter},
            {"target",
             json{{"train_reward", art.target.train_reward},
                  {"test_reward", art.target.test_reward},
                  {"rollout_stats", rundetail::stats_to_json(art.target.rollout_stats)}}},
            {"d_fail_pairs", art.d_fail.size()},
            {"d_tgt_pairs", art.d_tgt.size()},
            {"auxiliary_phase_skipped", art.auxiliary_phase_skipped},
            {"target_phase_skipped", art.target_phase_skipped}};
    if (has_auxiliary)
      ir["auxiliary"] = json{{"train_reward", art.auxiliary.train_reward},
                             {"test_reward", art.auxiliary.test_reward},
                             {"rollout_stats", rundetail::stats_to_json(art.auxiliary.rollout_stats)}};
    else
      ir["auxiliary"] = nullptr;
    iter_reports.push_back(std::move(ir));

    run.iterations.push_back(std::move(art));
  }

  // Dedicated multi-rollout pass for the diversity analysis: the agent whose
  // failures the analysis studies (failure agent; the single agent in eto;
  // the positive agent in the ablation).
  const PolicyParams& analysis_agent = has_auxiliary ? auxiliary : target;
  run.analysis_rollouts =
      collect_rollouts(analysis_agent, train, env, cfg.rollout_temperature,
                       hash_parts(seed, "analysis"), has_auxiliary ? aux_tag : "target",
                       cfg.analysis_rollouts);

  run.report = json{{"format", "coevo-report-v1"},
                    {"mode", std::string(to_string(cfg.mode))},
                    {"seed", seed},
                    {"base", json{{"train_reward", run.base_train_reward},
                                  {"test_reward", run.base_test_reward}}},
                    {"iterations", std::move(iter_reports)},
                    {"final_target_test_reward",
                     run.iterations.back().target.test_reward}};
  return run;
}

// ---------------------------------------------------------------------------
// Spec-facing entry points

inline RunResult run_coevolution(ExperimentConfig cfg, std::uint64_t seed, const LogFn& log = {}) {
  cfg.mode = Mode::coevolve;
  return run_experiment_seed(cfg, seed, log);
}

inline RunResult run_eto_baseline(ExperimentConfig cfg, std::uint64_t seed, const LogFn& log = {}) {
  cfg.mode = Mode::eto;
  return run_experiment_seed(cfg, seed, log);
}

inline RunResult run_positive_agent_ablation(ExperimentConfig cfg, std::uint64_t seed,
                                             const LogFn& log = {}) {
  cfg.mode = Mode::positive_agent;
  return run_experiment_seed(cfg, seed, log);
}

// ---------------------------------------------------------------------------
// Artifact writing

// Writes one seed's artifacts into dir; returns the relative paths, for the
// manifest.
inline std::vector<std::string> write_run_artifacts(const RunResult& run,
                                                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> rel;
  auto emit = [&](const std::string& name, auto&& writer) {
    writer(dir / name);
    rel.push_back(name);
  };

  emit("env.json", [&](const std::filesystem::path& p) { write_instance_set(p, run.instances); });
  emit("experts.jsonl", [&](const std::filesystem::path& p) { write_trajectories(p, run.experts); });
  emit("sft_policy.json",
       [&](const std::filesystem::path& p) { save_checkpoint(p, run.base_params, run.seed); });

  for (const IterationArtifacts& art : run.iterations) {
    const std::string tag = "iter" + std::to_string(art.iteration);
    emit(tag + "_target_rollouts.jsonl",
         [&](const std::filesystem::path& p) { write_trajectories(p, art.target_rollouts); });
    if (!art.auxiliary_rollouts.empty())
      emit(tag + "_auxiliary_rollouts.jsonl",
           [&](const std::filesystem::path& p) { write_trajectories(p, art.auxiliary_rollouts); });
    if (!art.d_fail.empty())
      emit(tag + "_pairs_fail.jsonl",
           [&](const std::filesystem::path& p) { write_pairs(p, art.d_fail); });
    emit(tag + "_pairs_target.jsonl",
         [&](const std::filesystem::path& p) { write_pairs(p, art.d_tgt); });
    emit(tag + "_target_policy.json",
         [&](const std::filesystem::path& p) { save_checkpoint(p, art.target_params, run.seed); });
    if (art.auxiliary_params.dim() > 0)
      emit(tag + "_auxiliary_policy.json",
           [&](const std::filesystem::path& p) { save_checkpoint(p, art.auxiliary_params, run.seed); });
  }

  emit("analysis_rollouts.jsonl",
       [&](const std::filesystem::path& p) { write_trajectories(p, run.analysis_rollouts); });
  emit("metrics.csv", [&](const std::filesystem::path& p) { run.metrics.save(p); });
  emit("report.json",
       [&](const std::filesystem::path& p) { write_file_atomic(p, run.report.dump(2) + "\n"); });
  return rel;
}

// Runs every seed of the config under out_dir (skipping seeds whose stage
// already verifies in the manifest) and writes the aggregate report.
inline json run_all_seeds(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                          const LogFn& log = {}) {
  std::filesystem::create_directories(out_dir);
  const json cfg_json = config_to_json(cfg);
  RunManifest manifest = RunManifest::open(out_dir, cfg_json, cfg.seeds);
  manifest.save(out_dir);

  json seed_reports = json::array();
  double mean_final = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    const std::string stage = "seed" + std::to_string(seed);
    const std::filesystem::path seed_dir = out_dir / stage;
    if (manifest.verify_stage(stage, out_dir)) {
      log_to(log, stage + " already complete, verified hashes, skipping");
      seed_reports.push_back(json::parse(read_file(seed_dir / "report.json")));
    } else {
      log_to(log, "running " + stage);
      RunResult run = run_experiment_seed(cfg, seed, log);
      std::vector<std::string> rel = write_run_artifacts(run, seed_dir);
      for (std::string& r : rel) r = stage + "/" + r;
      manifest.mark_stage(stage, rel, out_dir);
      seed_reports.push_back(run.report);
    }
    mean_final += seed_reports.back().at("final_target_test_reward").get<double>();
  }
  mean_final /= static_cast<double>(cfg.seeds.size());

  json report{{"format", "coevo-report-v1"},
              {"mode", std::string(to_string(cfg.mode))},
              {"config", cfg_json},
              {"runs", std::move(seed_reports)},
              {"mean_final_target_test_reward", mean_final}};
  write_file_atomic(out_dir / "report.json", report.dump(2) + "\n");
  manifest.mark_stage("report", {"report.json"}, out_dir);
  return report;
}

}  // namespace coevo
