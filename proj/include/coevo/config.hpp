#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "coevo/common.hpp"
#include "coevo/env.hpp"
#include "coevo/training.hpp"

namespace coevo {

using json = nlohmann::ordered_json;

enum class Mode { coevolve, eto, positive_agent };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::coevolve: return "coevolve";
    case Mode::eto: return "eto";
    case Mode::positive_agent: return "positive_agent";
  }
  return "coevolve";
}

inline Mode mode_from_string(std::string_view s) {
  if (s == "coevolve") return Mode::coevolve;
  if (s == "eto") return Mode::eto;
  if (s == "positive_agent") return Mode::positive_agent;
  throw ConfigError("unknown mode: " + std::string(s));
}

// Full experiment description. Defaults follow the paper where it pins them
// (3 iterations, 3 epochs, lambda_dpo 1.0, lambda_sft 0.1, threshold 0.6,
// beta 0.1, sft lr 1e-5, batch sizes 48/32) and desk-scale choices elsewhere.
struct ExperimentConfig {
  EnvSpec env = EnvSpec::defaults(EnvKind::minishop);
  int n_train = 200;
  int n_test = 100;
  int iterations = 3;
  int rollouts_per_instruction = 1;
  int analysis_rollouts = 4;
  double hard_negative_threshold = 0.6;
  Mode mode = Mode::coevolve;
  std::vector<std::uint64_t> seeds = {1};
  int policy_dim = kDefaultPolicyDim;
  double rollout_temperature = 1.0;
  TrainConfig sft;
  TrainConfig dpo;

  ExperimentConfig() {
    sft.batch_size = 48;
    dpo.batch_size = 32;
  }
};

namespace configdetail {

inline void reject_unknown(const json& obj, std::vector<std::string> known,
                           const std::string& where, std::vector<std::string>& errors) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      errors.push_back("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& out, std::vector<std::string>& errors,
            const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception&) {
    errors.push_back(std::string("bad value for \"") + key + "\" in " + where);
  }
}

inline void parse_train(const json& obj, TrainConfig& cfg, const std::string& where,
                        std::vector<std::string>& errors) {
  reject_unknown(obj,
                 {"beta", "lambda_dpo", "lambda_sft", "lr_sft", "lr_dpo", "epochs", "batch_size",
                  "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "grad_clip_norm"},
                 where, errors);
  get_to(obj, "beta", cfg.beta, errors, where);
  get_to(obj, "lambda_dpo", cfg.lambda_dpo, errors, where);
  get_to(obj, "lambda_sft", cfg.lambda_sft, errors, where);
  get_to(obj, "lr_sft", cfg.lr_sft, errors, where);
  get_to(obj, "lr_dpo", cfg.lr_dpo, errors, where);
  get_to(obj, "epochs", cfg.epochs, errors, where);
  get_to(obj, "batch_size", cfg.batch_size, errors, where);
  get_to(obj, "weight_decay", cfg.weight_decay, errors, where);
  get_to(obj, "adam_beta1", cfg.adam_beta1, errors, where);
  get_to(obj, "adam_beta2", cfg.adam_beta2, errors, where);
  get_to(obj, "adam_eps", cfg.adam_eps, errors, where);
  get_to(obj, "grad_clip_norm", cfg.grad_clip_norm, errors, where);
}

inline void parse_env(const json& obj, EnvSpec& spec, std::vector<std::string>& errors) {
  const std::string where = "env";
  reject_unknown(obj,
                 {"kind", "k_actions", "catalog_size", "attr_pool", "required_attrs", "results_k",
                  "rooms", "subgoals", "max_turns", "seed"},
                 where, errors);
  std::string kind = std::string(to_string(spec.kind));
  get_to(obj, "kind", kind, errors, where);
  try {
    spec = EnvSpec::defaults(env_kind_from_string(kind));
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
  get_to(obj, "k_actions", spec.k_actions, errors, where);
  get_to(obj, "catalog_size", spec.catalog_size, errors, where);
  get_to(obj, "attr_pool", spec.attr_pool, errors, where);
  get_to(obj, "required_attrs", spec.required_attrs, errors, where);
  get_to(obj, "results_k", spec.results_k, errors, where);
  get_to(obj, "rooms", spec.rooms, errors, where);
  get_to(obj, "subgoals", spec.subgoals, errors, where);
  get_to(obj, "max_turns", spec.max_turns, errors, where);
  get_to(obj, "seed", spec.seed, errors, where);
}

inline void check_invariants(const ExperimentConfig& cfg, std::vector<std::string>& errors) {
  auto check_train = [&](const TrainConfig& t, const std::string& where) {
    if (!(t.beta > 0.0)) errors.push_back(where + ": beta must be > 0");
    if (t.epochs < 1) errors.push_back(where + ": epochs must be >= 1");
    if (!(t.lr_sft > 0.0)) errors.push_back(where + ": lr_sft must be > 0");
    if (!(t.lr_dpo > 0.0)) errors.push_back(where + ": lr_dpo must be > 0");
    if (t.batch_size < 1) errors.push_back(where + ": batch_size must be >= 1");
  };
  check_train(cfg.sft, "sft");
  check_train(cfg.dpo, "dpo");
  if (!(cfg.hard_negative_threshold > 0.0 && cfg.hard_negative_threshold < 1.0))
    errors.push_back("hard_negative_threshold must be in (0,1)");
  if (cfg.iterations < 1) errors.push_back("iterations must be >= 1");
  if (cfg.n_train < 1) errors.push_back("n_train must be >= 1");
  if (cfg.n_test < 0) errors.push_back("n_test must be >= 0");
  if (cfg.rollouts_per_instruction < 1) errors.push_back("rollouts_per_instruction must be >= 1");
  if (cfg.analysis_rollouts < 2) errors.push_back("analysis_rollouts must be >= 2");
  if (cfg.policy_dim < 1) errors.push_back("policy_dim must be >= 1");
  if (!(cfg.rollout_temperature > 0.0)) errors.push_back("rollout_temperature must be > 0");
  if (cfg.seeds.empty()) errors.push_back("seeds must be non-empty");
}

}  // namespace configdetail

// Throws a ConfigError listing every violated invariant.
inline void validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> errors;
  configdetail::check_invariants(cfg, errors);
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const std::string& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
}

// Applies defaults, rejects unknown keys and reports every invariant
// violation at once.
inline ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;

  configdetail::reject_unknown(doc,
                               {"env", "n_train", "n_test", "iterations",
                                "rollouts_per_instruction", "analysis_rollouts",
                                "hard_negative_threshold", "mode", "seeds", "policy_dim",
                                "rollout_temperature", "sft", "dpo"},
                               "config", errors);

  if (doc.contains("env")) configdetail::parse_env(doc.at("env"), cfg.env, errors);
  configdetail::get_to(doc, "n_train", cfg.n_train, errors, "config");
  configdetail::get_to(doc, "n_test", cfg.n_test, errors, "config");
  configdetail::get_to(doc, "iterations", cfg.iterations, errors, "config");
  configdetail::get_to(doc, "rollouts_per_instruction", cfg.rollouts_per_instruction, errors, "config");
  configdetail::get_to(doc, "analysis_rollouts", cfg.analysis_rollouts, errors, "config");
  configdetail::get_to(doc, "hard_negative_threshold", cfg.hard_negative_threshold, errors, "config");
  configdetail::get_to(doc, "policy_dim", cfg.policy_dim, errors, "config");
  configdetail::get_to(doc, "rollout_temperature", cfg.rollout_temperature, errors, "config");
  configdetail::get_to(doc, "seeds", cfg.seeds, errors, "config");
  if (doc.contains("mode")) {
    try {
      cfg.mode = mode_from_string(doc.at("mode").get<std::string>());
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  if (doc.contains("sft")) configdetail::parse_train(doc.at("sft"), cfg.sft, "sft", errors);
  if (doc.contains("dpo")) configdetail::parse_train(doc.at("dpo"), cfg.dpo, "dpo", errors);

  configdetail::check_invariants(cfg, errors);
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const std::string& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  auto train = [](const TrainConfig& t) {
    return json{{"beta", t.beta},
                {"lambda_dpo", t.lambda_dpo},
                {"lambda_sft", t.lambda_sft},
                {"lr_sft", t.lr_sft},
                {"lr_dpo", t.lr_dpo},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"weight_decay", t.weight_decay},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"grad_clip_norm", t.grad_clip_norm}};
  };
  json env{{"kind", std::string(to_string(cfg.env.kind))},
           {"k_actions", cfg.env.k_actions},
           {"catalog_size", cfg.env.catalog_size},
           {"attr_pool", cfg.env.attr_pool},
           {"required_attrs", cfg.env.required_attrs},
           {"results_k", cfg.env.results_k},
           {"rooms", cfg.env.rooms},
           {"subgoals", cfg.env.subgoals},
           {"max_turns", cfg.env.max_turns},
           {"seed", cfg.env.seed}};
  return json{{"env", std::move(env)},
              {"n_train", cfg.n_train},
              {"n_test", cfg.n_test},
              {"iterations", cfg.iterations},
              {"rollouts_per_instruction", cfg.rollouts_per_instruction},
              {"analysis_rollouts", cfg.analysis_rollouts},
              {"hard_negative_threshold", cfg.hard_negative_threshold},
              {"mode", std::string(to_string(cfg.mode))},
              {"seeds", cfg.seeds},
              {"policy_dim", cfg.policy_dim},
              {"rollout_temperature", cfg.rollout_temperature},
              {"sft", train(cfg.sft)},
              {"dpo", train(cfg.dpo)}};
}

}  // namespace coevo
