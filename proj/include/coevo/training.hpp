#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "coevo/common.hpp"
#include "coevo/env.hpp"
#include "coevo/policy.hpp"
#include "coevo/prefdata.hpp"

namespace coevo {

// ---------------------------------------------------------------------------
// Configuration. beta and the loss weights follow the paper's settings
// (lambda_dpo 1.0, lambda_sft 0.1, beta at the low end of 0.1-0.5); clipping
// and decoupled weight decay are stability additions.

struct TrainConfig {
  double beta = 0.1;
  double lambda_dpo = 1.0;
  double lambda_sft = 0.1;
  double lr_sft = 1e-5;
  double lr_dpo = 1e-6;
  int epochs = 3;
  int batch_size = 32;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
};

// Frozen copy of the incoming parameters; anchors the DPO log-ratios for one
// phase.
struct RefSnapshot {
  PolicyParams params;
};

enum class PhaseMode { sft, dpo };

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_z = 0.0;     // 0 in sft mode
  double grad_norm = 0.0;  // mean pre-clip batch gradient norm
};

// ---------------------------------------------------------------------------
// Losses

// Mean negative log-likelihood per action step over the batch, with its
// gradient.
inline std::pair<double, std::vector<double>> sft_loss_grad(const PolicyParams& params,
                                                            const std::vector<Trajectory>& batch,
                                                            const Env& env) {
  if (batch.empty()) throw UsageError("sft_loss_grad on an empty batch");
  double total_lp = 0.0;
  std::size_t total_steps = 0;
  std::vector<double> grad(static_cast<std::size_t>(params.dim()), 0.0);
  std::vector<ReplayedTrajectory> replays;
  replays.reserve(batch.size());
  for (const Trajectory& t : batch) {
    replays.push_back(replay_trajectory(env, t, params.dim()));
    total_steps += t.steps.size();
  }
  const double inv = 1.0 / static_cast<double>(total_steps);
  for (const ReplayedTrajectory& rt : replays) {
    total_lp += replayed_logprob(params, rt);
    accumulate_replayed_grad(params, rt, -inv, grad);
  }
  return {-total_lp * inv, std::move(grad)};
}

namespace traindetail {

inline double log_sigmoid(double z) {
  // -softplus(-z), stable on both tails
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

// Replay cache: featurization does not depend on the parameters, so each
// distinct trajectory is replayed once per phase.
class ReplayCache {
 public:
  ReplayCache(const Env& env, int dim) : env_(&env), dim_(dim) {}

  const ReplayedTrajectory& get(const Trajectory& t) {
    const std::uint64_t key = t.structural_hash();
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_.emplace(key, replay_trajectory(*env_, t, dim_)).first;
    return it->second;
  }

 private:
  const Env* env_;
  int dim_;
  std::map<std::uint64_t, ReplayedTrajectory> cache_;
};

struct PairEval {
  double loss = 0.0;
  double z = 0.0;
};

// Shared core of the pair losses. ref_chosen / ref_rejected are the frozen
// reference log-likelihoods; grad_coeff scales the contribution added to
// grad (0 to skip gradient work).
inline PairEval eval_pair(const PolicyParams& params, const ReplayedTrajectory& chosen,
                          const ReplayedTrajectory& rejected, double ref_chosen,
                          double ref_rejected, const PreferencePair& pair,
                          const TrainConfig& cfg, double lambda_sft, double grad_coeff,
                          std::vector<double>* grad) {
  const double lp_chosen = replayed_logprob(params, chosen);
  const double lp_rejected = replayed_logprob(params, rejected);
  const double z = cfg.beta * ((lp_chosen - ref_chosen) - (lp_rejected - ref_rejected));
  const double dpo_loss = -log_sigmoid(z);

  const bool sft_on = pair.sft_enabled && lambda_sft != 0.0;
  const double n_chosen = static_cast<double>(chosen.steps.size());
  double loss = cfg.lambda_dpo * dpo_loss;
  if (sft_on) loss += lambda_sft * (-lp_chosen / n_chosen);
  loss *= pair.weight;

  if (grad && grad_coeff != 0.0) {
    const double w = grad_coeff * pair.weight;
    // d(-log sigma(z))/d(lp_chosen) = -sigma(-z) * beta
    const double sig_neg = 1.0 / (1.0 + std::exp(z));
    double c_chosen = -cfg.lambda_dpo * sig_neg * cfg.beta;
    const double c_rejected = cfg.lambda_dpo * sig_neg * cfg.beta;
    if (sft_on) c_chosen += -lambda_sft / n_chosen;
    accumulate_replayed_grad(params, chosen, w * c_chosen, *grad);
    accumulate_replayed_grad(params, rejected, w * c_rejected, *grad);
  }
  return {loss, z};
}

}  // namespace traindetail

// DPO loss -log sigma(z) for one pair, z = beta[(l - l_ref)(e+) - (l - l_ref)(e-)],
// with its gradient -sigma(-z) * beta * [grad l(e+) - grad l(e-)].
inline std::pair<double, std::vector<double>> dpo_pair_loss_grad(const PolicyParams& params,
                                                                 const RefSnapshot& ref,
                                                                 const PreferencePair& pair,
                                                                 double beta, const Env& env) {
  TrainConfig cfg;
  cfg.beta = beta;
  cfg.lambda_dpo = 1.0;
  PreferencePair unit = pair;
  unit.weight = 1.0;
  const ReplayedTrajectory chosen = replay_trajectory(env, pair.chosen, params.dim());
  const ReplayedTrajectory rejected = replay_trajectory(env, pair.rejected, params.dim());
  std::vector<double> grad(static_cast<std::size_t>(params.dim()), 0.0);
  auto ev = traindetail::eval_pair(params, chosen, rejected, replayed_logprob(ref.params, chosen),
                                   replayed_logprob(ref.params, rejected), unit, cfg,
                                   /*lambda_sft=*/0.0, 1.0, &grad);
  return {ev.loss, std::move(grad)};
}

// Weighted combination: weight * [lambda_dpo * dpo + (sft_enabled ? lambda_sft : 0)
// * per-step NLL of the chosen trajectory].
inline std::pair<double, std::vector<double>> combined_pair_loss_grad(const PolicyParams& params,
                                                                      const RefSnapshot& ref,
                                                                      const PreferencePair& pair,
                                                                      const TrainConfig& cfg,
                                                                      const Env& env) {
  const ReplayedTrajectory chosen = replay_trajectory(env, pair.chosen, params.dim());
  const ReplayedTrajectory rejected = replay_trajectory(env, pair.rejected, params.dim());
  std::vector<double> grad(static_cast<std::size_t>(params.dim()), 0.0);
  auto ev = traindetail::eval_pair(params, chosen, rejected, replayed_logprob(ref.params, chosen),
                                   replayed_logprob(ref.params, rejected), pair, cfg,
                                   cfg.lambda_sft, 1.0, &grad);
  return {ev.loss, std::move(grad)};
}

// ---------------------------------------------------------------------------
// Phase runner: AdamW over shuffled mini-batches.

using PhaseDataset = std::variant<std::vector<Trajectory>, std::vector<PreferencePair>>;

struct PhaseResult {
  PolicyParams params;
  std::vector<EpochMetrics> history;
};

namespace traindetail {

class AdamW {
 public:
  AdamW(int dim, const TrainConfig& cfg, double lr)
      : cfg_(cfg), lr_(lr), m_(static_cast<std::size_t>(dim), 0.0),
        v_(static_cast<std::size_t>(dim), 0.0) {}

  void step(PolicyParams& params, const std::vector<double>& grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m_[i] = cfg_.adam_beta1 * m_[i] + (1.0 - cfg_.adam_beta1) * grad[i];
      v_[i] = cfg_.adam_beta2 * v_[i] + (1.0 - cfg_.adam_beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params.weights[i] -= lr_ * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                                  cfg_.weight_decay * params.weights[i]);
    }
  }

 private:
  TrainConfig cfg_;
  double lr_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

inline double clip_grad(std::vector<double>& grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

}  // namespace traindetail

// Runs one training phase. In dpo mode the reference snapshot is the incoming
// parameters; lambda_sft_override < 0 keeps cfg.lambda_sft (failure-agent
// phases pass 0). Deterministic in cfg.seed.
inline PhaseResult run_phase(PolicyParams params, const PhaseDataset& dataset, const Env& env,
                             const TrainConfig& cfg, PhaseMode mode,
                             double lambda_sft_override = -1.0) {
  const bool is_dpo = mode == PhaseMode::dpo;
  const std::size_t n = is_dpo ? std::get<std::vector<PreferencePair>>(dataset).size()
                               : std::get<std::vector<Trajectory>>(dataset).size();
  if (n == 0) throw UsageError("run_phase on an empty dataset");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  const double lambda_sft = lambda_sft_override >= 0.0 ? lambda_sft_override : cfg.lambda_sft;

  traindetail::ReplayCache cache(env, params.dim());
  RefSnapshot ref;
  std::map<std::uint64_t, double> ref_logprobs;
  if (is_dpo) {
    ref.params = params;
    for (const PreferencePair& p : std::get<std::vector<PreferencePair>>(dataset)) {
      for (const Trajectory* t : {&p.chosen, &p.rejected}) {
        const std::uint64_t key = t->structural_hash();
        if (!ref_logprobs.count(key))
          ref_logprobs[key] = replayed_logprob(ref.params, cache.get(*t));
      }
    }
  } else {
    for (const Trajectory& t : std::get<std::vector<Trajectory>>(dataset)) cache.get(t);
  }

  const int batch_size = std::max(1, cfg.batch_size);
  traindetail::AdamW opt(params.dim(), cfg, is_dpo ? cfg.lr_dpo : cfg.lr_sft);
  std::vector<double> grad(static_cast<std::size_t>(params.dim()));
  std::vector<EpochMetrics> history;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    CounterRng shuffle_rng = rng_stream(cfg.seed, "shuffle", epoch);
    deterministic_shuffle(order, shuffle_rng);

    double epoch_loss = 0.0;
    double epoch_z = 0.0;
    double epoch_grad_norm = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
      const double inv_b = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;

      if (is_dpo) {
        const auto& pairs = std::get<std::vector<PreferencePair>>(dataset);
        for (std::size_t k = start; k < end; ++k) {
          const PreferencePair& p = pairs[order[k]];
          const ReplayedTrajectory& chosen = cache.get(p.chosen);
          const ReplayedTrajectory& rejected = cache.get(p.rejected);
          auto ev = traindetail::eval_pair(
              params, chosen, rejected, ref_logprobs.at(p.chosen.structural_hash()),
              ref_logprobs.at(p.rejected.structural_hash()), p, cfg, lambda_sft, inv_b, &grad);
          batch_loss += ev.loss;
          epoch_z += ev.z;
        }
      } else {
        // mean NLL per action step within the batch
        std::size_t batch_steps = 0;
        for (std::size_t k = start; k < end; ++k)
          batch_steps += std::get<std::vector<Trajectory>>(dataset)[order[k]].steps.size();
        const double inv_steps = 1.0 / static_cast<double>(batch_steps);
        for (std::size_t k = start; k < end; ++k) {
          const Trajectory& t = std::get<std::vector<Trajectory>>(dataset)[order[k]];
          const ReplayedTrajectory& rt = cache.get(t);
          batch_loss += -replayed_logprob(params, rt) * inv_steps;
          accumulate_replayed_grad(params, rt, -inv_steps, grad);
        }
      }

      if (is_dpo) batch_loss *= inv_b;
      if (!std::isfinite(batch_loss))
        throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch));
      epoch_grad_norm += traindetail::clip_grad(grad, cfg.grad_clip_norm);
      for (double g : grad)
        if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in epoch " + std::to_string(epoch));
      opt.step(params, grad);
      epoch_loss += batch_loss;
      ++batches;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.mean_loss = epoch_loss / static_cast<double>(batches);
    em.mean_z = is_dpo ? epoch_z / static_cast<double>(n) : 0.0;
    em.grad_norm = epoch_grad_norm / static_cast<double>(batches);
    history.push_back(em);
  }

  return {std::move(params), std::move(history)};
}

// Dataset-mean DPO margin z at the given parameters; the paper's implicit
// reward margin, used to verify that a phase moved it above its start at 0.
inline double mean_margin(const PolicyParams& params, const RefSnapshot& ref,
                          const std::vector<PreferencePair>& pairs, double beta, const Env& env) {
  if (pairs.empty()) throw UsageError("mean_margin on an empty dataset");
  traindetail::ReplayCache cache(env, params.dim());
  double total = 0.0;
  for (const PreferencePair& p : pairs) {
    const ReplayedTrajectory& chosen = cache.get(p.chosen);
    const ReplayedTrajectory& rejected = cache.get(p.rejected);
    const double z = beta * ((replayed_logprob(params, chosen) - replayed_logprob(ref.params, chosen)) -
                             (replayed_logprob(params, rejected) - replayed_logprob(ref.params, rejected)));
    total += z;
  }
  return total / static_cast<double>(pairs.size());
}

}  // namespace coevo
