#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "coevo/common.hpp"
#include "coevo/env.hpp"

namespace coevo {

// ---------------------------------------------------------------------------
// Feature-hashed linear-softmax policy.
//
// Scores are <weights, featurize(context, action)> over the context's
// available actions; the policy is the softmax of those scores. Hashing is
// FNV-1a 64 reduced mod D; collisions sum.

struct PolicyParams {
  std::vector<double> weights;

  int dim() const { return static_cast<int>(weights.size()); }

  static PolicyParams zeros(int dim) {
    PolicyParams p;
    p.weights.assign(static_cast<std::size_t>(dim), 0.0);
    return p;
  }
};

inline constexpr int kDefaultPolicyDim = 4096;
inline constexpr int kHistoryWindow = 2;  // steps of history that feed features

struct Context {
  std::string_view instruction;
  std::span<const Step> history;
  const std::vector<Action>* available = nullptr;
};

// Sparse feature vector: sorted unique indices with summed values.
struct FeatureVector {
  std::vector<std::pair<std::uint32_t, double>> entries;

  double dot(const PolicyParams& p) const {
    double s = 0.0;
    for (const auto& [i, v] : entries) s += p.weights[i] * v;
    return s;
  }

  void add_to(std::vector<double>& dense, double coeff) const {
    for (const auto& [i, v] : entries) dense[i] += coeff * v;
  }
};

// Feature map, per (context, action):
//   - instruction unigrams and bigrams crossed with (verb, argument)
//   - tokens of the last kHistoryWindow steps (action text + observation)
//     crossed with the verb, keyed by step offset
//   - a per-verb bias
// Every feature has value 1.0 before collision summation.
inline FeatureVector featurize(const Context& ctx, const Action& action, int dim) {
  std::vector<std::uint32_t> idx;
  const std::uint64_t d = static_cast<std::uint64_t>(dim);
  auto push = [&](std::uint64_t h) { idx.push_back(static_cast<std::uint32_t>(h % d)); };

  const std::vector<std::string_view> toks = tokenize(ctx.instruction);
  for (std::string_view t : toks) push(hash_parts("iu", t, action.verb, action.arg));
  for (std::size_t i = 0; i + 1 < toks.size(); ++i)
    push(hash_parts("ib", toks[i], toks[i + 1], action.verb, action.arg));

  const std::size_t n = ctx.history.size();
  for (int w = 1; w <= kHistoryWindow && static_cast<std::size_t>(w) <= n; ++w) {
    const Step& step = ctx.history[n - static_cast<std::size_t>(w)];
    push(hash_parts("ha", w, step.action.to_string(), action.verb));
    for (std::string_view t : tokenize(step.observation))
      push(hash_parts("ho", w, t, action.verb));
  }

  push(hash_parts("ab", action.verb));

  std::sort(idx.begin(), idx.end());
  FeatureVector fv;
  fv.entries.reserve(idx.size());
  for (std::uint32_t i : idx) {
    if (!fv.entries.empty() && fv.entries.back().first == i)
      fv.entries.back().second += 1.0;
    else
      fv.entries.push_back({i, 1.0});
  }
  return fv;
}

// ---------------------------------------------------------------------------
// Log-softmax over available actions

// Max-stabilized log-softmax of raw scores, in place.
inline void log_softmax(std::vector<double>& scores) {
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  const double log_z = mx + std::log(z);
  for (double& s : scores) s -= log_z;
}

inline std::vector<double> action_scores(const PolicyParams& params, const Context& ctx) {
  std::vector<double> scores;
  scores.reserve(ctx.available->size());
  for (const Action& a : *ctx.available)
    scores.push_back(featurize(ctx, a, params.dim()).dot(params));
  return scores;
}

// Log-probabilities aligned with ctx.available (which is the key order of the
// action -> logprob map).
inline std::vector<double> action_logprobs(const PolicyParams& params, const Context& ctx) {
  if (ctx.available->empty()) throw UsageError("action_logprobs with no available actions");
  std::vector<double> lp = action_scores(params, ctx);
  log_softmax(lp);
  return lp;
}

// Temperature 0 selects the argmax (first index under the lexicographic
// action order on ties); temperature > 0 samples the tempered softmax.
inline Action sample_action(const PolicyParams& params, const Context& ctx, double temperature,
                            CounterRng& rng) {
  if (temperature < 0.0) throw UsageError("temperature must be >= 0");
  std::vector<double> scores = action_scores(params, ctx);
  if (temperature == 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
      if (scores[i] > scores[best]) best = i;
    return (*ctx.available)[best];
  }
  for (double& s : scores) s /= temperature;
  log_softmax(scores);
  const double u = rng.next_double();
  double cdf = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    cdf += std::exp(scores[i]);
    if (u < cdf) return (*ctx.available)[i];
  }
  return ctx.available->back();  // u landed in the rounding tail
}

// ---------------------------------------------------------------------------
// Trajectory replay
//
// Rebuilding the contexts of a recorded trajectory requires the environment;
// the replay also validates the record against it (available action,
// observation, termination and reward must all match). The featurized form
// is independent of the parameters, so training caches it.

struct ReplayedStep {
  std::vector<FeatureVector> action_features;  // aligned with the available list
  int taken = -1;
};

struct ReplayedTrajectory {
  std::vector<ReplayedStep> steps;
};

inline ReplayedTrajectory replay_trajectory(const Env& env, const Trajectory& traj, int dim) {
  if (traj.steps.empty()) throw ReplayError("empty trajectory");
  auto [state, obs0] = env.reset(traj.instruction_id, 0);
  const Instruction& ins = env.instruction(state);

  ReplayedTrajectory out;
  out.steps.reserve(traj.steps.size());
  for (std::size_t j = 0; j < traj.steps.size(); ++j) {
    const Step& step = traj.steps[j];
    const std::vector<Action> avail = env.available_actions(state);
    Context ctx{ins.text, std::span<const Step>(traj.steps.data(), j), &avail};

    ReplayedStep rs;
    rs.action_features.reserve(avail.size());
    for (const Action& a : avail) rs.action_features.push_back(featurize(ctx, a, dim));
    for (std::size_t k = 0; k < avail.size(); ++k)
      if (avail[k] == step.action) rs.taken = static_cast<int>(k);
    if (rs.taken < 0)
      throw ReplayError("action not available at step " + std::to_string(j + 1) + " of " +
                        traj.instruction_id + ": " + step.action.to_string());

    StepResult res = env.step(state, step.action);
    if (res.observation != step.observation)
      throw ReplayError("observation mismatch at step " + std::to_string(j + 1) + " of " +
                        traj.instruction_id);
    if (res.done != (j + 1 == traj.steps.size()))
      throw ReplayError("termination mismatch at step " + std::to_string(j + 1) + " of " +
                        traj.instruction_id);
    out.steps.push_back(std::move(rs));
  }
  if (state.reward != traj.reward)
    throw ReplayError("reward mismatch replaying " + traj.instruction_id);
  return out;
}

inline double replayed_logprob(const PolicyParams& params, const ReplayedTrajectory& rt) {
  double total = 0.0;
  for (const ReplayedStep& rs : rt.steps) {
    std::vector<double> lp;
    lp.reserve(rs.action_features.size());
    for (const FeatureVector& fv : rs.action_features) lp.push_back(fv.dot(params));
    log_softmax(lp);
    total += lp[static_cast<std::size_t>(rs.taken)];
  }
  return total;
}

// Accumulates coeff * d(log pi(traj))/d(theta) into grad:
// per step, x(taken) - sum_a p(a) x(a).
inline void accumulate_replayed_grad(const PolicyParams& params, const ReplayedTrajectory& rt,
                                     double coeff, std::vector<double>& grad) {
  for (const ReplayedStep& rs : rt.steps) {
    std::vector<double> lp;
    lp.reserve(rs.action_features.size());
    for (const FeatureVector& fv : rs.action_features) lp.push_back(fv.dot(params));
    log_softmax(lp);
    rs.action_features[static_cast<std::size_t>(rs.taken)].add_to(grad, coeff);
    for (std::size_t a = 0; a < rs.action_features.size(); ++a)
      rs.action_features[a].add_to(grad, -coeff * std::exp(lp[a]));
  }
}

// Sum over steps of the taken action's log-probability; always <= 0.
inline double traj_logprob(const PolicyParams& params, const Trajectory& traj, const Env& env) {
  return replayed_logprob(params, replay_trajectory(env, traj, params.dim()));
}

inline std::vector<double> grad_traj_logprob(const PolicyParams& params, const Trajectory& traj,
                                             const Env& env) {
  std::vector<double> grad(static_cast<std::size_t>(params.dim()), 0.0);
  accumulate_replayed_grad(params, replay_trajectory(env, traj, params.dim()), 1.0, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Rollouts

// One sampled episode. The trajectory records exactly what the environment
// emitted, so it replays bit-exactly.
inline Trajectory rollout(const PolicyParams& params, const Env& env,
                          std::string_view instruction_id, double temperature, CounterRng& rng,
                          std::string agent_tag) {
  Trajectory traj;
  traj.instruction_id = std::string(instruction_id);
  traj.agent_tag = std::move(agent_tag);

  auto [state, obs0] = env.reset(instruction_id, 0);
  const Instruction& ins = env.instruction(state);
  while (!state.done) {
    const std::vector<Action> avail = env.available_actions(state);
    Context ctx{ins.text, std::span<const Step>(traj.steps.data(), traj.steps.size()), &avail};
    Action a = sample_action(params, ctx, temperature, rng);
    StepResult res = env.step(state, a);
    traj.steps.push_back({std::move(a), std::move(res.observation)});
  }
  traj.reward = state.reward;
  return traj;
}

}  // namespace coevo
