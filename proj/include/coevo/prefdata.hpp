#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coevo/common.hpp"
#include "coevo/env.hpp"

namespace coevo {

// ---------------------------------------------------------------------------
// Trajectory classes. success is exact reward 1; the hard-negative band is
// inclusive at the threshold.

enum class TrajClass { failure, hard_negative, success };

inline std::string_view to_string(TrajClass c) {
  switch (c) {
    case TrajClass::failure: return "failure";
    case TrajClass::hard_negative: return "hard_negative";
    case TrajClass::success: return "success";
  }
  return "failure";
}

inline TrajClass classify_trajectory(const Trajectory& t, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0,1)");
  if (!(t.reward >= 0.0 && t.reward <= 1.0))
    throw DataError("reward outside [0,1] on " + t.instruction_id);
  if (t.reward == 1.0) return TrajClass::success;
  if (t.reward >= threshold) return TrajClass::hard_negative;
  return TrajClass::failure;
}

// ---------------------------------------------------------------------------
// Preference pairs

struct PreferencePair {
  std::string instruction_id;
  Trajectory chosen;    // e+
  Trajectory rejected;  // e-
  double weight = 1.0;
  bool sft_enabled = false;
};

// Failure trajectories from both agents plus the expert episode per
// instruction. Failures must have reward < 1, experts exactly 1.
struct FailureSets {
  std::vector<Trajectory> from_target;         // F_tgt
  std::vector<Trajectory> from_failure_agent;  // F_fail
  std::map<std::string, Trajectory> experts;   // instruction id -> expert episode
};

// Failure-failure pairs per instruction are capped; the kept ones are those
// with the largest reward gap, ties broken by structural hash.
inline constexpr int kMaxCrossPairsPerInstruction = 16;

namespace prefdetail {

inline void validate_failure(const Trajectory& t) {
  if (!(t.reward >= 0.0 && t.reward < 1.0))
    throw DataError("failure-set trajectory with reward " + std::to_string(t.reward) + " on " +
                    t.instruction_id);
}

struct Entry {
  const Trajectory* traj;
  std::uint64_t hash;
};

// Deduplicate structurally identical trajectories, then order by
// (reward desc, hash asc) so downstream pairing is a pure function of the
// set contents.
inline std::vector<Entry> canonical_entries(std::vector<const Trajectory*> trajs) {
  std::vector<Entry> entries;
  entries.reserve(trajs.size());
  for (const Trajectory* t : trajs) entries.push_back({t, t->structural_hash()});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.traj->reward != b.traj->reward) return a.traj->reward > b.traj->reward;
    return a.hash < b.hash;
  });
  entries.erase(std::unique(entries.begin(), entries.end(),
                            [](const Entry& a, const Entry& b) { return a.hash == b.hash; }),
                entries.end());
  return entries;
}

// instruction id -> trajectories, ids in sorted order via std::map.
template <typename Push>
void group_by_instruction(const std::vector<Trajectory>& trajs,
                          std::map<std::string, std::vector<const Trajectory*>>& groups,
                          Push push) {
  for (const Trajectory& t : trajs) {
    validate_failure(t);
    push(groups[t.instruction_id], &t);
  }
}

struct Candidate {
  const Entry* chosen;
  const Entry* rejected;
  double gap;
};

inline std::vector<PreferencePair> cap_and_emit(std::vector<Candidate> cands,
                                                const std::string& instruction_id) {
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.gap != b.gap) return a.gap > b.gap;
    if (a.chosen->hash != b.chosen->hash) return a.chosen->hash < b.chosen->hash;
    return a.rejected->hash < b.rejected->hash;
  });
  if (cands.size() > kMaxCrossPairsPerInstruction)
    cands.resize(kMaxCrossPairsPerInstruction);
  std::vector<PreferencePair> out;
  out.reserve(cands.size());
  for (const Candidate& c : cands)
    out.push_back({instruction_id, *c.chosen->traj, *c.rejected->traj, 1.0, false});
  return out;
}

}  // namespace prefdetail

// D_fail: per instruction, pool both agents' failures, deduplicate, and emit
// every pair with strictly different rewards, higher reward chosen. Equal
// rewards give no pair. All pairs carry weight 1 and no SFT term.
inline std::vector<PreferencePair> build_failure_pairs(const FailureSets& sets) {
  std::map<std::string, std::vector<const Trajectory*>> groups;
  auto push = [](std::vector<const Trajectory*>& v, const Trajectory* t) { v.push_back(t); };
  prefdetail::group_by_instruction(sets.from_target, groups, push);
  prefdetail::group_by_instruction(sets.from_failure_agent, groups, push);

  std::vector<PreferencePair> out;
  for (auto& [id, trajs] : groups) {
    const std::vector<prefdetail::Entry> pool = prefdetail::canonical_entries(std::move(trajs));
    std::vector<prefdetail::Candidate> cands;
    for (std::size_t i = 0; i < pool.size(); ++i)
      for (std::size_t j = 0; j < pool.size(); ++j)
        if (pool[i].traj->reward > pool[j].traj->reward)
          cands.push_back({&pool[i], &pool[j], pool[i].traj->reward - pool[j].traj->reward});
    std::vector<PreferencePair> pairs = prefdetail::cap_and_emit(std::move(cands), id);
    out.insert(out.end(), std::make_move_iterator(pairs.begin()),
               std::make_move_iterator(pairs.end()));
  }
  return out;
}

// Expert-vs-failure pairs: chosen is the expert episode, rejected each
// distinct failure from either agent. The weights of an instruction's expert
// pairs sum to 1. SFT on the chosen side stays enabled.
inline std::vector<PreferencePair> build_expert_pairs(const FailureSets& sets) {
  std::map<std::string, std::vector<const Trajectory*>> groups;
  auto push = [](std::vector<const Trajectory*>& v, const Trajectory* t) { v.push_back(t); };
  prefdetail::group_by_instruction(sets.from_target, groups, push);
  prefdetail::group_by_instruction(sets.from_failure_agent, groups, push);

  std::vector<PreferencePair> out;
  for (auto& [id, trajs] : groups) {
    auto it = sets.experts.find(id);
    if (it == sets.experts.end())
      throw DataError("no expert trajectory for instruction " + id);
    if (it->second.reward != 1.0)
      throw DataError("expert trajectory with reward != 1 on " + id);
    const std::vector<prefdetail::Entry> pool = prefdetail::canonical_entries(std::move(trajs));
    const double w = 1.0 / static_cast<double>(pool.size());
    for (const prefdetail::Entry& e : pool)
      out.push_back({id, it->second, *e.traj, w, true});
  }
  return out;
}

// Cross-set failure-failure pairs, F_tgt x F_fail only, strict reward
// ordering in either direction.
inline std::vector<PreferencePair> build_cross_pairs(const FailureSets& sets) {
  std::map<std::string, std::vector<const Trajectory*>> tgt_groups, fail_groups;
  auto push = [](std::vector<const Trajectory*>& v, const Trajectory* t) { v.push_back(t); };
  prefdetail::group_by_instruction(sets.from_target, tgt_groups, push);
  prefdetail::group_by_instruction(sets.from_failure_agent, fail_groups, push);

  std::vector<PreferencePair> out;
  for (auto& [id, tgt_trajs] : tgt_groups) {
    auto it = fail_groups.find(id);
    if (it == fail_groups.end()) continue;
    const auto tgt_pool = prefdetail::canonical_entries(std::move(tgt_trajs));
    const auto fail_pool = prefdetail::canonical_entries(std::move(it->second));
    std::vector<prefdetail::Candidate> cands;
    for (const prefdetail::Entry& a : tgt_pool) {
      for (const prefdetail::Entry& b : fail_pool) {
        if (a.traj->reward > b.traj->reward)
          cands.push_back({&a, &b, a.traj->reward - b.traj->reward});
        else if (b.traj->reward > a.traj->reward)
          cands.push_back({&b, &a, b.traj->reward - a.traj->reward});
      }
    }
    std::vector<PreferencePair> pairs = prefdetail::cap_and_emit(std::move(cands), id);
    out.insert(out.end(), std::make_move_iterator(pairs.begin()),
               std::make_move_iterator(pairs.end()));
  }
  return out;
}

// D_tgt: expert comparisons against failures of both agents, plus cross-set
// failure-failure comparisons. Per instruction the expert pairs come first.
inline std::vector<PreferencePair> build_target_pairs(const FailureSets& sets) {
  std::vector<PreferencePair> expert = build_expert_pairs(sets);
  std::vector<PreferencePair> cross = build_cross_pairs(sets);

  std::map<std::string, std::vector<PreferencePair>> per_instruction;
  for (auto& p : expert) per_instruction[p.instruction_id].push_back(std::move(p));
  for (auto& p : cross) per_instruction[p.instruction_id].push_back(std::move(p));

  std::vector<PreferencePair> out;
  for (auto& [id, pairs] : per_instruction)
    out.insert(out.end(), std::make_move_iterator(pairs.begin()),
               std::make_move_iterator(pairs.end()));
  return out;
}

// Failures (reward < 1) of a rollout batch, in input order.
inline std::vector<Trajectory> failures_of(const std::vector<Trajectory>& rollouts) {
  std::vector<Trajectory> out;
  for (const Trajectory& t : rollouts)
    if (t.reward < 1.0) out.push_back(t);
  return out;
}

}  // namespace coevo
