#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "coevo/common.hpp"
#include "coevo/env.hpp"
#include "coevo/prefdata.hpp"

namespace coevo {

// ---------------------------------------------------------------------------
// Class statistics over a rollout batch

struct TrajStats {
  std::size_t count = 0;
  std::size_t n_success = 0;
  std::size_t n_hard_negative = 0;
  std::size_t n_failure = 0;
  double success_frac = 0.0;
  double hard_negative_frac = 0.0;
  double failure_frac = 0.0;
};

inline TrajStats traj_stats(const std::vector<Trajectory>& trajectories, double threshold) {
  if (trajectories.empty()) throw UsageError("traj_stats on an empty list");
  TrajStats s;
  s.count = trajectories.size();
  for (const Trajectory& t : trajectories) {
    switch (classify_trajectory(t, threshold)) {
      case TrajClass::success: ++s.n_success; break;
      case TrajClass::hard_negative: ++s.n_hard_negative; break;
      case TrajClass::failure: ++s.n_failure; break;
    }
  }
  const double n = static_cast<double>(s.count);
  s.success_frac = static_cast<double>(s.n_success) / n;
  s.hard_negative_frac = static_cast<double>(s.n_hard_negative) / n;
  s.failure_frac = static_cast<double>(s.n_failure) / n;
  return s;
}

// ---------------------------------------------------------------------------
// Behavioral embedding: hashed bag of action unigrams and bigrams, L2
// normalized. Depends only on the action sequence, never on observations or
// reward.

inline constexpr int kEmbeddingDim = 256;

struct TrajEmbedding {
  std::vector<double> values;  // unit norm

  double cosine(const TrajEmbedding& other) const {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * other.values[i];
    return s;
  }
};

inline TrajEmbedding embed_trajectory(const Trajectory& t, int dim = kEmbeddingDim) {
  if (t.steps.empty()) throw DataError("cannot embed an empty trajectory");
  TrajEmbedding e;
  e.values.assign(static_cast<std::size_t>(dim), 0.0);
  const std::uint64_t d = static_cast<std::uint64_t>(dim);
  for (std::size_t j = 0; j < t.steps.size(); ++j) {
    e.values[hash_parts("eu", t.steps[j].action.to_string()) % d] += 1.0;
    if (j + 1 < t.steps.size())
      e.values[hash_parts("eb", t.steps[j].action.to_string(),
                          t.steps[j + 1].action.to_string()) % d] += 1.0;
  }
  double sq = 0.0;
  for (double v : e.values) sq += v * v;
  if (sq == 0.0) {
    e.values[0] = 1.0;  // unreachable for n >= 1, kept as the documented rule
    return e;
  }
  const double inv = 1.0 / std::sqrt(sq);
  for (double& v : e.values) v *= inv;
  return e;
}

// ---------------------------------------------------------------------------
// Diversity: mean pairwise cosine distance among an instruction's
// trajectories (the paper's per-instruction average pairwise distance).

struct DiversityEntry {
  std::string instruction_id;
  std::size_t count = 0;
  double mean_distance = 0.0;
};

struct DiversityReport {
  std::vector<DiversityEntry> per_instruction;  // instructions with >= 2 trajectories
  double global_mean = 0.0;                     // mean of per-instruction means
  double q1 = 0.0, median = 0.0, q3 = 0.0;      // quartiles of per-instruction means
};

namespace analysisdetail {

// Linear-interpolation quantile over a sorted vector.
inline double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.size() == 1) return sorted[0];
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace analysisdetail

inline DiversityReport diversity_score(
    const std::map<std::string, std::vector<Trajectory>>& per_instruction, int dim = kEmbeddingDim) {
  DiversityReport report;
  for (const auto& [id, trajs] : per_instruction) {
    if (trajs.size() < 2) continue;
    std::vector<TrajEmbedding> embs;
    embs.reserve(trajs.size());
    for (const Trajectory& t : trajs) embs.push_back(embed_trajectory(t, dim));
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < embs.size(); ++i) {
      for (std::size_t j = i + 1; j < embs.size(); ++j) {
        // exact 0 for equal embeddings; rounding otherwise clamped to [0, 2]
        const double d = embs[i].values == embs[j].values
                             ? 0.0
                             : std::clamp(1.0 - embs[i].cosine(embs[j]), 0.0, 2.0);
        total += d;
        ++pairs;
      }
    }
    report.per_instruction.push_back({id, trajs.size(), total / static_cast<double>(pairs)});
  }
  if (report.per_instruction.empty())
    throw DataError("diversity_score needs at least one instruction with >= 2 trajectories");

  std::vector<double> means;
  means.reserve(report.per_instruction.size());
  for (const DiversityEntry& e : report.per_instruction) means.push_back(e.mean_distance);
  double total = 0.0;
  for (double m : means) total += m;
  report.global_mean = total / static_cast<double>(means.size());
  std::sort(means.begin(), means.end());
  report.q1 = analysisdetail::quantile(means, 0.25);
  report.median = analysisdetail::quantile(means, 0.5);
  report.q3 = analysisdetail::quantile(means, 0.75);
  return report;
}

// Convenience grouping for diversity over a rollout batch.
inline std::map<std::string, std::vector<Trajectory>> group_by_instruction(
    const std::vector<Trajectory>& trajs) {
  std::map<std::string, std::vector<Trajectory>> out;
  for (const Trajectory& t : trajs) out[t.instruction_id].push_back(t);
  return out;
}

}  // namespace coevo
