#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "coevo/analysis.hpp"

using namespace coevo;

namespace {

Trajectory traj_with_actions(const std::string& id, std::vector<Action> actions,
                             double reward = 0.5) {
  Trajectory t;
  t.instruction_id = id;
  t.agent_tag = "target";
  for (Action& a : actions) t.steps.push_back({std::move(a), "obs"});
  t.reward = reward;
  return t;
}

}  // namespace

TEST_CASE("traj_stats: worked example and degenerate case") {
  std::vector<Trajectory> trajs = {
      traj_with_actions("a", {{"x", "1"}}, 1.0),
      traj_with_actions("a", {{"x", "2"}}, 0.75),
      traj_with_actions("b", {{"x", "3"}}, 0.25),
      traj_with_actions("b", {{"x", "4"}}, 0.25),
  };
  TrajStats s = traj_stats(trajs, 0.6);
  CHECK(s.success_frac == 0.25);
  CHECK(s.hard_negative_frac == 0.25);
  CHECK(s.failure_frac == 0.50);
  CHECK_THAT(s.success_frac + s.hard_negative_frac + s.failure_frac,
             Catch::Matchers::WithinAbs(1.0, 1e-12));

  std::vector<Trajectory> all_good(3, traj_with_actions("a", {{"x", "1"}}, 1.0));
  TrajStats g = traj_stats(all_good, 0.6);
  CHECK(g.success_frac == 1.0);
  CHECK(g.hard_negative_frac == 0.0);
  CHECK(g.failure_frac == 0.0);

  CHECK_THROWS_AS(traj_stats({}, 0.6), UsageError);
}

TEST_CASE("embed_trajectory: unit norm, deterministic, action-sequence only") {
  Trajectory a = traj_with_actions("a", {{"search", "red"}, {"click", "item001"}, {"buy", ""}});
  TrajEmbedding ea = embed_trajectory(a);

  double norm = 0.0;
  for (double v : ea.values) norm += v * v;
  CHECK_THAT(norm, Catch::Matchers::WithinAbs(1.0, 1e-9));

  Trajectory b = a;
  CHECK(embed_trajectory(b).values == ea.values);

  // different observations and reward, same actions: same embedding
  Trajectory c = a;
  for (Step& s : c.steps) s.observation = "something else";
  c.reward = 0.0;
  CHECK(embed_trajectory(c).values == ea.values);
  CHECK_THAT(ea.cosine(embed_trajectory(c)), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("embeddings of action-disjoint trajectories are near orthogonal") {
  // disjoint verb/argument token sets; E = 256 keeps collision overlap small
  Trajectory a = traj_with_actions("a", {{"search", "red"}, {"click", "item001"}, {"buy", ""}});
  Trajectory b =
      traj_with_actions("a", {{"goto", "hall"}, {"take", "beaker"}, {"focus", "lens"}});
  CHECK(std::abs(embed_trajectory(a).cosine(embed_trajectory(b))) < 0.1);
}

TEST_CASE("diversity: identical trajectories score 0, distances stay in [0, 2]") {
  std::map<std::string, std::vector<Trajectory>> groups;
  groups["a"] = {traj_with_actions("a", {{"x", "1"}, {"y", "2"}}),
                 traj_with_actions("a", {{"x", "1"}, {"y", "2"}})};
  DiversityReport r = diversity_score(groups);
  REQUIRE(r.per_instruction.size() == 1);
  CHECK(r.per_instruction[0].mean_distance == 0.0);
  CHECK(r.global_mean == 0.0);

  CounterRng rng(5);
  std::map<std::string, std::vector<Trajectory>> random_groups;
  for (int q = 0; q < 6; ++q) {
    std::string id = "q" + std::to_string(q);
    for (int i = 0; i < 4; ++i) {
      std::vector<Action> actions;
      for (int s = 0; s < 3; ++s)
        actions.push_back({"v" + std::to_string(rng.next_below(4)),
                           "a" + std::to_string(rng.next_below(6))});
      random_groups[id].push_back(traj_with_actions(id, std::move(actions)));
    }
  }
  DiversityReport rr = diversity_score(random_groups);
  for (const DiversityEntry& e : rr.per_instruction) {
    CHECK(e.mean_distance >= 0.0);
    CHECK(e.mean_distance <= 2.0);
  }
  CHECK(rr.q1 <= rr.median);
  CHECK(rr.median <= rr.q3);
}

TEST_CASE("diversity mean is the average of the pairwise distances") {
  Trajectory t1 = traj_with_actions("a", {{"search", "red"}, {"buy", ""}});
  Trajectory t2 = traj_with_actions("a", {{"search", "blue"}, {"buy", ""}});
  Trajectory t3 = traj_with_actions("a", {{"goto", "hall"}, {"take", "flask"}});

  auto dist = [](const Trajectory& x, const Trajectory& y) {
    return 1.0 - embed_trajectory(x).cosine(embed_trajectory(y));
  };
  const double expected = (dist(t1, t2) + dist(t1, t3) + dist(t2, t3)) / 3.0;

  std::map<std::string, std::vector<Trajectory>> groups;
  groups["a"] = {t1, t2, t3};
  DiversityReport r = diversity_score(groups);
  CHECK_THAT(r.per_instruction[0].mean_distance, Catch::Matchers::WithinAbs(expected, 1e-12));
  CHECK_THAT(r.global_mean, Catch::Matchers::WithinAbs(expected, 1e-12));
}

TEST_CASE("diversity is permutation invariant") {
  std::vector<Trajectory> trajs = {
      traj_with_actions("a", {{"search", "red"}}),
      traj_with_actions("a", {{"search", "blue"}}),
      traj_with_actions("a", {{"click", "item003"}}),
  };
  std::map<std::string, std::vector<Trajectory>> fwd, rev;
  fwd["a"] = trajs;
  std::reverse(trajs.begin(), trajs.end());
  rev["a"] = trajs;
  CHECK(diversity_score(fwd).global_mean == diversity_score(rev).global_mean);
}

TEST_CASE("replacing a duplicate with a token-disjoint trajectory raises the mean") {
  Trajectory base = traj_with_actions("a", {{"search", "red"}, {"buy", ""}});
  Trajectory dup = base;
  Trajectory disjoint = traj_with_actions("a", {{"goto", "hall"}, {"take", "flask"}});

  std::map<std::string, std::vector<Trajectory>> with_dup, with_disjoint;
  with_dup["a"] = {base, dup};
  with_disjoint["a"] = {base, disjoint};
  CHECK(diversity_score(with_disjoint).global_mean > diversity_score(with_dup).global_mean);
}

TEST_CASE("diversity requires at least one instruction with two trajectories") {
  std::map<std::string, std::vector<Trajectory>> groups;
  groups["a"] = {traj_with_actions("a", {{"x", "1"}})};
  groups["b"] = {traj_with_actions("b", {{"x", "1"}})};
  CHECK_THROWS_AS(diversity_score(groups), DataError);
}
