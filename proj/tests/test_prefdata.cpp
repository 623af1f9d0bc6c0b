#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "coevo/prefdata.hpp"

using namespace coevo;

namespace {

Trajectory make_traj(const std::string& id, double reward, const std::string& tag = "target",
                     int variant = 0) {
  Trajectory t;
  t.instruction_id = id;
  t.agent_tag = tag;
  t.steps = {{{"step", "v" + std::to_string(variant)}, "obs"}};
  t.reward = reward;
  return t;
}

Trajectory make_expert(const std::string& id) {
  Trajectory t = make_traj(id, 1.0, "expert", 999);
  return t;
}

}  // namespace

TEST_CASE("classify_trajectory: exact success, inclusive hard-negative boundary") {
  CHECK(classify_trajectory(make_traj("a", 1.0), 0.6) == TrajClass::success);
  CHECK(classify_trajectory(make_traj("a", 0.75), 0.6) == TrajClass::hard_negative);
  CHECK(classify_trajectory(make_traj("a", 0.6), 0.6) == TrajClass::hard_negative);
  CHECK(classify_trajectory(make_traj("a", 0.59), 0.6) == TrajClass::failure);
  CHECK(classify_trajectory(make_traj("a", 0.0), 0.6) == TrajClass::failure);
  CHECK_THROWS_AS(classify_trajectory(make_traj("a", 1.5), 0.6), DataError);
  CHECK_THROWS_AS(classify_trajectory(make_traj("a", -0.1), 0.6), DataError);
  CHECK_THROWS_AS(classify_trajectory(make_traj("a", 0.5), 0.0), ConfigError);
}

TEST_CASE("classify_trajectory is monotone in reward") {
  const double threshold = 0.6;
  CounterRng rng(5);
  for (int i = 0; i < 500; ++i) {
    double lo = rng.next_double();
    double hi = lo + (1.0 - lo) * rng.next_double();
    auto order = [](TrajClass c) { return c == TrajClass::failure ? 0 : c == TrajClass::hard_negative ? 1 : 2; };
    CHECK(order(classify_trajectory(make_traj("a", hi), threshold)) >=
          order(classify_trajectory(make_traj("a", lo), threshold)));
  }
}

TEST_CASE("build_failure_pairs: rewards {0.75, 0.75, 0.25} give exactly 2 pairs") {
  FailureSets sets;
  sets.from_target = {make_traj("q", 0.75, "target", 1), make_traj("q", 0.75, "target", 2)};
  sets.from_failure_agent = {make_traj("q", 0.25, "failure", 3)};

  auto pairs = build_failure_pairs(sets);
  REQUIRE(pairs.size() == 2);
  for (const PreferencePair& p : pairs) {
    CHECK(p.chosen.reward == 0.75);
    CHECK(p.rejected.reward == 0.25);
    CHECK(p.weight == 1.0);
    CHECK(!p.sft_enabled);
  }
}

TEST_CASE("build_failure_pairs: single trajectory yields no pairs; reward 1 is rejected") {
  FailureSets sets;
  sets.from_target = {make_traj("q", 0.5)};
  CHECK(build_failure_pairs(sets).empty());

  FailureSets bad;
  bad.from_target = {make_traj("q", 1.0)};
  CHECK_THROWS_AS(build_failure_pairs(bad), DataError);
}

TEST_CASE("build_failure_pairs deduplicates structurally identical trajectories") {
  FailureSets sets;
  // the same episode observed from both agents plus a lower-reward one
  Trajectory dup_a = make_traj("q", 0.5, "target", 7);
  Trajectory dup_b = dup_a;
  dup_b.agent_tag = "failure";  // structural hash ignores the tag
  sets.from_target = {dup_a};
  sets.from_failure_agent = {dup_b, make_traj("q", 0.25, "failure", 8)};

  auto pairs = build_failure_pairs(sets);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].chosen.reward == 0.5);
  CHECK(pairs[0].rejected.reward == 0.25);
}

TEST_CASE("build_target_pairs: the spec's two-failure worked example") {
  FailureSets sets;
  sets.from_target = {make_traj("q", 0.5, "target", 1)};
  sets.from_failure_agent = {make_traj("q", 0.25, "failure", 2)};
  sets.experts = {{"q", make_expert("q")}};

  auto pairs = build_target_pairs(sets);
  REQUIRE(pairs.size() == 3);

  int expert_pairs = 0, cross_pairs = 0;
  for (const PreferencePair& p : pairs) {
    if (p.chosen.agent_tag == "expert") {
      ++expert_pairs;
      CHECK(p.weight == 0.5);
      CHECK(p.sft_enabled);
      CHECK(p.chosen.reward == 1.0);
    } else {
      ++cross_pairs;
      CHECK(p.weight == 1.0);
      CHECK(!p.sft_enabled);
      CHECK(p.chosen.reward == 0.5);
      CHECK(p.rejected.reward == 0.25);
    }
  }
  CHECK(expert_pairs == 2);
  CHECK(cross_pairs == 1);
}

TEST_CASE("build_target_pairs: no failures means no pairs; missing expert is an error") {
  FailureSets empty;
  CHECK(build_target_pairs(empty).empty());

  FailureSets no_expert;
  no_expert.from_target = {make_traj("q", 0.5)};
  CHECK_THROWS_AS(build_target_pairs(no_expert), DataError);
}

TEST_CASE("cross pairs use F_tgt x F_fail only, not within-set pairs") {
  FailureSets sets;
  sets.from_target = {make_traj("q", 0.75, "target", 1), make_traj("q", 0.25, "target", 2)};
  sets.from_failure_agent = {};
  sets.experts = {{"q", make_expert("q")}};

  // within-set gap exists but no failure-agent trajectory: no cross pairs
  CHECK(build_cross_pairs(sets).empty());
  auto pairs = build_target_pairs(sets);
  REQUIRE(pairs.size() == 2);
  for (const PreferencePair& p : pairs) CHECK(p.chosen.agent_tag == "expert");

  // ... while D_fail does pool them
  CHECK(build_failure_pairs(sets).size() == 1);
}

TEST_CASE("cross-pair cap: largest reward gaps kept, at most 16 per instruction") {
  FailureSets sets;
  for (int i = 0; i < 10; ++i)
    sets.from_target.push_back(make_traj("q", 0.75, "target", i));
  for (int i = 0; i < 10; ++i)
    sets.from_failure_agent.push_back(make_traj("q", i < 5 ? 0.0 : 0.5, "failure", 100 + i));
  sets.experts = {{"q", make_expert("q")}};

  auto cross = build_cross_pairs(sets);
  REQUIRE(cross.size() == 16);
  // 10 x 5 candidates with gap 0.75 and 10 x 5 with gap 0.25: the cap keeps
  // only gap-0.75 pairs
  for (const PreferencePair& p : cross) {
    CHECK(p.chosen.reward == 0.75);
    CHECK(p.rejected.reward == 0.0);
  }
}

TEST_CASE("pair construction is a pure function: identical inputs, identical output order") {
  FailureSets sets;
  CounterRng rng(17);
  for (int i = 0; i < 20; ++i) {
    std::string id = "q" + std::to_string(i % 5);
    sets.from_target.push_back(make_traj(id, rng.next_below(4) * 0.25, "target", i));
    sets.from_failure_agent.push_back(make_traj(id, rng.next_below(4) * 0.25, "failure", 100 + i));
  }
  for (int i = 0; i < 5; ++i) {
    std::string id = "q" + std::to_string(i);
    sets.experts.emplace(id, make_expert(id));
  }

  auto serialize = [](const std::vector<PreferencePair>& pairs) {
    std::string s;
    for (const PreferencePair& p : pairs) {
      s += p.instruction_id + '|' + std::to_string(p.chosen.structural_hash()) + '|' +
           std::to_string(p.rejected.structural_hash()) + '|' + std::to_string(p.weight) + '|' +
           (p.sft_enabled ? '1' : '0') + ';';
    }
    return s;
  };
  CHECK(serialize(build_failure_pairs(sets)) == serialize(build_failure_pairs(sets)));
  CHECK(serialize(build_target_pairs(sets)) == serialize(build_target_pairs(sets)));
}

TEST_CASE("property: pairing and weighting invariants over randomized failure sets") {
  CounterRng rng(2024);
  int total_cases = 0;
  for (int rep = 0; rep < 400; ++rep) {
    FailureSets sets;
    const int n_instructions = 1 + static_cast<int>(rng.next_below(4));
    for (int q = 0; q < n_instructions; ++q) {
      const std::string id = "ins" + std::to_string(q);
      sets.experts.emplace(id, make_expert(id));
      const int n_tgt = static_cast<int>(rng.next_below(5));
      const int n_fail = static_cast<int>(rng.next_below(5));
      for (int i = 0; i < n_tgt; ++i)
        sets.from_target.push_back(
            make_traj(id, static_cast<double>(rng.next_below(4)) * 0.25, "target",
                      static_cast<int>(rng.next_below(6))));
      for (int i = 0; i < n_fail; ++i)
        sets.from_failure_agent.push_back(
            make_traj(id, static_cast<double>(rng.next_below(4)) * 0.25, "failure",
                      100 + static_cast<int>(rng.next_below(6))));
    }

    auto d_fail = build_failure_pairs(sets);
    auto d_tgt = build_target_pairs(sets);
    total_cases += static_cast<int>(d_fail.size() + d_tgt.size()) + 1;

    std::map<std::string, double> expert_weight_sums;
    std::map<std::string, int> cross_counts;
    for (const PreferencePair& p : d_tgt) {
      REQUIRE(p.chosen.reward > p.rejected.reward);
      REQUIRE(p.chosen.structural_hash() != p.rejected.structural_hash());
      if (p.chosen.agent_tag == "expert") {
        REQUIRE(p.sft_enabled);
        expert_weight_sums[p.instruction_id] += p.weight;
      } else {
        REQUIRE(!p.sft_enabled);
        REQUIRE(p.weight == 1.0);
        ++cross_counts[p.instruction_id];
      }
    }
    for (const auto& [id, sum] : expert_weight_sums)
      REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
    for (const auto& [id, n] : cross_counts) REQUIRE(n <= kMaxCrossPairsPerInstruction);

    for (const PreferencePair& p : d_fail) {
      REQUIRE(p.chosen.reward > p.rejected.reward);
      REQUIRE(p.chosen.reward < 1.0);
      REQUIRE(p.rejected.reward < 1.0);
      REQUIRE(!p.sft_enabled);
      REQUIRE(p.weight == 1.0);
    }
  }
  CHECK(total_cases > 1000);
}
