#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "coevo/env.hpp"
#include "coevo/prefdata.hpp"
#include "coevo/training.hpp"
#include "fd_oracle.hpp"

using namespace coevo;

namespace {

constexpr double kLn2 = 0.6931471805599453;

InstanceSet minishop_set(std::uint64_t seed = 7, int n = 3) {
  return generate_instances(EnvSpec::defaults(EnvKind::minishop), n, 0, seed);
}

// Scripted purchase of a specific result slot: search the first goal token,
// click the slot-th result, buy.
Trajectory scripted_buy(const Env& env, const Instruction& ins, int slot, const std::string& tag) {
  const auto& goal = std::get<ShopGoal>(ins.goal);
  Trajectory t;
  t.instruction_id = ins.id;
  t.agent_tag = tag;
  auto [st, obs] = env.reset(ins.id, 0);
  auto take = [&](const Action& a) {
    StepResult r = env.step(st, a);
    t.steps.push_back({a, r.observation});
  };
  take({"search", goal.required_attrs[0]});
  const auto& catalog = std::get<ShopWorld>(env.instances().world).catalog;
  take({"click", catalog[static_cast<std::size_t>(st.results[static_cast<std::size_t>(slot)])].id});
  take({"buy", ""});
  t.reward = st.reward;
  return t;
}

// A preference pair of two scripted failures with strictly different rewards.
PreferencePair failure_pair(const Env& env, const InstanceSet& set) {
  for (const Instruction& ins : set.instructions) {
    std::vector<Trajectory> buys;
    for (int slot = 0; slot < set.spec.results_k; ++slot)
      buys.push_back(scripted_buy(env, ins, slot, "target"));
    for (const Trajectory& a : buys) {
      for (const Trajectory& b : buys) {
        if (a.reward < 1.0 && b.reward < 1.0 && a.reward > b.reward)
          return {ins.id, a, b, 1.0, false};
      }
    }
  }
  throw std::logic_error("no failure pair found in the instance set");
}

// Chainlab world with 2 rooms and 3 same-room subgoals: every context offers
// exactly 4 actions (1 goto + 3 subgoal verbs).
InstanceSet four_action_lab() {
  InstanceSet set;
  set.spec = EnvSpec::defaults(EnvKind::chainlab);
  set.spec.rooms = 2;
  set.spec.subgoals = 3;
  LabWorld world;
  world.room_names = {"hall", "lab"};
  world.adjacency = {{1}, {0}};
  set.world = world;
  Instruction ins;
  ins.id = "train-0000";
  ins.text = "task : use the beaker then use the flask then use the lens in the hall";
  ins.goal = LabGoal{{{"use", "beaker", 0}, {"use", "flask", 0}, {"use", "lens", 0}}, 0};
  set.instructions.push_back(ins);
  return set;
}

}  // namespace

TEST_CASE("sft loss with zero weights: 3 steps, 4 actions each, loss = ln 4") {
  auto set = four_action_lab();
  Env env(set);
  Trajectory expert = env.expert_solve("train-0000");
  REQUIRE(expert.steps.size() == 3);

  PolicyParams zero = PolicyParams::zeros(256);
  auto [loss, grad] = sft_loss_grad(zero, {expert}, env);
  CHECK_THAT(loss, Catch::Matchers::WithinAbs(1.3862943611198906, 1e-12));
}

TEST_CASE("sft gradient matches central finite differences") {
  const int dim = 128;
  auto set = minishop_set(11, 2);
  Env env(set);
  std::vector<Trajectory> batch;
  for (const Instruction& ins : set.instructions) batch.push_back(env.expert_solve(ins.id));

  PolicyParams params = testutil::random_params(dim, 23);
  auto [loss, grad] = sft_loss_grad(params, batch, env);
  auto numeric = testutil::central_differences(
      [&](const PolicyParams& p) { return sft_loss_grad(p, batch, env).first; }, params);
  CHECK(testutil::max_rel_error(grad, numeric) < 1e-4);
  CHECK_THROWS_AS(sft_loss_grad(params, {}, env), UsageError);
}

TEST_CASE("dpo loss is ln 2 when params equal the reference") {
  auto set = minishop_set();
  Env env(set);
  PreferencePair pair = failure_pair(env, set);

  PolicyParams params = testutil::random_params(kDefaultPolicyDim, 3);
  RefSnapshot ref{params};
  auto [loss, grad] = dpo_pair_loss_grad(params, ref, pair, 0.1, env);
  CHECK_THAT(loss, Catch::Matchers::WithinAbs(kLn2, 1e-12));

  // swapped pair at params = ref: still ln 2
  PreferencePair swapped{pair.instruction_id, pair.rejected, pair.chosen, 1.0, false};
  auto [loss2, grad2] = dpo_pair_loss_grad(params, ref, swapped, 0.1, env);
  CHECK_THAT(loss2, Catch::Matchers::WithinAbs(kLn2, 1e-12));
}

TEST_CASE("dpo sigmoid antisymmetry: swapping the pair maps z to -z") {
  auto set = minishop_set();
  Env env(set);
  PreferencePair pair = failure_pair(env, set);

  PolicyParams params = testutil::random_params(kDefaultPolicyDim, 41, 0.3);
  RefSnapshot ref{testutil::random_params(kDefaultPolicyDim, 42, 0.3)};
  PreferencePair swapped{pair.instruction_id, pair.rejected, pair.chosen, 1.0, false};

  const double beta = 0.4;
  auto [loss_fwd, g1] = dpo_pair_loss_grad(params, ref, pair, beta, env);
  auto [loss_swp, g2] = dpo_pair_loss_grad(params, ref, swapped, beta, env);
  // sigma(z) + sigma(-z) = 1, so exp(-loss) terms are complementary
  CHECK_THAT(std::exp(-loss_fwd) + std::exp(-loss_swp), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("dpo gradient matches central finite differences") {
  const int dim = 128;
  auto set = minishop_set(11, 2);
  Env env(set);
  PreferencePair pair = failure_pair(env, set);

  PolicyParams params = testutil::random_params(dim, 51, 0.3);
  RefSnapshot ref{testutil::random_params(dim, 52, 0.3)};
  const double beta = 0.3;
  auto [loss, grad] = dpo_pair_loss_grad(params, ref, pair, beta, env);
  auto numeric = testutil::central_differences(
      [&](const PolicyParams& p) { return dpo_pair_loss_grad(p, ref, pair, beta, env).first; },
      params);
  CHECK(testutil::max_rel_error(grad, numeric) < 1e-4);
}

TEST_CASE("combined loss: weights scale linearly, sft term gated by the flag") {
  auto set = minishop_set();
  Env env(set);
  PreferencePair pair = failure_pair(env, set);
  PolicyParams params = testutil::random_params(kDefaultPolicyDim, 61, 0.3);
  RefSnapshot ref{testutil::random_params(kDefaultPolicyDim, 62, 0.3)};

  TrainConfig cfg;  // lambda_dpo 1.0, lambda_sft 0.1 defaults
  CHECK(cfg.lambda_dpo == 1.0);
  CHECK(cfg.lambda_sft == 0.1);
  CHECK(cfg.beta == 0.1);

  // sft disabled: combined == weight * lambda_dpo * dpo exactly
  pair.sft_enabled = false;
  pair.weight = 1.0;
  auto [dpo_loss, dpo_grad] = dpo_pair_loss_grad(params, ref, pair, cfg.beta, env);
  auto [combined, combined_grad] = combined_pair_loss_grad(params, ref, pair, cfg, env);
  CHECK_THAT(combined, Catch::Matchers::WithinAbs(cfg.lambda_dpo * dpo_loss, 1e-12));

  // half weight: exactly half the loss and gradient
  pair.weight = 0.5;
  auto [half, half_grad] = combined_pair_loss_grad(params, ref, pair, cfg, env);
  CHECK_THAT(half, Catch::Matchers::WithinAbs(0.5 * combined, 1e-12));
  for (std::size_t i = 0; i < half_grad.size(); ++i)
    CHECK(half_grad[i] == 0.5 * combined_grad[i]);

  // sft enabled adds lambda_sft * per-step NLL of the chosen trajectory
  pair.weight = 1.0;
  pair.sft_enabled = true;
  auto [with_sft, with_sft_grad] = combined_pair_loss_grad(params, ref, pair, cfg, env);
  const double nll = -traj_logprob(params, pair.chosen, env) /
                     static_cast<double>(pair.chosen.steps.size());
  CHECK_THAT(with_sft, Catch::Matchers::WithinAbs(combined + cfg.lambda_sft * nll, 1e-12));

  // gradient of the full combined loss against the oracle, at a small dim
  PolicyParams p128 = testutil::random_params(128, 63, 0.3);
  RefSnapshot ref128{testutil::random_params(128, 64, 0.3)};
  auto [l128, g128] = combined_pair_loss_grad(p128, ref128, pair, cfg, env);
  auto numeric = testutil::central_differences(
      [&](const PolicyParams& p) { return combined_pair_loss_grad(p, ref128, pair, cfg, env).first; },
      p128);
  CHECK(testutil::max_rel_error(g128, numeric) < 1e-4);
}

TEST_CASE("run_phase: deterministic, descending, margin above zero") {
  auto set = minishop_set(11, 4);
  Env env(set);

  // small dataset of scripted failure pairs
  std::vector<PreferencePair> pairs;
  for (const Instruction& ins : set.instructions) {
    InstanceSet sub;  // reuse the shared env; script pairs per instruction
    std::vector<Trajectory> buys;
    for (int slot = 0; slot < set.spec.results_k; ++slot)
      buys.push_back(scripted_buy(env, ins, slot, "target"));
    for (const Trajectory& a : buys)
      for (const Trajectory& b : buys)
        if (a.reward < 1.0 && b.reward < 1.0 && a.reward > b.reward)
          pairs.push_back({ins.id, a, b, 1.0, false});
  }
  REQUIRE(pairs.size() >= 2);

  PolicyParams start = testutil::random_params(512, 71, 0.05);
  TrainConfig cfg;
  cfg.lr_dpo = 1e-3;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 99;

  PhaseResult a = run_phase(start, pairs, env, cfg, PhaseMode::dpo);
  PhaseResult b = run_phase(start, pairs, env, cfg, PhaseMode::dpo);
  CHECK(a.params.weights == b.params.weights);  // bit-identical
  REQUIRE(a.history.size() == 3);
  CHECK(a.history.front().mean_loss > a.history.back().mean_loss);
  CHECK(a.history.back().mean_loss < kLn2);

  // the implicit reward margin ends strictly positive (it starts at 0)
  RefSnapshot ref{start};
  CHECK(mean_margin(a.params, ref, pairs, cfg.beta, env) > 0.0);

  CHECK_THROWS_AS(run_phase(start, std::vector<PreferencePair>{}, env, cfg, PhaseMode::dpo),
                  UsageError);
}

TEST_CASE("run_phase in dpo mode on a single pair drops below ln 2") {
  auto set = minishop_set();
  Env env(set);
  std::vector<PreferencePair> pairs = {failure_pair(env, set)};

  TrainConfig cfg;
  cfg.lr_dpo = 1e-3;
  cfg.seed = 5;
  PhaseResult r = run_phase(PolicyParams::zeros(512), pairs, env, cfg, PhaseMode::dpo);
  CHECK(r.history.back().mean_loss < kLn2);
}

TEST_CASE("sft phase strictly decreases training loss across epochs") {
  auto set = minishop_set(13, 8);
  Env env(set);
  std::vector<Trajectory> experts;
  for (const Instruction& ins : set.instructions) experts.push_back(env.expert_solve(ins.id));

  TrainConfig cfg;
  cfg.lr_sft = 1e-3;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 7;
  PhaseResult r = run_phase(PolicyParams::zeros(1024), experts, env, cfg, PhaseMode::sft);
  CHECK(r.history.front().mean_loss > r.history.back().mean_loss);

  // optimization smoke: 200 steps on a fixed tiny batch beat initialization
  TrainConfig smoke = cfg;
  smoke.epochs = 200;
  smoke.batch_size = 8;
  std::vector<Trajectory> tiny(experts.begin(), experts.begin() + 2);
  PhaseResult s = run_phase(PolicyParams::zeros(1024), tiny, env, smoke, PhaseMode::sft);
  CHECK(s.history.back().mean_loss < s.history.front().mean_loss);
}

TEST_CASE("zero-gradient dataset: params change only by weight decay") {
  auto set = minishop_set();
  Env env(set);
  std::vector<PreferencePair> pairs = {failure_pair(env, set)};
  pairs[0].sft_enabled = false;

  TrainConfig cfg;
  cfg.lambda_dpo = 0.0;  // every pair's gradient is identically zero
  cfg.lr_dpo = 1e-2;
  cfg.weight_decay = 0.01;
  cfg.epochs = 2;
  cfg.seed = 3;

  PolicyParams start = testutil::random_params(64, 81);
  PhaseResult r = run_phase(start, pairs, env, cfg, PhaseMode::dpo);
  const double decay = 1.0 - cfg.lr_dpo * cfg.weight_decay;
  for (std::size_t i = 0; i < start.weights.size(); ++i)
    CHECK_THAT(r.params.weights[i],
               Catch::Matchers::WithinAbs(start.weights[i] * decay * decay, 1e-15));
}

TEST_CASE("non-finite parameters abort with a divergence error") {
  auto set = minishop_set();
  Env env(set);
  std::vector<PreferencePair> pairs = {failure_pair(env, set)};
  PolicyParams bad = PolicyParams::zeros(64);
  bad.weights[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  CHECK_THROWS_AS(run_phase(bad, pairs, env, cfg, PhaseMode::dpo), DivergenceError);
}
