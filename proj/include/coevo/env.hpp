#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "coevo/common.hpp"

namespace coevo {

// ---------------------------------------------------------------------------
// Core domain types

enum class Split { train, test_seen, test_unseen };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_seen: return "test-seen";
    case Split::test_unseen: return "test-unseen";
  }
  return "train";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test-seen") return Split::test_seen;
  if (s == "test-unseen") return Split::test_unseen;
  throw DataError("unknown split: " + std::string(s));
}

struct Action {
  std::string verb;
  std::string arg;  // may be empty

  // "verb[arg]", or just "verb" when the argument is empty. Round-trips
  // exactly through parse().
  std::string to_string() const {
    if (arg.empty()) return verb;
    std::string s;
    s.reserve(verb.size() + arg.size() + 2);
    s += verb;
    s += '[';
    s += arg;
    s += ']';
    return s;
  }

  static Action parse(std::string_view s) {
    auto open = s.find('[');
    if (open == std::string_view::npos) {
      if (s.find(']') != std::string_view::npos)
        throw DataError("malformed action: " + std::string(s));
      return Action{std::string(s), ""};
    }
    if (s.empty() || s.back() != ']')
      throw DataError("malformed action: " + std::string(s));
    return Action{std::string(s.substr(0, open)),
                  std::string(s.substr(open + 1, s.size() - open - 2))};
  }

  bool operator==(const Action&) const = default;
};

// Lexicographic on the serialized form; available_actions lists are sorted
// with this.
inline bool action_less(const Action& a, const Action& b) {
  return a.to_string() < b.to_string();
}

struct Step {
  Action action;
  std::string observation;

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::string instruction_id;
  std::string agent_tag;  // expert | target | failure | other
  std::vector<Step> steps;
  double reward = 0.0;

  std::size_t length() const { return steps.size(); }

  bool operator==(const Trajectory&) const = default;

  // Identity of the behavior: instruction, steps and reward. Two agents
  // producing the same episode hash equal; agent_tag is excluded.
  std::uint64_t structural_hash() const {
    std::uint64_t h = hash_parts(instruction_id);
    for (const Step& s : steps) h = hash_sep(hash_bytes(s.observation, hash_sep(hash_bytes(s.action.to_string(), h))));
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(reward));
    __builtin_memcpy(&bits, &reward, sizeof(bits));
    return hash_u64(bits, h);
  }
};

// ---------------------------------------------------------------------------
// Goals (hidden ground truth carried by each instruction)

struct OneshotGoal {
  int correct = 0;
  std::vector<double> reward_table;  // exactly one 1.0 entry
  bool operator==(const OneshotGoal&) const = default;
};

struct ShopGoal {
  std::vector<std::string> required_attrs;  // first one reaches the target via search
  int budget = 0;
  std::string target_item;
  bool operator==(const ShopGoal&) const = default;
};

struct LabSubgoal {
  std::string verb;  // take | use | focus
  std::string object;
  int room = 0;
  bool operator==(const LabSubgoal&) const = default;
};

struct LabGoal {
  std::vector<LabSubgoal> subgoals;  // prerequisite order
  int start_room = 0;
  bool operator==(const LabGoal&) const = default;
};

using Goal = std::variant<OneshotGoal, ShopGoal, LabGoal>;

struct Instruction {
  std::string id;
  std::string text;
  Split split = Split::train;
  Goal goal;
};

// ---------------------------------------------------------------------------
// Environment specification

enum class EnvKind { oneshot, minishop, chainlab };

inline std::string_view to_string(EnvKind k) {
  switch (k) {
    case EnvKind::oneshot: return "oneshot";
    case EnvKind::minishop: return "minishop";
    case EnvKind::chainlab: return "chainlab";
  }
  return "minishop";
}

inline EnvKind env_kind_from_string(std::string_view s) {
  if (s == "oneshot") return EnvKind::oneshot;
  if (s == "minishop") return EnvKind::minishop;
  if (s == "chainlab") return EnvKind::chainlab;
  throw ConfigError("unknown env kind: " + std::string(s));
}

struct EnvSpec {
  EnvKind kind = EnvKind::minishop;

  // oneshot
  int k_actions = 4;

  // minishop
  int catalog_size = 60;
  int attr_pool = 24;
  int required_attrs = 3;
  int results_k = 5;

  // chainlab
  int rooms = 5;
  int subgoals = 4;

  int max_turns = 8;  // see defaults(); per-kind
  std::uint64_t seed = 1;

  static EnvSpec defaults(EnvKind kind) {
    EnvSpec s;
    s.kind = kind;
    switch (kind) {
      case EnvKind::oneshot: s.max_turns = 1; break;
      case EnvKind::minishop: s.max_turns = 8; break;
      case EnvKind::chainlab: s.max_turns = 20; break;
    }
    return s;
  }
};

// ---------------------------------------------------------------------------
// Worlds (state shared by all instructions of an instance set)

struct ShopItem {
  std::string id;
  std::vector<std::string> attrs;
  int price = 0;
};

struct ShopWorld {
  std::vector<ShopItem> catalog;
};

struct LabWorld {
  std::vector<std::string> room_names;
  std::vector<std::vector<int>> adjacency;  // per room, sorted
};

using World = std::variant<std::monostate, ShopWorld, LabWorld>;

struct InstanceSet {
  EnvSpec spec;
  World world;
  std::vector<Instruction> instructions;

  const Instruction* find(std::string_view id) const {
    for (const Instruction& ins : instructions)
      if (ins.id == id) return &ins;
    return nullptr;
  }

  std::vector<const Instruction*> by_split(Split s) const {
    std::vector<const Instruction*> out;
    for (const Instruction& ins : instructions)
      if (ins.split == s) out.push_back(&ins);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Runtime state

struct EnvState {
  int instr_index = -1;
  int turn = 0;
  bool done = false;
  double reward = 0.0;   // meaningful only once done
  std::uint64_t seed = 0;  // transitions are deterministic; kept for the reset contract

  // minishop
  std::vector<int> results;  // catalog indices on the current results page
  int selected = -1;
  bool bought = false;

  // chainlab
  int room = 0;
  int completed = 0;  // subgoals are prerequisite-ordered, a count suffices
};

struct StepResult {
  std::string observation;
  bool done = false;
  std::optional<double> reward;  // present iff done
};

namespace envdetail {

inline constexpr std::array<std::string_view, 40> kAttrWords = {
    "red",    "blue",   "green",  "black",  "white",  "yellow", "purple",
    "orange", "cotton", "wool",   "silk",   "linen",  "leather", "denim",
    "velvet", "nylon",  "small",  "large",  "narrow", "wide",   "long",
    "short",  "light",  "heavy",  "soft",   "rigid",  "matte",  "glossy",
    "round",  "square", "curved", "flat",   "plain",  "striped", "dotted",
    "floral", "vintage", "modern", "rustic", "sleek"};

inline constexpr std::array<std::string_view, 12> kRoomWords = {
    "hall",   "lab",     "kitchen", "storage", "office", "workshop",
    "garden", "cellar",  "attic",   "vault",   "studio", "archive"};

inline constexpr std::array<std::string_view, 24> kObjectWords = {
    "beaker", "burner", "sample", "lens",   "flask",  "magnet", "coil",
    "prism",  "tube",   "scale",  "filter", "probe",  "dish",   "stand",
    "clamp",  "funnel", "pipette", "slide", "sensor", "switch", "crucible",
    "stirrer", "tongs", "vial"};

inline constexpr std::array<std::string_view, 3> kLabVerbs = {"take", "use", "focus"};

inline std::string attr_word(int i) {
  if (i < static_cast<int>(kAttrWords.size())) return std::string(kAttrWords[static_cast<std::size_t>(i)]);
  return "attr" + std::to_string(i);
}

inline std::string pad_num(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

inline std::string option_token(int i) { return "opt" + pad_num(i, 2); }
inline std::string item_id(int i) { return "item" + pad_num(i, 3); }

inline std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ' ';
    out += parts[i];
  }
  return out;
}

}  // namespace envdetail

// ---------------------------------------------------------------------------
// Env: reset / step / available_actions / expert oracle over an InstanceSet.
//
// All three environments are deterministic: observations are a pure function
// of (state, action). Invalid-but-well-formed actions consume a turn and
// observe "Nothing happens.". An episode ends on the terminal action or when
// the turn counter reaches max_turns, whichever comes first; the terminal
// reward is the only reward.

class Env {
 public:
  explicit Env(const InstanceSet& set) : set_(&set) {}

  const InstanceSet& instances() const { return *set_; }
  const EnvSpec& spec() const { return set_->spec; }
  int max_turns() const { return set_->spec.max_turns; }

  std::pair<EnvState, std::string> reset(std::string_view instruction_id,
                                         std::uint64_t seed) const {
    const Instruction* ins = set_->find(instruction_id);
    if (!ins) throw DataError("unknown instruction id: " + std::string(instruction_id));
    EnvState st;
    st.instr_index = static_cast<int>(ins - set_->instructions.data());
    st.seed = seed;
    std::string obs;
    switch (set_->spec.kind) {
      case EnvKind::oneshot: {
        std::string opts;
        for (int i = 0; i < set_->spec.k_actions; ++i) {
          if (i) opts += ' ';
          opts += envdetail::option_token(i);
        }
        obs = ins->text + " . options : " + opts;
        break;
      }
      case EnvKind::minishop:
        obs = ins->text + " . results : none";
        break;
      case EnvKind::chainlab: {
        st.room = std::get<LabGoal>(ins->goal).start_room;
        obs = ins->text + " . " + room_view(st.room);
        break;
      }
    }
    return {std::move(st), std::move(obs)};
  }

  StepResult step(EnvState& st, const Action& a) const {
    if (st.done) throw UsageError("step after episode end");
    const Instruction& ins = instruction(st);
    ++st.turn;

    StepResult res;
    switch (set_->spec.kind) {
      case EnvKind::oneshot: res = step_oneshot(st, ins, a); break;
      case EnvKind::minishop: res = step_minishop(st, ins, a); break;
      case EnvKind::chainlab: res = step_chainlab(st, ins, a); break;
    }

    if (!res.done && st.turn >= set_->spec.max_turns) {
      res.done = true;
      res.reward = timeout_reward(st, ins);
    }
    if (res.done) {
      st.done = true;
      st.reward = *res.reward;
    }
    return res;
  }

  // Non-empty, sorted lexicographically by serialization. The terminal
  // action (buy, the last subgoal's action, any oneshot choice) appears only
  // where taking it can legally end the episode.
  std::vector<Action> available_actions(const EnvState& st) const {
    if (st.done) throw UsageError("available_actions after episode end");
    const Instruction& ins = instruction(st);
    std::vector<Action> out;
    switch (set_->spec.kind) {
      case EnvKind::oneshot:
        for (int i = 0; i < set_->spec.k_actions; ++i)
          out.push_back({"choose", envdetail::option_token(i)});
        break;
      case EnvKind::minishop: {
        const auto& goal = std::get<ShopGoal>(ins.goal);
        for (const std::string& w : goal.required_attrs) out.push_back({"search", w});
        if (st.selected >= 0) {
          out.push_back({"buy", ""});
        } else {
          const auto& catalog = std::get<ShopWorld>(set_->world).catalog;
          for (int idx : st.results) out.push_back({"click", catalog[static_cast<std::size_t>(idx)].id});
        }
        break;
      }
      case EnvKind::chainlab: {
        const auto& world = std::get<LabWorld>(set_->world);
        for (int r : world.adjacency[static_cast<std::size_t>(st.room)])
          out.push_back({"goto", world.room_names[static_cast<std::size_t>(r)]});
        for (const LabSubgoal& sg : std::get<LabGoal>(ins.goal).subgoals)
          out.push_back({sg.verb, sg.object});
        break;
      }
    }
    std::sort(out.begin(), out.end(), action_less);
    return out;
  }

  const Instruction& instruction(const EnvState& st) const {
    return set_->instructions[static_cast<std::size_t>(st.instr_index)];
  }

  // Scripted oracle; reward 1.0 is guaranteed by instance generation.
  Trajectory expert_solve(std::string_view instruction_id) const {
    const Instruction* ins = set_->find(instruction_id);
    if (!ins) throw DataError("unknown instruction id: " + std::string(instruction_id));

    Trajectory traj;
    traj.instruction_id = ins->id;
    traj.agent_tag = "expert";

    auto [st, obs0] = reset(instruction_id, 0);
    auto take = [&](const Action& a) {
      StepResult r = step(st, a);
      traj.steps.push_back({a, r.observation});
      return r;
    };

    switch (set_->spec.kind) {
      case EnvKind::oneshot: {
        const auto& goal = std::get<OneshotGoal>(ins->goal);
        take({"choose", envdetail::option_token(goal.correct)});
        break;
      }
      case EnvKind::minishop: {
        const auto& goal = std::get<ShopGoal>(ins->goal);
        const auto& catalog = std::get<ShopWorld>(set_->world).catalog;
        bool found = false;
        for (const std::string& w : goal.required_attrs) {
          take({"search", w});
          for (int idx : st.results) {
            if (catalog[static_cast<std::size_t>(idx)].id == goal.target_item) {
              found = true;
              break;
            }
          }
          if (found) break;
        }
        if (!found) throw std::logic_error("minishop oracle: target unreachable by search");
        take({"click", goal.target_item});
        take({"buy", ""});
        break;
      }
      case EnvKind::chainlab: {
        const auto& goal = std::get<LabGoal>(ins->goal);
        const auto& world = std::get<LabWorld>(set_->world);
        for (const LabSubgoal& sg : goal.subgoals) {
          for (int r : shortest_path(world, st.room, sg.room))
            take({"goto", world.room_names[static_cast<std::size_t>(r)]});
          take({sg.verb, sg.object});
        }
        break;
      }
    }

    if (!st.done) throw std::logic_error("oracle did not terminate the episode");
    traj.reward = st.reward;
    if (traj.reward != 1.0) throw std::logic_error("oracle reward != 1.0 on " + std::string(instruction_id));
    return traj;
  }

  // Room indices to visit, excluding `from`, ending at `to`. BFS with
  // smaller-index tie-break.
  static std::vector<int> shortest_path(const LabWorld& world, int from, int to) {
    if (from == to) return {};
    std::vector<int> prev(world.room_names.size(), -1);
    std::queue<int> q;
    q.push(from);
    prev[static_cast<std::size_t>(from)] = from;
    while (!q.empty()) {
      int r = q.front();
      q.pop();
      for (int nb : world.adjacency[static_cast<std::size_t>(r)]) {
        if (prev[static_cast<std::size_t>(nb)] < 0) {
          prev[static_cast<std::size_t>(nb)] = r;
          q.push(nb);
        }
      }
    }
    std::vector<int> path;
    for (int r = to; r != from; r = prev[static_cast<std::size_t>(r)]) {
      if (r < 0) throw std::logic_error("lab world is disconnected");
      path.push_back(r);
    }
    std::reverse(path.begin(), path.end());
    return path;
  }

 private:
  static constexpr std::string_view kNothing = "Nothing happens.";

  double timeout_reward(const EnvState& st, const Instruction& ins) const {
    switch (set_->spec.kind) {
      case EnvKind::oneshot:
      case EnvKind::minishop:
        return 0.0;  // no (valid) purchase
      case EnvKind::chainlab: {
        const auto& goal = std::get<LabGoal>(ins.goal);
        return static_cast<double>(st.completed) / static_cast<double>(goal.subgoals.size());
      }
    }
    return 0.0;
  }

  StepResult step_oneshot(EnvState&, const Instruction& ins, const Action& a) const {
    const auto& goal = std::get<OneshotGoal>(ins.goal);
    if (a.verb == "choose") {
      for (int i = 0; i < set_->spec.k_actions; ++i) {
        if (a.arg == envdetail::option_token(i)) {
          return {"done", true, goal.reward_table[static_cast<std::size_t>(i)]};
        }
      }
    }
    return {std::string(kNothing), false, std::nullopt};
  }

  StepResult step_minishop(EnvState& st, const Instruction& ins, const Action& a) const {
    const auto& goal = std::get<ShopGoal>(ins.goal);
    const auto& catalog = std::get<ShopWorld>(set_->world).catalog;

    if (a.verb == "search" && !a.arg.empty()) {
      st.selected = -1;
      st.results = search_results(a.arg);
      std::string obs = "results :";
      for (int idx : st.results) obs += ' ' + catalog[static_cast<std::size_t>(idx)].id;
      return {std::move(obs), false, std::nullopt};
    }

    if (a.verb == "click" && st.selected < 0) {
      for (int idx : st.results) {
        const ShopItem& item = catalog[static_cast<std::size_t>(idx)];
        if (item.id == a.arg) {
          st.selected = idx;
          std::string obs = "selected " + item.id + " : price " + std::to_string(item.price) +
                            " attrs " + envdetail::join(item.attrs);
          return {std::move(obs), false, std::nullopt};
        }
      }
    }

    if (a.verb == "buy" && a.arg.empty() && st.selected >= 0) {
      const ShopItem& item = catalog[static_cast<std::size_t>(st.selected)];
      int matched = 0;
      for (const std::string& w : goal.required_attrs)
        if (std::find(item.attrs.begin(), item.attrs.end(), w) != item.attrs.end()) ++matched;
      int budget_ok = item.price <= goal.budget ? 1 : 0;
      double reward = static_cast<double>(matched + budget_ok) /
                      static_cast<double>(goal.required_attrs.size() + 1);
      st.bought = true;
      return {"bought " + item.id, true, reward};
    }

    return {std::string(kNothing), false, std::nullopt};
  }

  StepResult step_chainlab(EnvState& st, const Instruction& ins, const Action& a) const {
    const auto& goal = std::get<LabGoal>(ins.goal);
    const auto& world = std::get<LabWorld>(set_->world);

    if (a.verb == "goto") {
      for (int r : world.adjacency[static_cast<std::size_t>(st.room)]) {
        if (world.room_names[static_cast<std::size_t>(r)] == a.arg) {
          st.room = r;
          return {room_view_with_progress(st, ins), false, std::nullopt};
        }
      }
      return {std::string(kNothing), false, std::nullopt};
    }

    int next = st.completed;
    if (next < static_cast<int>(goal.subgoals.size())) {
      const LabSubgoal& sg = goal.subgoals[static_cast<std::size_t>(next)];
      if (a.verb == sg.verb && a.arg == sg.object && st.room == sg.room) {
        ++st.completed;
        std::string obs = "you " + sg.verb + " the " + sg.object + " . progress " +
                          std::to_string(st.completed) + " of " +
                          std::to_string(goal.subgoals.size());
        bool all_done = st.completed == static_cast<int>(goal.subgoals.size());
        if (all_done) return {std::move(obs), true, 1.0};
        return {std::move(obs), false, std::nullopt};
      }
    }
    return {std::string(kNothing), false, std::nullopt};
  }

  // Top-k results: items carrying the attribute first, then the rest, both in
  // catalog (id) order.
  std::vector<int> search_results(const std::string& attr) const {
    const auto& catalog = std::get<ShopWorld>(set_->world).catalog;
    std::vector<int> hits, misses;
    for (int i = 0; i < static_cast<int>(catalog.size()); ++i) {
      const ShopItem& item = catalog[static_cast<std::size_t>(i)];
      if (std::find(item.attrs.begin(), item.attrs.end(), attr) != item.attrs.end())
        hits.push_back(i);
      else
        misses.push_back(i);
    }
    std::vector<int> out;
    for (int i : hits) {
      if (static_cast<int>(out.size()) >= set_->spec.results_k) break;
      out.push_back(i);
    }
    for (int i : misses) {
      if (static_cast<int>(out.size()) >= set_->spec.results_k) break;
      out.push_back(i);
    }
    return out;
  }

  std::string room_view(int room) const {
    const auto& world = std::get<LabWorld>(set_->world);
    std::string obs = "you are in the " + world.room_names[static_cast<std::size_t>(room)] + " . exits :";
    for (int r : world.adjacency[static_cast<std::size_t>(room)])
      obs += ' ' + world.room_names[static_cast<std::size_t>(r)];
    return obs;
  }

  // Objects of still-pending subgoals located here are listed, in subgoal
  // order, so observations change as the task advances.
  std::string room_view_with_progress(const EnvState& st, const Instruction& ins) const {
    const auto& goal = std::get<LabGoal>(ins.goal);
    std::string obs = room_view(st.room) + " . you see :";
    bool any = false;
    for (int j = st.completed; j < static_cast<int>(goal.subgoals.size()); ++j) {
      const LabSubgoal& sg = goal.subgoals[static_cast<std::size_t>(j)];
      if (sg.room == st.room) {
        obs += ' ' + sg.object;
        any = true;
      }
    }
    if (!any) obs += " nothing";
    return obs;
  }

  const InstanceSet* set_;
};

// ---------------------------------------------------------------------------
// Instance generation

namespace envdetail {

inline void validate_spec(const EnvSpec& spec) {
  std::vector<std::string> bad;
  if (spec.max_turns < 1) bad.push_back("max_turns must be >= 1");
  switch (spec.kind) {
    case EnvKind::oneshot:
      if (spec.k_actions < 2 || spec.k_actions > 99) bad.push_back("k_actions must be in [2, 99]");
      break;
    case EnvKind::minishop:
      if (spec.catalog_size < spec.results_k) bad.push_back("catalog_size must be >= results_k");
      if (spec.catalog_size > 999) bad.push_back("catalog_size must be <= 999");
      if (spec.attr_pool < spec.required_attrs + 1) bad.push_back("attr_pool must exceed required_attrs");
      if (spec.required_attrs < 1) bad.push_back("required_attrs must be >= 1");
      if (spec.results_k < 1) bad.push_back("results_k must be >= 1");
      if (spec.max_turns < spec.required_attrs + 2) bad.push_back("max_turns too small for the expert script");
      break;
    case EnvKind::chainlab:
      if (spec.rooms < 2 || spec.rooms > static_cast<int>(kRoomWords.size()))
        bad.push_back("rooms must be in [2, " + std::to_string(kRoomWords.size()) + "]");
      if (spec.subgoals < 1 || spec.subgoals > static_cast<int>(kObjectWords.size()))
        bad.push_back("subgoals must be in [1, " + std::to_string(kObjectWords.size()) + "]");
      break;
  }
  if (!bad.empty()) {
    std::string msg = "invalid environment spec:";
    for (const std::string& b : bad) msg += "\n  - " + b;
    throw ConfigError(msg);
  }
}

inline ShopWorld gen_shop_world(const EnvSpec& spec, std::uint64_t seed) {
  CounterRng rng = rng_stream(seed, "shop-world");
  ShopWorld world;
  world.catalog.resize(static_cast<std::size_t>(spec.catalog_size));
  for (int i = 0; i < spec.catalog_size; ++i) {
    ShopItem& item = world.catalog[static_cast<std::size_t>(i)];
    item.id = item_id(i);
    int n_attrs = 2 + static_cast<int>(rng.next_below(4));  // 2..5
    n_attrs = std::min(n_attrs, spec.attr_pool);
    for (int a : sample_indices(spec.attr_pool, n_attrs, rng)) item.attrs.push_back(attr_word(a));
    std::sort(item.attrs.begin(), item.attrs.end());
    item.price = 5 + static_cast<int>(rng.next_below(95));  // 5..99
  }
  return world;
}

inline LabWorld gen_lab_world(const EnvSpec& spec, std::uint64_t seed) {
  CounterRng rng = rng_stream(seed, "lab-world");
  LabWorld world;
  for (int i = 0; i < spec.rooms; ++i)
    world.room_names.push_back(std::string(kRoomWords[static_cast<std::size_t>(i)]));
  std::vector<std::set<int>> adj(static_cast<std::size_t>(spec.rooms));
  for (int i = 0; i + 1 < spec.rooms; ++i) {
    adj[static_cast<std::size_t>(i)].insert(i + 1);
    adj[static_cast<std::size_t>(i + 1)].insert(i);
  }
  // one shortcut edge when the graph is big enough
  if (spec.rooms >= 4) {
    int a = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.rooms)));
    int b = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.rooms)));
    if (a != b) {
      adj[static_cast<std::size_t>(a)].insert(b);
      adj[static_cast<std::size_t>(b)].insert(a);
    }
  }
  world.adjacency.resize(static_cast<std::size_t>(spec.rooms));
  for (int i = 0; i < spec.rooms; ++i)
    world.adjacency[static_cast<std::size_t>(i)].assign(adj[static_cast<std::size_t>(i)].begin(),
                                                        adj[static_cast<std::size_t>(i)].end());
  return world;
}

}  // namespace envdetail

// Deterministic in (spec, seed): identical inputs yield bit-identical sets.
// Every emitted instruction is validated by running the oracle; unsatisfiable
// parameters surface as a ConfigError after bounded retries.
inline InstanceSet generate_instances(const EnvSpec& spec_in, int n_train, int n_test,
                                      std::uint64_t seed) {
  if (n_train < 1 || n_test < 0) throw ConfigError("instance counts must be >= 1 train, >= 0 test");
  EnvSpec spec = spec_in;
  spec.seed = seed;
  envdetail::validate_spec(spec);

  InstanceSet set;
  set.spec = spec;
  switch (spec.kind) {
    case EnvKind::oneshot: set.world = std::monostate{}; break;
    case EnvKind::minishop: set.world = envdetail::gen_shop_world(spec, seed); break;
    case EnvKind::chainlab: set.world = envdetail::gen_lab_world(spec, seed); break;
  }

  CounterRng rng = rng_stream(seed, "instances");
  std::set<std::uint64_t> goal_keys;
  const int total = n_train + n_test;
  constexpr int kMaxAttempts = 2000;

  // Scratch set holding the shared world plus the single candidate, so the
  // oracle can vet candidates before they are committed.
  InstanceSet scratch;
  scratch.spec = spec;
  scratch.world = set.world;
  scratch.instructions.resize(1);
  Env probe(scratch);

  for (int i = 0; i < total; ++i) {
    bool train = i < n_train;
    Instruction ins;
    ins.split = train ? Split::train : Split::test_seen;
    ins.id = (train ? "train-" : "test-") + envdetail::pad_num(train ? i : i - n_train, 4);

    bool accepted = false;
    for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
      std::uint64_t key = 0;
      switch (spec.kind) {
        case EnvKind::oneshot: {
          OneshotGoal goal;
          goal.correct = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.k_actions)));
          goal.reward_table.assign(static_cast<std::size_t>(spec.k_actions), 0.0);
          goal.reward_table[static_cast<std::size_t>(goal.correct)] = 1.0;
          ins.text = "pick " + envdetail::option_token(goal.correct);
          ins.goal = goal;  // duplicate goals allowed: only k distinct tables exist
          break;
        }
        case EnvKind::minishop: {
          const auto& catalog = std::get<ShopWorld>(set.world).catalog;
          int target = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.catalog_size)));
          const ShopItem& item = catalog[static_cast<std::size_t>(target)];
          if (static_cast<int>(item.attrs.size()) < spec.required_attrs) continue;
          ShopGoal goal;
          for (int a : sample_indices(static_cast<int>(item.attrs.size()), spec.required_attrs, rng))
            goal.required_attrs.push_back(item.attrs[static_cast<std::size_t>(a)]);
          goal.budget = item.price + static_cast<int>(rng.next_below(21));
          goal.target_item = item.id;
          // the first required attribute must surface the target in top-k;
          // rotate a working one to the front, or reject the candidate
          scratch.instructions[0] = Instruction{ins.id, "", ins.split, goal};
          int working = -1;
          for (std::size_t w = 0; w < goal.required_attrs.size(); ++w) {
            EnvState st;
            st.instr_index = 0;
            StepResult r = probe.step(st, {"search", goal.required_attrs[w]});
            if (r.observation.find(goal.target_item) != std::string::npos) {
              working = static_cast<int>(w);
              break;
            }
          }
          if (working < 0) continue;
          std::rotate(goal.required_attrs.begin(), goal.required_attrs.begin() + working,
                      goal.required_attrs.end());
          std::string attrs;
          for (const std::string& w : goal.required_attrs) attrs += w + ' ';
          ins.text = "find a " + attrs + "item under " + std::to_string(goal.budget) + " dollars";
          ins.goal = goal;
          key = hash_parts("shop", attrs, goal.budget);
          break;
        }
        case EnvKind::chainlab: {
          const auto& world = std::get<LabWorld>(set.world);
          LabGoal goal;
          goal.start_room = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.rooms)));
          std::vector<int> objs = sample_indices(static_cast<int>(envdetail::kObjectWords.size()),
                                                 spec.subgoals, rng);
          std::string text = "task :";
          std::uint64_t h = hash_parts("lab", goal.start_room);
          for (int j = 0; j < spec.subgoals; ++j) {
            LabSubgoal sg;
            sg.verb = std::string(envdetail::kLabVerbs[rng.next_below(envdetail::kLabVerbs.size())]);
            sg.object = std::string(envdetail::kObjectWords[static_cast<std::size_t>(objs[static_cast<std::size_t>(j)])]);
            sg.room = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.rooms)));
            if (j) text += " then";
            text += ' ' + sg.verb + " the " + sg.object + " in the " +
                    world.room_names[static_cast<std::size_t>(sg.room)];
            h = hash_parts(h, sg.verb, sg.object, sg.room);
            goal.subgoals.push_back(std::move(sg));
          }
          ins.text = std::move(text);
          ins.goal = goal;
          key = h;
          break;
        }
      }

      if (spec.kind != EnvKind::oneshot && goal_keys.count(key)) continue;

      scratch.instructions[0] = ins;
      try {
        Trajectory expert = probe.expert_solve(ins.id);
        if (expert.reward != 1.0) continue;
      } catch (const std::logic_error&) {
        continue;
      }
      goal_keys.insert(key);
      accepted = true;
    }
    if (!accepted)
      throw ConfigError("could not generate a solvable instruction for " + ins.id +
                        "; generation parameters are too tight");
    set.instructions.push_back(std::move(ins));
  }
  return set;
}

}  // namespace coevo
