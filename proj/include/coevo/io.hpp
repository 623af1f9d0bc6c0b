#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coevo/common.hpp"
#include "coevo/config.hpp"
#include "coevo/env.hpp"
#include "coevo/policy.hpp"
#include "coevo/prefdata.hpp"

namespace coevo {

inline constexpr const char* kEnvFormat = "coevo-env-v1";
inline constexpr const char* kTrajFormat = "coevo-traj-v1";
inline constexpr const char* kPairsFormat = "coevo-pairs-v1";
inline constexpr const char* kPolicyFormat = "coevo-policy-v1";
inline constexpr const char* kManifestFormat = "coevo-manifest-v1";

namespace iodetail {

inline std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace iodetail

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so readers never observe a half-written artifact.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::uint64_t file_hash(const std::filesystem::path& path) {
  return hash_bytes(read_file(path));
}

// ---------------------------------------------------------------------------
// Trajectories (wire form; key order fixed for byte-determinism)

inline json action_to_json(const Action& a) {
  return json{{"verb", a.verb}, {"arg", a.arg}};
}

inline Action action_from_json(const json& j) {
  return Action{j.at("verb").get<std::string>(), j.at("arg").get<std::string>()};
}

// Record without its content hash; the hash is FNV-1a of this text.
inline std::string trajectory_canonical(const Trajectory& t) {
  json steps = json::array();
  for (const Step& s : t.steps)
    steps.push_back(json{{"action", action_to_json(s.action)}, {"observation", s.observation}});
  json rec{{"instruction_id", t.instruction_id},
           {"agent_tag", t.agent_tag},
           {"steps", std::move(steps)},
           {"reward", t.reward}};
  return rec.dump();
}

inline std::uint64_t trajectory_content_hash(const Trajectory& t) {
  return hash_bytes(trajectory_canonical(t));
}

inline json trajectory_to_json(const Trajectory& t) {
  json rec = json::parse(trajectory_canonical(t));
  rec["content_hash"] = iodetail::hex16(trajectory_content_hash(t));
  return rec;
}

inline Trajectory trajectory_from_json(const json& rec, bool verify_hash = true) {
  Trajectory t;
  t.instruction_id = rec.at("instruction_id").get<std::string>();
  t.agent_tag = rec.at("agent_tag").get<std::string>();
  for (const json& s : rec.at("steps"))
    t.steps.push_back({action_from_json(s.at("action")), s.at("observation").get<std::string>()});
  t.reward = rec.at("reward").get<double>();
  if (verify_hash && rec.contains("content_hash")) {
    if (rec.at("content_hash").get<std::string>() != iodetail::hex16(trajectory_content_hash(t)))
      throw IoError("content hash mismatch");
  }
  return t;
}

inline std::string trajectories_to_jsonl(const std::vector<Trajectory>& list) {
  std::string out = json{{"format", kTrajFormat}}.dump();
  out += '\n';
  for (const Trajectory& t : list) {
    out += trajectory_to_json(t).dump();
    out += '\n';
  }
  return out;
}

inline void write_trajectories(const std::filesystem::path& path,
                               const std::vector<Trajectory>& list) {
  write_file_atomic(path, trajectories_to_jsonl(list));
}

namespace iodetail {

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.emplace_back(text.substr(start));
      break;
    }
    lines.emplace_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

inline json parse_line(const std::string& line, const std::filesystem::path& path,
                       std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw IoError("parse error in " + path.string() + " line " + std::to_string(line_no) + ": " +
                  e.what());
  }
}

inline void check_header(const json& header, const char* format,
                         const std::filesystem::path& path) {
  if (!header.contains("format") || header.at("format") != format)
    throw IoError("format tag mismatch in " + path.string() + ": expected " + format);
}

}  // namespace iodetail

inline std::vector<Trajectory> read_trajectories(const std::filesystem::path& path) {
  const std::vector<std::string> lines = iodetail::split_lines(read_file(path));
  if (lines.empty()) throw IoError("empty trajectory file " + path.string());
  iodetail::check_header(iodetail::parse_line(lines[0], path, 1), kTrajFormat, path);
  std::vector<Trajectory> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const json rec = iodetail::parse_line(lines[i], path, i + 1);
    try {
      out.push_back(trajectory_from_json(rec));
    } catch (const IoError&) {
      throw IoError("content hash mismatch in " + path.string() + " line " + std::to_string(i + 1));
    } catch (const json::exception& e) {
      throw IoError("parse error in " + path.string() + " line " + std::to_string(i + 1) + ": " +
                    e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preference pairs (hash references plus inline copies)

inline std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs) {
  std::string out = json{{"format", kPairsFormat}}.dump();
  out += '\n';
  for (const PreferencePair& p : pairs) {
    json rec{{"instruction_id", p.instruction_id},
             {"weight", p.weight},
             {"sft_enabled", p.sft_enabled},
             {"chosen_hash", iodetail::hex16(trajectory_content_hash(p.chosen))},
             {"rejected_hash", iodetail::hex16(trajectory_content_hash(p.rejected))},
             {"chosen", trajectory_to_json(p.chosen)},
             {"rejected", trajectory_to_json(p.rejected)}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

inline void write_pairs(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs) {
  write_file_atomic(path, pairs_to_jsonl(pairs));
}

inline std::vector<PreferencePair> read_pairs(const std::filesystem::path& path) {
  const std::vector<std::string> lines = iodetail::split_lines(read_file(path));
  if (lines.empty()) throw IoError("empty pairs file " + path.string());
  iodetail::check_header(iodetail::parse_line(lines[0], path, 1), kPairsFormat, path);
  std::vector<PreferencePair> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const json rec = iodetail::parse_line(lines[i], path, i + 1);
    try {
      PreferencePair p;
      p.instruction_id = rec.at("instruction_id").get<std::string>();
      p.weight = rec.at("weight").get<double>();
      p.sft_enabled = rec.at("sft_enabled").get<bool>();
      p.chosen = trajectory_from_json(rec.at("chosen"));
      p.rejected = trajectory_from_json(rec.at("rejected"));
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw IoError("parse error in " + path.string() + " line " + std::to_string(i + 1) + ": " +
                    e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy checkpoints

inline void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params,
                            std::uint64_t seed) {
  json doc{{"format", kPolicyFormat},
           {"dim", params.dim()},
           {"seed", seed},
           {"weights", params.weights}};
  write_file_atomic(path, doc.dump());
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("parse error in " + path.string() + ": " + e.what());
  }
  iodetail::check_header(doc, kPolicyFormat, path);
  PolicyParams p;
  doc.at("weights").get_to(p.weights);
  if (static_cast<int>(p.weights.size()) != doc.at("dim").get<int>())
    throw IoError("checkpoint dim mismatch in " + path.string());
  return p;
}

// ---------------------------------------------------------------------------
// Instance sets

inline json goal_to_json(const Goal& goal) {
  if (const auto* g = std::get_if<OneshotGoal>(&goal))
    return json{{"correct", g->correct}, {"reward_table", g->reward_table}};
  if (const auto* g = std::get_if<ShopGoal>(&goal))
    return json{{"required_attrs", g->required_attrs},
                {"budget", g->budget},
                {"target_item", g->target_item}};
  const auto& g = std::get<LabGoal>(goal);
  json subgoals = json::array();
  for (const LabSubgoal& sg : g.subgoals)
    subgoals.push_back(json{{"verb", sg.verb}, {"object", sg.object}, {"room", sg.room}});
  return json{{"start_room", g.start_room}, {"subgoals", std::move(subgoals)}};
}

inline Goal goal_from_json(EnvKind kind, const json& j) {
  switch (kind) {
    case EnvKind::oneshot: {
      OneshotGoal g;
      g.correct = j.at("correct").get<int>();
      j.at("reward_table").get_to(g.reward_table);
      return g;
    }
    case EnvKind::minishop: {
      ShopGoal g;
      j.at("required_attrs").get_to(g.required_attrs);
      g.budget = j.at("budget").get<int>();
      g.target_item = j.at("target_item").get<std::string>();
      return g;
    }
    case EnvKind::chainlab: {
      LabGoal g;
      g.start_room = j.at("start_room").get<int>();
      for (const json& s : j.at("subgoals"))
        g.subgoals.push_back({s.at("verb").get<std::string>(), s.at("object").get<std::string>(),
                              s.at("room").get<int>()});
      return g;
    }
  }
  throw IoError("bad env kind");
}

inline json instance_set_to_json(const InstanceSet& set) {
  const EnvSpec& s = set.spec;
  json spec{{"kind", std::string(to_string(s.kind))}, {"k_actions", s.k_actions},
            {"catalog_size", s.catalog_size},        {"attr_pool", s.attr_pool},
            {"required_attrs", s.required_attrs},    {"results_k", s.results_k},
            {"rooms", s.rooms},                      {"subgoals", s.subgoals},
            {"max_turns", s.max_turns},              {"seed", s.seed}};

  json world;
  if (const auto* shop = std::get_if<ShopWorld>(&set.world)) {
    json catalog = json::array();
    for (const ShopItem& item : shop->catalog)
      catalog.push_back(json{{"id", item.id}, {"attrs", item.attrs}, {"price", item.price}});
    world = json{{"catalog", std::move(catalog)}};
  } else if (const auto* lab = std::get_if<LabWorld>(&set.world)) {
    world = json{{"rooms", lab->room_names}, {"adjacency", lab->adjacency}};
  } else {
    world = nullptr;
  }

  json instructions = json::array();
  for (const Instruction& ins : set.instructions)
    instructions.push_back(json{{"id", ins.id},
                                {"text", ins.text},
                                {"split", std::string(to_string(ins.split))},
                                {"goal", goal_to_json(ins.goal)}});

  return json{{"format", kEnvFormat},
              {"spec", std::move(spec)},
              {"world", std::move(world)},
              {"instructions", std::move(instructions)}};
}

inline InstanceSet instance_set_from_json(const json& doc) {
  iodetail::check_header(doc, kEnvFormat, "instance set");
  InstanceSet set;
  const json& s = doc.at("spec");
  set.spec.kind = env_kind_from_string(s.at("kind").get<std::string>());
  set.spec.k_actions = s.at("k_actions").get<int>();
  set.spec.catalog_size = s.at("catalog_size").get<int>();
  set.spec.attr_pool = s.at("attr_pool").get<int>();
  set.spec.required_attrs = s.at("required_attrs").get<int>();
  set.spec.results_k = s.at("results_k").get<int>();
  set.spec.rooms = s.at("rooms").get<int>();
  set.spec.subgoals = s.at("subgoals").get<int>();
  set.spec.max_turns = s.at("max_turns").get<int>();
  set.spec.seed = s.at("seed").get<std::uint64_t>();

  const json& world = doc.at("world");
  if (world.is_null()) {
    set.world = std::monostate{};
  } else if (world.contains("catalog")) {
    ShopWorld shop;
    for (const json& item : world.at("catalog")) {
      ShopItem it;
      it.id = item.at("id").get<std::string>();
      item.at("attrs").get_to(it.attrs);
      it.price = item.at("price").get<int>();
      shop.catalog.push_back(std::move(it));
    }
    set.world = std::move(shop);
  } else {
    LabWorld lab;
    world.at("rooms").get_to(lab.room_names);
    world.at("adjacency").get_to(lab.adjacency);
    set.world = std::move(lab);
  }

  for (const json& ins : doc.at("instructions")) {
    Instruction out;
    out.id = ins.at("id").get<std::string>();
    out.text = ins.at("text").get<std::string>();
    out.split = split_from_string(ins.at("split").get<std::string>());
    out.goal = goal_from_json(set.spec.kind, ins.at("goal"));
    set.instructions.push_back(std::move(out));
  }
  return set;
}

inline void write_instance_set(const std::filesystem::path& path, const InstanceSet& set) {
  write_file_atomic(path, instance_set_to_json(set).dump(2) + "\n");
}

inline InstanceSet read_instance_set(const std::filesystem::path& path) {
  try {
    return instance_set_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw IoError("parse error in " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics CSV. Header fixed; numbers printed with %.10g; absent fields stay
// empty.

inline constexpr const char* kMetricsHeader =
    "phase,iteration,epoch,mean_loss,mean_z,grad_norm,eval_reward";

struct MetricsRow {
  std::string phase;
  int iteration = 0;
  int epoch = 0;
  std::optional<double> mean_loss, mean_z, grad_norm, eval_reward;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

class MetricsCsv {
 public:
  void add(MetricsRow row) { rows_.push_back(std::move(row)); }

  std::string to_string() const {
    std::string out = kMetricsHeader;
    out += '\n';
    auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const MetricsRow& r : rows_) {
      out += r.phase + ',' + std::to_string(r.iteration) + ',' + std::to_string(r.epoch) + ',' +
             cell(r.mean_loss) + ',' + cell(r.mean_z) + ',' + cell(r.grad_norm) + ',' +
             cell(r.eval_reward) + '\n';
    }
    return out;
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, to_string()); }

 private:
  std::vector<MetricsRow> rows_;
};

// ---------------------------------------------------------------------------
// Run manifest: config snapshot, seeds, stage completion markers with
// artifact hashes. Updated with atomic rename at each stage boundary.

class RunManifest {
 public:
  static RunManifest create(json config_snapshot, std::vector<std::uint64_t> seeds) {
    RunManifest m;
    m.doc_ = json{{"format", kManifestFormat},
                  {"build", kVersion},
                  {"config", std::move(config_snapshot)},
                  {"seeds", std::move(seeds)},
                  {"stages", json::object()}};
    return m;
  }

  static RunManifest load(const std::filesystem::path& path) {
    RunManifest m;
    try {
      m.doc_ = json::parse(read_file(path));
    } catch (const json::exception& e) {
      throw IoError("parse error in " + path.string() + ": " + e.what());
    }
    iodetail::check_header(m.doc_, kManifestFormat, path);
    return m;
  }

  // Loads an existing manifest if compatible with the wanted config, else
  // starts fresh.
  static RunManifest open(const std::filesystem::path& run_dir, const json& config_snapshot,
                          const std::vector<std::uint64_t>& seeds) {
    const std::filesystem::path path = run_dir / "manifest.json";
    if (std::filesystem::exists(path)) {
      RunManifest m = load(path);
      if (m.doc_.at("config") == config_snapshot && m.doc_.at("seeds") == json(seeds)) return m;
    }
    return create(config_snapshot, seeds);
  }

  const json& config() const { return doc_.at("config"); }

  bool stage_completed(const std::string& name) const {
    const json& stages = doc_.at("stages");
    return stages.contains(name) && stages.at(name).value("completed", false);
  }

  // True when every recorded artifact of the stage still hashes the same.
  bool verify_stage(const std::string& name, const std::filesystem::path& run_dir) const {
    if (!stage_completed(name)) return false;
    for (const json& a : doc_.at("stages").at(name).at("artifacts")) {
      const std::filesystem::path p = run_dir / a.at("path").get<std::string>();
      if (!std::filesystem::exists(p)) return false;
      if (iodetail::hex16(file_hash(p)) != a.at("hash").get<std::string>()) return false;
    }
    return true;
  }

  void mark_stage(const std::string& name, const std::vector<std::string>& artifact_paths,
                  const std::filesystem::path& run_dir) {
    json artifacts = json::array();
    for (const std::string& rel : artifact_paths)
      artifacts.push_back(json{{"path", rel}, {"hash", iodetail::hex16(file_hash(run_dir / rel))}});
    doc_["stages"][name] = json{{"completed", true}, {"artifacts", std::move(artifacts)}};
    save(run_dir);
  }

  void save(const std::filesystem::path& run_dir) const {
    write_file_atomic(run_dir / "manifest.json", doc_.dump(2) + "\n");
  }

 private:
  json doc_;
};

}  // namespace coevo
