#include "guide/harness.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>
#include <set>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "guide/error.hpp"
#include "guide/fs_util.hpp"
#include "guide/http_backend.hpp"
#include "guide/scoring.hpp"
#include "guide/trajectory_io.hpp"

namespace guide {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(BackendKind kind) { return kind == BackendKind::Mock ? "mock" : "http"; }

std::optional<BackendKind> parse_backend_kind(std::string_view name) {
  if (name == "mock") return BackendKind::Mock;
  if (name == "http") return BackendKind::Http;
  return std::nullopt;
}

void ExperimentConfig::validate() const {
  if (policies.empty()) throw UsageError("policies: at least one policy is required");
  if (episodes < 1) throw UsageError("episodes: must be at least 1");
  if (!seeds.empty() && seeds.size() < static_cast<std::size_t>(episodes)) {
    throw UsageError(fmt::format("seeds: {} seeds for {} episodes", seeds.size(), episodes));
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw UsageError("epsilon: must lie in [0, 1]");
  if (!(ucb_c > 0.0)) throw UsageError("ucb_c: must be positive");
  if (batch_size < 1) throw UsageError("batch_size: must be at least 1");
  if (max_versions < 1) throw UsageError("max_versions: must be at least 1");
  if (rounds < 0) throw UsageError("rounds: must be non-negative");
  if (reflector != "heuristic" && reflector != "llm") {
    throw UsageError("reflector: expected heuristic or llm, got " + reflector);
  }
  if (token_budget < 1) throw UsageError("token_budget: must be positive");
  if (reasoner_cadence < 1) throw UsageError("reasoner_cadence: must be at least 1");
  if (scenario == ScenarioId::Custom && !scenario_file) {
    throw UsageError("scenario: custom requires a scenario file");
  }
  if (out_dir.empty()) throw UsageError("out_dir: must not be empty");
}

json config_to_json(const ExperimentConfig& c) {
  json policies = json::array();
  for (auto k : c.policies) policies.push_back(to_string(k));
  json j = {{"scenario", to_string(c.scenario)},
            {"policies", policies},
            {"episodes", c.episodes},
            {"seed", c.seed},
            {"seeds", c.seeds},
            {"epsilon", c.epsilon},
            {"ucb_c", c.ucb_c},
            {"batch_size", c.batch_size},
            {"max_versions", c.max_versions},
            {"rounds", c.rounds},
            {"reflector", c.reflector},
            {"miner",
             {{"warmup", c.miner.warmup},
              {"rounding", c.miner.rounding},
              {"brake_distance_factor", c.miner.brake_distance_factor},
              {"brake_speed_factor", c.miner.brake_speed_factor},
              {"guard_proximity", c.miner.thresholds.guard_proximity},
              {"overshoot_speed", c.miner.thresholds.overshoot_speed},
              {"brake_lookback", c.miner.thresholds.brake_lookback}}},
            {"backend", to_string(c.backend)},
            {"token_budget", c.token_budget},
            {"reasoner_cadence", c.reasoner_cadence},
            {"out_dir", c.out_dir.string()},
            {"scenario_file", c.scenario_file ? json(c.scenario_file->string()) : json()},
            {"playbook_file", c.playbook_file ? json(c.playbook_file->string()) : json()},
            {"force", c.force},
            {"resume", c.resume}};
  return j;
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& dst, const std::string& path = "") {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    dst = it->get<T>();
  } catch (const json::exception&) {
    throw UsageError(fmt::format("config {}{}: wrong type", path, key));
  }
}

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&key](const char* k) { return key == k; })) {
      throw UsageError(fmt::format("config {}: unknown field {}", where, key));
    }
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw UsageError("config: expected a JSON object");
  check_keys(j,
             {"scenario", "policies", "episodes", "seed", "seeds", "epsilon", "ucb_c",
              "batch_size", "max_versions", "rounds", "reflector", "miner", "backend",
              "token_budget", "reasoner_cadence", "out_dir", "scenario_file", "playbook_file",
              "force", "resume"},
             "");
  if (auto it = j.find("scenario"); it != j.end()) {
    const auto id = it->is_string() ? parse_scenario_id(it->get<std::string>()) : std::nullopt;
    if (!id) throw UsageError("config scenario: expected lg4, lg5, lg6, lg7 or custom");
    c.scenario = *id;
  }
  if (auto it = j.find("policies"); it != j.end()) {
    if (!it->is_array()) throw UsageError("config policies: expected an array");
    c.policies.clear();
    for (const auto& p : *it) {
      const auto k = p.is_string() ? parse_policy_kind(p.get<std::string>()) : std::nullopt;
      if (!k) throw UsageError("config policies: unknown policy " + p.dump());
      c.policies.push_back(*k);
    }
  }
  take(j, "episodes", c.episodes);
  take(j, "seed", c.seed);
  take(j, "seeds", c.seeds);
  take(j, "epsilon", c.epsilon);
  take(j, "ucb_c", c.ucb_c);
  take(j, "batch_size", c.batch_size);
  take(j, "max_versions", c.max_versions);
  take(j, "rounds", c.rounds);
  take(j, "reflector", c.reflector);
  if (auto it = j.find("miner"); it != j.end() && it->is_object()) {
    check_keys(*it,
               {"warmup", "rounding", "brake_distance_factor", "brake_speed_factor",
                "guard_proximity", "overshoot_speed", "brake_lookback"},
               "miner");
    take(*it, "warmup", c.miner.warmup, "miner.");
    take(*it, "rounding", c.miner.rounding, "miner.");
    take(*it, "brake_distance_factor", c.miner.brake_distance_factor, "miner.");
    take(*it, "brake_speed_factor", c.miner.brake_speed_factor, "miner.");
    take(*it, "guard_proximity", c.miner.thresholds.guard_proximity, "miner.");
    take(*it, "overshoot_speed", c.miner.thresholds.overshoot_speed, "miner.");
    take(*it, "brake_lookback", c.miner.thresholds.brake_lookback, "miner.");
  }
  if (auto it = j.find("backend"); it != j.end()) {
    const auto k = it->is_string() ? parse_backend_kind(it->get<std::string>()) : std::nullopt;
    if (!k) throw UsageError("config backend: expected mock or http");
    c.backend = *k;
  }
  take(j, "token_budget", c.token_budget);
  take(j, "reasoner_cadence", c.reasoner_cadence);
  std::string path;
  if (take(j, "out_dir", path), !path.empty()) c.out_dir = path;
  path.clear();
  if (take(j, "scenario_file", path), !path.empty()) c.scenario_file = path;
  path.clear();
  if (take(j, "playbook_file", path), !path.empty()) c.playbook_file = path;
  take(j, "force", c.force);
  take(j, "resume", c.resume);
  return c;
}

std::vector<std::uint64_t> episode_seeds(const ExperimentConfig& config) {
  const auto n = static_cast<std::size_t>(std::max(config.episodes, 0));
  if (!config.seeds.empty()) {
    if (config.seeds.size() < n) {
      throw UsageError(fmt::format("seeds: {} seeds for {} episodes", config.seeds.size(), n));
    }
    return {config.seeds.begin(), config.seeds.begin() + static_cast<std::ptrdiff_t>(n)};
  }
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = derive_seed(config.seed, 21, i);
  return out;
}

namespace {

GuardMode parse_guard_mode(const std::string& s) {
  if (s == "pursuit") return GuardMode::Pursuit;
  if (s == "defense") return GuardMode::Defense;
  if (s == "stochastic") return GuardMode::Stochastic;
  throw UsageError("scenario guard mode: expected pursuit, defense or stochastic, got " + s);
}

void read_state(const json& j, SpacecraftState& s, const std::string& path,
                std::initializer_list<const char*> extra = {}) {
  if (!j.is_object()) throw UsageError("scenario " + path + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    const bool known = key == "position" || key == "velocity" ||
                       std::any_of(extra.begin(), extra.end(), [&](const char* e) { return key == e; });
    if (!known) throw UsageError(fmt::format("scenario {}: unknown field {}", path, key));
  }
  try {
    if (j.contains("position")) s.position = vec_from_json(j["position"], path + "/position");
    if (j.contains("velocity")) s.velocity = vec_from_json(j["velocity"], path + "/velocity");
  } catch (const ParseError& e) {
    throw UsageError("scenario " + std::string(e.what()));
  }
}

}  // namespace

void apply_scenario_overrides(ScenarioConfig& s, const json& j) {
  if (!j.is_object()) throw UsageError("scenario file: expected a JSON object");
  check_keys(j,
             {"mean_motion", "guard_max_accel", "bandit_max_accel", "episode_duration",
              "control_period", "capture_radius", "bandit", "lady", "guards", "bandit_jitter"},
             "scenario");
  take(j, "mean_motion", s.mean_motion);
  take(j, "guard_max_accel", s.guard_max_accel);
  take(j, "bandit_max_accel", s.bandit_max_accel);
  take(j, "episode_duration", s.episode_duration);
  take(j, "control_period", s.control_period);
  take(j, "capture_radius", s.capture_radius);
  if (j.contains("lady")) read_state(j["lady"], s.initial.lady, "lady");
  if (j.contains("bandit")) {
    read_state(j["bandit"], s.initial.bandit, "bandit");
    // Position / velocity spread per seed once the nominal state is pinned.
    double jp = 0.0, jv = 0.0;
    if (auto it = j.find("bandit_jitter"); it != j.end()) {
      take(*it, "position", jp);
      take(*it, "velocity", jv);
    }
    Rng rng = Rng::derive(s.rng_seed, 31, 0);
    for (int a = 0; a < 3; ++a) s.initial.bandit.position[a] += rng.uniform(-jp, jp);
    for (int a = 0; a < 3; ++a) s.initial.bandit.velocity[a] += rng.uniform(-jv, jv);
  }
  if (auto it = j.find("guards"); it != j.end()) {
    if (!it->is_array() || it->empty()) throw UsageError("scenario guards: expected a non-empty array");
    std::vector<SpacecraftState> guards;
    std::vector<GuardPolicy> policies;
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& g = (*it)[i];
      const std::string path = fmt::format("guards/{}", i);
      SpacecraftState st = s.initial.guards.empty() ? SpacecraftState{} : s.initial.guards.front();
      read_state(g, st, path,
                 {"mode", "kp", "kd", "defense_kp", "defense_kd", "standoff_min", "standoff_fraction",
                  "clamp_to_segment", "pursuit_probability"});
      GuardPolicy p;
      std::string mode = "pursuit";
      take(g, "mode", mode);
      p.mode = parse_guard_mode(mode);
      take(g, "kp", p.kp);
      take(g, "kd", p.kd);
      take(g, "defense_kp", p.defense_kp);
      take(g, "defense_kd", p.defense_kd);
      take(g, "standoff_min", p.standoff_min);
      take(g, "standoff_fraction", p.standoff_fraction);
      take(g, "clamp_to_segment", p.clamp_to_segment);
      take(g, "pursuit_probability", p.pursuit_probability);
      guards.push_back(st);
      policies.push_back(p);
    }
    s.initial.guards = std::move(guards);
    s.guard_policies = std::move(policies);
  }
  try {
    s.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
}

ScenarioConfig scenario_for(const ExperimentConfig& config, std::uint64_t seed) {
  ScenarioConfig s = make_scenario(config.scenario, seed);
  if (config.scenario_file) {
    json j = json::parse(read_file(*config.scenario_file), nullptr, false);
    if (j.is_discarded()) {
      throw UsageError("scenario file is not valid JSON: " + config.scenario_file->string());
    }
    apply_scenario_overrides(s, j);
  }
  return s;
}

BackendSet::BackendSet(BackendKind kind) {
  if (kind == BackendKind::Mock) {
    mock_reasoner_ = std::make_unique<MockReasoner>(heuristic_intent);
    mock_actor_ = std::make_unique<MockActor>();
  } else {
    http_ = std::make_unique<HttpChatBackend>(ChatConfig::from_env());
  }
}

ReasonerBackend& BackendSet::reasoner() {
  if (http_) return *http_;
  return *mock_reasoner_;
}

ActorBackend& BackendSet::actor() {
  if (http_) return *http_;
  return *mock_actor_;
}

bool needs_backend(PolicyKind kind) {
  return kind == PolicyKind::LlmStatic || kind == PolicyKind::LlmPlaybook;
}

std::unique_ptr<Policy> make_policy(PolicyKind kind, std::shared_ptr<const Playbook> playbook,
                                    BackendSet* backends, const ExperimentConfig& config) {
  if (!playbook) playbook = std::make_shared<Playbook>();
  switch (kind) {
    case PolicyKind::Prograde: return std::make_unique<ProgradePolicy>();
    case PolicyKind::Lqr: return std::make_unique<LqrPolicy>();
    case PolicyKind::ScriptedFollower: return std::make_unique<ScriptedFollowerPolicy>(playbook);
    case PolicyKind::LlmStatic:
    case PolicyKind::LlmPlaybook: {
      if (backends == nullptr) throw UsageError(to_string(kind) + " needs a chat backend");
      LlmPolicyConfig lc;
      lc.token_budget = config.token_budget;
      lc.reasoner_cadence = config.reasoner_cadence;
      if (kind == PolicyKind::LlmStatic) playbook = std::make_shared<Playbook>();
      return std::make_unique<LlmPolicy>(playbook, backends->reasoner(), backends->actor(), lc,
                                         to_string(kind));
    }
  }
  throw UsageError("unknown policy kind");
}

void RunManifest::add_file(const std::string& rel) {
  if (std::find(files.begin(), files.end(), rel) == files.end()) files.push_back(rel);
}

void RunManifest::add_episode(const ManifestEpisode& ep) {
  auto same = [&ep](const ManifestEpisode& e) { return e.record == ep.record; };
  if (std::none_of(episodes.begin(), episodes.end(), same)) episodes.push_back(ep);
}

json manifest_to_json(const RunManifest& m) {
  json eps = json::array();
  for (const auto& e : m.episodes) {
    eps.push_back({{"episode_id", e.episode_id},
                   {"policy", e.policy},
                   {"playbook_version", e.playbook_version},
                   {"seed", e.seed},
                   {"record", e.record}});
  }
  return {{"command", m.command},   {"config", m.config},         {"code_version", m.code_version},
          {"created_at", m.created_at}, {"updated_at", m.updated_at}, {"files", m.files},
          {"episodes", eps}};
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.code_version = j.at("code_version").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.updated_at = j.at("updated_at").get<std::string>();
    m.files = j.at("files").get<std::vector<std::string>>();
    for (const auto& e : j.at("episodes")) {
      m.episodes.push_back({e.at("episode_id").get<std::string>(), e.at("policy").get<std::string>(),
                            e.at("playbook_version").get<int>(), e.at("seed").get<std::uint64_t>(),
                            e.at("record").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest", e.what());
  }
  return m;
}

fs::path manifest_path(const fs::path& run_dir) { return run_dir / "manifest.json"; }

namespace {

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(
                                                   std::chrono::system_clock::now())));
}

}  // namespace

void write_manifest(const fs::path& run_dir, RunManifest& manifest) {
  manifest.updated_at = utc_now();
  if (manifest.created_at.empty()) manifest.created_at = manifest.updated_at;
  write_file_atomic(manifest_path(run_dir), manifest_to_json(manifest).dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& run_dir) {
  json j = json::parse(read_file(manifest_path(run_dir)), nullptr, false);
  if (j.is_discarded()) throw ParseError(manifest_path(run_dir).string(), "not valid JSON");
  return manifest_from_json(j);
}

std::vector<PolicyRow> aggregate_policy_rows(const std::vector<EpisodeRecord>& records,
                                             const std::vector<std::string>& policy_order) {
  std::vector<PolicyRow> rows;
  for (const auto& name : policy_order) {
    std::vector<double> s, dl, dg;
    for (const auto& r : records) {
      if (r.policy != name) continue;
      s.push_back(r.score);
      dl.push_back(r.d_min_lb);
      dg.push_back(r.d_min_bg);
    }
    if (s.empty()) continue;
    rows.push_back({name, s.size(), mean(s), sample_std(s), mean(dl), mean(dg)});
  }
  return rows;
}

std::string render_policy_table(ScenarioId scenario, const std::vector<PolicyRow>& rows) {
  std::string out = fmt::format("scenario {}\n", to_string(scenario));
  out += fmt::format("{:<18} {:>4}  {:<21} {:>9} {:>9}\n", "policy", "n", "score mean ± std",
                     "d_LB", "d_BG");
  for (const auto& r : rows) {
    const std::string cell = format_sci(r.mean_score) + " ± " + format_sci(r.std_score);
    out += fmt::format("{:<18} {:>4}  {:<21} {:>9.1f} {:>9.1f}\n", r.policy, r.n, cell,
                       r.mean_d_lady, r.mean_d_guard);
  }
  return out;
}

std::string render_policy_csv(const std::vector<PolicyRow>& rows) {
  std::string out = "policy,n,mean_score,std_score,mean_d_lb,mean_d_bg\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.policy, r.n, r.mean_score, r.std_score,
                       r.mean_d_lady, r.mean_d_guard);
  }
  return out;
}

std::string baseline_ordering_note(ScenarioId scenario, const std::vector<PolicyRow>& rows) {
  auto find = [&rows](const char* name) -> const PolicyRow* {
    for (const auto& r : rows) {
      if (r.policy == name) return &r;
    }
    return nullptr;
  };
  const PolicyRow* pro = find("prograde");
  const PolicyRow* lqr = find("lqr");
  if (pro == nullptr || lqr == nullptr) return {};
  const bool pursuit_family = scenario == ScenarioId::LG4 || scenario == ScenarioId::LG5;
  const bool blocking_family = scenario == ScenarioId::LG6 || scenario == ScenarioId::LG7;
  if (pursuit_family && !(pro->mean_score < lqr->mean_score)) {
    return fmt::format(
        "deviation: prograde ({}) does not score below lqr ({}); against a pursuing guard the "
        "expected order is prograde < lqr\n",
        format_sci(pro->mean_score), format_sci(lqr->mean_score));
  }
  if (blocking_family && !(pro->mean_score > lqr->mean_score)) {
    return fmt::format(
        "deviation: prograde ({}) does not score above lqr ({}); against a blocking guard the "
        "expected order is lqr < prograde\n",
        format_sci(pro->mean_score), format_sci(lqr->mean_score));
  }
  return {};
}

std::string render_lineage(const std::vector<Playbook>& versions) {
  std::string out = "lineage\n";
  for (const auto& p : versions) {
    out += fmt::format("  v{}", p.version);
    if (p.parent_version) out += fmt::format(" <- v{}", *p.parent_version);
    if (!p.created_from_episodes.empty()) {
      out += " from " + fmt::format("{}", fmt::join(p.created_from_episodes, ","));
    }
    out += "\n";
    for (const auto& b : p.bullets) {
      out += fmt::format("    {}  {}\n", b.id, conditions_to_json(b.conditions).dump());
    }
  }
  return out;
}

namespace {

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

std::string rel(const fs::path& p, const fs::path& base) {
  return p.lexically_relative(base).generic_string();
}

// Config fields that may change between an interrupted run and its resume.
json comparable(json j) {
  for (const char* k : {"force", "resume", "rounds", "out_dir"}) j.erase(k);
  return j;
}

RunManifest open_run_dir(const ExperimentConfig& config, const std::string& command) {
  const fs::path dir = config.run_dir();
  const bool occupied = fs::exists(dir) && !fs::is_empty(dir);
  if (occupied && config.resume && command == "evolve") {
    RunManifest m = read_manifest(dir);
    if (m.command != command) {
      throw UsageError(fmt::format("{} holds a '{}' run, cannot resume it as '{}'", dir.string(),
                                   m.command, command));
    }
    if (comparable(m.config) != comparable(config_to_json(config))) {
      throw UsageError("resume: configuration differs from the one recorded in " +
                       manifest_path(dir).string());
    }
    return m;
  }
  if (occupied) {
    if (!config.force) {
      throw UsageError(fmt::format("run directory {} already exists (use --force to replace it{})",
                                   dir.string(), command == "evolve" ? " or --resume" : ""));
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  RunManifest m;
  m.command = command;
  m.config = config_to_json(config);
  return m;
}

void register_episode(RunManifest& m, const fs::path& run_dir, const fs::path& ep_dir,
                      const EpisodeRecord& r) {
  m.add_file(rel(ep_dir / r.trajectory_path, run_dir));
  m.add_file(rel(ep_dir / r.trace_path, run_dir));
  const std::string record = rel(record_path(ep_dir, r.episode_id), run_dir);
  m.add_file(record);
  m.add_episode({r.episode_id, r.policy, r.playbook_version, r.seed, record});
}

void write_output(RunManifest& m, const fs::path& run_dir, const std::string& name,
                  const std::string& text) {
  write_file_atomic(run_dir / name, text);
  m.add_file(name);
}

std::shared_ptr<const Playbook> load_playbook(const ExperimentConfig& config) {
  if (!config.playbook_file) return std::make_shared<Playbook>();
  try {
    return std::make_shared<Playbook>(deserialize(read_file(*config.playbook_file)));
  } catch (const ParseError& e) {
    throw UsageError("playbook file " + config.playbook_file->string() + ": " + e.what());
  }
}

std::unique_ptr<BackendSet> backends_for(const ExperimentConfig& config, bool reflector_llm) {
  const bool needed = reflector_llm || std::any_of(config.policies.begin(), config.policies.end(),
                                                   needs_backend);
  return needed ? std::make_unique<BackendSet>(config.backend) : nullptr;
}

}  // namespace

int cmd_run(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const auto seeds = episode_seeds(config);
    const auto playbook = load_playbook(config);
    auto backends = backends_for(config, false);
    std::vector<std::unique_ptr<Policy>> policies;
    for (auto kind : config.policies) {
      policies.push_back(make_policy(kind, playbook, backends.get(), config));
    }
    scenario_for(config, seeds.front());  // surface scenario file errors before writing

    const fs::path dir = config.run_dir();
    RunManifest manifest = open_run_dir(config, "run");
    write_manifest(dir, manifest);

    std::vector<EpisodeRecord> records;
    std::vector<std::string> order;
    for (auto& policy : policies) {
      order.push_back(policy->name());
      const fs::path ep_dir = dir / "episodes" / policy->name();
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        const std::string id = fmt::format("{}-e{:02}", policy->name(), i);
        Episode ep = run_episode(*policy, scenario_for(config, seeds[i]),
                                 {id, playbook->version, config.miner.thresholds});
        save_episode(ep_dir, ep);
        register_episode(manifest, dir, ep_dir, ep.record);
        write_manifest(dir, manifest);
        records.push_back(std::move(ep.record));
      }
    }

    const auto rows = aggregate_policy_rows(records, order);
    const std::string report = render_policy_table(config.scenario, rows) +
                               baseline_ordering_note(config.scenario, rows);
    write_output(manifest, dir, "report.txt", report);
    write_output(manifest, dir, "report.csv", render_policy_csv(rows));
    write_manifest(dir, manifest);
    out << report;
    return static_cast<int>(kExitOk);
  });
}

namespace {

// Reuses a completed episode on disk or runs and saves a new one.
Episode reuse_or_run(const fs::path& dir, const std::string& id, int version, std::uint64_t seed,
                     const std::function<Episode()>& run) {
  if (fs::exists(record_path(dir, id))) {
    Episode ep = load_episode(dir, id);
    if (ep.record.seed != seed || ep.record.playbook_version != version) {
      throw IntegrityError(fmt::format("stored episode {} has seed {} / version {}, expected {} / {}",
                                       id, ep.record.seed, ep.record.playbook_version, seed,
                                       version));
    }
    return ep;
  }
  Episode ep = run();
  save_episode(dir, ep);
  return ep;
}

std::string render_version_report(ScenarioId scenario, const std::vector<VersionRow>& rows,
                                  const std::vector<Playbook>& versions, int rounds) {
  std::string out = fmt::format("scenario {}  versions {}  rounds {}\n", to_string(scenario),
                                versions.size(), rounds);
  out += render_version_table(rows, true);
  out += render_lineage(versions);
  return out;
}

}  // namespace

int cmd_evolve(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const PolicyKind kind = config.policies.front();
    if (kind != PolicyKind::ScriptedFollower && kind != PolicyKind::LlmPlaybook) {
      throw UsageError("evolve: policy must be scripted_follower or llm_playbook, got " +
                       to_string(kind));
    }
    const auto seeds = episode_seeds(config);
    auto backends = backends_for(config, config.reflector == "llm");
    scenario_for(config, seeds.front());

    const fs::path dir = config.run_dir();
    RunManifest manifest = open_run_dir(config, "evolve");
    write_manifest(dir, manifest);

    const VersionStore store(dir);
    EvolutionState state = store.has_state() ? store.load() : EvolutionState::initial();

    EvolutionConfig ec;
    ec.epsilon = config.epsilon;
    ec.c = config.ucb_c;
    ec.batch_size = config.batch_size;
    ec.max_versions = config.max_versions;
    ec.seed = config.seed;

    const EpisodeRunner runner = [&](const Playbook& pb, const std::string& id, std::uint64_t seed) {
      auto policy = make_policy(kind, std::make_shared<Playbook>(pb), backends.get(), config);
      return run_episode(*policy, scenario_for(config, seed), {id, pb.version, config.miner.thresholds});
    };
    std::unique_ptr<Reflector> reflector;
    if (config.reflector == "llm") {
      reflector = std::make_unique<LlmReflector>(backends->reasoner());
    } else {
      reflector = std::make_unique<HeuristicMiner>(config.miner);
    }

    // A single version leaves nothing to select between.
    if (config.max_versions > 1) {
      while (state.rounds_completed() < config.rounds && evolution_open(state, ec)) {
        state = evolve_round(state, store, ec, runner, *reflector);
        for (const auto& id : state.rounds.back().episodes) {
          register_episode(manifest, dir, store.episodes_dir(),
                           load_episode(store.episodes_dir(), id).record);
        }
        for (const auto& p : state.versions) {
          manifest.add_file(rel(store.playbooks_dir() / fmt::format("v{}.json", p.version), dir));
        }
        manifest.add_file(rel(store.stats_file(), dir));
        write_manifest(dir, manifest);
      }
    }

    std::vector<ScoredEpisode> scored;
    for (const auto& pb : state.versions) {
      const fs::path ep_dir = dir / "eval";
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        const std::string id = fmt::format("eval-v{}-e{:02}", pb.version, i);
        Episode ep = reuse_or_run(ep_dir, id, pb.version, seeds[i],
                                  [&] { return runner(pb, id, seeds[i]); });
        register_episode(manifest, dir, ep_dir, ep.record);
        scored.push_back({pb.version, ep.record.score, ep.record.d_min_lb, ep.record.d_min_bg});
      }
      write_manifest(dir, manifest);
    }

    const auto rows = aggregate_version_stats(scored);
    const std::string report =
        render_version_report(config.scenario, rows, state.versions, state.rounds_completed());
    write_output(manifest, dir, "report.txt", report);
    write_output(manifest, dir, "report.csv", render_version_csv(rows));
    write_output(manifest, dir, "plot.csv", render_plot_csv(rows));
    write_manifest(dir, manifest);
    out << report;
    return static_cast<int>(kExitOk);
  });
}

int cmd_replay(const fs::path& target, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!fs::exists(target)) throw UsageError("no such file or directory: " + target.string());
    std::vector<fs::path> records;
    if (fs::is_directory(target)) {
      for (const auto& e : fs::recursive_directory_iterator(target)) {
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && name.ends_with(".record.json")) records.push_back(e.path());
      }
      std::sort(records.begin(), records.end());
      if (records.empty()) throw UsageError("no episode records under " + target.string());
    } else {
      records.push_back(target);
    }

    bool ok = true;
    for (const auto& file : records) {
      AuditResult a;
      try {
        a = audit_episode(file);
      } catch (const ParseError& e) {
        a.ok = false;
        a.mismatches.push_back(std::string("unreadable: ") + e.what());
      } catch (const std::filesystem::filesystem_error& e) {
        a.ok = false;
        a.mismatches.push_back(std::string("missing: ") + e.what());
      } catch (const Error& e) {
        a.ok = false;
        a.mismatches.push_back(std::string("unreadable: ") + e.what());
      }
      out << file.string() << ": " << (a.ok ? "ok" : "MISMATCH") << "\n";
      for (const auto& m : a.mismatches) out << "  " << m << "\n";
      std::vector<std::pair<double, std::string>> timeline;
      for (const auto& [id, t] : a.timeline) timeline.emplace_back(t, id);
      std::sort(timeline.begin(), timeline.end());
      for (const auto& [t, id] : timeline) out << fmt::format("  {} first active at t={} s\n", id, t);
      ok = ok && a.ok;
    }
    return static_cast<int>(ok ? kExitOk : kExitIntegrity);
  });
}

int cmd_report(const fs::path& run_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!fs::exists(manifest_path(run_dir))) {
      throw UsageError("no manifest in " + run_dir.string());
    }
    const RunManifest m = read_manifest(run_dir);
    const ExperimentConfig config = config_from_json(m.config);
    std::vector<EpisodeRecord> records;
    for (const auto& e : m.episodes) {
      const fs::path file = run_dir / e.record;
      json j = json::parse(read_file(file), nullptr, false);
      if (j.is_discarded()) throw IntegrityError("unreadable record " + file.string());
      records.push_back(record_from_json(j));
    }
    if (m.command == "run") {
      std::vector<std::string> order;
      for (auto k : config.policies) order.push_back(to_string(k));
      const auto rows = aggregate_policy_rows(records, order);
      out << render_policy_table(config.scenario, rows)
          << baseline_ordering_note(config.scenario, rows);
      return static_cast<int>(kExitOk);
    }
    if (m.command == "evolve") {
      std::vector<ScoredEpisode> scored;
      for (const auto& r : records) {
        if (r.episode_id.starts_with("eval-")) {
          scored.push_back({r.playbook_version, r.score, r.d_min_lb, r.d_min_bg});
        }
      }
      const VersionStore store(run_dir);
      const EvolutionState state = store.has_state() ? store.load() : EvolutionState::initial();
      out << render_version_report(config.scenario, aggregate_version_stats(scored),
                                   state.versions, state.rounds_completed());
      return static_cast<int>(kExitOk);
    }
    throw UsageError("manifest has unknown command " + m.command);
  });
}

}  // namespace guide
