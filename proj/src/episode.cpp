#include "guide/episode.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "guide/error.hpp"
#include "guide/fs_util.hpp"
#include "guide/trajectory_io.hpp"

namespace guide {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(path + "/" + key, "missing required field");
  }
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ParseError(path + "/" + key, e.what());
  }
}

template <typename Fn>
auto parse_lines(const std::string& text, Fn fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no), e.what());
    }
    try {
      fn(j);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + e.path(), e.what());
    }
  }
}

}  // namespace

json trace_record_to_json(const TraceRecord& r) {
  return {{"t", r.t},
          {"obs_digest", r.obs_digest},
          {"active_bullets", r.active_bullets},
          {"intent", r.intent},
          {"command", {{"throttle", vec_to_json(r.command.throttle)}, {"duration", r.command.duration}}},
          {"degraded", r.degraded}};
}

TraceRecord trace_record_from_json(const json& j) {
  if (!j.is_object()) {
    throw ParseError("", "expected object");
  }
  TraceRecord r;
  r.t = field<double>(j, "t", "");
  r.obs_digest = field<std::string>(j, "obs_digest", "");
  r.active_bullets = field<std::vector<std::string>>(j, "active_bullets", "");
  r.intent = field<std::string>(j, "intent", "");
  const json cmd = field<json>(j, "command", "");
  r.command.throttle = vec_from_json(cmd.value("throttle", json()), "/command/throttle");
  r.command.duration = field<double>(cmd, "duration", "/command");
  r.degraded = field<bool>(j, "degraded", "");
  return r;
}

std::string trace_to_jsonl(const ReasoningTrace& trace) {
  std::string out;
  for (const auto& r : trace) {
    out += trace_record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

ReasoningTrace trace_from_jsonl(const std::string& text) {
  ReasoningTrace out;
  parse_lines(text, [&out](const json& j) { out.push_back(trace_record_from_json(j)); });
  return out;
}

std::string observation_digest(const Observation& obs) {
  return hex_digest(sample_to_json({obs, ThrustCommand{}}).dump());
}

double closing_speed(const Observation& obs) {
  const Vec3 r = obs.bandit.position - obs.lady.position;
  const double range = r.norm();
  if (!(range > 0.0)) {
    return 0.0;
  }
  return -r.dot(obs.bandit.velocity - obs.lady.velocity) / range;
}

namespace {

std::size_t lady_minimum_index(const Trajectory& trajectory) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    if (lady_distance(trajectory[i].obs) < lady_distance(trajectory[best].obs)) {
      best = i;
    }
  }
  return best;
}

std::size_t lookback_steps(double lookback, double control_period) {
  return static_cast<std::size_t>(std::ceil(lookback / control_period - 1e-9));
}

}  // namespace

std::size_t brake_reference_index(const Trajectory& trajectory, double lookback,
                                  double control_period) {
  if (trajectory.empty()) {
    throw InvalidInput("brake_reference_index: empty trajectory");
  }
  const std::size_t m = lady_minimum_index(trajectory);
  const std::size_t k = lookback_steps(lookback, control_period);
  return m >= k ? m - k : 0;
}

std::vector<std::string> violation_flags(const Trajectory& trajectory, double control_period,
                                         const ViolationThresholds& thresholds) {
  std::vector<std::string> flags;
  if (trajectory.empty()) {
    return flags;
  }
  const ScoreBreakdown m = episode_metrics(trajectory);
  if (m.d_min_bg < thresholds.guard_proximity) {
    flags.emplace_back(kGuardProximity);
  }
  // Overshoot: the Lady minimum is followed by divergence and was reached fast.
  const std::size_t lo = lady_minimum_index(trajectory);
  if (lo + 1 < trajectory.size()) {
    const std::size_t ref = brake_reference_index(trajectory, thresholds.brake_lookback,
                                                  control_period);
    if (closing_speed(trajectory[ref].obs) >= thresholds.overshoot_speed) {
      flags.emplace_back(kOvershoot);
    }
  }
  return flags;
}

json record_to_json(const EpisodeRecord& r) {
  return {{"episode_id", r.episode_id},
          {"scenario_id", to_string(r.scenario_id)},
          {"policy", r.policy},
          {"playbook_version", r.playbook_version},
          {"seed", r.seed},
          {"score", r.score},
          {"d_min_lb", r.d_min_lb},
          {"d_min_bg", r.d_min_bg},
          {"steps", r.steps},
          {"captured", r.captured},
          {"trajectory_path", r.trajectory_path},
          {"trace_path", r.trace_path},
          {"violation_flags", r.violation_flags},
          {"first_activation", r.first_activation}};
}

EpisodeRecord record_from_json(const json& j) {
  if (!j.is_object()) {
    throw ParseError("", "expected object");
  }
  EpisodeRecord r;
  r.episode_id = field<std::string>(j, "episode_id", "");
  const auto scenario = field<std::string>(j, "scenario_id", "");
  const auto id = parse_scenario_id(scenario);
  if (!id) {
    throw ParseError("/scenario_id", "unknown scenario " + scenario);
  }
  r.scenario_id = *id;
  r.policy = field<std::string>(j, "policy", "");
  r.playbook_version = field<int>(j, "playbook_version", "");
  r.seed = field<std::uint64_t>(j, "seed", "");
  r.score = field<double>(j, "score", "");
  r.d_min_lb = field<double>(j, "d_min_lb", "");
  r.d_min_bg = field<double>(j, "d_min_bg", "");
  r.steps = field<std::size_t>(j, "steps", "");
  r.captured = field<bool>(j, "captured", "");
  r.trajectory_path = field<std::string>(j, "trajectory_path", "");
  r.trace_path = field<std::string>(j, "trace_path", "");
  r.violation_flags = field<std::vector<std::string>>(j, "violation_flags", "");
  r.first_activation = field<std::map<std::string, double>>(j, "first_activation", "");
  return r;
}

Episode run_episode(Policy& policy, const ScenarioConfig& config, const EpisodeSpec& spec) {
  policy.begin_episode(config);
  Simulation sim(config);
  Episode ep;
  ep.trace.reserve(config.steps());

  Observation previous;
  bool has_previous = false;
  while (!sim.done()) {
    const Observation obs = sim.observation();
    StepDecision d = policy.decide(obs, has_previous ? &previous : nullptr);
    TraceRecord tr;
    tr.t = obs.t;
    tr.obs_digest = observation_digest(obs);
    tr.active_bullets = d.active_bullets;
    tr.intent = std::move(d.intent);
    tr.degraded = d.degraded;
    sim.step(d.command);
    // The trace carries the command the simulator actually applied.
    tr.command = sim.trajectory().back().command;
    ep.trace.push_back(std::move(tr));
    previous = obs;
    has_previous = true;
  }

  ep.trajectory = sim.trajectory();
  const ScoreBreakdown m = episode_metrics(ep.trajectory);
  EpisodeRecord& r = ep.record;
  r.episode_id = spec.episode_id;
  r.scenario_id = config.id;
  r.policy = policy.name();
  r.playbook_version = spec.playbook_version;
  r.seed = config.rng_seed;
  r.score = m.total;
  r.d_min_lb = m.d_min_lb;
  r.d_min_bg = m.d_min_bg;
  r.steps = ep.trajectory.size();
  r.captured = sim.captured();
  r.trajectory_path = spec.episode_id + ".traj.jsonl";
  r.trace_path = spec.episode_id + ".trace.jsonl";
  r.violation_flags = violation_flags(ep.trajectory, config.control_period, spec.thresholds);
  r.first_activation = policy.activations().first_activation();
  return ep;
}

std::filesystem::path record_path(const std::filesystem::path& dir, const std::string& episode_id) {
  return dir / (episode_id + ".record.json");
}

void save_episode(const std::filesystem::path& dir, const Episode& episode) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / episode.record.trajectory_path, trajectory_to_jsonl(episode.trajectory));
  write_file_atomic(dir / episode.record.trace_path, trace_to_jsonl(episode.trace));
  write_file_atomic(record_path(dir, episode.record.episode_id),
                    record_to_json(episode.record).dump(2) + "\n");
}

namespace {

EpisodeRecord read_record(const std::filesystem::path& file) {
  const std::string text = read_file(file);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(file.string(), e.what());
  }
  return record_from_json(j);
}

}  // namespace

Episode load_episode(const std::filesystem::path& dir, const std::string& episode_id) {
  Episode ep;
  ep.record = read_record(record_path(dir, episode_id));
  ep.trajectory = trajectory_from_jsonl(read_file(dir / ep.record.trajectory_path));
  ep.trace = trace_from_jsonl(read_file(dir / ep.record.trace_path));
  return ep;
}

AuditResult audit_episode(const std::filesystem::path& record_file) {
  AuditResult out;
  const EpisodeRecord r = read_record(record_file);
  const auto dir = record_file.parent_path();
  const Trajectory traj = trajectory_from_jsonl(read_file(dir / r.trajectory_path));
  const ReasoningTrace trace = trace_from_jsonl(read_file(dir / r.trace_path));

  auto mismatch = [&out](const char* name, const std::string& stored, const std::string& actual) {
    out.ok = false;
    out.mismatches.push_back(fmt::format("{}: stored {}, recomputed {}", name, stored, actual));
  };
  auto check = [&mismatch](const char* name, double stored, double actual) {
    if (stored != actual) mismatch(name, fmt::format("{}", stored), fmt::format("{}", actual));
  };

  if (traj.empty()) {
    mismatch("steps", std::to_string(r.steps), "0");
    return out;
  }
  const ScoreBreakdown m = episode_metrics(traj);
  check("score", r.score, m.total);
  check("d_min_lb", r.d_min_lb, m.d_min_lb);
  check("d_min_bg", r.d_min_bg, m.d_min_bg);
  if (r.steps != traj.size()) {
    mismatch("steps", std::to_string(r.steps), std::to_string(traj.size()));
  }
  if (trace.size() != traj.size()) {
    mismatch("trace length", std::to_string(trace.size()), std::to_string(traj.size()));
  }

  for (const auto& tr : trace) {
    for (const auto& id : tr.active_bullets) {
      out.timeline.emplace(id, tr.t);
    }
  }
  if (out.timeline != r.first_activation) {
    auto render = [](const std::map<std::string, double>& m) {
      std::string s;
      for (const auto& [id, t] : m) s += fmt::format("{}@{} ", id, t);
      return s.empty() ? std::string("none") : s;
    };
    mismatch("first_activation", render(r.first_activation), render(out.timeline));
  }
  return out;
}

}  // namespace guide
