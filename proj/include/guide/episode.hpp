#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guide/policy.hpp"
#include "guide/scenario.hpp"
#include "guide/scoring.hpp"

namespace guide {

// One ReasoningTrace entry; exactly one per control step.
struct TraceRecord {
  double t = 0.0;  // observation time the decision was taken at
  std::string obs_digest;
  std::vector<std::string> active_bullets;
  std::string intent;
  ThrustCommand command;
  bool degraded = false;

  bool operator==(const TraceRecord&) const = default;
};

using ReasoningTrace = std::vector<TraceRecord>;

nlohmann::json trace_record_to_json(const TraceRecord& r);
TraceRecord trace_record_from_json(const nlohmann::json& j);
std::string trace_to_jsonl(const ReasoningTrace& trace);
ReasoningTrace trace_from_jsonl(const std::string& text);

// Stable digest of an observation's serialized state.
std::string observation_digest(const Observation& obs);

struct ViolationThresholds {
  double guard_proximity = 100.0;  // m; d_min_BG below this is a violation
  double overshoot_speed = 10.0;   // m/s closing speed before the Lady minimum
  double brake_lookback = 3.0;     // s before the Lady minimum to read that speed
};

inline constexpr const char* kGuardProximity = "guard_proximity";
inline constexpr const char* kOvershoot = "overshoot";

// -d|B - L|/dt from the relative state; positive when closing.
double closing_speed(const Observation& obs);

// Index of the sample `lookback` seconds before the Lady-distance minimum,
// clamped to the trajectory start.
std::size_t brake_reference_index(const Trajectory& trajectory, double lookback,
                                  double control_period);

// Subset of {guard_proximity, overshoot}, in that order.
std::vector<std::string> violation_flags(const Trajectory& trajectory, double control_period,
                                         const ViolationThresholds& thresholds);

struct EpisodeRecord {
  std::string episode_id;
  ScenarioId scenario_id = ScenarioId::LG4;
  std::string policy;
  int playbook_version = 0;
  std::uint64_t seed = 0;
  double score = 0.0;
  double d_min_lb = 0.0;
  double d_min_bg = 0.0;
  std::size_t steps = 0;
  bool captured = false;
  std::string trajectory_path;  // relative to the episodes directory
  std::string trace_path;
  std::vector<std::string> violation_flags;
  std::map<std::string, double> first_activation;  // bullet id -> t

  bool operator==(const EpisodeRecord&) const = default;
};

nlohmann::json record_to_json(const EpisodeRecord& r);
EpisodeRecord record_from_json(const nlohmann::json& j);

struct Episode {
  EpisodeRecord record;
  Trajectory trajectory;
  ReasoningTrace trace;
};

struct EpisodeSpec {
  std::string episode_id;
  int playbook_version = 0;
  ViolationThresholds thresholds;
};

// Runs one closed-loop episode to completion.
Episode run_episode(Policy& policy, const ScenarioConfig& config, const EpisodeSpec& spec);

// <dir>/<id>.traj.jsonl, <id>.trace.jsonl, then <id>.record.json last, so a
// record on disk implies its companions are complete.
void save_episode(const std::filesystem::path& dir, const Episode& episode);
Episode load_episode(const std::filesystem::path& dir, const std::string& episode_id);
std::filesystem::path record_path(const std::filesystem::path& dir, const std::string& episode_id);

struct AuditResult {
  bool ok = true;
  std::vector<std::string> mismatches;  // "field: stored X, recomputed Y"
  std::map<std::string, double> timeline;  // from the trace file
};

// Recomputes metrics from the stored trajectory and compares them with the
// record; rebuilds the bullet firing timeline from the trace.
AuditResult audit_episode(const std::filesystem::path& record_file);

}  // namespace guide
