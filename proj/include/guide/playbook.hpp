#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "guide/dynamics.hpp"

namespace guide {

// Inclusive interval; either end may be open.
struct RangeBound {
  std::optional<double> min;
  std::optional<double> max;

  bool contains(double value) const;
  bool operator==(const RangeBound&) const = default;
};

// Symbolic guard on a bullet. Absent fields impose no constraint.
struct ConditionBlock {
  std::optional<RangeBound> time;             // s
  std::optional<RangeBound> guard_distance;   // m
  std::optional<RangeBound> target_distance;  // m
  std::optional<RangeBound> velocity;         // m/s, closing speed toward the Lady
  std::optional<bool> guard_approaching;
  std::optional<bool> approaching;

  bool empty() const;
  bool operator==(const ConditionBlock&) const = default;
};

// (t, d_lady, v, d_guard) provenance snapshot.
struct StateSnapshot {
  double t = 0.0;
  double d_lady = 0.0;
  double v = 0.0;
  double d_guard = 0.0;

  bool operator==(const StateSnapshot&) const = default;
};

enum class BulletType { Constraint, Rule };

struct Bullet {
  std::string id;       // "<section with '-' for '_'>-<5 digits>"
  std::string section;  // guard_avoidance, approach, ...
  BulletType type = BulletType::Rule;
  std::string text;
  ConditionBlock conditions;
  std::vector<StateSnapshot> states;
  std::string evidence;
  std::vector<std::string> episode_history;
  int occurrence_count = 0;

  bool operator==(const Bullet&) const = default;
};

struct Playbook {
  int version = 0;
  std::vector<Bullet> bullets;
  std::optional<int> parent_version;
  std::vector<std::string> created_from_episodes;

  const Bullet* find(std::string_view id) const;
  bool operator==(const Playbook&) const = default;
};

struct DerivedFeatures {
  double time = 0.0;
  double guard_distance = 0.0;   // min over guards
  double target_distance = 0.0;  // |Bandit - Lady|
  double velocity = 0.0;         // closing speed toward the Lady, > 0 when closing
  bool guard_approaching = false;
  bool approaching = false;
};

inline constexpr double kGuardApproachDeadband = 0.1;  // m

double min_guard_distance(const Observation& obs);
double lady_distance(const Observation& obs);

// `previous`, when given, must be strictly earlier than `current`.
DerivedFeatures derive_features(const Observation& current, const Observation* previous);

bool conditions_satisfied(const ConditionBlock& block, const DerivedFeatures& features);

// Per-episode firing record. Each bullet is counted at most once per episode.
class ActivationLog {
 public:
  // Returns true on the bullet's first activation this episode.
  bool record(const std::string& bullet_id, double t);
  const std::map<std::string, double>& first_activation() const { return first_; }
  // occurrence increments owed to each bullet by this episode (always 1).
  int occurrences(const std::string& bullet_id) const;

 private:
  std::map<std::string, double> first_;
};

// Bullets whose conditions hold, in playbook order. If `log` is given, each
// returned bullet's first activation is recorded there.
std::vector<const Bullet*> active_bullets(const Playbook& playbook, const DerivedFeatures& features,
                                          ActivationLog* log = nullptr);

struct CuratorOp {
  enum class Kind { Add, Update, Remove };
  Kind kind = Kind::Add;
  Bullet bullet;          // Add / Update
  std::string bullet_id;  // Remove

  static CuratorOp add(Bullet b) { return {Kind::Add, std::move(b), {}}; }
  static CuratorOp update(Bullet b) { return {Kind::Update, std::move(b), {}}; }
  static CuratorOp remove(std::string id) { return {Kind::Remove, {}, std::move(id)}; }
};

// New version k+1 with the ops applied left to right. Update replaces the
// bullet by id, unioning episode_history and summing occurrence counts.
// Throws OpError (and leaves nothing behind) if any op is invalid.
Playbook apply_ops(const Playbook& playbook, std::span<const CuratorOp> ops);

// Bullet id helpers.
std::string section_id_prefix(std::string_view section);
std::string make_bullet_id(std::string_view section, int counter);
// Counter of a well-formed id, or nullopt.
std::optional<int> bullet_counter(std::string_view id);
int next_bullet_counter(const Playbook& playbook);

// Throws OpError on schema violations (id format, ranges, counts).
void validate_bullet(const Bullet& bullet);

// Canonical JSON (sorted keys, newline-terminated). Throws ParseError with the
// offending path on unknown/missing fields or bad values.
std::string serialize(const Playbook& playbook);
Playbook deserialize(std::string_view text);

// Condition block in the playbook file schema; the reader throws ParseError
// naming `path`.
nlohmann::json conditions_to_json(const ConditionBlock& block);
ConditionBlock conditions_from_json(const nlohmann::json& j, const std::string& path);

std::string to_string(BulletType type);

}  // namespace guide
