#include "guide/playbook.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "guide/error.hpp"

namespace guide {

bool RangeBound::contains(double value) const {
  return (!min || value >= *min) && (!max || value <= *max);
}

bool ConditionBlock::empty() const {
  return !time && !guard_distance && !target_distance && !velocity && !guard_approaching &&
         !approaching;
}

const Bullet* Playbook::find(std::string_view id) const {
  for (const auto& b : bullets) {
    if (b.id == id) {
      return &b;
    }
  }
  return nullptr;
}

double min_guard_distance(const Observation& obs) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& g : obs.guards) {
    best = std::min(best, (obs.bandit.position - g.position).norm());
  }
  return best;
}

double lady_distance(const Observation& obs) {
  return (obs.bandit.position - obs.lady.position).norm();
}

DerivedFeatures derive_features(const Observation& current, const Observation* previous) {
  DerivedFeatures f;
  f.time = current.t;
  f.guard_distance = min_guard_distance(current);
  f.target_distance = lady_distance(current);
  if (previous != nullptr) {
    const double dt = current.t - previous->t;
    if (!(dt > 0.0)) {
      throw InvalidInput("derive_features: previous observation must be earlier");
    }
    f.velocity = -(f.target_distance - lady_distance(*previous)) / dt;
    f.guard_approaching =
        min_guard_distance(*previous) - f.guard_distance > kGuardApproachDeadband;
  }
  f.approaching = f.velocity > 0.0;
  return f;
}

bool conditions_satisfied(const ConditionBlock& c, const DerivedFeatures& f) {
  if (c.time && !c.time->contains(f.time)) return false;
  if (c.guard_distance && !c.guard_distance->contains(f.guard_distance)) return false;
  if (c.target_distance && !c.target_distance->contains(f.target_distance)) return false;
  if (c.velocity && !c.velocity->contains(f.velocity)) return false;
  if (c.guard_approaching && *c.guard_approaching != f.guard_approaching) return false;
  if (c.approaching && *c.approaching != f.approaching) return false;
  return true;
}

bool ActivationLog::record(const std::string& bullet_id, double t) {
  return first_.emplace(bullet_id, t).second;
}

int ActivationLog::occurrences(const std::string& bullet_id) const {
  return first_.count(bullet_id) ? 1 : 0;
}

std::vector<const Bullet*> active_bullets(const Playbook& playbook, const DerivedFeatures& features,
                                          ActivationLog* log) {
  std::vector<const Bullet*> out;
  for (const auto& b : playbook.bullets) {
    if (conditions_satisfied(b.conditions, features)) {
      out.push_back(&b);
      if (log != nullptr) {
        log->record(b.id, features.time);
      }
    }
  }
  return out;
}

std::string section_id_prefix(std::string_view section) {
  std::string prefix(section);
  std::replace(prefix.begin(), prefix.end(), '_', '-');
  return prefix;
}

std::string make_bullet_id(std::string_view section, int counter) {
  char digits[16];
  std::snprintf(digits, sizeof digits, "%05d", counter);
  return section_id_prefix(section) + "-" + digits;
}

std::optional<int> bullet_counter(std::string_view id) {
  const auto dash = id.rfind('-');
  if (dash == std::string_view::npos || id.size() - dash - 1 != 5) {
    return std::nullopt;
  }
  int value = 0;
  for (char c : id.substr(dash + 1)) {
    if (c < '0' || c > '9') {
      return std::nullopt;
    }
    value = value * 10 + (c - '0');
  }
  return value;
}

int next_bullet_counter(const Playbook& playbook) {
  int top = 0;
  for (const auto& b : playbook.bullets) {
    top = std::max(top, bullet_counter(b.id).value_or(0));
  }
  return top + 1;
}

namespace {

void check_range(const std::optional<RangeBound>& r, const char* name) {
  if (!r) return;
  for (const auto& v : {r->min, r->max}) {
    if (v && !std::isfinite(*v)) {
      throw OpError(std::string("conditions.") + name + ": non-finite bound");
    }
  }
  if (r->min && r->max && *r->min > *r->max) {
    throw OpError(std::string("conditions.") + name + ": min > max");
  }
}

std::size_t distinct_count(const std::vector<std::string>& ids) {
  return std::set<std::string>(ids.begin(), ids.end()).size();
}

void append_unique(std::vector<std::string>& into, const std::vector<std::string>& from) {
  for (const auto& id : from) {
    if (std::find(into.begin(), into.end(), id) == into.end()) {
      into.push_back(id);
    }
  }
}

}  // namespace

void validate_bullet(const Bullet& b) {
  if (b.section.empty()) {
    throw OpError("bullet has empty section");
  }
  const std::string prefix = section_id_prefix(b.section) + "-";
  if (b.id.rfind(prefix, 0) != 0 || !bullet_counter(b.id) ||
      b.id.size() != prefix.size() + 5) {
    throw OpError("bullet id '" + b.id + "' does not match section '" + b.section + "'");
  }
  if (b.occurrence_count < 0) {
    throw OpError("bullet " + b.id + ": negative occurrence_count");
  }
  if (static_cast<std::size_t>(b.occurrence_count) < distinct_count(b.episode_history)) {
    throw OpError("bullet " + b.id + ": occurrence_count below recorded episodes");
  }
  check_range(b.conditions.time, "time");
  check_range(b.conditions.guard_distance, "guard_distance");
  check_range(b.conditions.target_distance, "target_distance");
  check_range(b.conditions.velocity, "velocity");
}

Playbook apply_ops(const Playbook& playbook, std::span<const CuratorOp> ops) {
  Playbook next = playbook;
  next.version = playbook.version + 1;
  next.parent_version = playbook.version;
  next.created_from_episodes.clear();

  auto position_of = [&next](const std::string& id) {
    return std::find_if(next.bullets.begin(), next.bullets.end(),
                        [&id](const Bullet& b) { return b.id == id; });
  };

  for (std::size_t i = 0; i < ops.size(); ++i) {
    const CuratorOp& op = ops[i];
    const std::string where = "op " + std::to_string(i) + ": ";
    switch (op.kind) {
      case CuratorOp::Kind::Add: {
        validate_bullet(op.bullet);
        if (position_of(op.bullet.id) != next.bullets.end()) {
          throw OpError(where + "ADD of existing id " + op.bullet.id);
        }
        next.bullets.push_back(op.bullet);
        append_unique(next.created_from_episodes, op.bullet.episode_history);
        break;
      }
      case CuratorOp::Kind::Update: {
        auto it = position_of(op.bullet.id);
        if (it == next.bullets.end()) {
          throw OpError(where + "UPDATE of unknown id " + op.bullet.id);
        }
        Bullet merged = op.bullet;
        merged.episode_history = it->episode_history;
        append_unique(merged.episode_history, op.bullet.episode_history);
        merged.occurrence_count = it->occurrence_count + op.bullet.occurrence_count;
        validate_bullet(merged);
        append_unique(next.created_from_episodes, op.bullet.episode_history);
        *it = std::move(merged);
        break;
      }
      case CuratorOp::Kind::Remove: {
        auto it = position_of(op.bullet_id);
        if (it == next.bullets.end()) {
          throw OpError(where + "REMOVE of unknown id " + op.bullet_id);
        }
        next.bullets.erase(it);
        break;
      }
    }
  }
  return next;
}

std::string to_string(BulletType type) {
  return type == BulletType::Constraint ? "constraint" : "rule";
}

}  // namespace guide
