#include "guide/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "guide/error.hpp"

namespace guide {

namespace {

constexpr double kTimeEps = 1e-9;

SpacecraftState craft(const Vec3& position, double total_mass, double prop_mass) {
  SpacecraftState s;
  s.position = position;
  s.total_mass = total_mass;
  s.prop_mass = prop_mass;
  return s;
}

Vec3 jitter(Rng& rng, double half_width) {
  return {rng.uniform(-half_width, half_width), rng.uniform(-half_width, half_width),
          rng.uniform(-half_width, half_width)};
}

}  // namespace

std::string to_string(ScenarioId id) {
  switch (id) {
    case ScenarioId::LG4: return "lg4";
    case ScenarioId::LG5: return "lg5";
    case ScenarioId::LG6: return "lg6";
    case ScenarioId::LG7: return "lg7";
    case ScenarioId::Custom: return "custom";
  }
  return "custom";
}

std::optional<ScenarioId> parse_scenario_id(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto id : {ScenarioId::LG4, ScenarioId::LG5, ScenarioId::LG6, ScenarioId::LG7,
                  ScenarioId::Custom}) {
    if (lower == to_string(id)) {
      return id;
    }
  }
  return std::nullopt;
}

std::size_t ScenarioConfig::steps() const {
  return static_cast<std::size_t>(std::llround(episode_duration / control_period));
}

void ScenarioConfig::validate() const {
  if (!(mean_motion > 0.0) || !std::isfinite(mean_motion)) {
    throw InvalidInput("scenario: mean motion must be positive");
  }
  if (!(control_period > 0.0) || !(episode_duration > 0.0)) {
    throw InvalidInput("scenario: control period and episode duration must be positive");
  }
  const double ratio = episode_duration / control_period;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
    throw InvalidInput("scenario: control period must divide episode duration");
  }
  if (initial.guards.empty() || initial.guards.size() != guard_policies.size()) {
    throw InvalidInput("scenario: need one policy per guard and at least one guard");
  }
  const std::size_t expected_guards = id == ScenarioId::LG7 ? 2 : 1;
  if (id != ScenarioId::Custom && initial.guards.size() != expected_guards) {
    throw InvalidInput("scenario: " + to_string(id) + " expects " +
                       std::to_string(expected_guards) + " guard(s)");
  }
  if (!(guard_max_accel >= 0.0) || !(bandit_max_accel >= 0.0) || !(exhaust_velocity > 0.0) ||
      !(capture_radius >= 0.0)) {
    throw InvalidInput("scenario: accelerations, exhaust velocity and capture radius out of range");
  }
  if (!is_valid(initial.bandit) || !is_valid(initial.lady)) {
    throw InvalidInput("scenario: invalid initial Bandit or Lady state");
  }
  for (const auto& g : initial.guards) {
    if (!is_valid(g)) {
      throw InvalidInput("scenario: invalid initial guard state");
    }
  }
}

ScenarioConfig make_scenario(ScenarioId id, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.id = id;
  cfg.rng_seed = seed;

  // Initial-condition draws use their own stream so guard switching draws
  // (stream 0, inside Simulation) stay independent of geometry.
  Rng rng = Rng::derive(seed, 1, 0);

  cfg.initial.t = 0.0;
  cfg.initial.lady = craft(Vec3::Zero(), 1000.0, 200.0);
  cfg.initial.bandit = craft(Vec3(-500.0, 0.0, 0.0) + jitter(rng, 25.0), 1000.0, 200.0);
  cfg.initial.bandit.velocity = jitter(rng, 0.2);

  GuardPolicy pursuit;
  pursuit.mode = GuardMode::Pursuit;
  GuardPolicy defense;
  defense.mode = GuardMode::Defense;

  switch (id) {
    case ScenarioId::LG4:
    case ScenarioId::Custom:
      cfg.guard_policies = {pursuit};
      cfg.initial.guards = {craft(Vec3(-260.0, 180.0, 0.0) + jitter(rng, 20.0), 1000.0, 500.0)};
      break;
    case ScenarioId::LG5: {
      GuardPolicy stochastic = pursuit;
      stochastic.mode = GuardMode::Stochastic;
      cfg.guard_policies = {stochastic};
      cfg.initial.guards = {craft(Vec3(-260.0, 180.0, 0.0) + jitter(rng, 20.0), 1000.0, 500.0)};
      cfg.guard_max_accel *= 1.5;
      break;
    }
    case ScenarioId::LG6:
      cfg.guard_policies = {defense};
      cfg.initial.guards = {craft(Vec3(-200.0, 150.0, 0.0) + jitter(rng, 20.0), 1000.0, 500.0)};
      break;
    case ScenarioId::LG7: {
      GuardPolicy outer = defense;
      outer.standoff_min = 250.0;
      outer.standoff_fraction = 0.45;
      cfg.guard_policies = {defense, outer};
      cfg.initial.guards = {craft(Vec3(-200.0, 190.0, 0.0) + jitter(rng, 20.0), 1000.0, 500.0),
                            craft(Vec3(-260.0, -190.0, 0.0) + jitter(rng, 20.0), 1000.0, 500.0)};
      break;
    }
  }
  return cfg;
}

Vec3 pursuit_law(const GuardPolicy& policy, const Observation& obs, std::size_t guard_index,
                 double max_accel) {
  const auto& g = obs.guards.at(guard_index);
  const Vec3 a = policy.kp * (obs.bandit.position - g.position) +
                 policy.kd * (obs.bandit.velocity - g.velocity);
  return saturate(a, max_accel);
}

BlockingPoint blocking_point(const GuardPolicy& policy, const Observation& obs) {
  const Vec3 offset = obs.bandit.position - obs.lady.position;
  const Vec3 offset_rate = obs.bandit.velocity - obs.lady.velocity;
  const double range = offset.norm();
  BlockingPoint bp;
  if (!(range > 0.0)) {
    bp.position = obs.lady.position;
    bp.velocity = obs.bandit.velocity;
    return bp;
  }
  const Vec3 dir = offset / range;
  const double range_rate = dir.dot(offset_rate);
  const Vec3 dir_rate = (offset_rate - range_rate * dir) / range;
  double standoff = policy.standoff_fraction * range;
  double standoff_rate = policy.standoff_fraction * range_rate;
  if (standoff < policy.standoff_min) {
    standoff = policy.standoff_min;
    standoff_rate = 0.0;
  }
  if (policy.clamp_to_segment && standoff > range) {
    standoff = range;
    standoff_rate = range_rate;
  }
  bp.position = obs.lady.position + standoff * dir;
  bp.velocity = obs.lady.velocity + standoff_rate * dir + standoff * dir_rate;
  return bp;
}

Vec3 defense_law(const GuardPolicy& policy, const Observation& obs, std::size_t guard_index,
                 double max_accel) {
  const auto& g = obs.guards.at(guard_index);
  const BlockingPoint bp = blocking_point(policy, obs);
  const Vec3 a = policy.defense_kp * (bp.position - g.position) +
                 policy.defense_kd * (bp.velocity - g.velocity);
  return saturate(a, max_accel);
}

Vec3 guard_action(const GuardPolicy& policy, const Observation& obs, std::size_t guard_index,
                  Rng& rng, double max_accel) {
  if (guard_index >= obs.guards.size()) {
    throw InvalidInput("guard_action: guard index out of range");
  }
  switch (policy.mode) {
    case GuardMode::Pursuit:
      return pursuit_law(policy, obs, guard_index, max_accel);
    case GuardMode::Defense:
      return defense_law(policy, obs, guard_index, max_accel);
    case GuardMode::Stochastic:
      return rng.bernoulli(policy.pursuit_probability)
                 ? pursuit_law(policy, obs, guard_index, max_accel)
                 : defense_law(policy, obs, guard_index, max_accel);
  }
  return Vec3::Zero();
}

Simulation::Simulation(ScenarioConfig config)
    : config_(std::move(config)), rng_(Rng::derive(config_.rng_seed, 0, 0)), obs_(config_.initial) {
  config_.validate();
  trajectory_.reserve(config_.steps());
}

double Simulation::remaining_time() const {
  return config_.episode_duration - static_cast<double>(step_index_) * config_.control_period;
}

std::string Simulation::check_command(const ThrustCommand& command) const {
  if (!all_finite(command.throttle) || !std::isfinite(command.duration)) {
    return "non-finite command";
  }
  if (command.throttle.cwiseAbs().maxCoeff() > 1.0) {
    return "throttle component outside [-1, 1]";
  }
  if (command.duration <= 0.0) {
    return "duration must be positive";
  }
  if (command.duration > remaining_time() + kTimeEps) {
    return "duration exceeds remaining episode time";
  }
  return {};
}

Simulation::StepResult Simulation::step(const ThrustCommand& command) {
  if (done_) {
    throw Error("step: episode already finished");
  }
  const double period = config_.control_period;
  const double n = config_.mean_motion;

  StepResult result;
  ThrustCommand applied = command;
  if (!check_command(command).empty()) {
    applied = ThrustCommand::zero(period);
    result.rejected = true;
  }

  // Guards decide on the pre-step observation.
  std::vector<Vec3> guard_accel;
  guard_accel.reserve(obs_.guards.size());
  for (std::size_t i = 0; i < obs_.guards.size(); ++i) {
    guard_accel.push_back(
        guard_action(config_.guard_policies[i], obs_, i, rng_, config_.guard_max_accel));
  }

  const double burn = std::min(applied.duration, period);
  const Vec3 bandit_accel =
      saturate(applied.throttle * config_.bandit_max_accel, config_.bandit_max_accel);
  SpacecraftState bandit =
      propagate(obs_.bandit, bandit_accel, burn, n, config_.exhaust_velocity);
  if (period - burn > kTimeEps) {
    bandit = propagate(bandit, Vec3::Zero(), period - burn, n, config_.exhaust_velocity);
  }

  Observation next = obs_;
  next.bandit = bandit;
  next.lady = propagate(obs_.lady, Vec3::Zero(), period, n, config_.exhaust_velocity);
  for (std::size_t i = 0; i < obs_.guards.size(); ++i) {
    next.guards[i] = propagate(obs_.guards[i], guard_accel[i], period, n, config_.exhaust_velocity);
  }
  ++step_index_;
  next.t = static_cast<double>(step_index_) * period;
  obs_ = next;

  if (config_.capture_radius > 0.0) {
    for (const auto& g : obs_.guards) {
      if ((g.position - obs_.bandit.position).norm() <= config_.capture_radius) {
        captured_ = true;
      }
    }
  }
  done_ = captured_ || step_index_ >= config_.steps();

  trajectory_.push_back({obs_, applied});
  result.obs = obs_;
  result.done = done_;
  result.captured = captured_;
  return result;
}

}  // namespace guide
