#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "guide/dynamics.hpp"
#include "guide/rng.hpp"

namespace guide {

enum class ScenarioId { LG4, LG5, LG6, LG7, Custom };

std::string to_string(ScenarioId id);
// Accepts "lg4".."lg7", "custom" in any case.
std::optional<ScenarioId> parse_scenario_id(std::string_view name);

enum class GuardMode { Pursuit, Defense, Stochastic };

struct GuardPolicy {
  GuardMode mode = GuardMode::Pursuit;
  // Pursuit: saturated PD gains on Bandit-relative position / velocity.
  double kp = 2e-3;
  double kd = 6e-2;
  // Defense: PD gains tracking the blocking point position and velocity.
  double defense_kp = 1e-2;
  double defense_kd = 0.2;
  // Blocking point sits max(standoff_min, standoff_fraction * |B - L|) from the
  // Lady along the Lady -> Bandit direction, even when the Bandit is closer.
  double standoff_min = 150.0;
  double standoff_fraction = 0.25;
  // When set, the blocking point never lies beyond the Bandit.
  bool clamp_to_segment = false;
  // Stochastic mode: per-epoch probability of pursuing.
  double pursuit_probability = 0.5;
};

struct ScenarioConfig {
  ScenarioId id = ScenarioId::LG4;
  double mean_motion = kDefaultMeanMotion;
  Observation initial;
  std::vector<GuardPolicy> guard_policies;
  double guard_max_accel = 0.18;
  double bandit_max_accel = 0.3;
  double episode_duration = 240.0;
  double control_period = 1.0;
  double exhaust_velocity = kDefaultExhaustVelocity;
  // A guard inside this range ends the episode; 0 disables capture.
  double capture_radius = 0.0;
  std::uint64_t rng_seed = 0;

  std::size_t steps() const;
  // Throws InvalidInput when an invariant is broken.
  void validate() const;
};

// Nominal geometry with a seeded perturbation of the initial state.
ScenarioConfig make_scenario(ScenarioId id, std::uint64_t seed);

// Commanded guard acceleration, |a| <= max_accel. Stochastic policies draw one
// Bernoulli per call, so call once per decision epoch.
Vec3 guard_action(const GuardPolicy& policy, const Observation& obs, std::size_t guard_index,
                  Rng& rng, double max_accel);

// Deterministic components of the two guard regimes.
Vec3 pursuit_law(const GuardPolicy& policy, const Observation& obs, std::size_t guard_index,
                 double max_accel);
struct BlockingPoint {
  Vec3 position;
  Vec3 velocity;  // time derivative of position along the current relative motion
};
BlockingPoint blocking_point(const GuardPolicy& policy, const Observation& obs);
Vec3 defense_law(const GuardPolicy& policy, const Observation& obs, std::size_t guard_index,
                 double max_accel);

struct TrajectorySample {
  Observation obs;
  ThrustCommand command;  // command actually applied during the step ending at obs.t
};

using Trajectory = std::vector<TrajectorySample>;

class Simulation {
 public:
  explicit Simulation(ScenarioConfig config);

  struct StepResult {
    Observation obs;
    bool done = false;
    bool rejected = false;  // command failed validation; Bandit coasted
    bool captured = false;
  };

  StepResult step(const ThrustCommand& command);

  const Observation& observation() const { return obs_; }
  bool done() const { return done_; }
  bool captured() const { return captured_; }
  double remaining_time() const;
  const ScenarioConfig& config() const { return config_; }
  const Trajectory& trajectory() const { return trajectory_; }

  // Empty string when valid, reason otherwise.
  std::string check_command(const ThrustCommand& command) const;

 private:
  ScenarioConfig config_;
  Rng rng_;
  Observation obs_;
  std::size_t step_index_ = 0;
  bool done_ = false;
  bool captured_ = false;
  Trajectory trajectory_;
};

}  // namespace guide
