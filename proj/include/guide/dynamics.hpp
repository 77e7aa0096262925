#pragma once

// Hill-frame relative motion. Axes: x radial, y along-track, z cross-track.
// The chief orbit is circular with mean motion n; the Lady sits at the origin
// of the default scenarios but nothing here assumes that.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace guide {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

// 400 km circular LEO.
inline constexpr double kDefaultMeanMotion = 1.1313e-3;
// Effective exhaust velocity (Isp ~ 306 s).
inline constexpr double kDefaultExhaustVelocity = 3000.0;

struct SpacecraftState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double total_mass = 1000.0;
  double prop_mass = 0.0;

  Vec6 stacked() const;
  bool operator==(const SpacecraftState&) const = default;
};

struct Observation {
  double t = 0.0;
  SpacecraftState bandit;
  SpacecraftState lady;
  std::vector<SpacecraftState> guards;

  bool operator==(const Observation&) const = default;
};

// Throttle axes coincide with Hill axes: x forward/back, y right/left, z up/down.
struct ThrustCommand {
  Vec3 throttle = Vec3::Zero();
  double duration = 1.0;

  static ThrustCommand zero(double duration) { return {Vec3::Zero(), duration}; }
  bool operator==(const ThrustCommand&) const = default;
};

bool all_finite(const Vec3& v);
bool is_valid(const SpacecraftState& s);

// Continuous CW system matrices x' = A x + B u.
Mat6 cw_system_matrix(double mean_motion);
Mat63 cw_input_matrix();

// Closed-form transition Phi(t) and forcing response Gamma(t) = int_0^t Phi(s) B ds,
// so that x(t) = Phi x0 + Gamma a for constant acceleration a.
Mat6 cw_transition(double mean_motion, double t);
Mat63 cw_forcing(double mean_motion, double t);

// Advance `state` by dt under CW dynamics with constant applied acceleration.
// Propellant drops by total_mass * |accel| * dt / exhaust_velocity; a burn the
// remaining propellant cannot pay for is scaled down, an empty tank coasts.
// Throws InvalidInput on non-finite input, dt <= 0 or mean_motion <= 0.
SpacecraftState propagate(const SpacecraftState& state, const Vec3& accel, double dt,
                          double mean_motion,
                          double exhaust_velocity = kDefaultExhaustVelocity);

// Natural (unforced) CW acceleration at a state.
Vec3 cw_natural_acceleration(const SpacecraftState& state, double mean_motion);

// Scale v so that |v| <= limit.
Vec3 saturate(const Vec3& v, double limit);

}  // namespace guide
