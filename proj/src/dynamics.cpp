#include "guide/dynamics.hpp"

#include <cmath>

#include "guide/error.hpp"

namespace guide {

namespace {

// 1 - cos(x) without cancellation.
double one_minus_cos(double x) {
  const double h = std::sin(0.5 * x);
  return 2.0 * h * h;
}

// x - sin(x); series below 0.5 rad where the direct form cancels.
double x_minus_sin(double x) {
  if (std::abs(x) < 0.5) {
    const double x2 = x * x;
    double term = x * x2 / 6.0;
    double sum = 0.0;
    for (int k = 1; k < 12; ++k) {
      sum += term;
      term *= -x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
    }
    return sum;
  }
  return x - std::sin(x);
}

}  // namespace

Vec6 SpacecraftState::stacked() const {
  Vec6 x;
  x << position, velocity;
  return x;
}

bool all_finite(const Vec3& v) { return v.allFinite(); }

bool is_valid(const SpacecraftState& s) {
  return all_finite(s.position) && all_finite(s.velocity) && std::isfinite(s.total_mass) &&
         std::isfinite(s.prop_mass) && s.total_mass > 0.0 && s.prop_mass >= 0.0 &&
         s.prop_mass <= s.total_mass;
}

Mat6 cw_system_matrix(double n) {
  Mat6 a = Mat6::Zero();
  a(0, 3) = 1.0;
  a(1, 4) = 1.0;
  a(2, 5) = 1.0;
  a(3, 0) = 3.0 * n * n;
  a(3, 4) = 2.0 * n;
  a(4, 3) = -2.0 * n;
  a(5, 2) = -n * n;
  return a;
}

Mat63 cw_input_matrix() {
  Mat63 b = Mat63::Zero();
  b.bottomRows<3>().setIdentity();
  return b;
}

Mat6 cw_transition(double n, double t) {
  const double nt = n * t;
  const double c = std::cos(nt);
  const double s = std::sin(nt);
  const double omc = one_minus_cos(nt);

  Mat6 phi = Mat6::Zero();
  phi(0, 0) = 1.0 + 3.0 * omc;
  phi(0, 3) = s / n;
  phi(0, 4) = 2.0 * omc / n;

  phi(1, 0) = -6.0 * x_minus_sin(nt);
  phi(1, 1) = 1.0;
  phi(1, 3) = -2.0 * omc / n;
  phi(1, 4) = (4.0 * s - 3.0 * nt) / n;

  phi(2, 2) = c;
  phi(2, 5) = s / n;

  phi(3, 0) = 3.0 * n * s;
  phi(3, 3) = c;
  phi(3, 4) = 2.0 * s;

  phi(4, 0) = -6.0 * n * omc;
  phi(4, 3) = -2.0 * s;
  phi(4, 4) = 4.0 * c - 3.0;

  phi(5, 2) = -n * s;
  phi(5, 5) = c;
  return phi;
}

Mat63 cw_forcing(double n, double t) {
  const double nt = n * t;
  const double s = std::sin(nt);
  const double omc = one_minus_cos(nt);
  const double xms = x_minus_sin(nt);
  const double n2 = n * n;

  // Velocity columns of Phi integrated over [0, t].
  Mat63 g = Mat63::Zero();
  g(0, 0) = omc / n2;
  g(0, 1) = 2.0 * xms / n2;
  g(1, 0) = -2.0 * xms / n2;
  g(1, 1) = 4.0 * omc / n2 - 1.5 * t * t;
  g(2, 2) = omc / n2;

  g(3, 0) = s / n;
  g(3, 1) = 2.0 * omc / n;
  g(4, 0) = -2.0 * omc / n;
  g(4, 1) = 4.0 * s / n - 3.0 * t;
  g(5, 2) = s / n;
  return g;
}

SpacecraftState propagate(const SpacecraftState& state, const Vec3& accel, double dt,
                          double mean_motion, double exhaust_velocity) {
  if (!is_valid(state) || !all_finite(accel) || !std::isfinite(dt) || !std::isfinite(mean_motion)) {
    throw InvalidInput("propagate: non-finite or invalid input");
  }
  if (dt <= 0.0 || mean_motion <= 0.0 || exhaust_velocity <= 0.0) {
    throw InvalidInput("propagate: dt, mean motion and exhaust velocity must be positive");
  }

  Vec3 applied = accel;
  double burned = state.total_mass * applied.norm() * dt / exhaust_velocity;
  if (burned > state.prop_mass) {
    const double scale = burned > 0.0 ? state.prop_mass / burned : 0.0;
    applied *= scale;
    burned = state.prop_mass;
  }

  const Vec6 x = cw_transition(mean_motion, dt) * state.stacked() +
                 cw_forcing(mean_motion, dt) * applied;

  SpacecraftState out = state;
  out.position = x.head<3>();
  out.velocity = x.tail<3>();
  out.prop_mass = state.prop_mass - burned;
  out.total_mass = state.total_mass - burned;
  return out;
}

Vec3 cw_natural_acceleration(const SpacecraftState& state, double n) {
  const Vec6 xdot = cw_system_matrix(n) * state.stacked();
  return xdot.tail<3>();
}

Vec3 saturate(const Vec3& v, double limit) {
  const double norm = v.norm();
  if (norm <= limit || norm == 0.0) {
    return v;
  }
  return v * (limit / norm);
}

}  // namespace guide
