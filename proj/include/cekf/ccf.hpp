#pragma once

// Cascaded complementary filter: gyro integration blended with an accel/mag
// attitude fix, with a PI loop on the fix error to absorb gyro bias.

#include <algorithm>
#include <cmath>

#include "cekf/dynamics.hpp"

namespace cekf {

// How the gyro reading drives the angle branch.
//   kEulerRates: body rates mapped to Z-Y-X Euler-angle rates at the current
//     estimate, the sequence the accel/mag fix uses.
//   kBodyRates: body rates added to the angles directly.
enum class GyroKinematics { kEulerRates, kBodyRates };

struct CcfGains {
  double alpha = 0.95;  // weight of the gyro branch in the final blend
  double kp = 1.0;      // 1/s
  double ki = 0.05;     // 1/s^2
  double integrator_limit = 1.0;  // rad/s, anti-windup clamp
  GyroKinematics kinematics = GyroKinematics::kEulerRates;

  // alpha in (0, 1], kp > 0, ki >= 0. alpha = 1 disables the blend.
  void validate() const;
};

struct CcfState {
  EulerAngles q_hat;
  Vec3 integrator = Vec3::Zero();
  EulerAngles q1;  // raw gyro integral, kept for diagnostics

  static CcfState at(const EulerAngles& q) {
    CcfState s;
    s.q_hat = q;
    s.q1 = q;
    return s;
  }
};

enum class AttitudeFixStatus { kOk, kLowAccelNorm, kSingularDenominator };

inline constexpr double kSingularTolerance = 1e-9;

// Maps an angle into (-pi, pi].
double wrap_angle(double x);

// Advances the gyro integral in place and returns it.
EulerAngles integrate_gyro(CcfState& state, const Vec3& gyr, double dt);

// Roll, pitch and yaw from gravity and the magnetic field seen in the body
// frame. Throws LowAccelNorm when |acc| < 0.1 g and SingularDenominator when
// the pitch denominator (or both yaw terms) vanish.
EulerAngles accel_mag_attitude(const Vec3& acc, const Vec3& mag, double g = 9.81);

struct CcfStepResult {
  CcfState state;
  EulerAngles output;
  AttitudeFixStatus fix = AttitudeFixStatus::kOk;  // not kOk means gyro-only step
};

CcfStepResult ccf_step(const CcfState& state, const CcfGains& gains, const Vec3& acc,
                       const Vec3& gyr, const Vec3& mag, double dt, double g = 9.81);

namespace kernel {

template <class T>
T wrap_angle(const T& x) {
  const double v = to_double(x);
  const double n = std::floor((kPi - v) / (2.0 * kPi));
  if (n == 0.0) return x;
  QuantityScope<T> scope(Quantity::kAngle);
  return x + T(2.0 * kPi * n);
}

template <class T>
struct AttitudeFix {
  BasicEulerAngles<T> q;
  AttitudeFixStatus status = AttitudeFixStatus::kOk;
};

template <class T>
AttitudeFix<T> accel_mag_attitude(const Vec3T<T>& acc, const Vec3T<T>& mag, double g) {
  using std::atan2;
  using std::cos;
  using std::sin;
  AttitudeFix<T> fix;
  {
    QuantityScope<T> scope(Quantity::kNormSquared);
    const T n2 = dot3(acc, acc);
    if (to_double(n2) < (0.1 * g) * (0.1 * g)) {
      fix.status = AttitudeFixStatus::kLowAccelNorm;
      return fix;
    }
  }
  T s_phi, c_phi;
  {
    QuantityScope<T> scope(Quantity::kAngle);
    fix.q.phi = atan2(acc(1), acc(2));
  }
  {
    QuantityScope<T> scope(Quantity::kTrig);
    s_phi = sin(fix.q.phi);
    c_phi = cos(fix.q.phi);
  }
  T den;
  {
    QuantityScope<T> scope(Quantity::kLinearAccel);
    den = acc(1) * s_phi + acc(2) * c_phi;
  }
  if (std::abs(to_double(den)) < kSingularTolerance) {
    fix.status = AttitudeFixStatus::kSingularDenominator;
    return fix;
  }
  {
    QuantityScope<T> scope(Quantity::kAngle);
    fix.q.theta = atan2(-acc(0), den);
  }
  T s_theta, c_theta, st_sf, st_cf;
  {
    QuantityScope<T> scope(Quantity::kTrig);
    s_theta = sin(fix.q.theta);
    c_theta = cos(fix.q.theta);
    st_sf = s_theta * s_phi;
    st_cf = s_theta * c_phi;
  }
  T num_psi, den_psi;
  {
    QuantityScope<T> scope(Quantity::kMagField);
    num_psi = mag(2) * s_phi - mag(1) * c_phi;
    den_psi = mag(0) * c_theta + mag(1) * st_sf + mag(2) * st_cf;
  }
  if (std::abs(to_double(num_psi)) < kSingularTolerance &&
      std::abs(to_double(den_psi)) < kSingularTolerance) {
    fix.status = AttitudeFixStatus::kSingularDenominator;
    return fix;
  }
  QuantityScope<T> scope(Quantity::kAngle);
  fix.q.psi = atan2(num_psi, den_psi);
  return fix;
}

template <class T>
struct CcfStateT {
  Vec3T<T> q_hat;
  Vec3T<T> integrator;
  Vec3T<T> q1;
};

template <class T>
struct CcfGainsT {
  T one_minus_alpha;
  T kp;
  T ki;
  double integrator_limit;
  GyroKinematics kinematics;
};

template <class T>
CcfGainsT<T> lift_gains(const CcfGains& g) {
  QuantityScope<T> scope(Quantity::kFilterGain);
  return {T(1.0 - g.alpha), T(g.kp), T(g.ki), g.integrator_limit, g.kinematics};
}

template <class T>
T clamp_abs(const T& x, double limit) {
  const double v = to_double(x);
  if (v > limit) return T(limit);
  if (v < -limit) return T(-limit);
  return x;
}

// Below this |cos(theta)| the Euler-rate map is skipped and body rates are used.
inline constexpr double kEulerRateMinCos = 1e-3;

// Z-Y-X Euler-angle rates from body rates at attitude q.
template <class T>
Vec3T<T> euler_rates(const Vec3T<T>& q, const Vec3T<T>& w) {
  using std::cos;
  using std::sin;
  T s_phi, c_phi, c_theta, t_theta;
  {
    QuantityScope<T> scope(Quantity::kTrig);
    s_phi = sin(q(0));
    c_phi = cos(q(0));
    c_theta = cos(q(1));
  }
  if (std::abs(to_double(c_theta)) < kEulerRateMinCos) return w;
  {
    QuantityScope<T> scope(Quantity::kTrig);
    t_theta = sin(q(1)) / c_theta;
  }
  QuantityScope<T> scope(Quantity::kAngularRate);
  const T yaw_part = w(1) * s_phi + w(2) * c_phi;
  Vec3T<T> out;
  out(0) = w(0) + yaw_part * t_theta;
  out(1) = w(1) * c_phi - w(2) * s_phi;
  out(2) = yaw_part / c_theta;
  return out;
}

template <class T>
struct CcfOutput {
  Vec3T<T> q;
  AttitudeFixStatus fix;
};

// One filter sample. `state` is advanced in place.
template <class T>
CcfOutput<T> ccf_step(CcfStateT<T>& state, const CcfGainsT<T>& gains, const Vec3T<T>& acc,
                      const Vec3T<T>& gyr, const Vec3T<T>& mag, const T& dt, double g) {
  {
    QuantityScope<T> scope(Quantity::kAngle);
    for (int i = 0; i < 3; ++i) state.q1(i) = state.q1(i) + gyr(i) * dt;
  }
  const Vec3T<T> rates =
      gains.kinematics == GyroKinematics::kEulerRates ? euler_rates(state.q_hat, gyr) : gyr;
  const AttitudeFix<T> fix = accel_mag_attitude(acc, mag, g);
  CcfOutput<T> out;
  out.fix = fix.status;
  if (fix.status != AttitudeFixStatus::kOk) {
    QuantityScope<T> scope(Quantity::kAngle);
    for (int i = 0; i < 3; ++i) {
      state.q_hat(i) = wrap_angle(T(state.q_hat(i) + rates(i) * dt));
      store(state.q_hat(i), quantity_id(Quantity::kAngle));
    }
    out.q = state.q_hat;
    return out;
  }
  const Vec3T<T> q2(fix.q.phi, fix.q.theta, fix.q.psi);
  for (int i = 0; i < 3; ++i) {
    T err;
    {
      QuantityScope<T> scope(Quantity::kAngle);
      err = wrap_angle(T(q2(i) - state.q_hat(i)));
    }
    T rate;
    {
      QuantityScope<T> scope(Quantity::kAngularRate);
      const T step = gains.ki * err * dt;
      state.integrator(i) = clamp_abs(T(state.integrator(i) + step), gains.integrator_limit);
      store(state.integrator(i), quantity_id(Quantity::kAngularRate));
      rate = rates(i) + gains.kp * err + state.integrator(i);
    }
    QuantityScope<T> scope(Quantity::kAngle);
    state.q_hat(i) = wrap_angle(T(state.q_hat(i) + rate * dt));
    store(state.q_hat(i), quantity_id(Quantity::kAngle));
    const T blend_err = wrap_angle(T(q2(i) - state.q_hat(i)));
    out.q(i) = wrap_angle(T(state.q_hat(i) + gains.one_minus_alpha * blend_err));
  }
  return out;
}

}  // namespace kernel
}  // namespace cekf
