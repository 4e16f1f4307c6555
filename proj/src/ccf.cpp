#include "cekf/ccf.hpp"

namespace cekf {

void CcfGains::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("ccf alpha must lie in (0, 1]");
  if (!(kp > 0.0) || !std::isfinite(kp)) throw ConfigError("ccf kp must be positive");
  if (!(ki >= 0.0) || !std::isfinite(ki)) throw ConfigError("ccf ki must be non-negative");
  if (!(integrator_limit > 0.0)) throw ConfigError("ccf integrator limit must be positive");
}

double wrap_angle(double x) { return kernel::wrap_angle(x); }

EulerAngles integrate_gyro(CcfState& state, const Vec3& gyr, double dt) {
  state.q1.phi += gyr(0) * dt;
  state.q1.theta += gyr(1) * dt;
  state.q1.psi += gyr(2) * dt;
  return state.q1;
}

EulerAngles accel_mag_attitude(const Vec3& acc, const Vec3& mag, double g) {
  const auto fix = kernel::accel_mag_attitude<double>(acc, mag, g);
  switch (fix.status) {
    case AttitudeFixStatus::kLowAccelNorm:
      throw LowAccelNorm("accelerometer norm below 0.1 g");
    case AttitudeFixStatus::kSingularDenominator:
      throw SingularDenominator("attitude fix denominator is zero");
    case AttitudeFixStatus::kOk:
      break;
  }
  return fix.q;
}

CcfStepResult ccf_step(const CcfState& state, const CcfGains& gains, const Vec3& acc,
                       const Vec3& gyr, const Vec3& mag, double dt, double g) {
  if (!(dt > 0)) throw ConfigError("time step must be positive");
  kernel::CcfStateT<double> k{Vec3(state.q_hat.phi, state.q_hat.theta, state.q_hat.psi),
                              state.integrator,
                              Vec3(state.q1.phi, state.q1.theta, state.q1.psi)};
  const auto out = kernel::ccf_step(k, kernel::lift_gains<double>(gains), acc, gyr, mag, dt, g);
  CcfStepResult r;
  r.state.q_hat = {k.q_hat(0), k.q_hat(1), k.q_hat(2)};
  r.state.integrator = k.integrator;
  r.state.q1 = {k.q1(0), k.q1(1), k.q1(2)};
  r.output = {out.q(0), out.q(1), out.q(2)};
  r.fix = out.fix;
  return r;
}

}  // namespace cekf
