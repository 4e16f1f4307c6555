#include "cekf/ekf.hpp"

#include <cmath>

namespace cekf {

namespace {

const Vec10 kListedProcessNoise = (Vec10() << 0.1, 0.1, 0.1, 1, 1, 1, 0.0025, 1, 1, 1).finished();

}  // namespace

EkfConfig::EkfConfig()
    : Q(tuned_process_noise(QLayout::kAltitudeBeforeVelocity)),
      R(0.07, 0.07, 0.07, 0.002),
      H(output_selector()) {}

Vec10 EkfConfig::map_process_noise(const Vec10& listed, QLayout layout) {
  if (layout == QLayout::kAsPrinted) return listed;
  Vec10 q;
  q.head<6>() = listed.head<6>();
  q(idx::kZeta) = listed(6);
  q.segment<3>(idx::kVel) = listed.segment<3>(7);
  return q;
}

Vec10 EkfConfig::tuned_process_noise(QLayout layout) {
  return map_process_noise(kListedProcessNoise, layout);
}

void EkfConfig::validate() const {
  if (!(Q.array() > 0.0).all() || !Q.allFinite()) throw ConfigError("Q entries must be positive");
  if (!(R.array() > 0.0).all() || !R.allFinite()) throw ConfigError("R entries must be positive");
  if (H != output_selector()) throw ConfigError("H must select (phi, theta, psi, zeta)");
}

EkfState EkfState::initial(const StateVector& s0, const EkfConfig& cfg) {
  EkfState e;
  e.s = s0;
  e.P = Mat10::Identity();
  for (int a = 0; a < kMeasDim; ++a) e.P(kMeasuredStates[a], kMeasuredStates[a]) = cfg.R(a);
  return e;
}

EkfState predict(const EkfState& e, const ControlInput& u, double dt, const EkfConfig& cfg,
                 const VehicleParams& p, const ModelOptions& opt) {
  if (!(dt > 0)) throw ConfigError("time step must be positive");
  const auto m = kernel::lift_model<double>(p, opt);
  const auto c = kernel::lift_control<double>(u);
  const Vec10 x = e.s.to_array();
  const auto t = kernel::trig_of(x(0), x(1), x(2));
  const Mat3 r = kernel::rotation_xyz(t);
  Mat10 J;
  if (cfg.jacobian == JacobianMethod::kNumeric) {
    kernel::check_gimbal(x(idx::kTheta), m.theta_limit);
    J = kernel::jacobian_numeric(x, c, dt, m);
  } else {
    J = kernel::jacobian_analytic(x, c, dt, m, t, r);
  }
  EkfState out;
  out.s = StateVector::from_array(kernel::state_transition(x, c, dt, m, t, r));
  out.P = kernel::propagate_covariance(e.P, J, cfg.Q);
  return out;
}

GainMatrix kalman_gain(const Mat10& P_hat, const EkfConfig& cfg, bool altitude_valid) {
  GainMatrix K;
  if (kernel::kalman_gain<double>(P_hat, cfg.R, altitude_valid, K) != kernel::GainStatus::kOk) {
    throw NotPositiveDefinite("innovation covariance is not positive definite");
  }
  return K;
}

Vec4 measurement_from_sensors(const EulerAngles& q_ccf, double tof) {
  if (!(tof >= 0.0 && tof <= kTofMaxRange)) {
    throw TofOutOfRange("range " + std::to_string(tof) + " m outside [0, 0.2] m");
  }
  Vec4 z;
  kernel::measurement<double>(Vec3(q_ccf.phi, q_ccf.theta, q_ccf.psi), tof, true, z);
  return z;
}

EkfState update(const EkfState& e_pred, const GainMatrix& K, const Vec4& z,
                const EkfConfig& /*cfg*/, bool altitude_valid) {
  Vec10 x = e_pred.s.to_array();
  Mat10 P = e_pred.P;
  Vec4 innovation;
  kernel::update<double>(x, P, K, z, altitude_valid, innovation);
  return {StateVector::from_array(x), P};
}

CekfStepResult cekf_step(const EkfState& e, const CcfState& ccf, const MeasurementVector& rho,
                         const ControlInput& u, double dt, const CekfConfig& cfg) {
  CekfStepResult r;
  const CcfStepResult c = ccf_step(ccf, cfg.gains, rho.acc, rho.gyr, rho.mag, dt, cfg.vehicle.g);
  r.ccf = c.state;
  r.fix = c.fix;
  const EkfState pred = predict(e, u, dt, cfg.ekf, cfg.vehicle, cfg.model);
  Vec4 z;
  r.altitude_valid = kernel::measurement<double>(
      Vec3(c.output.phi, c.output.theta, c.output.psi), rho.tof, rho.tof_valid, z);
  GainMatrix K;
  if (kernel::kalman_gain<double>(pred.P, cfg.ekf.R, r.altitude_valid, K) !=
      kernel::GainStatus::kOk) {
    if (cfg.ekf.on_factor_failure == FactorFailure::kThrow) {
      throw NotPositiveDefinite("innovation covariance is not positive definite");
    }
    r.ekf = pred;
    r.update_skipped = true;
  } else {
    r.ekf = update(pred, K, z, cfg.ekf, r.altitude_valid);
  }
  r.output = {r.ekf.s.q, r.ekf.s.zeta};
  return r;
}

}  // namespace cekf
