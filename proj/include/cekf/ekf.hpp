#pragma once

// Extended Kalman filter over the 10-state model and the full CEKF step
// (complementary-filter attitude plus tilt-corrected range into the EKF).

#include <Eigen/Core>
#include <array>
#include <type_traits>

#include "cekf/ccf.hpp"
#include "cekf/dynamics.hpp"

namespace cekf {

inline constexpr int kMeasDim = 4;
inline constexpr double kTofMaxRange = 0.2;  // m
inline constexpr std::array<int, kMeasDim> kMeasuredStates = {idx::kPhi, idx::kTheta, idx::kPsi,
                                                              idx::kZeta};

using Vec4 = Eigen::Matrix<double, kMeasDim, 1>;
using Vec10 = StateArray<double>;
using Mat10 = StateMatrix<double>;
using GainMatrix = Eigen::Matrix<double, kStateDim, kMeasDim>;
using OutputSelector = Eigen::Matrix<double, kMeasDim, kStateDim>;

// Where the tuned process-noise list puts its seventh entry (0.0025).
//   kAltitudeBeforeVelocity: list order is [q, omega, zeta, v]; 0.0025 goes to zeta.
//   kAsPrinted: list order is the state order; 0.0025 goes to v_x.
enum class QLayout { kAltitudeBeforeVelocity, kAsPrinted };

// What to do when the innovation covariance fails to factor.
enum class FactorFailure { kThrow, kSkipUpdate };

struct EkfConfig {
  Vec10 Q;
  Vec4 R;
  OutputSelector H;
  JacobianMethod jacobian = JacobianMethod::kNumeric;
  FactorFailure on_factor_failure = FactorFailure::kThrow;

  EkfConfig();
  static Vec10 tuned_process_noise(QLayout layout);
  static Vec10 map_process_noise(const Vec10& listed, QLayout layout);

  void validate() const;
};

struct EkfState {
  StateVector s;
  Mat10 P = Mat10::Identity();

  // P0 = diag(R) on the measured states and 1 elsewhere.
  static EkfState initial(const StateVector& s0, const EkfConfig& cfg);
};

struct MeasurementVector {
  Vec3 acc = Vec3::Zero();  // m/s^2, body
  Vec3 gyr = Vec3::Zero();  // rad/s, body
  Vec3 mag = Vec3::Zero();  // uT, body
  double tof = 0.0;         // m, along body z
  bool tof_valid = true;
};

// State advanced through the model; P' = J P J^T + Q.
EkfState predict(const EkfState& e, const ControlInput& u, double dt, const EkfConfig& cfg,
                 const VehicleParams& p, const ModelOptions& opt = {});

// K = P H^T (H P H^T + R)^-1 through a Cholesky solve. With altitude_valid
// false the range row is dropped and column 3 of K is zero. Throws
// NotPositiveDefinite when the factorization fails.
GainMatrix kalman_gain(const Mat10& P_hat, const EkfConfig& cfg, bool altitude_valid = true);

// z = [phi, theta, psi, tof cos(phi) cos(theta)]. Throws TofOutOfRange for
// ranges outside [0, 0.2] m.
Vec4 measurement_from_sensors(const EulerAngles& q_ccf, double tof);

// s = s_hat + K (z - H s_hat) with wrapped angle innovations; P = P_hat - K H P_hat.
EkfState update(const EkfState& e_pred, const GainMatrix& K, const Vec4& z, const EkfConfig& cfg,
                bool altitude_valid = true);

struct CekfOutput {
  EulerAngles q;
  double zeta = 0.0;
};

struct CekfStepResult {
  EkfState ekf;
  CcfState ccf;
  CekfOutput output;
  AttitudeFixStatus fix = AttitudeFixStatus::kOk;
  bool altitude_valid = true;
  bool update_skipped = false;
};

struct CekfConfig {
  EkfConfig ekf;
  CcfGains gains;
  VehicleParams vehicle;
  ModelOptions model;
};

CekfStepResult cekf_step(const EkfState& e, const CcfState& ccf, const MeasurementVector& rho,
                         const ControlInput& u, double dt, const CekfConfig& cfg);

namespace kernel {

template <class T>
QuantityId state_quantity(int i) {
  const int g = state_group(i);
  return quantity_id(g == 0   ? Quantity::kAngle
                     : g == 1 ? Quantity::kAngularRate
                     : g == 2 ? Quantity::kVelocity
                              : Quantity::kAltitude);
}

template <class T>
void store_state(StateArray<T>& s) {
  for (int i = 0; i < kStateDim; ++i) store(s(i), state_quantity<T>(i));
}

template <class T>
void store_covariance(StateMatrix<T>& P) {
  for (int i = 0; i < kStateDim; ++i)
    for (int j = 0; j < kStateDim; ++j) store(P(i, j), element_id(Family::kCovariance, i, j));
}

// Sum of the terms J(i,k)*X(k,...) where the structural pattern of J is
// non-zero; unit entries skip the multiply.
template <class T, class Term>
T sparse_sum(int row, Term&& term) {
  T acc{};
  bool first = true;
  for (int k = 0; k < kStateDim; ++k) {
    const int pat = jacobian_pattern(row, k);
    if (pat == 0) continue;
    const T t = term(k, pat);
    acc = first ? t : T(acc + t);
    first = false;
  }
  return first ? T(0.0) : acc;
}

// J P J^T + Q using the structure of J. Only the upper triangle is computed,
// so the result is symmetric exactly.
template <class T>
StateMatrix<T> propagate_covariance(const StateMatrix<T>& P, const StateMatrix<T>& J,
                                    const StateArray<T>& Q) {
  StateMatrix<T> M;
  for (int i = 0; i < kStateDim; ++i) {
    for (int j = 0; j < kStateDim; ++j) {
      QuantityScope<T> scope(element_id(Family::kCovProduct, i, j));
      M(i, j) = sparse_sum<T>(i, [&](int k, int pat) {
        return pat == 1 ? P(k, j) : T(J(i, k) * P(k, j));
      });
    }
  }
  StateMatrix<T> out;
  for (int i = 0; i < kStateDim; ++i) {
    for (int j = i; j < kStateDim; ++j) {
      QuantityScope<T> scope(element_id(Family::kCovariance, i, j));
      T v = sparse_sum<T>(j, [&](int k, int pat) {
        return pat == 1 ? M(i, k) : T(M(i, k) * J(j, k));
      });
      if (i == j) v = v + Q(i);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

template <class T>
using GainMatrixT = Eigen::Matrix<T, kStateDim, kMeasDim>;

enum class GainStatus { kOk, kNotPositiveDefinite };

// Kalman gain through a Cholesky factorization of the active rows of
// H P H^T + R. Inactive columns of K are zero.
template <class T>
GainStatus kalman_gain(const StateMatrix<T>& P, const Eigen::Matrix<T, kMeasDim, 1>& R,
                       bool altitude_valid, GainMatrixT<T>& K) {
  using std::sqrt;
  const int n = altitude_valid ? kMeasDim : kMeasDim - 1;
  const auto& sel = kMeasuredStates;
  Eigen::Matrix<T, kMeasDim, kMeasDim> L;
  T inv_diag[kMeasDim];
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      QuantityScope<T> scope(element_id(Family::kInnovation, sel[i], sel[j]));
      T v = P(sel[i], sel[j]);
      if (i == j) v = v + R(i);
      for (int k = 0; k < j; ++k) v = v - L(i, k) * L(j, k);
      if (i == j) {
        if (!(to_double(v) > 0.0)) return GainStatus::kNotPositiveDefinite;
        L(j, j) = sqrt(v);
        // A coarse format can round a tiny positive pivot to zero.
        if (!(to_double(L(j, j)) > 0.0)) return GainStatus::kNotPositiveDefinite;
        inv_diag[j] = T(1.0) / L(j, j);
      } else {
        L(i, j) = v * inv_diag[j];
      }
    }
  }
  for (int r = 0; r < kStateDim; ++r) {
    // Forward: L y = (P H^T)_r ; backward: L^T k = y.
    T y[kMeasDim];
    for (int i = 0; i < n; ++i) {
      QuantityScope<T> inner(element_id(Family::kKalmanGain, r, sel[i]));
      T v = P(r, sel[i]);
      for (int k = 0; k < i; ++k) v = v - L(i, k) * y[k];
      y[i] = v * inv_diag[i];
    }
    for (int i = n - 1; i >= 0; --i) {
      QuantityScope<T> inner(element_id(Family::kKalmanGain, r, sel[i]));
      T v = y[i];
      for (int k = i + 1; k < n; ++k) v = v - L(k, i) * K(r, k);
      K(r, i) = v * inv_diag[i];
    }
    for (int i = n; i < kMeasDim; ++i) {
      QuantityScope<T> inner(element_id(Family::kKalmanGain, r, sel[i]));
      K(r, i) = T(0.0);
    }
  }
  return GainStatus::kOk;
}

// z from the attitude fix and the held range. Returns false when the range
// is outside the sensor span; z(3) is then left at zero.
template <class T>
bool measurement(const Vec3T<T>& q, const T& tof, bool tof_valid,
                 Eigen::Matrix<T, kMeasDim, 1>& z) {
  using std::cos;
  z(0) = q(0);
  z(1) = q(1);
  z(2) = q(2);
  const double r = to_double(tof);
  const bool valid = tof_valid && r >= 0.0 && r <= kTofMaxRange;
  if (!valid) {
    QuantityScope<T> scope(Quantity::kAltitude);
    z(3) = T(0.0);
    return false;
  }
  T tilt;
  {
    QuantityScope<T> scope(Quantity::kTrig);
    tilt = cos(q(0)) * cos(q(1));
  }
  QuantityScope<T> scope(Quantity::kAltitude);
  z(3) = tof * tilt;
  return true;
}

// Posterior state and covariance. `innovation` receives z - H s_hat.
template <class T>
void update(StateArray<T>& s, StateMatrix<T>& P, const GainMatrixT<T>& K,
            const Eigen::Matrix<T, kMeasDim, 1>& z, bool altitude_valid,
            Eigen::Matrix<T, kMeasDim, 1>& innovation) {
  const int n = altitude_valid ? kMeasDim : kMeasDim - 1;
  const auto& sel = kMeasuredStates;
  for (int a = 0; a < kMeasDim; ++a) {
    if (a < 3) {
      QuantityScope<T> scope(Quantity::kAngle);
      innovation(a) = wrap_angle(T(z(a) - s(sel[a])));
    } else {
      QuantityScope<T> scope(Quantity::kAltitude);
      innovation(a) = altitude_valid ? T(z(a) - s(sel[a])) : T(0.0);
    }
  }
  for (int i = 0; i < kStateDim; ++i) {
    QuantityScope<T> scope(state_quantity<T>(i));
    T corr = K(i, 0) * innovation(0);
    for (int a = 1; a < n; ++a) corr = corr + K(i, a) * innovation(a);
    s(i) = s(i) + corr;
    if (i < 3) s(i) = wrap_angle(s(i));
  }
  StateMatrix<T> out;
  for (int i = 0; i < kStateDim; ++i) {
    for (int j = i; j < kStateDim; ++j) {
      QuantityScope<T> scope(element_id(Family::kCovariance, i, j));
      T khp = K(i, 0) * P(sel[0], j);
      for (int a = 1; a < n; ++a) khp = khp + K(i, a) * P(sel[a], j);
      const T v = P(i, j) - khp;
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  P = out;
}

template <class T>
struct EkfConfigT {
  StateArray<T> Q;
  Eigen::Matrix<T, kMeasDim, 1> R;
};

template <class T>
EkfConfigT<T> lift_config(const EkfConfig& cfg) {
  EkfConfigT<T> c;
  for (int i = 0; i < kStateDim; ++i) {
    QuantityScope<T> scope(element_id(Family::kCovariance, i, i));
    c.Q(i) = T(cfg.Q(i));
  }
  for (int a = 0; a < kMeasDim; ++a) {
    QuantityScope<T> scope(element_id(Family::kInnovation, kMeasuredStates[a], kMeasuredStates[a]));
    c.R(a) = T(cfg.R(a));
  }
  return c;
}

}  // namespace kernel

struct CekfStepStatus {
  AttitudeFixStatus fix = AttitudeFixStatus::kOk;
  bool altitude_valid = true;
  bool update_skipped = false;
};

// Stateful CEKF over any scalar type. With an emulated scalar the object must
// be constructed and stepped inside the same arithmetic session.
template <class T>
class BasicCekf {
 public:
  BasicCekf(const CekfConfig& cfg, const EkfState& e0, const CcfState& c0, double dt)
      : cfg_(cfg),
        model_(kernel::lift_model<T>(cfg.vehicle, cfg.model)),
        gains_(kernel::lift_gains<T>(cfg.gains)),
        ekf_cfg_(kernel::lift_config<T>(cfg.ekf)) {
    cfg.ekf.validate();
    cfg.gains.validate();
    cfg.vehicle.validate();
    {
      QuantityScope<T> scope(Quantity::kTime);
      dt_ = T(dt);
    }
    const StateArray<double> s0 = e0.s.to_array();
    for (int i = 0; i < kStateDim; ++i) {
      QuantityScope<T> scope(kernel::state_quantity<T>(i));
      s_(i) = T(s0(i));
    }
    for (int i = 0; i < kStateDim; ++i) {
      for (int j = 0; j < kStateDim; ++j) {
        QuantityScope<T> scope(element_id(Family::kCovariance, i, j));
        P_(i, j) = T(e0.P(i, j));
      }
    }
    {
      QuantityScope<T> scope(Quantity::kAngle);
      ccf_.q_hat = Vec3T<T>(T(c0.q_hat.phi), T(c0.q_hat.theta), T(c0.q_hat.psi));
      ccf_.q1 = Vec3T<T>(T(c0.q1.phi), T(c0.q1.theta), T(c0.q1.psi));
    }
    {
      QuantityScope<T> scope(Quantity::kAngularRate);
      ccf_.integrator =
          Vec3T<T>(T(c0.integrator(0)), T(c0.integrator(1)), T(c0.integrator(2)));
    }
    innovation_.setConstant(T(0.0));
  }

  CekfStepStatus step(const MeasurementVector& rho, const ControlInput& u) {
    CekfStepStatus status;
    Vec3T<T> acc, gyr, mag;
    T tof;
    {
      QuantityScope<T> scope(Quantity::kLinearAccel);
      acc = lift3(rho.acc);
    }
    {
      QuantityScope<T> scope(Quantity::kAngularRate);
      gyr = lift3(rho.gyr);
    }
    {
      QuantityScope<T> scope(Quantity::kMagField);
      mag = lift3(rho.mag);
    }
    {
      QuantityScope<T> scope(Quantity::kAltitude);
      tof = T(rho.tof);
    }
    const auto ccf_out = kernel::ccf_step(ccf_, gains_, acc, gyr, mag, dt_, cfg_.vehicle.g);
    status.fix = ccf_out.fix;

    const kernel::Control<T> c = kernel::lift_control<T>(u);
    const auto t = kernel::trig_of(s_(0), s_(1), s_(2));
    const Mat3T<T> r = kernel::rotation_xyz(t);
    StateMatrix<T> J;
    if constexpr (std::is_same_v<T, double>) {
      if (cfg_.ekf.jacobian == JacobianMethod::kNumeric) {
        kernel::check_gimbal(s_(idx::kTheta), model_.theta_limit);
        J = kernel::jacobian_numeric(s_, c, dt_, model_);
      } else {
        J = kernel::jacobian_analytic(s_, c, dt_, model_, t, r);
      }
    } else {
      J = kernel::jacobian_analytic(s_, c, dt_, model_, t, r);
    }
    s_ = kernel::state_transition(s_, c, dt_, model_, t, r);
    P_ = kernel::propagate_covariance(P_, J, ekf_cfg_.Q);
    kernel::store_state(s_);
    kernel::store_covariance(P_);

    Eigen::Matrix<T, kMeasDim, 1> z;
    status.altitude_valid = kernel::measurement(ccf_out.q, tof, rho.tof_valid, z);

    kernel::GainMatrixT<T> K;
    if (kernel::kalman_gain(P_, ekf_cfg_.R, status.altitude_valid, K) !=
        kernel::GainStatus::kOk) {
      if (cfg_.ekf.on_factor_failure == FactorFailure::kThrow) {
        throw NotPositiveDefinite("innovation covariance is not positive definite");
      }
      status.update_skipped = true;
      ++skipped_;
      return status;
    }
    kernel::update(s_, P_, K, z, status.altitude_valid, innovation_);
    kernel::store_state(s_);
    kernel::store_covariance(P_);
    return status;
  }

  CekfOutput output() const {
    return {{to_double(s_(0)), to_double(s_(1)), to_double(s_(2))}, to_double(s_(idx::kZeta))};
  }

  StateVector state() const {
    StateArray<double> x;
    for (int i = 0; i < kStateDim; ++i) x(i) = to_double(s_(i));
    return StateVector::from_array(x);
  }

  Mat10 covariance() const {
    Mat10 m;
    for (int i = 0; i < kStateDim; ++i)
      for (int j = 0; j < kStateDim; ++j) m(i, j) = to_double(P_(i, j));
    return m;
  }

  Vec4 innovation() const {
    Vec4 v;
    for (int a = 0; a < kMeasDim; ++a) v(a) = to_double(innovation_(a));
    return v;
  }

  EulerAngles ccf_estimate() const {
    return {to_double(ccf_.q_hat(0)), to_double(ccf_.q_hat(1)), to_double(ccf_.q_hat(2))};
  }

  long skipped_updates() const { return skipped_; }

 private:
  static Vec3T<T> lift3(const Vec3& v) { return Vec3T<T>(T(v(0)), T(v(1)), T(v(2))); }

  CekfConfig cfg_;
  kernel::Model<T> model_;
  kernel::CcfGainsT<T> gains_;
  kernel::EkfConfigT<T> ekf_cfg_;
  T dt_{};
  StateArray<T> s_;
  StateMatrix<T> P_;
  kernel::CcfStateT<T> ccf_;
  Eigen::Matrix<T, kMeasDim, 1> innovation_;
  long skipped_ = 0;
};

using Cekf = BasicCekf<double>;

}  // namespace cekf
