#pragma once

// Rigid-body model of the flapping-wing vehicle: rotations, wing drag, the
// explicit-Euler state transition used by the filter and its Jacobian.
//
// State layout (StateArray): [phi theta psi | p q r | vx vy vz | zeta].
// The angular rates are world-frame and the filter treats them as the Euler
// angle rates (q_dot = omega).

#include <Eigen/Core>
#include <cmath>
#include <numbers>

#include "cekf/errors.hpp"
#include "cekf/scalar.hpp"

namespace cekf {

template <class T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <class T>
using Mat3T = Eigen::Matrix<T, 3, 3>;
using Vec3 = Vec3T<double>;
using Mat3 = Mat3T<double>;

inline constexpr int kStateDim = 10;
template <class T>
using StateArray = Eigen::Matrix<T, kStateDim, 1>;
template <class T>
using StateMatrix = Eigen::Matrix<T, kStateDim, kStateDim>;

namespace idx {
inline constexpr int kPhi = 0;
inline constexpr int kTheta = 1;
inline constexpr int kPsi = 2;
inline constexpr int kOmega = 3;
inline constexpr int kVel = 6;
inline constexpr int kZeta = 9;
}  // namespace idx

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

template <class T>
struct BasicEulerAngles {
  T phi{};
  T theta{};
  T psi{};
};
using EulerAngles = BasicEulerAngles<double>;

inline bool is_finite(const EulerAngles& q) {
  return std::isfinite(q.phi) && std::isfinite(q.theta) && std::isfinite(q.psi);
}

struct StateVector {
  EulerAngles q;
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double zeta = 0.0;

  StateArray<double> to_array() const;
  static StateVector from_array(const StateArray<double>& x);
  bool finite() const;
};

struct ControlInput {
  Vec3 tau = Vec3::Zero();  // body-frame torques, N*m
  double thrust = 0.0;      // body-z force, N

  bool finite() const;
};

// SI units throughout. Defaults are the RoboBee values after unit conversion.
struct VehicleParams {
  double m = 8.6e-5;                                  // kg
  Vec3 inertia = Vec3(1.42e-9, 1.34e-9, 4.5e-10);     // kg*m^2
  double b_w = 2e-4;                                  // N*s/m
  double r_w = 9e-3;                                  // m
  double g = 9.81;                                    // m/s^2

  void validate() const;

  // Builds SI parameters from the tabulated units: grams, g*m^2, millimetres.
  static VehicleParams from_table_units(double mass_g, const Vec3& inertia_g_m2,
                                        double b_w, double r_w_mm, double g = 9.81);
};

// Which row the wing-rate projection uses for its middle entry:
//   kAsPrinted: s_psi s_theta s_phi - c_psi c_phi
//   kCorrected: s_psi s_theta s_phi + c_psi c_phi
enum class WingProjection { kAsPrinted, kCorrected };

struct ModelOptions {
  bool gravity = true;
  WingProjection wing_projection = WingProjection::kAsPrinted;
  double gimbal_margin = 5.0 * kDegToRad;  // rad from +/-90 deg
};

enum class Frame { kBody, kWorld };

struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
  Frame frame = Frame::kBody;

  // Throws FrameMismatch when the frames differ.
  Wrench operator+(const Wrench& other) const;
  Wrench operator-() const { return {-force, -torque, frame}; }
};

enum class JacobianMethod { kNumeric, kAnalytic };

inline constexpr double kJacobianStep = 1e-6;

// ---------------------------------------------------------------------------
// Public double-precision API.

Mat3 rotation_world_from_body(const EulerAngles& q);

double wing_lateral_velocity(const StateVector& s, const VehicleParams& p,
                             const ModelOptions& opt = {});

Wrench drag_wrench(const StateVector& s, const VehicleParams& p, const ModelOptions& opt = {});

StateVector state_transition(const StateVector& s, const ControlInput& u, double dt,
                             const VehicleParams& p, const ModelOptions& opt = {});

StateMatrix<double> jacobian(const StateVector& s, const ControlInput& u, double dt,
                             const VehicleParams& p, const ModelOptions& opt = {},
                             JacobianMethod method = JacobianMethod::kNumeric);

// Control that makes the model reproduce the given angular and linear
// accelerations at state s: torques from I * omega_dot minus wing drag, thrust
// from the body-z share of m * (a + g z). Thrust is clamped at zero.
ControlInput inverse_control(const StateVector& s, const Vec3& omega_dot, const Vec3& accel,
                             const VehicleParams& p, const ModelOptions& opt = {});

struct ObservabilityReport {
  Eigen::Matrix<double, 40, kStateDim> matrix;
  int output_rank = 0;     // rank of the (phi, theta, psi, zeta) columns
  int full_rank = 0;       // rank of the whole stacked matrix
  Eigen::Vector4d output_singular_values;
};

// Stacks [H; HJ; ...; HJ^9] and ranks the output-state columns with singular
// values above 1e-9 * sigma_max.
ObservabilityReport observability_matrix(const StateMatrix<double>& J,
                                         const Eigen::Matrix<double, 4, kStateDim>& H);

// Output selector rows for (phi, theta, psi, zeta).
Eigen::Matrix<double, 4, kStateDim> output_selector();

// ---------------------------------------------------------------------------
// Generic kernels shared by the double path and the precision engine.

namespace kernel {

template <class T>
struct Trig {
  T s_phi, c_phi, s_theta, c_theta, s_psi, c_psi;
};

template <class T>
Trig<T> trig_of(const T& phi, const T& theta, const T& psi) {
  using std::cos;
  using std::sin;
  QuantityScope<T> scope(Quantity::kTrig);
  return {sin(phi), cos(phi), sin(theta), cos(theta), sin(psi), cos(psi)};
}

// Closed form of Rx(phi) Ry(theta) Rz(psi).
template <class T>
Mat3T<T> rotation_xyz(const Trig<T>& t) {
  QuantityScope<T> scope(Quantity::kTrig);
  const T ct_cp = t.c_theta * t.c_psi;
  const T ct_sp = t.c_theta * t.s_psi;
  const T st_cp = t.s_theta * t.c_psi;
  const T st_sp = t.s_theta * t.s_psi;
  Mat3T<T> r;
  r(0, 0) = ct_cp;
  r(0, 1) = -ct_sp;
  r(0, 2) = t.s_theta;
  r(1, 0) = t.c_phi * t.s_psi + t.s_phi * st_cp;
  r(1, 1) = t.c_phi * t.c_psi - t.s_phi * st_sp;
  r(1, 2) = -(t.s_phi * t.c_theta);
  r(2, 0) = t.s_phi * t.s_psi - t.c_phi * st_cp;
  r(2, 1) = t.s_phi * t.c_psi + t.c_phi * st_sp;
  r(2, 2) = t.c_phi * t.c_theta;
  return r;
}

template <class T>
struct Model {
  T mass;
  Vec3T<T> inertia;
  T b_w;
  T r_w;
  T g;
  bool gravity = true;
  bool corrected_projection = false;
  double theta_limit = 0.0;
};

template <class T>
Model<T> lift_model(const VehicleParams& p, const ModelOptions& opt) {
  Model<T> m;
  {
    QuantityScope<T> s(Quantity::kMass);
    m.mass = T(p.m);
  }
  {
    QuantityScope<T> s(Quantity::kInertia);
    m.inertia = Vec3T<T>(T(p.inertia(0)), T(p.inertia(1)), T(p.inertia(2)));
  }
  {
    QuantityScope<T> s(Quantity::kDragCoeff);
    m.b_w = T(p.b_w);
  }
  {
    QuantityScope<T> s(Quantity::kLength);
    m.r_w = T(p.r_w);
  }
  {
    QuantityScope<T> s(Quantity::kLinearAccel);
    m.g = T(p.g);
  }
  m.gravity = opt.gravity;
  m.corrected_projection = opt.wing_projection == WingProjection::kCorrected;
  m.theta_limit = kPi / 2.0 - opt.gimbal_margin;
  return m;
}

template <class T>
struct Control {
  Vec3T<T> tau;
  T thrust;
};

template <class T>
Control<T> lift_control(const ControlInput& u) {
  Control<T> c;
  {
    QuantityScope<T> s(Quantity::kTorque);
    c.tau = Vec3T<T>(T(u.tau(0)), T(u.tau(1)), T(u.tau(2)));
  }
  {
    QuantityScope<T> s(Quantity::kForce);
    c.thrust = T(u.thrust);
  }
  return c;
}

template <class T>
T dot3(const Vec3T<T>& a, const Vec3T<T>& b) {
  return a(0) * b(0) + a(1) * b(1) + a(2) * b(2);
}

template <class T>
void check_gimbal(const T& theta, double limit) {
  if (std::abs(to_double(theta)) > limit) {
    throw GimbalProximity("pitch " + std::to_string(to_double(theta) * kRadToDeg) +
                          " deg is within the singularity margin");
  }
}

// Projection of world velocity onto the body x axis: [c_psi c_theta, c_theta s_psi, s_theta].
template <class T>
Vec3T<T> body_x_row(const Trig<T>& t) {
  QuantityScope<T> scope(Quantity::kTrig);
  return Vec3T<T>(t.c_psi * t.c_theta, t.c_theta * t.s_psi, t.s_theta);
}

// Projection of world angular velocity onto the body y axis.
template <class T>
Vec3T<T> wing_y_row(const Trig<T>& t, bool corrected) {
  QuantityScope<T> scope(Quantity::kTrig);
  const T st_sp = t.s_theta * t.s_phi;
  const T cp_cf = t.c_psi * t.c_phi;
  const T mid_a = t.s_psi * st_sp;
  return Vec3T<T>(t.c_psi * st_sp - t.s_psi * t.c_phi, corrected ? mid_a + cp_cf : mid_a - cp_cf,
                  t.c_theta * t.c_phi);
}

template <class T>
struct WingKinematics {
  Vec3T<T> x_row;  // d v_w / d v
  Vec3T<T> y_row;  // d v_w / d omega, before the r_w factor
  T vw;
};

template <class T>
WingKinematics<T> wing_kinematics(const StateArray<T>& s, const Trig<T>& t, const Model<T>& m) {
  WingKinematics<T> k;
  k.x_row = body_x_row(t);
  k.y_row = wing_y_row(t, m.corrected_projection);
  const Vec3T<T> v = s.template segment<3>(idx::kVel);
  const Vec3T<T> w = s.template segment<3>(idx::kOmega);
  T vx_b;
  {
    QuantityScope<T> scope(Quantity::kVelocity);
    vx_b = dot3(k.x_row, v);
  }
  T w_y;
  {
    QuantityScope<T> scope(Quantity::kAngularRate);
    w_y = dot3(k.y_row, w);
  }
  {
    QuantityScope<T> scope(Quantity::kVelocity);
    const T v2 = m.r_w * w_y;
    k.vw = vx_b + v2;
  }
  return k;
}

template <class T>
struct BodyWrench {
  T drag_force;  // x component of the body force
  Vec3T<T> force;
  Vec3T<T> torque;
};

template <class T>
BodyWrench<T> body_wrench(const T& vw, const Control<T>& u, const Model<T>& m) {
  BodyWrench<T> w;
  {
    QuantityScope<T> scope(Quantity::kForce);
    w.drag_force = -(m.b_w * vw);
    w.force = Vec3T<T>(w.drag_force, T(0.0), u.thrust);
  }
  {
    QuantityScope<T> scope(Quantity::kTorque);
    const T drag_torque = -(m.r_w * w.drag_force);
    w.torque = Vec3T<T>(u.tau(0), u.tau(1) + drag_torque, u.tau(2));
  }
  return w;
}

// Explicit Euler step of the filter model.
template <class T>
StateArray<T> state_transition(const StateArray<T>& s, const Control<T>& u, const T& dt,
                               const Model<T>& m, const Trig<T>& t, const Mat3T<T>& r) {
  check_gimbal(s(idx::kTheta), m.theta_limit);
  const WingKinematics<T> wk = wing_kinematics(s, t, m);
  const BodyWrench<T> bw = body_wrench(wk.vw, u, m);

  Vec3T<T> force_w;
  {
    // The body force has no y component.
    QuantityScope<T> scope(Quantity::kForce);
    for (int i = 0; i < 3; ++i) force_w(i) = r(i, 0) * bw.force(0) + r(i, 2) * bw.force(2);
  }
  Vec3T<T> torque_w;
  {
    QuantityScope<T> scope(Quantity::kTorque);
    for (int i = 0; i < 3; ++i) {
      torque_w(i) = r(i, 0) * bw.torque(0) + r(i, 1) * bw.torque(1) + r(i, 2) * bw.torque(2);
    }
  }

  StateArray<T> next = s;
  {
    QuantityScope<T> scope(Quantity::kAngle);
    for (int i = 0; i < 3; ++i) next(i) = s(i) + dt * s(idx::kOmega + i);
  }
  for (int i = 0; i < 3; ++i) {
    T alpha;
    {
      QuantityScope<T> scope(Quantity::kAngularAccel);
      alpha = torque_w(i) / m.inertia(i);
    }
    QuantityScope<T> scope(Quantity::kAngularRate);
    next(idx::kOmega + i) = s(idx::kOmega + i) + dt * alpha;
  }
  for (int i = 0; i < 3; ++i) {
    T accel;
    {
      QuantityScope<T> scope(Quantity::kLinearAccel);
      accel = force_w(i) / m.mass;
      if (i == 2 && m.gravity) accel = accel - m.g;
    }
    QuantityScope<T> scope(Quantity::kVelocity);
    next(idx::kVel + i) = s(idx::kVel + i) + dt * accel;
  }
  {
    QuantityScope<T> scope(Quantity::kAltitude);
    next(idx::kZeta) = s(idx::kZeta) + dt * s(idx::kVel + 2);
  }
  return next;
}

template <class T>
StateArray<T> state_transition(const StateArray<T>& s, const Control<T>& u, const T& dt,
                               const Model<T>& m) {
  const Trig<T> t = trig_of(s(0), s(1), s(2));
  return state_transition(s, u, dt, m, t, rotation_xyz(t));
}

// Jacobian sparsity: 0 = structural zero, 1 = structural one, 2 = general.
inline constexpr int jacobian_pattern(int row, int col) {
  if (row < 3) return col == row ? 1 : col == row + 3 ? 2 : 0;
  if (row == idx::kZeta) return col == idx::kZeta ? 1 : col == idx::kVel + 2 ? 2 : 0;
  return col == idx::kZeta ? 0 : 2;
}

// Closed-form d f / d s.
template <class T>
StateMatrix<T> jacobian_analytic(const StateArray<T>& s, const Control<T>& u, const T& dt,
                                 const Model<T>& m, const Trig<T>& t, const Mat3T<T>& r) {
  check_gimbal(s(idx::kTheta), m.theta_limit);
  const WingKinematics<T> wk = wing_kinematics(s, t, m);
  const BodyWrench<T> bw = body_wrench(wk.vw, u, m);
  const Vec3T<T> v = s.template segment<3>(idx::kVel);
  const Vec3T<T> w = s.template segment<3>(idx::kOmega);

  // Partial rotations. d/dphi: rows shift (0, -row2, row1); d/dpsi: columns
  // shift (col1, -col0, 0); d/dtheta needs a few products.
  Mat3T<T> dr[3];
  Vec3T<T> da[3];
  Vec3T<T> dc[3];
  {
    QuantityScope<T> scope(Quantity::kTrig);
    const T zero(0.0);
    dr[0].row(0) = Vec3T<T>(zero, zero, zero).transpose();
    dr[0].row(1) = -r.row(2);
    dr[0].row(2) = r.row(1);

    const T st_cp = t.s_theta * t.c_psi;
    const T st_sp = t.s_theta * t.s_psi;
    dr[1](0, 0) = -st_cp;
    dr[1](0, 1) = st_sp;
    dr[1](0, 2) = t.c_theta;
    for (int j = 0; j < 3; ++j) {
      dr[1](1, j) = t.s_phi * r(0, j);
      dr[1](2, j) = -(t.c_phi * r(0, j));
    }

    for (int i = 0; i < 3; ++i) {
      dr[2](i, 0) = r(i, 1);
      dr[2](i, 1) = -r(i, 0);
      dr[2](i, 2) = zero;
    }

    // Body-x projection [c_psi c_theta, c_theta s_psi, s_theta].
    da[0] = Vec3T<T>(zero, zero, zero);
    da[1] = Vec3T<T>(-st_cp, -st_sp, t.c_theta);
    da[2] = Vec3T<T>(-(t.s_psi * t.c_theta), t.c_theta * t.c_psi, zero);

    // Wing-rate projection [c_psi s_theta s_phi - s_psi c_phi,
    //                       s_psi s_theta s_phi -/+ c_psi c_phi, c_theta c_phi].
    const T st_cf = t.s_theta * t.c_phi;
    const T st_sf = t.s_theta * t.s_phi;
    const T sp_sf = t.s_psi * t.s_phi;
    const T cp_sf = t.c_psi * t.s_phi;
    const T cp_cf = t.c_psi * t.c_phi;
    const T sp_cf = t.s_psi * t.c_phi;
    const T ct_sf = t.c_theta * t.s_phi;
    const T mid_phi = t.s_psi * st_cf;
    const T mid_psi = t.c_psi * st_sf;
    const bool corr = m.corrected_projection;
    dc[0] = Vec3T<T>(t.c_psi * st_cf + sp_sf, corr ? mid_phi - cp_sf : mid_phi + cp_sf,
                     -ct_sf);
    dc[1] = Vec3T<T>(t.c_psi * ct_sf, t.s_psi * ct_sf, -st_cf);
    dc[2] = Vec3T<T>(-(t.s_psi * st_sf) - cp_cf, corr ? mid_psi - sp_cf : mid_psi + sp_cf, zero);
  }

  // d v_w / d angle_k.
  T dvw[3];
  for (int k = 0; k < 3; ++k) {
    T lin;
    {
      QuantityScope<T> scope(Quantity::kVelocity);
      lin = dot3(da[k], v);
    }
    T rot;
    {
      QuantityScope<T> scope(Quantity::kAngularRate);
      rot = dot3(dc[k], w);
    }
    QuantityScope<T> scope(Quantity::kVelocity);
    dvw[k] = lin + m.r_w * rot;
  }
  // d v_w / d omega_j = r_w c_j, d v_w / d v_j = a_j.
  Vec3T<T> dvw_dw;
  {
    QuantityScope<T> scope(Quantity::kLength);
    for (int j = 0; j < 3; ++j) dvw_dw(j) = m.r_w * wk.y_row(j);
  }

  // Columns 0..8 of d F_world / d s and d tau_world / d s.
  Eigen::Matrix<T, 3, 9> dforce;
  Eigen::Matrix<T, 3, 9> dtorque;
  T drag_gain_t;  // r_w * b_w
  {
    QuantityScope<T> scope(Quantity::kForce);
    for (int k = 0; k < 3; ++k) {
      const T ddrag = -(m.b_w * dvw[k]);
      for (int i = 0; i < 3; ++i) {
        dforce(i, k) = dr[k](i, 0) * bw.force(0) + dr[k](i, 2) * bw.force(2) + r(i, 0) * ddrag;
      }
    }
    for (int j = 0; j < 3; ++j) {
      const T dw = -(m.b_w * dvw_dw(j));
      const T dv = -(m.b_w * wk.x_row(j));
      for (int i = 0; i < 3; ++i) {
        dforce(i, 3 + j) = r(i, 0) * dw;
        dforce(i, 6 + j) = r(i, 0) * dv;
      }
    }
  }
  {
    QuantityScope<T> scope(Quantity::kTorque);
    drag_gain_t = m.r_w * m.b_w;
    for (int k = 0; k < 3; ++k) {
      const T dtd = drag_gain_t * dvw[k];
      for (int i = 0; i < 3; ++i) {
        dtorque(i, k) = dr[k](i, 0) * bw.torque(0) + dr[k](i, 1) * bw.torque(1) +
                        dr[k](i, 2) * bw.torque(2) + r(i, 1) * dtd;
      }
    }
    for (int j = 0; j < 3; ++j) {
      const T dw = drag_gain_t * dvw_dw(j);
      const T dv = drag_gain_t * wk.x_row(j);
      for (int i = 0; i < 3; ++i) {
        dtorque(i, 3 + j) = r(i, 1) * dw;
        dtorque(i, 6 + j) = r(i, 1) * dv;
      }
    }
  }

  T dt_over_inertia[3];
  T dt_over_mass;
  {
    QuantityScope<T> scope(Quantity::kTimeOverInertia);
    for (int i = 0; i < 3; ++i) dt_over_inertia[i] = dt / m.inertia(i);
  }
  {
    QuantityScope<T> scope(Quantity::kTimeOverMass);
    dt_over_mass = dt / m.mass;
  }

  StateMatrix<T> jac;
  for (int i = 0; i < kStateDim; ++i) {
    for (int j = 0; j < kStateDim; ++j) {
      QuantityScope<T> scope(element_id(Family::kJacobian, i, j));
      jac(i, j) = T(jacobian_pattern(i, j) == 1 ? 1.0 : 0.0);
    }
  }
  for (int i = 0; i < 3; ++i) {
    QuantityScope<T> scope(element_id(Family::kJacobian, i, 3 + i));
    jac(i, 3 + i) = dt;
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 9; ++j) {
      QuantityScope<T> scope(element_id(Family::kJacobian, 3 + i, j));
      const T rate = dt_over_inertia[i] * dtorque(i, j);
      jac(3 + i, j) = (j == 3 + i) ? T(1.0) + rate : rate;
    }
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 9; ++j) {
      QuantityScope<T> scope(element_id(Family::kJacobian, 6 + i, j));
      const T lin = dt_over_mass * dforce(i, j);
      jac(6 + i, j) = (j == 6 + i) ? T(1.0) + lin : lin;
    }
  }
  {
    QuantityScope<T> scope(element_id(Family::kJacobian, idx::kZeta, idx::kVel + 2));
    jac(idx::kZeta, idx::kVel + 2) = dt;
  }
  return jac;
}

// Central-difference Jacobian; double only.
inline StateMatrix<double> jacobian_numeric(const StateArray<double>& s, const Control<double>& u,
                                            double dt, const Model<double>& m,
                                            double h = kJacobianStep) {
  StateMatrix<double> jac;
  for (int k = 0; k < kStateDim; ++k) {
    StateArray<double> plus = s;
    StateArray<double> minus = s;
    plus(k) += h;
    minus(k) -= h;
    jac.col(k) = (state_transition(plus, u, dt, m) - state_transition(minus, u, dt, m)) / (2.0 * h);
  }
  return jac;
}

}  // namespace kernel
}  // namespace cekf
