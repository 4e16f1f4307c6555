#include "cekf/dynamics.hpp"

#include <Eigen/SVD>
#include <algorithm>

namespace cekf {

StateArray<double> StateVector::to_array() const {
  StateArray<double> x;
  x << q.phi, q.theta, q.psi, omega, v, zeta;
  return x;
}

StateVector StateVector::from_array(const StateArray<double>& x) {
  StateVector s;
  s.q = {x(0), x(1), x(2)};
  s.omega = x.segment<3>(idx::kOmega);
  s.v = x.segment<3>(idx::kVel);
  s.zeta = x(idx::kZeta);
  return s;
}

bool StateVector::finite() const { return to_array().allFinite(); }

bool ControlInput::finite() const { return tau.allFinite() && std::isfinite(thrust); }

void VehicleParams::validate() const {
  if (!(m > 0) || !(inertia.minCoeff() > 0) || !(b_w > 0) || !(r_w > 0) || !(g > 0) ||
      !std::isfinite(m) || !inertia.allFinite() || !std::isfinite(b_w) ||
      !std::isfinite(r_w) || !std::isfinite(g)) {
    throw ConfigError("vehicle parameters must be finite and strictly positive");
  }
}

VehicleParams VehicleParams::from_table_units(double mass_g, const Vec3& inertia_g_m2, double b_w,
                                              double r_w_mm, double g) {
  VehicleParams p;
  // Division by 1000 is correctly rounded; multiplying by 1e-3 is not.
  p.m = mass_g / 1e3;
  p.inertia = inertia_g_m2 / 1e3;
  p.b_w = b_w;
  p.r_w = r_w_mm / 1e3;
  p.g = g;
  p.validate();
  return p;
}

Wrench Wrench::operator+(const Wrench& other) const {
  if (frame != other.frame) throw FrameMismatch("cannot add body-frame and world-frame wrenches");
  return {force + other.force, torque + other.torque, frame};
}

Mat3 rotation_world_from_body(const EulerAngles& q) {
  return kernel::rotation_xyz(kernel::trig_of(q.phi, q.theta, q.psi));
}

double wing_lateral_velocity(const StateVector& s, const VehicleParams& p,
                             const ModelOptions& opt) {
  const auto m = kernel::lift_model<double>(p, opt);
  const auto t = kernel::trig_of(s.q.phi, s.q.theta, s.q.psi);
  return kernel::wing_kinematics(s.to_array(), t, m).vw;
}

Wrench drag_wrench(const StateVector& s, const VehicleParams& p, const ModelOptions& opt) {
  const double vw = wing_lateral_velocity(s, p, opt);
  Wrench w;
  w.frame = Frame::kBody;
  w.force = Vec3(-p.b_w * vw, 0.0, 0.0);
  w.torque = Vec3(0.0, p.r_w * p.b_w * vw, 0.0);
  return w;
}

StateVector state_transition(const StateVector& s, const ControlInput& u, double dt,
                             const VehicleParams& p, const ModelOptions& opt) {
  if (!(dt > 0)) throw ConfigError("time step must be positive");
  const auto m = kernel::lift_model<double>(p, opt);
  const auto c = kernel::lift_control<double>(u);
  return StateVector::from_array(kernel::state_transition(s.to_array(), c, dt, m));
}

StateMatrix<double> jacobian(const StateVector& s, const ControlInput& u, double dt,
                             const VehicleParams& p, const ModelOptions& opt,
                             JacobianMethod method) {
  if (!(dt > 0)) throw ConfigError("time step must be positive");
  const auto m = kernel::lift_model<double>(p, opt);
  const auto c = kernel::lift_control<double>(u);
  const StateArray<double> x = s.to_array();
  if (method == JacobianMethod::kNumeric) {
    kernel::check_gimbal(x(idx::kTheta), m.theta_limit);
    return kernel::jacobian_numeric(x, c, dt, m);
  }
  const auto t = kernel::trig_of(x(0), x(1), x(2));
  return kernel::jacobian_analytic(x, c, dt, m, t, kernel::rotation_xyz(t));
}

ControlInput inverse_control(const StateVector& s, const Vec3& omega_dot, const Vec3& accel,
                             const VehicleParams& p, const ModelOptions& opt) {
  const Mat3 r = rotation_world_from_body(s.q);
  const Wrench drag = drag_wrench(s, p, opt);
  ControlInput u;
  const Vec3 torque_w = p.inertia.cwiseProduct(omega_dot);
  u.tau = r.transpose() * torque_w - drag.torque;
  Vec3 specific = accel;
  if (opt.gravity) specific.z() += p.g;
  const Vec3 force_b = r.transpose() * (p.m * specific);
  u.thrust = std::max(0.0, force_b.z());
  return u;
}

Eigen::Matrix<double, 4, kStateDim> output_selector() {
  Eigen::Matrix<double, 4, kStateDim> h = Eigen::Matrix<double, 4, kStateDim>::Zero();
  h(0, idx::kPhi) = 1.0;
  h(1, idx::kTheta) = 1.0;
  h(2, idx::kPsi) = 1.0;
  h(3, idx::kZeta) = 1.0;
  return h;
}

namespace {

int numerical_rank(const Eigen::MatrixXd& a, Eigen::VectorXd* singular_values) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const Eigen::VectorXd sv = svd.singularValues();
  if (singular_values) *singular_values = sv;
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  const double tol = 1e-9 * sv(0);
  return static_cast<int>((sv.array() > tol).count());
}

}  // namespace

ObservabilityReport observability_matrix(const StateMatrix<double>& J,
                                         const Eigen::Matrix<double, 4, kStateDim>& H) {
  ObservabilityReport rep;
  Eigen::Matrix<double, 4, kStateDim> block = H;
  for (int k = 0; k < kStateDim; ++k) {
    rep.matrix.middleRows<4>(4 * k) = block;
    block = block * J;
  }
  Eigen::MatrixXd out(40, 4);
  out.col(0) = rep.matrix.col(idx::kPhi);
  out.col(1) = rep.matrix.col(idx::kTheta);
  out.col(2) = rep.matrix.col(idx::kPsi);
  out.col(3) = rep.matrix.col(idx::kZeta);
  Eigen::VectorXd sv;
  rep.output_rank = numerical_rank(out, &sv);
  rep.output_singular_values = sv.head<4>();
  rep.full_rank = numerical_rank(rep.matrix, nullptr);
  return rep;
}

std::string quantity_name(QuantityId id) {
  static const char* const kScalar[] = {
      "angle",        "trig",      "angular_rate", "angular_accel",    "velocity",
      "linear_accel", "altitude",  "mag_field",    "force",            "torque",
      "mass",         "inertia",   "drag_coeff",   "length",           "time",
      "dt_over_inertia", "dt_over_mass", "filter_gain", "norm_squared", "polynomial"};
  static_assert(std::size(kScalar) == kScalarQuantities);
  static const char* const kFamily[] = {"jacobian", "covariance", "cov_product", "kalman_gain",
                                        "innovation"};
  static const char* const kGroup[] = {"q", "w", "v", "z"};
  const int v = id.value;
  if (v < kScalarQuantities) return kScalar[v];
  const int rel = v - kScalarQuantities;
  const int fam = rel / (kStateGroups * kStateGroups);
  const int rg = (rel / kStateGroups) % kStateGroups;
  const int cg = rel % kStateGroups;
  if (fam >= static_cast<int>(Family::kCount)) return "unknown";
  return std::string(kFamily[fam]) + "_" + kGroup[rg] + kGroup[cg];
}

}  // namespace cekf
