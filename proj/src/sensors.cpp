#include "cekf/sensors.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_spline.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace cekf {

// ---------------------------------------------------------------------------
// Trajectory I/O

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, std::size_t row) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  const auto res = std::from_chars(first, last, v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    throw ParseError(row, "not a finite number: '" + cell + "'");
  }
  return v;
}

}  // namespace

void validate_trajectory(const Trajectory& traj) {
  if (traj.empty()) throw EmptyTrajectory("trajectory has no samples");
  for (std::size_t k = 1; k < traj.size(); ++k) {
    if (!(traj[k].t > traj[k - 1].t)) throw NonMonotonicTime(k);
  }
}

Trajectory load_trajectory(const std::string& path, std::optional<double> resample_hz) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trajectory file " + path);
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line)) throw EmptyTrajectory("trajectory file is empty: " + path);
  ++row;
  const std::vector<std::string> expected = {"t", "x", "y", "z", "phi", "theta", "psi"};
  if (split_csv(line) != expected) throw ParseError(row, "header must be t,x,y,z,phi,theta,psi");
  Trajectory traj;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != expected.size()) {
      throw ParseError(row, "expected 7 columns, found " + std::to_string(cells.size()));
    }
    std::array<double, 7> v{};
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = parse_number(cells[c], row);
    TrajectorySample s;
    s.t = v[0];
    s.position = Vec3(v[1], v[2], v[3]);
    s.attitude = {v[4], v[5], v[6]};
    traj.push_back(s);
  }
  validate_trajectory(traj);
  if (!resample_hz) return traj;
  if (!(*resample_hz > 0.0)) throw ConfigError("resample rate must be positive");
  const TrajectorySpline spline(traj, 0.0);
  Trajectory out;
  const double step = 1.0 / *resample_hz;
  const double t0 = traj.front().t;
  const double t1 = traj.back().t;
  for (long k = 0;; ++k) {
    const double t = t0 + static_cast<double>(k) * step;
    if (t > t1 + 1e-12) break;
    const TruthPoint p = spline.eval(std::min(t, t1));
    out.push_back({t, p.position, p.q});
  }
  return out;
}

void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "t,x,y,z,phi,theta,psi\n" << std::setprecision(12);
  for (const auto& s : traj) {
    out << s.t << ',' << s.position.x() << ',' << s.position.y() << ',' << s.position.z() << ','
        << s.attitude.phi << ',' << s.attitude.theta << ',' << s.attitude.psi << '\n';
  }
}

// ---------------------------------------------------------------------------
// Generators

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kHover:
      return "hover";
    case TrajectoryKind::kLeafHop:
      return "leaf_hop";
    case TrajectoryKind::kOscillating:
      return "oscillating";
  }
  return "unknown";
}

TrajectoryKind trajectory_kind_from_string(const std::string& name) {
  if (name == "hover") return TrajectoryKind::kHover;
  if (name == "leaf_hop") return TrajectoryKind::kLeafHop;
  if (name == "oscillating") return TrajectoryKind::kOscillating;
  throw ConfigError("unknown trajectory kind '" + name + "'");
}

namespace {

// Quintic rest-to-rest blend: zero first and second derivative at both ends.
double blend5(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

// Ninth-order blend: derivatives one through four vanish at both ends.
double blend9(double u) {
  u = std::clamp(u, 0.0, 1.0);
  const double u5 = u * u * u * u * u;
  return u5 * (126.0 + u * (-420.0 + u * (540.0 + u * (-315.0 + 70.0 * u))));
}

double blend9_dd(double u) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  const double u3 = u * u * u;
  return u3 * (2520.0 + u * (-12600.0 + u * (22680.0 + u * (-17640.0 + 5040.0 * u))));
}

// Sum of three sinusoids per axis with random frequencies and phases; the
// weights sum to one so the magnitude never exceeds one.
struct Wander {
  std::array<std::array<double, 3>, 3> freq{};
  std::array<std::array<double, 3>, 3> phase{};
  std::array<std::array<double, 3>, 3> weight{};

  Wander(std::uint64_t seed, double f_lo, double f_hi) {
    Rng rng(seed);
    std::uniform_real_distribution<double> uf(f_lo, f_hi);
    std::uniform_real_distribution<double> up(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> uw(0.5, 1.0);
    for (int a = 0; a < 3; ++a) {
      double sum = 0.0;
      for (int j = 0; j < 3; ++j) {
        freq[a][j] = uf(rng);
        phase[a][j] = up(rng);
        weight[a][j] = uw(rng);
        sum += weight[a][j];
      }
      for (int j = 0; j < 3; ++j) weight[a][j] /= sum;
    }
  }

  double at(int axis, double t) const {
    double v = 0.0;
    for (int j = 0; j < 3; ++j) v += weight[axis][j] * std::sin(2.0 * kPi * freq[axis][j] * t + phase[axis][j]);
    return v;
  }
};

Trajectory sample(double duration, double hz,
                  const std::function<TrajectorySample(double)>& f) {
  Trajectory out;
  const long n = static_cast<long>(std::floor(duration * hz + 1e-9));
  out.reserve(static_cast<std::size_t>(n) + 1);
  for (long k = 0; k <= n; ++k) out.push_back(f(static_cast<double>(k) / hz));
  return out;
}

Trajectory hover(const TrajectoryParams& p) {
  const double pre = 0.5, rise = 1.5, descend = 1.5, post = 0.5;
  const double t_hold = pre + rise;
  const double t_down = t_hold + p.hold_s;
  const double total = t_down + descend + post;
  const double amp = p.jitter_deg * kDegToRad;
  const Wander wander(p.seed, 0.2, 1.2);
  return sample(total, p.sample_hz, [&](double t) {
    TrajectorySample s;
    s.t = t;
    const double up = blend5((t - pre) / rise);
    const double down = blend5((t - t_down) / descend);
    s.position = Vec3(0.0, 0.0, p.hover_altitude * (up - down));
    const double w = blend9((t - pre) / rise) - blend9((t - t_down) / descend);
    s.attitude = {amp * w * wander.at(0, t), amp * w * wander.at(1, t), amp * w * wander.at(2, t)};
    return s;
  });
}

Trajectory leaf_hop(const TrajectoryParams& p) {
  const double z0 = 0.03, z1 = 0.09, dx = 0.06;
  const double pre = 0.5, climb = 1.0, transfer = 2.5, descend = 1.0, post = 0.5;
  const double t_tr = pre + climb;
  const double t_down = t_tr + transfer;
  const double total = t_down + descend + post;
  const double amp = p.jitter_deg * kDegToRad;
  const Wander wander(p.seed, 0.2, 1.2);
  return sample(total, p.sample_hz, [&](double t) {
    TrajectorySample s;
    s.t = t;
    const double u = (t - t_tr) / transfer;
    const double x = dx * blend9(u);
    const double ax = dx * blend9_dd(u) / (transfer * transfer);
    const double z = z0 + (z1 - z0) * (blend5((t - pre) / climb) - blend5((t - t_down) / descend));
    s.position = Vec3(x, 0.0, z);
    const double w = blend9((t - pre) / climb) - blend9((t - t_down) / descend);
    s.attitude = {amp * w * wander.at(0, t), std::atan2(ax, kGravity) + amp * w * wander.at(1, t),
                  amp * w * wander.at(2, t)};
    return s;
  });
}

Trajectory oscillating(const TrajectoryParams& p) {
  const double ramp = 1.0;
  const double total = ramp + p.oscillation_s;
  const Wander wander(p.seed, p.oscillation_hz_lo, p.oscillation_hz_hi);
  Trajectory out = sample(total, p.sample_hz, [&](double t) {
    TrajectorySample s;
    s.t = t;
    s.position = Vec3(0.0, 0.0, 0.08);
    const double w = blend9(t / ramp);
    s.attitude = {w * wander.at(0, t), w * wander.at(1, t), w * wander.at(2, t)};
    return s;
  });
  // Scale each axis so its peak magnitude equals the requested excursion.
  std::array<double, 3> peak{};
  for (const auto& s : out) {
    peak[0] = std::max(peak[0], std::abs(s.attitude.phi));
    peak[1] = std::max(peak[1], std::abs(s.attitude.theta));
    peak[2] = std::max(peak[2], std::abs(s.attitude.psi));
  }
  const double target = p.excursion_deg * kDegToRad;
  for (auto& s : out) {
    s.attitude.phi *= target / peak[0];
    s.attitude.theta *= target / peak[1];
    s.attitude.psi *= target / peak[2];
  }
  return out;
}

}  // namespace

Trajectory generate_trajectory(TrajectoryKind kind, const TrajectoryParams& params) {
  if (!(params.sample_hz > 0.0) || !(params.hold_s > 0.0) || !(params.oscillation_s > 0.0)) {
    throw ConfigError("trajectory durations and rates must be positive");
  }
  switch (kind) {
    case TrajectoryKind::kHover:
      return hover(params);
    case TrajectoryKind::kLeafHop:
      return leaf_hop(params);
    case TrajectoryKind::kOscillating:
      return oscillating(params);
  }
  throw ConfigError("unknown trajectory kind");
}

// ---------------------------------------------------------------------------
// Kinematics

namespace {

Mat3 rx(double a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}
Mat3 ry(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}
Mat3 rz(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

}  // namespace

Mat3 rotation_for(const EulerAngles& q, EulerConvention conv) {
  if (conv == EulerConvention::kZYX) return rz(q.psi) * ry(q.theta) * rx(q.phi);
  return rotation_world_from_body(q);
}

Vec3 body_rates(const EulerAngles& q, const Vec3& qd, EulerConvention conv) {
  if (conv == EulerConvention::kZYX) {
    const double sf = std::sin(q.phi), cf = std::cos(q.phi);
    const double st = std::sin(q.theta), ct = std::cos(q.theta);
    return Vec3(qd(0) - st * qd(2), cf * qd(1) + sf * ct * qd(2), -sf * qd(1) + cf * ct * qd(2));
  }
  // R = Rx Ry Rz: each rate acts about an axis carried by the later rotations.
  const Mat3 z_t = rz(q.psi).transpose();
  const Mat3 y_t = ry(q.theta).transpose();
  return z_t * y_t * Vec3(qd(0), 0, 0) + z_t * Vec3(0, qd(1), 0) + Vec3(0, 0, qd(2));
}

// ---------------------------------------------------------------------------
// Spline

struct TrajectorySpline::Impl {
  std::array<gsl_spline*, 6> channels{};
  double t0 = 0.0;
  double t1 = 0.0;
  double margin = 0.0;

  ~Impl() {
    for (auto* s : channels)
      if (s) gsl_spline_free(s);
  }
};

TrajectorySpline::TrajectorySpline(const Trajectory& traj, double margin_s)
    : impl_(std::make_unique<Impl>()) {
  validate_trajectory(traj);
  if (traj.size() < 3) throw EmptyTrajectory("trajectory needs at least 3 samples");
  gsl_set_error_handler_off();
  const std::size_t n = traj.size();
  std::vector<double> t(n);
  std::array<std::vector<double>, 6> y;
  for (auto& c : y) c.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = traj[k];
    t[k] = s.t;
    y[0][k] = s.position.x();
    y[1][k] = s.position.y();
    y[2][k] = s.position.z();
    y[3][k] = s.attitude.phi;
    y[4][k] = s.attitude.theta;
    y[5][k] = s.attitude.psi;
  }
  for (int c = 3; c < 6; ++c) {
    for (std::size_t k = 1; k < n; ++k) {
      const double d = y[c][k] - y[c][k - 1];
      y[c][k] = y[c][k - 1] + wrap_angle(d);
    }
  }
  for (int c = 0; c < 6; ++c) {
    impl_->channels[c] = gsl_spline_alloc(gsl_interp_cspline, n);
    if (!impl_->channels[c] || gsl_spline_init(impl_->channels[c], t.data(), y[c].data(), n)) {
      throw Error("spline fit failed");
    }
  }
  impl_->t0 = t.front();
  impl_->t1 = t.back();
  // The natural end condition pulls the second derivative to zero at the
  // ends; its influence decays within a few knots.
  const double mean_step = (impl_->t1 - impl_->t0) / static_cast<double>(n - 1);
  impl_->margin = margin_s > 0.0 ? std::max(margin_s, 8.0 * mean_step) : 0.0;
  if (impl_->t0 + impl_->margin > impl_->t1 - impl_->margin) {
    throw EmptyTrajectory("trajectory shorter than the differentiation margin");
  }
}

TrajectorySpline::~TrajectorySpline() = default;
TrajectorySpline::TrajectorySpline(TrajectorySpline&&) noexcept = default;
TrajectorySpline& TrajectorySpline::operator=(TrajectorySpline&&) noexcept = default;

double TrajectorySpline::t_begin() const { return impl_->t0 + impl_->margin; }
double TrajectorySpline::t_end() const { return impl_->t1 - impl_->margin; }

TruthPoint TrajectorySpline::eval(double t) const {
  if (!(t >= t_begin() - 1e-12 && t <= t_end() + 1e-12)) {
    throw OutOfSpan("t = " + std::to_string(t) + " outside [" + std::to_string(t_begin()) +
                    ", " + std::to_string(t_end()) + "]");
  }
  t = std::clamp(t, impl_->t0, impl_->t1);
  auto v = [&](int c) { return gsl_spline_eval(impl_->channels[c], t, nullptr); };
  auto d1 = [&](int c) { return gsl_spline_eval_deriv(impl_->channels[c], t, nullptr); };
  auto d2 = [&](int c) { return gsl_spline_eval_deriv2(impl_->channels[c], t, nullptr); };
  TruthPoint p;
  p.t = t;
  p.position = Vec3(v(0), v(1), v(2));
  p.velocity = Vec3(d1(0), d1(1), d1(2));
  p.accel = Vec3(d2(0), d2(1), d2(2));
  p.q = {v(3), v(4), v(5)};
  p.q_dot = Vec3(d1(3), d1(4), d1(5));
  p.q_ddot = Vec3(d2(3), d2(4), d2(5));
  return p;
}

// ---------------------------------------------------------------------------
// Noise and vibration

NoiseConfig NoiseConfig::noiseless() {
  NoiseConfig n;
  n.accel_noise_sigma = 0.0;
  n.gyro_noise_sigma = 0.0;
  n.gyro_bias = Vec3::Zero();
  n.mag_noise_sigma = 0.0;
  n.tof_noise_sigma = 0.0;
  n.quantize = false;
  return n;
}

void NoiseConfig::validate() const {
  if (accel_noise_sigma < 0 || gyro_noise_sigma < 0 || mag_noise_sigma < 0 ||
      tof_noise_sigma < 0 || !gyro_bias.allFinite()) {
    throw ConfigError("noise sigmas must be non-negative");
  }
}

double VibrationConfig::amplitude_scale() const {
  if (anchors.empty()) return 0.0;
  if (duty <= anchors.front().first) return anchors.front().second;
  for (std::size_t k = 1; k < anchors.size(); ++k) {
    const auto& [d0, a0] = anchors[k - 1];
    const auto& [d1, a1] = anchors[k];
    if (duty <= d1) return a0 + (a1 - a0) * (duty - d0) / (d1 - d0);
  }
  return anchors.back().second;
}

void VibrationConfig::validate() const {
  if (!(duty >= 0.0 && duty <= 1.0)) throw ConfigError("duty must lie in [0, 1]");
  if (!(body_mode_hz > 0.0) || !(wingbeat_hz > 0.0)) throw ConfigError("frequencies must be positive");
  if (anchors.size() < 2) throw ConfigError("vibration map needs at least two anchors");
  for (std::size_t k = 1; k < anchors.size(); ++k) {
    if (!(anchors[k].first > anchors[k - 1].first) || anchors[k].second < anchors[k - 1].second) {
      throw ConfigError("vibration anchors must be increasing in duty and non-decreasing in amplitude");
    }
  }
  if (amp_x_1g < 0 || amp_y_halfg < 0 || wingbeat_amp_g < 0) {
    throw ConfigError("vibration amplitudes must be non-negative");
  }
}

Vec3 vibration_signal(const VibrationConfig& vib, double t) {
  const double a = vib.amplitude_scale();
  Vec3 out = Vec3::Zero();
  if (a > 0.0) {
    double phase_jitter = 0.0;
    double wobble = 1.0;
    if (vib.irregular && vib.duty > 0.5) {
      const double k = std::min(1.0, (vib.duty - 0.5) / 0.5);
      const Wander w(vib.seed, 0.5, 4.0);
      phase_jitter = k * vib.irregular_phase_rad * w.at(0, t);
      wobble = 1.0 + k * vib.irregular_amp_frac * w.at(1, t);
    }
    const double arg = 2.0 * kPi * vib.body_mode_hz * t + phase_jitter;
    out.x() = 0.5 * a * vib.amp_x_1g * kGravity * wobble * std::sin(arg);
    out.y() = 0.5 * a * vib.amp_y_halfg * kGravity * wobble * std::sin(arg + 0.5 * kPi);
  }
  if (vib.wingbeat_amp_g > 0.0) {
    out.x() += 0.5 * vib.wingbeat_amp_g * kGravity * std::sin(2.0 * kPi * vib.wingbeat_hz * t);
  }
  return out.cwiseProduct(vib.axis_gain);
}

double quantize_to_lsb(double x, double lsb, double range) {
  const double max_steps = std::floor(range / lsb + 1e-9);
  const double n = std::clamp(std::nearbyint(x / lsb), -max_steps, max_steps);
  return n * lsb;
}

namespace {

Vec3 gaussian3(Rng& rng, double sigma) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const double a = nd(rng);
  const double b = nd(rng);
  const double c = nd(rng);
  return sigma * Vec3(a, b, c);
}

Vec3 quantize3(const Vec3& v, double lsb, double range) {
  return Vec3(quantize_to_lsb(v(0), lsb, range), quantize_to_lsb(v(1), lsb, range),
              quantize_to_lsb(v(2), lsb, range));
}

}  // namespace

ImuSample synth_imu(const TrajectorySpline& traj, double t, const NoiseConfig& noise,
                    const VibrationConfig& vib, Rng& rng, const SensorModel& model) {
  const TruthPoint p = traj.eval(t);
  const Mat3 r = rotation_for(p.q, model.convention);
  const Mat3 r_bw = r.transpose();
  const Vec3 shake = vibration_signal(vib, t);
  ImuSample s;
  s.acc = r_bw * (p.accel + Vec3(0, 0, model.g)) + shake + gaussian3(rng, noise.accel_noise_sigma);
  s.gyr = body_rates(p.q, p.q_dot, model.convention) + vib.gyro_coupling * shake +
          noise.gyro_bias + gaussian3(rng, noise.gyro_noise_sigma);
  s.mag = r_bw * model.world_field + gaussian3(rng, noise.mag_noise_sigma);
  if (noise.quantize) {
    s.acc = quantize3(s.acc, kAccelLsb, kAccelRange);
    s.gyr = quantize3(s.gyr, kGyroLsb, kGyroRange);
    s.mag = quantize3(s.mag, kMagLsb, kMagRange);
  }
  return s;
}

TofSample synth_tof(const TrajectorySpline& traj, double t, const NoiseConfig& noise, Rng& rng,
                    const SensorModel& model) {
  const TruthPoint p = traj.eval(t);
  const Mat3 r = rotation_for(p.q, model.convention);
  std::normal_distribution<double> nd(0.0, 1.0);
  double range = p.position.z() / r(2, 2) + noise.tof_noise_sigma * nd(rng);
  range = std::max(0.0, range);
  if (noise.quantize) range = std::nearbyint(range / kTofLsb) * kTofLsb;
  return {range, range <= kTofMaxRange};
}

SimulatedRun synthesize(const TrajectorySpline& traj, const RigConfig& rig) {
  if (!(rig.imu_hz > 0.0) || !(rig.tof_hz > 0.0)) throw ConfigError("sample rates must be positive");
  rig.noise.validate();
  rig.vibration.validate();
  rig.vehicle.validate();
  SimulatedRun run;
  run.dt = 1.0 / rig.imu_hz;
  Rng rng(rig.noise.seed);
  const double t0 = traj.t_begin();
  const double tof_step = 1.0 / rig.tof_hz;
  long next_tof = 0;
  TofSample held;
  for (long k = 0;; ++k) {
    const double t = t0 + static_cast<double>(k) * run.dt;
    if (t > traj.t_end()) break;
    MeasurementVector rho;
    const ImuSample imu = synth_imu(traj, t, rig.noise, rig.vibration, rng, rig.sensor);
    rho.acc = imu.acc;
    rho.gyr = imu.gyr;
    rho.mag = imu.mag;
    const double t_tof = t0 + static_cast<double>(next_tof) * tof_step;
    if (t_tof <= t + 1e-12) {
      held = synth_tof(traj, t_tof, rig.noise, rng, rig.sensor);
      ++next_tof;
    }
    rho.tof = held.range;
    rho.tof_valid = held.valid;

    const TruthPoint p = traj.eval(t);
    StateVector s;
    s.q = p.q;
    s.omega = p.q_dot;
    s.v = p.velocity;
    // Spline ringing near the ground can leave values like -1e-144.
    s.zeta = std::max(p.position.z(), 0.0);
    run.t.push_back(t);
    run.rho.push_back(rho);
    run.truth.push_back(s);
    run.control.push_back(inverse_control(s, p.q_ddot, p.accel, rig.vehicle, rig.model));
  }
  return run;
}

void write_stream_csv(const std::string& path, const SimulatedRun& run) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "t,acc_x,acc_y,acc_z,gyr_x,gyr_y,gyr_z,mag_x,mag_y,mag_z,tof,tof_valid\n"
      << std::setprecision(12);
  for (std::size_t k = 0; k < run.t.size(); ++k) {
    const auto& r = run.rho[k];
    out << run.t[k] << ',' << r.acc(0) << ',' << r.acc(1) << ',' << r.acc(2) << ',' << r.gyr(0)
        << ',' << r.gyr(1) << ',' << r.gyr(2) << ',' << r.mag(0) << ',' << r.mag(1) << ','
        << r.mag(2) << ',' << r.tof << ',' << (r.tof_valid ? 1 : 0) << '\n';
  }
}

}  // namespace cekf
