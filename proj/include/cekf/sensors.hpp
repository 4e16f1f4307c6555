#pragma once

// Software rig for replaying trajectories: ground-truth splines, synthetic
// IMU and range streams with datasheet quantization, and the injected
// body-oscillation vibration.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cekf/dynamics.hpp"
#include "cekf/ekf.hpp"

namespace cekf {

inline constexpr double kGravity = 9.81;

// Datasheet resolutions.
inline constexpr double kAccelLsb = kGravity / 2048.0;            // m/s^2
inline constexpr double kAccelRange = 16.0 * kGravity;            // m/s^2
inline constexpr double kGyroLsb = (1.0 / 16.4) * kDegToRad;      // rad/s
inline constexpr double kGyroRange = 2000.0 * kDegToRad;          // rad/s
inline constexpr double kMagLsb = 0.15;                           // uT
inline constexpr double kMagRange = 4900.0;                       // uT
inline constexpr double kTofLsb = 0.78e-3;                        // m
inline constexpr double kEarthField = 35.0;                       // uT

struct TrajectorySample {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  EulerAngles attitude;
};

using Trajectory = std::vector<TrajectorySample>;

// CSV with header t,x,y,z,phi,theta,psi (SI, radians). With resample_hz the
// samples are moved to a uniform grid by cubic interpolation.
Trajectory load_trajectory(const std::string& path, std::optional<double> resample_hz = {});
void save_trajectory(const std::string& path, const Trajectory& traj);

// Throws EmptyTrajectory or NonMonotonicTime.
void validate_trajectory(const Trajectory& traj);

enum class TrajectoryKind { kHover, kLeafHop, kOscillating };

std::string to_string(TrajectoryKind kind);
TrajectoryKind trajectory_kind_from_string(const std::string& name);

struct TrajectoryParams {
  double sample_hz = 500.0;
  double jitter_deg = 2.0;        // hover and leaf-hop attitude wander amplitude
  double hover_altitude = 0.1;    // m
  double hold_s = 5.0;
  double excursion_deg = 36.0;    // oscillating suite peak |angle|
  double oscillation_s = 10.0;
  double oscillation_hz_lo = 0.6;  // band of the oscillating-suite components
  double oscillation_hz_hi = 1.3;
  std::uint64_t seed = 7;
};

Trajectory generate_trajectory(TrajectoryKind kind, const TrajectoryParams& params = {});

// Euler sequence used to turn ground-truth angles into sensor-frame vectors.
//   kZYX: R = Rz(psi) Ry(theta) Rx(phi), the sequence the accel/mag fix inverts.
//   kXYZ: R = Rx(phi) Ry(theta) Rz(psi), the filter's process-model sequence.
enum class EulerConvention { kZYX, kXYZ };

Mat3 rotation_for(const EulerAngles& q, EulerConvention conv);

// Body angular velocity from Euler angles and their rates.
Vec3 body_rates(const EulerAngles& q, const Vec3& q_dot, EulerConvention conv);

struct TruthPoint {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
  EulerAngles q;       // unwrapped
  Vec3 q_dot = Vec3::Zero();
  Vec3 q_ddot = Vec3::Zero();
};

// Natural cubic splines through every channel of a trajectory. Angles are
// unwrapped before fitting. Evaluation is valid inside the span shrunk by the
// differentiation margin on both ends.
class TrajectorySpline {
 public:
  explicit TrajectorySpline(const Trajectory& traj, double margin_s = 0.02);
  ~TrajectorySpline();
  TrajectorySpline(TrajectorySpline&&) noexcept;
  TrajectorySpline& operator=(TrajectorySpline&&) noexcept;
  TrajectorySpline(const TrajectorySpline&) = delete;
  TrajectorySpline& operator=(const TrajectorySpline&) = delete;

  double t_begin() const;  // first valid evaluation time
  double t_end() const;
  bool in_span(double t) const { return t >= t_begin() && t <= t_end(); }

  // Throws OutOfSpan.
  TruthPoint eval(double t) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct NoiseConfig {
  double accel_noise_sigma = kAccelLsb;
  double gyro_noise_sigma = kGyroLsb;
  Vec3 gyro_bias = Vec3(2.0e-3, -1.5e-3, 1.0e-3);  // rad/s
  double mag_noise_sigma = kMagLsb;
  double tof_noise_sigma = kTofLsb;
  bool quantize = true;
  std::uint64_t seed = 1;

  static NoiseConfig noiseless();
  void validate() const;
};

struct VibrationConfig {
  double duty = 0.0;
  double body_mode_hz = 15.0;
  double amp_x_1g = 1.0;     // x peak-to-peak at the calibration duty, in g
  double amp_y_halfg = 0.5;  // y peak-to-peak at the calibration duty, in g
  // Monotone map duty -> amplitude scale, linear between anchors.
  std::vector<std::pair<double, double>> anchors = {{0.0, 0.0},  {0.3, 1.0},  {0.5, 1.53},
                                                    {0.6, 2.04}, {0.7, 2.35}, {1.0, 3.0}};
  bool irregular = true;           // phase jitter and amplitude wobble above duty 0.5
  double irregular_phase_rad = 0.8;  // at duty 1
  double irregular_amp_frac = 0.3;   // at duty 1
  double wingbeat_hz = 150.0;
  double wingbeat_amp_g = 0.0;     // off unless set
  double gyro_coupling = 0.01;     // (rad/s) per (m/s^2) of injected x/y acceleration
  Vec3 axis_gain = Vec3(1.0, 1.0, 0.0);  // per-axis coupling of the injected signal
  std::uint64_t seed = 11;

  double amplitude_scale() const;  // A(duty)
  void validate() const;
};

// Body-frame acceleration perturbation at time t.
Vec3 vibration_signal(const VibrationConfig& vib, double t);

using Rng = std::mt19937_64;

// Quantizes to the LSB grid and clamps to the symmetric range (also on the grid).
double quantize_to_lsb(double x, double lsb, double range);

struct ImuSample {
  Vec3 acc = Vec3::Zero();
  Vec3 gyr = Vec3::Zero();
  Vec3 mag = Vec3::Zero();
};

struct SensorModel {
  EulerConvention convention = EulerConvention::kZYX;
  Vec3 world_field = Vec3(kEarthField, 0.0, 0.0);  // uT
  double g = kGravity;
};

// One IMU sample; draws noise from rng. Throws OutOfSpan.
ImuSample synth_imu(const TrajectorySpline& traj, double t, const NoiseConfig& noise,
                    const VibrationConfig& vib, Rng& rng, const SensorModel& model = {});

struct TofSample {
  double range = 0.0;
  bool valid = true;  // false beyond 0.2 m
};

TofSample synth_tof(const TrajectorySpline& traj, double t, const NoiseConfig& noise, Rng& rng,
                    const SensorModel& model = {});

struct RigConfig {
  double imu_hz = 225.0;
  double tof_hz = 50.0;
  NoiseConfig noise;
  VibrationConfig vibration;
  SensorModel sensor;
  VehicleParams vehicle;
  ModelOptions model;
};

// Everything the filter consumes plus aligned ground truth, one entry per
// filter tick.
struct SimulatedRun {
  double dt = 0.0;
  std::vector<double> t;
  std::vector<MeasurementVector> rho;
  std::vector<ControlInput> control;
  std::vector<StateVector> truth;  // filter-state view: Euler angles, their rates, v, zeta
};

SimulatedRun synthesize(const TrajectorySpline& traj, const RigConfig& rig);

// CSV columns t,acc_x,acc_y,acc_z,gyr_x,gyr_y,gyr_z,mag_x,mag_y,mag_z,tof,tof_valid.
void write_stream_csv(const std::string& path, const SimulatedRun& run);

}  // namespace cekf
