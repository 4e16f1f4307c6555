#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "cekf/ekf.hpp"
#include "cekf/errors.hpp"
#include "cekf/harness.hpp"
#include "cekf/replay.hpp"
#include "oracles.hpp"

using namespace cekf;

namespace {

const VehicleParams kP;
constexpr double kDt = 1.0 / 225.0;

Mat10 random_spd(std::mt19937_64& rng, double scale = 1.0) {
  Mat10 a;
  for (int i = 0; i < kStateDim; ++i)
    for (int j = 0; j < kStateDim; ++j) a(i, j) = oracle::uniform(rng, -1, 1);
  Mat10 p = scale * (a * a.transpose() + 0.1 * Mat10::Identity());
  p.triangularView<Eigen::StrictlyLower>() = p.transpose();
  return p;
}

template <class M>
double max_abs(const M& m) {
  return m.cwiseAbs().maxCoeff();
}

OutputSelector selector() { return output_selector(); }

GainMatrix dense_gain(const Mat10& P, const Vec4& R) {
  const OutputSelector H = selector();
  const Eigen::Matrix4d S = H * P * H.transpose() + Eigen::Matrix4d(R.asDiagonal());
  return P * H.transpose() * S.inverse();
}

double lag1_autocorrelation(const std::vector<double>& x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    den += (x[k] - mean) * (x[k] - mean);
    if (k > 0) num += (x[k] - mean) * (x[k - 1] - mean);
  }
  return num / den;
}

double min_eig(const Mat10& P) {
  return Eigen::SelfAdjointEigenSolver<Mat10>(P).eigenvalues().minCoeff();
}

}  // namespace

TEST(EkfConfig, DefaultsAndLayouts) {
  const EkfConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.R, Vec4(0.07, 0.07, 0.07, 0.002));
  EXPECT_EQ(c.Q(idx::kZeta), 0.0025);
  EXPECT_EQ(c.Q(idx::kVel), 1.0);
  const Vec10 printed = EkfConfig::tuned_process_noise(QLayout::kAsPrinted);
  EXPECT_EQ(printed(idx::kVel), 0.0025);
  EXPECT_EQ(printed(idx::kZeta), 1.0);
  EXPECT_EQ(printed.head<3>(), Vec3::Constant(0.1));
}

TEST(EkfConfig, RejectsNonPositiveNoise) {
  EkfConfig c;
  c.Q(4) = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EkfConfig{};
  c.R(3) = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EkfState, InitialCovariance) {
  const EkfState e = EkfState::initial(StateVector{}, EkfConfig{});
  EXPECT_EQ(e.P(0, 0), 0.07);
  EXPECT_EQ(e.P(idx::kZeta, idx::kZeta), 0.002);
  EXPECT_EQ(e.P(idx::kOmega, idx::kOmega), 1.0);
  EXPECT_EQ(e.P(0, 1), 0.0);
}

TEST(Predict, NoNoiseAndVanishingStepKeepsCovariance) {
  std::mt19937_64 rng(31);
  EkfConfig c;
  c.Q.setConstant(1e-300);
  EkfState e;
  e.P = random_spd(rng);
  ControlInput u;
  u.thrust = kP.m * kP.g;
  const EkfState out = predict(e, u, 1e-12, c, kP);
  EXPECT_LT((out.P - e.P).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Predict, ZeroPriorGivesProcessNoise) {
  std::mt19937_64 rng(32);
  EkfState e;
  e.s = oracle::random_state(rng);
  e.P.setZero();
  const EkfConfig c;
  const EkfState out = predict(e, oracle::random_control(rng, kP), kDt, c, kP);
  EXPECT_EQ(out.P, Mat10(c.Q.asDiagonal()));
}

TEST(Predict, MatchesDenseTripleProduct) {
  std::mt19937_64 rng(33);
  for (auto method : {JacobianMethod::kNumeric, JacobianMethod::kAnalytic}) {
    EkfConfig c;
    c.jacobian = method;
    for (int k = 0; k < 100; ++k) {
      EkfState e;
      e.s = oracle::random_state(rng);
      e.P = random_spd(rng);
      const ControlInput u = oracle::random_control(rng, kP);
      const Mat10 J = jacobian(e.s, u, kDt, kP, {}, method);
      const Mat10 want = J * e.P * J.transpose() + Mat10(c.Q.asDiagonal());
      const EkfState got = predict(e, u, kDt, c, kP);
      // Rounding in a triple product scales with |J||P||J|^T, not with the
      // result. The structured product treats the known zero and unit
      // entries of J as exact, so the finite-difference noise in those
      // entries bounds the numeric case instead.
      const Mat10 scale = J.cwiseAbs() * e.P.cwiseAbs() * J.cwiseAbs().transpose();
      double tol = 1e-12;
      if (method == JacobianMethod::kNumeric) {
        const Mat10 ja = jacobian(e.s, u, kDt, kP, {}, JacobianMethod::kAnalytic);
        for (int i = 0; i < kStateDim; ++i)
          for (int j = 0; j < kStateDim; ++j)
            if (ja(i, j) == 0.0 || ja(i, j) == 1.0) ASSERT_LT(std::abs(J(i, j) - ja(i, j)), 1e-8);
        tol = 1e-8;
      }
      ASSERT_LT((got.P - want).cwiseAbs().maxCoeff(), tol * scale.maxCoeff())
          << "method " << static_cast<int>(method) << " sample " << k;
      ASSERT_LT(max_abs(got.s.to_array() - state_transition(e.s, u, kDt, kP).to_array()), 1e-15);
    }
  }
}

TEST(KalmanGain, DistrustedMeasurementsGiveZeroGain) {
  std::mt19937_64 rng(34);
  EkfConfig c;
  c.R.setConstant(1e9);
  const GainMatrix K = kalman_gain(random_spd(rng), c);
  EXPECT_LT(K.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(KalmanGain, ConfidentPriorGivesZeroGain) {
  EXPECT_EQ(kalman_gain(Mat10::Zero(), EkfConfig{}), GainMatrix::Zero());
}

TEST(KalmanGain, MatchesDenseSolve) {
  std::mt19937_64 rng(35);
  const EkfConfig c;
  for (int k = 0; k < 200; ++k) {
    const Mat10 P = random_spd(rng, oracle::uniform(rng, 0.01, 10.0));
    const GainMatrix want = dense_gain(P, c.R);
    ASSERT_LT((kalman_gain(P, c) - want).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(KalmanGain, AltitudeDropoutZeroesRangeColumn) {
  std::mt19937_64 rng(36);
  const EkfConfig c;
  const Mat10 P = random_spd(rng);
  const GainMatrix K = kalman_gain(P, c, false);
  EXPECT_EQ(K.col(3), Vec10::Zero());
  // Three-row oracle.
  Eigen::Matrix<double, 3, kStateDim> H = selector().topRows<3>();
  const Eigen::Matrix3d S = H * P * H.transpose() + Eigen::Matrix3d(c.R.head<3>().asDiagonal());
  const Eigen::Matrix<double, kStateDim, 3> want = P * H.transpose() * S.inverse();
  EXPECT_LT((K.leftCols<3>() - want).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(KalmanGain, IndefiniteInnovationThrows) {
  Mat10 P = Mat10::Identity();
  P(0, 0) = -1.0;
  EXPECT_THROW(kalman_gain(P, EkfConfig{}), NotPositiveDefinite);
}

TEST(Measurement, LevelRange) {
  EXPECT_EQ(measurement_from_sensors({0, 0, 0}, 0.10), Vec4(0, 0, 0, 0.10));
}

TEST(Measurement, TiltCorrectedRange) {
  const Vec4 z = measurement_from_sensors({10 * kDegToRad, 5 * kDegToRad, 0}, 0.12);
  EXPECT_NEAR(z(3), 0.12 * std::cos(10 * kDegToRad) * std::cos(5 * kDegToRad), 1e-15);
  EXPECT_NEAR(z(3), 0.11773, 5e-6);
  EXPECT_DOUBLE_EQ(z(0), 10 * kDegToRad);
}

TEST(Measurement, GroundContact) {
  EXPECT_EQ(measurement_from_sensors({0.1, 0.2, 0.3}, 0.0)(3), 0.0);
}

TEST(Measurement, OutOfRangeThrows) {
  EXPECT_THROW(measurement_from_sensors({0, 0, 0}, 0.25), TofOutOfRange);
  EXPECT_THROW(measurement_from_sensors({0, 0, 0}, -0.01), TofOutOfRange);
}

TEST(Update, ZeroGainKeepsPrior) {
  std::mt19937_64 rng(37);
  EkfState e;
  e.s = oracle::random_state(rng);
  e.P = random_spd(rng);
  const EkfState out = update(e, GainMatrix::Zero(), Vec4(0.3, -0.2, 0.1, 0.05), EkfConfig{});
  EXPECT_EQ(out.s.to_array(), e.s.to_array());
  EXPECT_EQ(out.P, e.P);
}

TEST(Update, ConsistentMeasurementOnlyShrinksCovariance) {
  std::mt19937_64 rng(38);
  EkfState e;
  e.s = oracle::random_state(rng);
  e.P = random_spd(rng);
  const EkfConfig c;
  const GainMatrix K = kalman_gain(e.P, c);
  const Vec4 z = selector() * e.s.to_array();
  const EkfState out = update(e, K, z, c);
  EXPECT_LT(max_abs(out.s.to_array() - e.s.to_array()), 1e-15);
  const Mat10 want = e.P - K * selector() * e.P;
  EXPECT_LT((out.P - want).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(out.P.trace(), e.P.trace());
}

TEST(Update, MatchesDenseEvaluation) {
  std::mt19937_64 rng(39);
  const EkfConfig c;
  for (int k = 0; k < 200; ++k) {
    EkfState e;
    e.s = oracle::random_state(rng);
    e.P = random_spd(rng);
    const GainMatrix K = dense_gain(e.P, c.R);
    Vec4 z = selector() * e.s.to_array();
    for (int a = 0; a < 4; ++a) z(a) += oracle::uniform(rng, -0.1, 0.1);
    const EkfState out = update(e, K, z, c);
    const Vec10 want_s = e.s.to_array() + K * (z - selector() * e.s.to_array());
    const Mat10 want_P = e.P - K * selector() * e.P;
    ASSERT_LT(max_abs(out.s.to_array() - want_s), 1e-12);
    ASSERT_LT((out.P - want_P).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Update, AngleInnovationIsWrapped) {
  EkfState e;
  e.s.q.psi = kPi - 0.01;
  e.P.setIdentity();
  const EkfConfig c;
  const GainMatrix K = kalman_gain(e.P, c);
  const EkfState out = update(e, K, Vec4(0, 0, -kPi + 0.01, 0), c);
  // Innovation is +0.02 rad across the seam, not -2 pi + 0.02.
  EXPECT_NEAR(wrap_angle(out.s.q.psi - e.s.q.psi), K(idx::kPsi, 2) * 0.02, 1e-12);
}

TEST(Cekf, NoiselessHoverEquilibriumHolds) {
  CekfConfig cfg;
  StateVector s;
  s.zeta = 0.1;
  EkfState e = EkfState::initial(s, cfg.ekf);
  CcfState c = CcfState::at(s.q);
  MeasurementVector rho;
  rho.acc = Vec3(0, 0, kP.g);
  rho.mag = Vec3(35, 0, 0);
  rho.tof = 0.1;
  ControlInput u;
  u.thrust = kP.m * kP.g;
  for (int k = 0; k < 1000; ++k) {
    const CekfStepResult r = cekf_step(e, c, rho, u, kDt, cfg);
    e = r.ekf;
    c = r.ccf;
    ASSERT_LT(std::abs(r.output.q.phi), 1e-6);
    ASSERT_LT(std::abs(r.output.q.theta), 1e-6);
    ASSERT_LT(std::abs(r.output.q.psi), 1e-6);
    ASSERT_LT(std::abs(r.output.zeta - 0.1), 1e-6);
  }
}

TEST(Cekf, SkipUpdateOnFactorFailure) {
  CekfConfig cfg;
  cfg.ekf.on_factor_failure = FactorFailure::kSkipUpdate;
  EkfState e = EkfState::initial(StateVector{}, cfg.ekf);
  e.P(0, 0) = -10.0;
  MeasurementVector rho;
  rho.acc = Vec3(0, 0, kP.g);
  rho.mag = Vec3(35, 0, 0);
  ControlInput u;
  u.thrust = kP.m * kP.g;
  const CekfStepResult r = cekf_step(e, CcfState{}, rho, u, kDt, cfg);
  EXPECT_TRUE(r.update_skipped);
  cfg.ekf.on_factor_failure = FactorFailure::kThrow;
  EXPECT_THROW(cekf_step(e, CcfState{}, rho, u, kDt, cfg), NotPositiveDefinite);
}

TEST(Cekf, OutOfRangeTofDropsAltitudeOnly) {
  CekfConfig cfg;
  const EkfState e = EkfState::initial(StateVector{}, cfg.ekf);
  MeasurementVector rho;
  rho.acc = Vec3(0, 0, kP.g);
  rho.mag = Vec3(35, 0, 0);
  rho.tof = 0.3;
  ControlInput u;
  u.thrust = kP.m * kP.g;
  const CekfStepResult r = cekf_step(e, CcfState{}, rho, u, kDt, cfg);
  EXPECT_FALSE(r.altitude_valid);
  EXPECT_TRUE(r.ekf.s.finite());
}

TEST(Cekf, StepFunctionMatchesFilterObject) {
  RunConfig rc;
  rc.trajectory.params.hold_s = 1.0;
  const SimulatedRun run = simulate(rc);
  const InitialStates init = initial_states(run, rc.filter);
  EkfState e = init.ekf;
  CcfState c = init.ccf;
  Cekf filter(rc.filter, init.ekf, init.ccf, run.dt);
  for (std::size_t k = 1; k < run.t.size(); ++k) {
    const CekfStepResult r = cekf_step(e, c, run.rho[k], run.control[k - 1], run.dt, rc.filter);
    filter.step(run.rho[k], run.control[k - 1]);
    e = r.ekf;
    c = r.ccf;
    ASSERT_LT(max_abs(filter.state().to_array() - e.s.to_array()), 1e-12) << "tick " << k;
  }
}

// Drives the public predict/update pieces over a noisy hover stream.
TEST(CekfProperty, CovarianceStaysHealthy) {
  RunConfig rc;
  rc.rig.vibration.duty = 0.3;
  const SimulatedRun run = simulate(rc);
  const InitialStates init = initial_states(run, rc.filter);
  EkfState e = init.ekf;
  CcfState c = init.ccf;
  const CekfConfig& cfg = rc.filter;
  for (std::size_t k = 1; k < run.t.size(); ++k) {
    const MeasurementVector& rho = run.rho[k];
    const CcfStepResult cr = ccf_step(c, cfg.gains, rho.acc, rho.gyr, rho.mag, run.dt);
    c = cr.state;
    const EkfState pred = predict(e, run.control[k - 1], run.dt, cfg.ekf, cfg.vehicle, cfg.model);
    const bool alt = rho.tof_valid && rho.tof <= kTofMaxRange;
    Vec4 z = Vec4::Zero();
    if (alt) z = measurement_from_sensors(cr.output, rho.tof);
    else z.head<3>() = Vec3(cr.output.phi, cr.output.theta, cr.output.psi);
    e = update(pred, kalman_gain(pred.P, cfg.ekf, alt), z, cfg.ekf, alt);
    ASSERT_LT((e.P - e.P.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    ASSERT_GE(min_eig(e.P), -1e-9 * e.P.trace());
    ASSERT_LE(e.P.trace(), pred.P.trace());
  }
}

TEST(CekfProperty, NoiselessHoverErrorDoesNotGrow) {
  RunConfig rc;
  rc.rig.noise = NoiseConfig::noiseless();
  rc.trajectory.params.jitter_deg = 0.0;
  const SimulatedRun run = simulate(rc);
  const InitialStates init = initial_states(run, rc.filter);
  std::vector<double> err;
  replay<double>(run, rc.filter, init, [&](std::size_t k, const Cekf& f) {
    const StateVector& s = run.truth[k];
    const CekfOutput o = f.output();
    err.push_back(Eigen::Vector4d(o.q.phi - s.q.phi, o.q.theta - s.q.theta, o.q.psi - s.q.psi,
                                  o.zeta - s.zeta)
                      .norm());
  });
  // Windows cover the hold phase (constant altitude, no vertical motion)
  // after a 1 s burn-in; take-off and landing ramps are not hover.
  const double z_hold = rc.trajectory.params.hover_altitude;
  std::size_t first = 0, last = 0;
  for (std::size_t k = 1; k < run.truth.size(); ++k) {
    const bool hold = std::abs(run.truth[k].zeta - z_hold) < 1e-12 &&
                      std::abs(run.truth[k].v.z()) < 1e-12;
    if (hold && first == 0) first = k;
    if (hold) last = k;
  }
  ASSERT_GT(first, 0u);
  const std::size_t per_s = static_cast<std::size_t>(1.0 / run.dt);
  ASSERT_GT(last, first + 3 * per_s);
  double prev = std::numeric_limits<double>::infinity();
  // err[i] belongs to tick i + 1.
  for (std::size_t w = first + per_s - 1; w + per_s <= last; w += per_s) {
    const double peak = *std::max_element(err.begin() + w, err.begin() + w + per_s);
    EXPECT_LE(peak, prev + 1e-6) << "window starting at tick " << w;
    EXPECT_LT(peak, 1e-2);
    prev = peak;
  }
}

TEST(CekfProperty, AttitudeInnovationsAreNearlyWhite) {
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig rc;
    rc.seed = seed;
    const SimulatedRun run = simulate(rc);
    const Trace tr = replay<double>(run, rc.filter, initial_states(run, rc.filter));
    for (int a = 0; a < 3; ++a) {
      std::vector<double> x;
      for (std::size_t k = 1; k < tr.innovation.size(); ++k) x.push_back(tr.innovation[k](a));
      EXPECT_LT(std::abs(lag1_autocorrelation(x)), 0.5) << "seed " << seed << " axis " << a;
    }
  }
}

TEST(CekfProperty, HeldRangeChangesOnlyThroughTilt) {
  RunConfig rc;
  const SimulatedRun run = simulate(rc);
  std::size_t held = 0;
  for (std::size_t k = 1; k < run.rho.size(); ++k) {
    if (run.rho[k].tof != run.rho[k - 1].tof) continue;
    ++held;
    const EulerAngles a{0.1, -0.05, 0.0}, b{0.12, -0.02, 0.3};
    const Vec4 za = measurement_from_sensors(a, run.rho[k - 1].tof);
    const Vec4 zb = measurement_from_sensors(b, run.rho[k].tof);
    ASSERT_NEAR(za(3) / (std::cos(a.phi) * std::cos(a.theta)),
                zb(3) / (std::cos(b.phi) * std::cos(b.theta)), 1e-15);
  }
  // Range updates at 50 Hz against 225 Hz ticks: most ticks hold.
  EXPECT_GT(static_cast<double>(held) / run.rho.size(), 0.7);
}

TEST(CekfAccuracy, NoisyHoverWithinBounds) {
  RunConfig rc;
  const RunResult r = run(rc);
  EXPECT_LT(r.row.roll_deg, 3.0);
  EXPECT_LT(r.row.pitch_deg, 3.0);
  EXPECT_LT(r.row.yaw_deg, 3.0);
  EXPECT_LT(r.row.altitude_mm, 2.5);
}

TEST(CekfAccuracy, OscillatingSuiteWithinBound) {
  RunConfig rc;
  rc.trajectory.kind = TrajectoryKind::kOscillating;
  const RunResult r = run(rc);
  EXPECT_LE(r.row.mean_attitude_deg(), 8.0);
}
