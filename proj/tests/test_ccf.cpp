#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "cekf/ccf.hpp"
#include "cekf/errors.hpp"
#include "oracles.hpp"

using namespace cekf;

namespace {

constexpr double kG = 9.81;
const Vec3 kField(30.0, 0.0, -20.0);  // uT, north and down components

Vec3 to_vec(const EulerAngles& q) { return Vec3(q.phi, q.theta, q.psi); }

// Body-frame gravity reaction and field at attitude q.
Vec3 body_accel(const EulerAngles& q) { return oracle::r_zyx(q).transpose() * Vec3(0, 0, kG); }
Vec3 body_field(const EulerAngles& q, const Vec3& world = kField) {
  return oracle::r_zyx(q).transpose() * world;
}

// Body rates from Euler rates via omega^ = R^T dR/dt, R differentiated by
// central differences.
Vec3 body_rates_fd(const EulerAngles& q, const Vec3& q_dot) {
  const double h = 1e-6;
  const EulerAngles a{q.phi + h * q_dot(0), q.theta + h * q_dot(1), q.psi + h * q_dot(2)};
  const EulerAngles b{q.phi - h * q_dot(0), q.theta - h * q_dot(1), q.psi - h * q_dot(2)};
  const Mat3 rdot = (oracle::r_zyx(a) - oracle::r_zyx(b)) / (2.0 * h);
  const Mat3 w = oracle::r_zyx(q).transpose() * rdot;
  return Vec3(w(2, 1), w(0, 2), w(1, 0));
}

struct SinusoidRun {
  double ccf_rmse = 0.0;
  double drift_at_end = 0.0;
};

// 0.5 Hz sinusoidal attitude, biased gyro, exact accel/mag, 225 Hz.
SinusoidRun run_sinusoid(double bias, double duration, const CcfGains& gains) {
  const double dt = 1.0 / 225.0;
  const double w = 2.0 * kPi * 0.5;
  const Vec3 amp(0.3, 0.2, 0.4);
  auto truth = [&](double t) {
    return EulerAngles{amp(0) * std::sin(w * t), amp(1) * std::sin(w * t + 1.0),
                       amp(2) * std::sin(w * t + 2.0)};
  };
  auto truth_rate = [&](double t) {
    return Vec3(amp(0) * w * std::cos(w * t), amp(1) * w * std::cos(w * t + 1.0),
                amp(2) * w * std::cos(w * t + 2.0));
  };
  CcfState s = CcfState::at(truth(0.0));
  CcfState gyro_only = s;
  double sq = 0.0;
  long n = 0;
  const long steps = static_cast<long>(duration / dt);
  for (long k = 1; k <= steps; ++k) {
    const double t = k * dt;
    const EulerAngles q = truth(t);
    const Vec3 gyr = body_rates_fd(q, truth_rate(t)) + Vec3::Constant(bias);
    const CcfStepResult r = ccf_step(s, gains, body_accel(q), gyr, body_field(q), dt);
    s = r.state;
    integrate_gyro(gyro_only, gyr, dt);
    if (t >= 5.0) {
      const Vec3 e = to_vec(r.output) - to_vec(q);
      sq += e.squaredNorm() / 3.0;
      ++n;
    }
  }
  SinusoidRun out;
  out.ccf_rmse = std::sqrt(sq / n);
  out.drift_at_end = bias * steps * dt;
  return out;
}

}  // namespace

TEST(IntegrateGyro, ZeroInputStaysAtZero) {
  CcfState s;
  const EulerAngles q = integrate_gyro(s, Vec3::Zero(), 0.01);
  EXPECT_EQ(to_vec(q), Vec3::Zero());
}

TEST(IntegrateGyro, ConstantRateRectangleRule) {
  CcfState s;
  for (int k = 0; k < 1000; ++k) integrate_gyro(s, Vec3(0.1, 0, 0), 0.01);
  EXPECT_NEAR(s.q1.phi, 1.0, 1e-12);
  EXPECT_EQ(s.q1.theta, 0.0);
  EXPECT_EQ(s.q1.psi, 0.0);
}

TEST(IntegrateGyro, BiasDriftsLinearly) {
  const Vec3 b(0.02, -0.05, 0.01);
  CcfState s;
  const double dt = 1.0 / 225.0;
  const int n = 225 * 7;
  for (int k = 0; k < n; ++k) integrate_gyro(s, b, dt);
  EXPECT_LT((to_vec(s.q1) - b * (n * dt)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AccelMag, LevelWithFieldAlongX) {
  const EulerAngles q = accel_mag_attitude(Vec3(0, 0, kG), Vec3(35, 0, 0));
  EXPECT_NEAR(q.phi, 0.0, 1e-15);
  EXPECT_NEAR(q.theta, 0.0, 1e-15);
  EXPECT_NEAR(q.psi, 0.0, 1e-15);
}

TEST(AccelMag, RecoversForwardRotatedAttitude) {
  std::mt19937_64 rng(21);
  for (int k = 0; k < 2000; ++k) {
    const EulerAngles q{oracle::uniform(rng, -kPi * 0.95, kPi * 0.95),
                        oracle::uniform(rng, -60 * kDegToRad, 60 * kDegToRad),
                        oracle::uniform(rng, -kPi * 0.95, kPi * 0.95)};
    const EulerAngles got = accel_mag_attitude(body_accel(q), body_field(q));
    ASSERT_LT((to_vec(got) - to_vec(q)).cwiseAbs().maxCoeff(), 1e-9) << "sample " << k;
  }
}

TEST(AccelMag, ScaleInvariant) {
  const EulerAngles q{0.2, -0.4, 1.0};
  const EulerAngles a = accel_mag_attitude(body_accel(q), body_field(q));
  const EulerAngles b = accel_mag_attitude(3.0 * body_accel(q), 0.5 * body_field(q));
  EXPECT_LT((to_vec(a) - to_vec(b)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AccelMag, PitchSingularityIsReported) {
  EXPECT_THROW(accel_mag_attitude(Vec3(kG, 0, 0), Vec3(35, 0, 0)), SingularDenominator);
}

TEST(AccelMag, LowNormIsReported) {
  EXPECT_THROW(accel_mag_attitude(Vec3(0, 0, 0.05 * kG), Vec3(35, 0, 0)), LowAccelNorm);
}

TEST(CcfGains, Validation) {
  CcfGains g;
  EXPECT_NO_THROW(g.validate());
  g.alpha = 1.0;
  EXPECT_NO_THROW(g.validate());
  g.alpha = 0.0;
  EXPECT_THROW(g.validate(), ConfigError);
  g = CcfGains{};
  g.kp = 0.0;
  EXPECT_THROW(g.validate(), ConfigError);
  g = CcfGains{};
  g.ki = -0.1;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(EulerRates, InvertsBodyRateKinematics) {
  std::mt19937_64 rng(22);
  for (int k = 0; k < 500; ++k) {
    const EulerAngles q{oracle::uniform(rng, -1.0, 1.0), oracle::uniform(rng, -1.2, 1.2),
                        oracle::uniform(rng, -3.0, 3.0)};
    const Vec3 q_dot(oracle::uniform(rng, -2, 2), oracle::uniform(rng, -2, 2),
                     oracle::uniform(rng, -2, 2));
    const Vec3 got = kernel::euler_rates<double>(to_vec(q), body_rates_fd(q, q_dot));
    ASSERT_LT((got - q_dot).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(CcfStep, MatchesOneStepOracle) {
  std::mt19937_64 rng(23);
  for (auto kin : {GyroKinematics::kBodyRates, GyroKinematics::kEulerRates}) {
    for (int k = 0; k < 200; ++k) {
      CcfGains g;
      g.kinematics = kin;
      g.alpha = oracle::uniform(rng, 0.5, 0.99);
      g.kp = oracle::uniform(rng, 0.1, 5.0);
      g.ki = oracle::uniform(rng, 0.0, 0.5);
      const EulerAngles q_true{oracle::uniform(rng, -0.8, 0.8), oracle::uniform(rng, -0.8, 0.8),
                               oracle::uniform(rng, -2.5, 2.5)};
      CcfState s = CcfState::at({q_true.phi + 0.05, q_true.theta - 0.03, q_true.psi + 0.1});
      s.integrator = Vec3(0.01, -0.02, 0.005);
      const Vec3 gyr(oracle::uniform(rng, -1, 1), oracle::uniform(rng, -1, 1),
                     oracle::uniform(rng, -1, 1));
      const double dt = 1.0 / 225.0;
      const CcfStepResult r = ccf_step(s, g, body_accel(q_true), gyr, body_field(q_true), dt);

      Vec3 rates = gyr;
      if (kin == GyroKinematics::kEulerRates) {
        const EulerAngles h = s.q_hat;
        const double sf = std::sin(h.phi), cf = std::cos(h.phi);
        const double ct = std::cos(h.theta), tt = std::tan(h.theta);
        rates = Vec3(gyr(0) + (gyr(1) * sf + gyr(2) * cf) * tt, gyr(1) * cf - gyr(2) * sf,
                     (gyr(1) * sf + gyr(2) * cf) / ct);
      }
      const Vec3 err = to_vec(q_true) - to_vec(s.q_hat);
      const Vec3 integ = s.integrator + g.ki * err * dt;
      const Vec3 q_hat = to_vec(s.q_hat) + (rates + g.kp * err + integ) * dt;
      const Vec3 out = q_hat + (1.0 - g.alpha) * (to_vec(q_true) - q_hat);
      ASSERT_LT((to_vec(r.state.q_hat) - q_hat).cwiseAbs().maxCoeff(), 1e-9);
      ASSERT_LT((r.state.integrator - integ).cwiseAbs().maxCoeff(), 1e-12);
      ASSERT_LT((to_vec(r.output) - out).cwiseAbs().maxCoeff(), 1e-9);
      ASSERT_LT((to_vec(r.state.q1) - (to_vec(s.q1) + gyr * dt)).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST(CcfStep, StationaryStreamIsEquilibrium) {
  const EulerAngles q{0.3, -0.2, 1.4};
  CcfState s = CcfState::at(q);
  for (int k = 0; k < 1000; ++k) {
    const CcfStepResult r = ccf_step(s, CcfGains{}, body_accel(q), Vec3::Zero(), body_field(q),
                                     1.0 / 225.0);
    s = r.state;
    ASSERT_LT((to_vec(r.output) - to_vec(q)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CcfStep, UnitAlphaOutputsLoopEstimate) {
  CcfGains g;
  g.alpha = 1.0;
  const EulerAngles q{0.1, 0.2, -0.3};
  CcfState s = CcfState::at({0.0, 0.0, 0.0});
  for (int k = 0; k < 50; ++k) {
    const CcfStepResult r =
        ccf_step(s, g, body_accel(q), Vec3(0.01, 0, 0), body_field(q), 1.0 / 225.0);
    s = r.state;
    ASSERT_EQ(to_vec(r.output), to_vec(r.state.q_hat));
  }
}

TEST(CcfStep, DegradedFixIntegratesGyroOnly) {
  CcfGains g;
  g.kinematics = GyroKinematics::kBodyRates;
  CcfState s = CcfState::at({0.1, 0.0, 0.0});
  const Vec3 gyr(0.2, -0.1, 0.3);
  const CcfStepResult r = ccf_step(s, g, Vec3::Zero(), gyr, Vec3(35, 0, 0), 0.01);
  EXPECT_EQ(r.fix, AttitudeFixStatus::kLowAccelNorm);
  EXPECT_LT((to_vec(r.output) - (to_vec(s.q_hat) + gyr * 0.01)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(r.state.integrator, s.integrator);
}

TEST(CcfStep, WrapsAcrossPi) {
  const EulerAngles q{0.0, 0.0, kPi - 0.01};
  CcfState s = CcfState::at({0.0, 0.0, -kPi + 0.01});
  for (int k = 0; k < 2000; ++k) {
    s = ccf_step(s, CcfGains{}, body_accel(q), Vec3::Zero(), body_field(q), 1.0 / 225.0).state;
  }
  EXPECT_NEAR(wrap_angle(s.q_hat.psi - q.psi), 0.0, 1e-3);
  EXPECT_LE(std::abs(s.q_hat.psi), kPi);
}

TEST(CcfStep, IntegratorIsClamped) {
  CcfGains g;
  g.ki = 1000.0;
  g.integrator_limit = 0.5;
  const EulerAngles q{0.0, 0.0, 1.0};
  CcfState s = CcfState::at({0.0, 0.0, -1.0});
  for (int k = 0; k < 100; ++k) {
    s = ccf_step(s, g, body_accel(q), Vec3::Zero(), body_field(q), 0.01).state;
    ASSERT_LE(s.integrator.cwiseAbs().maxCoeff(), 0.5);
  }
}

TEST(WrapAngle, RangeIsHalfOpen) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_NEAR(wrap_angle(-kPi), kPi, 1e-15);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  std::mt19937_64 rng(24);
  for (int k = 0; k < 1000; ++k) {
    const double x = oracle::uniform(rng, -50.0, 50.0);
    const double w = wrap_angle(x);
    ASSERT_GT(w, -kPi);
    ASSERT_LE(w, kPi);
    ASSERT_NEAR(std::remainder(x - w, 2 * kPi), 0.0, 1e-12);
  }
}

TEST(CcfTracking, SinusoidWithBiasBeatsIntegration) {
  const SinusoidRun r = run_sinusoid(0.05, 30.0, CcfGains{});
  EXPECT_LT(r.ccf_rmse, 0.2 * r.drift_at_end) << "rmse " << r.ccf_rmse;
}

TEST(CcfProperty, BiasRejectionIsBoundedInTime) {
  std::mt19937_64 rng(25);
  const double dt = 1.0 / 225.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Vec3 b(oracle::uniform(rng, -0.1, 0.1), oracle::uniform(rng, -0.1, 0.1),
                 oracle::uniform(rng, -0.1, 0.1));
    const EulerAngles q{oracle::uniform(rng, -0.5, 0.5), oracle::uniform(rng, -0.5, 0.5),
                        oracle::uniform(rng, -3, 3)};
    CcfState s = CcfState::at(q);
    CcfState gyro_only = s;
    double err_half = 0.0;
    const int n = static_cast<int>(30.0 / dt);
    double err = 0.0;
    for (int k = 1; k <= n; ++k) {
      const CcfStepResult r = ccf_step(s, CcfGains{}, body_accel(q), b, body_field(q), dt);
      s = r.state;
      integrate_gyro(gyro_only, b, dt);
      err = (to_vec(r.output) - to_vec(q)).norm();
      if (k == n / 2) err_half = err;
    }
    const double drift = (to_vec(gyro_only.q1) - to_vec(q)).norm();
    EXPECT_LT(err / drift, 0.2);
    EXPECT_LE(err, err_half + 1e-9);
  }
}

TEST(CcfProperty, DeterministicBitForBit) {
  auto run = [] {
    std::mt19937_64 rng(26);
    std::normal_distribution<double> noise(0.0, 0.05);
    CcfState s;
    std::vector<Vec3> out;
    for (int k = 0; k < 2000; ++k) {
      const EulerAngles q{0.1 * std::sin(k * 0.01), 0.0, 0.2};
      const Vec3 acc = body_accel(q) + Vec3(noise(rng), noise(rng), noise(rng));
      const CcfStepResult r =
          ccf_step(s, CcfGains{}, acc, Vec3(noise(rng), 0, 0), body_field(q), 1.0 / 225.0);
      s = r.state;
      out.push_back(to_vec(r.output));
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}
