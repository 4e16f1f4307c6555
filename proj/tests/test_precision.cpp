#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cekf/errors.hpp"
#include "cekf/harness.hpp"
#include "cekf/precision.hpp"
#include "json.hpp"

using namespace cekf;
using namespace cekf::precision;

namespace {

const NumberFormat kQ69 = NumberFormat::fixed(16, 9);

double apply(Op op, std::initializer_list<double> args, const NumberFormat& f, OpCounts& c) {
  const std::vector<double> v(args);
  return arith(op, v, f, c);
}

// The duty-0.30 leaf-hop run every precision criterion uses.
struct LeafHop {
  RunConfig rc;
  PrecisionInputs in;
  PrecisionReference ref;

  LeafHop() {
    rc.trajectory.kind = TrajectoryKind::kLeafHop;
    rc.rig.vibration.duty = 0.3;
    in.run = simulate(rc);
    in.cfg = rc.filter;
    in.init = initial_states(in.run, rc.filter, rc.alignment_s);
    ref = make_reference(in, rc.precision);
  }
};

const LeafHop& leaf_hop() {
  static const LeafHop l;
  return l;
}

}  // namespace

TEST(Quantize, Float64IsIdentity) {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 1000; ++k) {
    const double x = u(rng);
    ASSERT_EQ(quantize(x, NumberFormat::f64()), x);
  }
}

TEST(Quantize, Q69Examples) {
  EXPECT_EQ(quantize(0.1, kQ69), 51.0 / 512.0);
  EXPECT_EQ(quantize(0.1, kQ69), 0.099609375);
  std::uint64_t sat = 0;
  EXPECT_EQ(quantize(100.0, kQ69, &sat), 32767.0 / 512.0);
  EXPECT_EQ(sat, 1u);
  EXPECT_EQ(quantize(-100.0, kQ69, &sat), -32768.0 / 512.0);
  EXPECT_EQ(sat, 2u);
  EXPECT_EQ(kQ69.max_value(), 32767.0 / 512.0);
  EXPECT_EQ(kQ69.lsb(), 1.0 / 512.0);
}

TEST(Quantize, WrapModeWrapsAround) {
  const NumberFormat f = NumberFormat::fixed(8, 4, Overflow::kWrap);
  // 8.0 is 128 steps: one past the top wraps to the bottom.
  EXPECT_EQ(quantize(8.0, f), -8.0);
  EXPECT_EQ(quantize(7.9375, f), 7.9375);
}

TEST(Quantize, Float32RoundsLikeACast) {
  EXPECT_EQ(quantize(0.1, NumberFormat::f32()), static_cast<double>(0.1f));
}

TEST(QuantizeProperty, IdempotentAndMonotone) {
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> u(-300.0, 300.0);
  const std::vector<NumberFormat> formats = {
      NumberFormat::f32(), NumberFormat::fixed(8, 3), NumberFormat::fixed(16, 9),
      NumberFormat::fixed(32, 20), NumberFormat::fixed(16, 4, Overflow::kSaturate)};
  for (const auto& f : formats) {
    for (int k = 0; k < 20000; ++k) {
      const double x = u(rng);
      const double y = u(rng);
      const double qx = quantize(x, f);
      ASSERT_EQ(quantize(qx, f), qx);
      if (x <= y) ASSERT_LE(qx, quantize(y, f));
      else ASSERT_GE(qx, quantize(y, f));
    }
  }
}

TEST(Arith, AddCountsOneAdd) {
  for (const auto& f : {NumberFormat::f64(), NumberFormat::f32(), kQ69}) {
    OpCounts c;
    EXPECT_EQ(apply(Op::kAdd, {1.0, 2.0}, f, c), 3.0);
    EXPECT_EQ(c.adds, 1u);
    EXPECT_EQ(c.total(), 1u);
  }
}

TEST(Arith, MultiplyRoundsTwice) {
  OpCounts c;
  const double a = quantize(0.1, kQ69);
  const double r = apply(Op::kMul, {a, a}, kQ69, c);
  EXPECT_EQ(r, quantize(0.099609375 * 0.099609375, kQ69));
  EXPECT_EQ(r, 5.0 / 512.0);
  EXPECT_EQ(c.mults, 1u);
}

TEST(Arith, SineOfZero) {
  OpCounts c;
  EXPECT_EQ(apply(Op::kSin, {0.0}, kQ69, c), 0.0);
  EXPECT_EQ(c.trigs, 1u);
}

TEST(Arith, Errors) {
  OpCounts c;
  EXPECT_THROW(apply(Op::kDiv, {1.0, 0.0}, kQ69, c), DivideByZero);
  EXPECT_THROW(apply(Op::kSqrt, {-1.0}, kQ69, c), DomainError);
  EXPECT_THROW(apply(Op::kAdd, {1.0}, kQ69, c), ConfigError);
}

TEST(NumberFormat, ParseAndName) {
  EXPECT_EQ(NumberFormat::parse("f64"), NumberFormat::f64());
  EXPECT_EQ(NumberFormat::parse("float32"), NumberFormat::f32());
  const NumberFormat q = NumberFormat::parse("q6.9");
  EXPECT_EQ(q.total_bits, 16);
  EXPECT_EQ(q.frac_bits, 9);
  EXPECT_EQ(q.name(), "q6.9");
  const NumberFormat a = NumberFormat::parse("fx16");
  EXPECT_TRUE(a.autoscale);
  EXPECT_EQ(a.name(), "fx16");
  EXPECT_EQ(NumberFormat::parse("q3.4:wrap").overflow, Overflow::kWrap);
  EXPECT_THROW(NumberFormat::parse("q3.20"), ConfigError);
  EXPECT_THROW(NumberFormat::parse("fx12"), ConfigError);
  EXPECT_THROW(NumberFormat::parse("decimal"), ConfigError);
  EXPECT_THROW(NumberFormat::fixed(16, 0).validate(), ConfigError);
  EXPECT_THROW(NumberFormat::fixed(16, 16).validate(), ConfigError);
}

TEST(Emulated, RoundsInScopeAndCounts) {
  Context ctx;
  ctx.formats = uniform_formats(kQ69);
  Session s(ctx);
  QuantityScope<Emulated> scope(Quantity::kAngle);
  const Emulated a(0.1);
  EXPECT_EQ(a.value(), 0.099609375);
  const Emulated b = a * a + a;
  EXPECT_EQ(b.value(), quantize(5.0 / 512.0 + 0.099609375, kQ69));
  EXPECT_EQ(ctx.stats.counts.mults, 1u);
  EXPECT_EQ(ctx.stats.counts.adds, 1u);
  EXPECT_EQ((-a).value(), -a.value());
  EXPECT_EQ(ctx.stats.counts.total(), 2u);
}

TEST(Emulated, StoreOnlyRoundsOnStore) {
  Context ctx;
  ctx.formats = uniform_formats(kQ69);
  ctx.mode = EmulationMode::kStoreOnly;
  Session s(ctx);
  QuantityScope<Emulated> scope(Quantity::kAngle);
  Emulated a = Emulated::exact(0.1);
  Emulated b = a * a;
  EXPECT_EQ(b.value(), 0.1 * 0.1);
  Emulated::store(b, quantity_id(Quantity::kAngle));
  EXPECT_EQ(b.value(), quantize(0.1 * 0.1, kQ69));
}

TEST(Emulated, PolynomialTranscendentalsTrackLibm) {
  Context ctx;
  ctx.transcendental = TranscendentalMode::kPolynomial;
  Session s(ctx);
  for (double x = -3.0; x <= 3.0; x += 0.05) {
    ASSERT_NEAR(sin(Emulated::exact(x)).value(), std::sin(x), 1e-9);
    ASSERT_NEAR(cos(Emulated::exact(x)).value(), std::cos(x), 1e-9);
    ASSERT_NEAR(tan(Emulated::exact(x / 3.0)).value(), std::tan(x / 3.0), 1e-9);
    ASSERT_NEAR(atan2(Emulated::exact(x), Emulated::exact(0.7)).value(), std::atan2(x, 0.7), 1e-9);
    ASSERT_NEAR(atan2(Emulated::exact(0.4), Emulated::exact(x)).value(), std::atan2(0.4, x), 1e-9);
    ASSERT_NEAR(atan2(Emulated::exact(-0.4), Emulated::exact(x)).value(), std::atan2(-0.4, x), 1e-9);
  }
}

TEST(RangeRecorder, IntegerWidth) {
  RangeRecorder r;
  const QuantityId id = quantity_id(Quantity::kAngle);
  EXPECT_FALSE(r.integer_width(id, 0.999).has_value());
  for (int k = 0; k < 1000; ++k) r.record(id, 0.3);
  EXPECT_EQ(r.integer_width(id, 0.999), -1);
  r.record(id, 3.0);
  EXPECT_EQ(r.integer_width(id, 0.999), -1);  // one outlier in 1001 samples
  EXPECT_EQ(r.integer_width(id, 1.0), 2);
  EXPECT_EQ(r.max_abs(id), 3.0);
  EXPECT_EQ(r.samples(id), 1001u);
}

TEST(Budget, ReferenceFigure) {
  EXPECT_NEAR(estimate_cycle_budget(1063.0, 100e6, 1.0), 10.63, 1e-12);
  EXPECT_EQ(estimate_cycle_budget(OpCounts{}, 100e6, 1.0), 0.0);
  EXPECT_THROW(estimate_cycle_budget(1.0, 0.0, 1.0), ConfigError);
  EXPECT_THROW(estimate_cycle_budget(1.0, 1e6, -1.0), ConfigError);
}

TEST(WholeFilter, Float64MatchesDoublePathBitForBit) {
  const LeafHop& l = leaf_hop();
  CekfConfig cfg = l.in.cfg;
  cfg.ekf.jacobian = JacobianMethod::kAnalytic;
  cfg.ekf.on_factor_failure = FactorFailure::kSkipUpdate;
  const Trace d = replay<double>(l.in.run, cfg, l.in.init);
  ASSERT_EQ(d.estimate.size(), l.ref.trace.estimate.size());
  for (std::size_t k = 0; k < d.estimate.size(); ++k) {
    ASSERT_EQ(d.estimate[k].q.phi, l.ref.trace.estimate[k].q.phi) << "tick " << k;
    ASSERT_EQ(d.estimate[k].q.theta, l.ref.trace.estimate[k].q.theta);
    ASSERT_EQ(d.estimate[k].q.psi, l.ref.trace.estimate[k].q.psi);
    ASSERT_EQ(d.estimate[k].zeta, l.ref.trace.estimate[k].zeta);
  }
  const PrecisionReport r = run_with_format(l.in, l.ref, NumberFormat::f64());
  EXPECT_EQ(r.added_rmse.roll_deg, 0.0);
  EXPECT_EQ(r.added_rmse.pitch_deg, 0.0);
  EXPECT_EQ(r.added_rmse.yaw_deg, 0.0);
  EXPECT_EQ(r.added_rmse.altitude_mm, 0.0);
}

TEST(WholeFilter, OpCountsAreDeterministic) {
  const LeafHop& l = leaf_hop();
  const PrecisionReport a = run_with_format(l.in, l.ref, NumberFormat::fixed_auto(16));
  const PrecisionReport b = run_with_format(l.in, l.ref, NumberFormat::fixed_auto(16));
  EXPECT_EQ(a.total_counts, b.total_counts);
  EXPECT_EQ(a.ops_per_cycle, b.ops_per_cycle);
  EXPECT_EQ(make_reference(l.in).counts, l.ref.counts);
}

TEST(WholeFilter, SignalPathPoolsToQ6p9At16Bits) {
  const LeafHop& l = leaf_hop();
  const auto w = pooled_integer_width(l.ref.ranges, signal_classes(), 0.999);
  ASSERT_TRUE(w.has_value());
  EXPECT_EQ(*w, 6);
  const PrecisionReport r = run_with_format(l.in, l.ref, NumberFormat::fixed_auto(16));
  ASSERT_TRUE(r.pooled_signal_int_bits.has_value());
  EXPECT_EQ(*r.pooled_signal_int_bits, 6);
  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_EQ(j.at("pooled_signal_q"), "q6.9");
}

TEST(WholeFilter, AutoscaleCoversObservedRange) {
  const LeafHop& l = leaf_hop();
  const FormatTable t = autoscale(l.ref.ranges, 16, Overflow::kSaturate);
  for (Quantity q : {Quantity::kAngle, Quantity::kLinearAccel, Quantity::kMagField}) {
    const QuantityId id = quantity_id(q);
    const auto w = l.ref.ranges.integer_width(id, 0.999);
    ASSERT_TRUE(w.has_value());
    EXPECT_EQ(t[id.value].total_bits, 16);
    EXPECT_EQ(t[id.value].frac_bits, 15 - *w) << quantity_name(id);
  }
}

TEST(WholeFilter, SixteenBitAddedErrorIsSmall) {
  const LeafHop& l = leaf_hop();
  const PrecisionReport r = run_with_format(l.in, l.ref, NumberFormat::fixed_auto(16));
  EXPECT_LT(r.added_rmse.roll_deg, 1.0);
  EXPECT_LT(r.added_rmse.pitch_deg, 1.0);
  EXPECT_LT(r.added_rmse.yaw_deg, 1.0);
  EXPECT_LT(r.added_rmse.altitude_mm, 1.0);
  EXPECT_TRUE(r.within_budget);
  EXPECT_LT(r.ops_per_cycle, 10.0 * kReferenceFlops);
}

TEST(WholeFilter, GlobalFormatCannotHoldVehicleConstants) {
  // One Q11.20 for every class rounds the inertias (about 1e-9) to zero.
  const LeafHop& l = leaf_hop();
  EXPECT_EQ(quantize(l.rc.filter.vehicle.inertia.x(), NumberFormat::fixed(32, 20)), 0.0);
  PrecisionOptions opt;
  opt.global_override = NumberFormat::fixed(32, 20);
  try {
    run_with_format(l.in, l.ref, NumberFormat::fixed_auto(32), opt);
    FAIL() << "expected a TickError";
  } catch (const TickError& e) {
    bool divide = false;
    try {
      std::rethrow_if_nested(e);
    } catch (const DivideByZero&) {
      divide = true;
    } catch (...) {
    }
    EXPECT_TRUE(divide) << e.what();
  }
}

TEST(WholeFilter, ReportSerializations) {
  const LeafHop& l = leaf_hop();
  const PrecisionReport r = run_with_format(l.in, l.ref, NumberFormat::f32());
  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_EQ(j.at("format"), "f32");
  EXPECT_EQ(j.at("reference_flops"), 1063.0);
  EXPECT_TRUE(j.at("within_budget").get<bool>());
  const std::string row = report_csv_row(r);
  const std::string header = report_csv_header();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
}
