#include "cekf/precision.hpp"

#include <algorithm>
#include <cctype>
#include <cfloat>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cekf::precision {

// ---------------------------------------------------------------------------
// Formats

NumberFormat NumberFormat::f64() { return {FormatKind::kFloat64, 64, 52, Overflow::kSaturate, false}; }
NumberFormat NumberFormat::f32() { return {FormatKind::kFloat32, 32, 23, Overflow::kSaturate, false}; }

NumberFormat NumberFormat::fixed(int total_bits, int frac_bits, Overflow ov) {
  return {FormatKind::kFixed, total_bits, frac_bits, ov, false};
}

NumberFormat NumberFormat::fixed_auto(int total_bits, Overflow ov) {
  return {FormatKind::kFixed, total_bits, total_bits / 2, ov, true};
}

NumberFormat NumberFormat::parse(const std::string& text) {
  std::string s;
  for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  Overflow ov = Overflow::kSaturate;
  if (const auto pos = s.find(':'); pos != std::string::npos) {
    const std::string mode = s.substr(pos + 1);
    if (mode == "wrap") {
      ov = Overflow::kWrap;
    } else if (mode != "sat" && mode != "saturate") {
      throw ConfigError("unknown overflow mode '" + mode + "'");
    }
    s = s.substr(0, pos);
  }
  NumberFormat f;
  if (s == "f64" || s == "float64") {
    f = f64();
  } else if (s == "f32" || s == "float32") {
    f = f32();
  } else if (s == "fx8" || s == "fx16" || s == "fx32") {
    f = fixed_auto(std::stoi(s.substr(2)), ov);
  } else if (s.size() > 1 && s[0] == 'q') {
    const auto dot = s.find('.');
    if (dot == std::string::npos) throw ConfigError("fixed format must look like qI.F: " + text);
    int ibits = 0, fbits = 0;
    try {
      ibits = std::stoi(s.substr(1, dot - 1));
      fbits = std::stoi(s.substr(dot + 1));
    } catch (const std::exception&) {
      throw ConfigError("fixed format must look like qI.F: " + text);
    }
    f = fixed(1 + ibits + fbits, fbits, ov);
  } else {
    throw ConfigError("unknown number format '" + text + "'");
  }
  f.validate();
  return f;
}

std::string NumberFormat::name() const {
  std::string n;
  switch (kind) {
    case FormatKind::kFloat64:
      return "f64";
    case FormatKind::kFloat32:
      return "f32";
    case FormatKind::kFixed:
      n = autoscale ? "fx" + std::to_string(total_bits)
                    : "q" + std::to_string(total_bits - 1 - frac_bits) + "." +
                          std::to_string(frac_bits);
      break;
  }
  if (overflow == Overflow::kWrap) n += ":wrap";
  return n;
}

void NumberFormat::validate() const {
  switch (kind) {
    case FormatKind::kFloat64:
      if (total_bits != 64) throw ConfigError("float64 must be 64 bits");
      return;
    case FormatKind::kFloat32:
      if (total_bits != 32) throw ConfigError("float32 must be 32 bits");
      return;
    case FormatKind::kFixed:
      if (total_bits != 8 && total_bits != 16 && total_bits != 32) {
        throw ConfigError("fixed formats are 8, 16 or 32 bits wide");
      }
      if (!autoscale && !(frac_bits >= 1 && frac_bits < total_bits)) {
        throw ConfigError("fixed fraction width must satisfy 1 <= frac < total");
      }
      return;
  }
}

double NumberFormat::lsb() const { return std::ldexp(1.0, -frac_bits); }
double NumberFormat::max_value() const { return (std::ldexp(1.0, total_bits - 1) - 1.0) * lsb(); }
double NumberFormat::min_value() const { return -std::ldexp(1.0, total_bits - 1) * lsb(); }

OpCounts& OpCounts::operator+=(const OpCounts& o) {
  mults += o.mults;
  adds += o.adds;
  divs += o.divs;
  sqrts += o.sqrts;
  trigs += o.trigs;
  return *this;
}

OpCounts operator-(const OpCounts& a, const OpCounts& b) {
  return {a.mults - b.mults, a.adds - b.adds, a.divs - b.divs, a.sqrts - b.sqrts,
          a.trigs - b.trigs};
}

double quantize(double x, const NumberFormat& f, std::uint64_t* saturations) {
  switch (f.kind) {
    case FormatKind::kFloat64:
      return x;
    case FormatKind::kFloat32: {
      if (std::abs(x) > FLT_MAX && std::isfinite(x)) {
        if (saturations) ++*saturations;
        return x > 0 ? FLT_MAX : -FLT_MAX;
      }
      return static_cast<double>(static_cast<float>(x));
    }
    case FormatKind::kFixed:
      break;
  }
  const double hi = std::ldexp(1.0, f.total_bits - 1) - 1.0;
  const double lo = -std::ldexp(1.0, f.total_bits - 1);
  if (std::isnan(x)) {
    if (saturations) ++*saturations;
    return 0.0;
  }
  double n = std::nearbyint(std::ldexp(x, f.frac_bits));
  if (n > hi || n < lo) {
    if (saturations) ++*saturations;
    if (f.overflow == Overflow::kSaturate || !std::isfinite(n)) {
      n = std::clamp(n, lo, hi);
    } else {
      const double m = std::ldexp(1.0, f.total_bits);
      n -= m * std::floor((n - lo) / m);
    }
  }
  return std::ldexp(n, -f.frac_bits);
}

namespace {

double exact_op(Op op, std::span<const double> a) {
  auto need = [&](std::size_t n) {
    if (a.size() != n) throw ConfigError("wrong operand count for arithmetic op");
  };
  switch (op) {
    case Op::kAdd:
      need(2);
      return a[0] + a[1];
    case Op::kSub:
      need(2);
      return a[0] - a[1];
    case Op::kMul:
      need(2);
      return a[0] * a[1];
    case Op::kDiv:
      need(2);
      if (a[1] == 0.0) throw DivideByZero("division by zero");
      return a[0] / a[1];
    case Op::kSqrt:
      need(1);
      if (a[0] < 0.0) throw DomainError("square root of a negative value");
      return std::sqrt(a[0]);
    case Op::kSin:
      need(1);
      return std::sin(a[0]);
    case Op::kCos:
      need(1);
      return std::cos(a[0]);
    case Op::kTan:
      need(1);
      return std::tan(a[0]);
    case Op::kAtan2:
      need(2);
      return std::atan2(a[0], a[1]);
  }
  throw ConfigError("unknown arithmetic op");
}

void count(Op op, OpCounts& c) {
  switch (op) {
    case Op::kAdd:
    case Op::kSub:
      ++c.adds;
      break;
    case Op::kMul:
      ++c.mults;
      break;
    case Op::kDiv:
      ++c.divs;
      break;
    case Op::kSqrt:
      ++c.sqrts;
      break;
    case Op::kSin:
    case Op::kCos:
    case Op::kTan:
    case Op::kAtan2:
      ++c.trigs;
      break;
  }
}

}  // namespace

double arith(Op op, std::span<const double> args, const NumberFormat& f, OpCounts& counter,
             std::uint64_t* saturations) {
  const double r = exact_op(op, args);
  count(op, counter);
  return quantize(r, f, saturations);
}

FormatTable uniform_formats(const NumberFormat& f) {
  FormatTable t;
  t.fill(f);
  return t;
}

// ---------------------------------------------------------------------------
// Ranges and autoscale

void RangeRecorder::record(QuantityId id, double x) {
  const double a = std::abs(x);
  if (!(a > 0.0) || !std::isfinite(a)) return;
  Hist& h = hist_[id.value];
  if (h.bins.empty()) h.bins.assign(kBins, 0);
  const double e = std::floor(std::log2(a) * kBinsPerOctave) - kMinExp * kBinsPerOctave;
  const int bin = static_cast<int>(std::clamp(e, 0.0, static_cast<double>(kBins - 1)));
  ++h.bins[bin];
  ++h.count;
  h.max_abs = std::max(h.max_abs, a);
}

std::uint64_t RangeRecorder::samples(QuantityId id) const { return hist_[id.value].count; }
const std::vector<std::uint64_t>& RangeRecorder::bins_of(QuantityId id) const {
  return hist_[id.value].bins;
}
double RangeRecorder::max_abs(QuantityId id) const { return hist_[id.value].max_abs; }

namespace {

std::optional<int> width_from_bins(const std::vector<std::uint64_t>& bins, std::uint64_t count,
                                   double quantile) {
  if (count == 0) return std::nullopt;
  const auto need = static_cast<std::uint64_t>(std::ceil(quantile * static_cast<double>(count)));
  std::uint64_t cum = 0;
  for (int b = 0; b < static_cast<int>(bins.size()); ++b) {
    cum += bins[b];
    if (cum >= std::max<std::uint64_t>(need, 1)) {
      // Every sample in bin b is below 2^upper.
      const double upper = static_cast<double>(b + 1) / RangeRecorder::kBinsPerOctave +
                           RangeRecorder::kMinExp;
      return static_cast<int>(std::ceil(upper));
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<int> RangeRecorder::integer_width(QuantityId id, double quantile) const {
  const Hist& h = hist_[id.value];
  return width_from_bins(h.bins, h.count, quantile);
}

FormatTable autoscale(const RangeRecorder& ranges, int total_bits, Overflow ov, double quantile,
                      int fallback_int_bits) {
  FormatTable t;
  for (int i = 0; i < kQuantityIdCount; ++i) {
    const QuantityId id{static_cast<std::uint8_t>(i)};
    const int w = ranges.integer_width(id, quantile).value_or(fallback_int_bits);
    t[i] = NumberFormat::fixed(total_bits, total_bits - 1 - w, ov);
  }
  return t;
}

std::optional<int> pooled_integer_width(const RangeRecorder& ranges, std::span<const QuantityId> ids,
                                        double quantile) {
  std::vector<std::uint64_t> bins(RangeRecorder::kBins, 0);
  std::uint64_t count = 0;
  for (const QuantityId id : ids) {
    if (ranges.samples(id) == 0) continue;
    count += ranges.samples(id);
    const auto& b = ranges.bins_of(id);
    for (std::size_t k = 0; k < b.size(); ++k) bins[k] += b[k];
  }
  if (count == 0) return std::nullopt;
  return width_from_bins(bins, count, quantile);
}

std::optional<int> pooled_integer_width(const RangeRecorder& ranges, double quantile) {
  std::vector<QuantityId> ids;
  for (int i = 0; i < kQuantityIdCount; ++i) ids.push_back(QuantityId{static_cast<std::uint8_t>(i)});
  return pooled_integer_width(ranges, ids, quantile);
}

std::vector<QuantityId> signal_classes() {
  std::vector<QuantityId> ids;
  for (Quantity q : {Quantity::kAngle, Quantity::kTrig, Quantity::kAngularRate, Quantity::kVelocity,
                     Quantity::kLinearAccel, Quantity::kAltitude, Quantity::kMagField}) {
    ids.push_back(quantity_id(q));
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Sessions and the emulated scalar

namespace {

thread_local Context* g_active = nullptr;

Context& active_context() {
  if (!g_active) throw std::logic_error("emulated arithmetic used outside a precision session");
  return *g_active;
}

double round_to(Context& c, double x, QuantityId id) {
  const NumberFormat& f = c.formats[id.value];
  if (f.kind == FormatKind::kFloat64) return x;
  ++c.stats.roundings;
  std::uint64_t sat = 0;
  const double q = quantize(x, f, &sat);
  c.stats.saturations += sat;
  c.stats.saturations_by_class[id.value] += sat;
  return q;
}

double finish(Context& c, double exact) {
  if (c.recorder) c.recorder->record(c.current, exact);
  if (c.mode == EmulationMode::kStoreOnly) return exact;
  return round_to(c, exact, c.current);
}

Emulated make(double v) { return Emulated::exact(v); }

Emulated binary(Op op, double a, double b) {
  Context& c = active_context();
  const double args[2] = {a, b};
  const double r = exact_op(op, args);
  count(op, c.stats.counts);
  return make(finish(c, r));
}

Emulated unary(Op op, double a) {
  Context& c = active_context();
  const double args[1] = {a};
  const double r = exact_op(op, args);
  count(op, c.stats.counts);
  return make(finish(c, r));
}

}  // namespace

Session::Session(Context& ctx) : previous_(g_active) { g_active = &ctx; }
Session::~Session() { g_active = previous_; }
Context* Session::active() { return g_active; }

Emulated::Emulated(double x) {
  Context& c = active_context();
  if (c.recorder) c.recorder->record(c.current, x);
  v_ = round_to(c, x, c.current);
}

Emulated Emulated::exact(double x) {
  Emulated e;
  e.v_ = x;
  return e;
}

Emulated operator+(const Emulated& a, const Emulated& b) { return binary(Op::kAdd, a.v_, b.v_); }
Emulated operator-(const Emulated& a, const Emulated& b) { return binary(Op::kSub, a.v_, b.v_); }
Emulated operator*(const Emulated& a, const Emulated& b) { return binary(Op::kMul, a.v_, b.v_); }
Emulated operator/(const Emulated& a, const Emulated& b) { return binary(Op::kDiv, a.v_, b.v_); }

// Exact: the negated value keeps the format it already has.
Emulated operator-(const Emulated& a) { return make(-a.v_); }

QuantityId Emulated::enter_quantity(QuantityId id) {
  if (!g_active) return id;
  const QuantityId prev = g_active->current;
  g_active->current = id;
  return prev;
}

void Emulated::restore_quantity(QuantityId id) {
  if (g_active) g_active->current = id;
}

void Emulated::store(Emulated& x, QuantityId id) {
  Context& c = active_context();
  if (c.mode == EmulationMode::kStoreOnly) x.v_ = round_to(c, x.v_, id);
}

namespace {

// Polynomial transcendentals. Range reduction happens on the raw value; the
// series runs in emulated arithmetic under the polynomial class.
Emulated poly_sin_reduced(double r) {
  QuantityScope<Emulated> scope(Quantity::kPolynomial);
  const Emulated x(r);
  const Emulated x2 = x * x;
  static constexpr double kC[] = {-1.0 / 1307674368000.0, 1.0 / 6227020800.0,
                                  -1.0 / 39916800.0,     1.0 / 362880.0,
                                  -1.0 / 5040.0,         1.0 / 120.0,
                                  -1.0 / 6.0};
  Emulated acc(kC[0]);
  for (int k = 1; k < 7; ++k) acc = acc * x2 + Emulated(kC[k]);
  return x + x * x2 * acc;
}

double reduce_half_pi(double x) {
  double r = std::remainder(x, 2.0 * kPi);
  if (r > kPi / 2) r = kPi - r;
  if (r < -kPi / 2) r = -kPi - r;
  return r;
}

// atan on |r| <= 1 through one half-angle step and a series to r^23.
Emulated poly_atan_unit(const Emulated& r) {
  QuantityScope<Emulated> scope(Quantity::kPolynomial);
  const Emulated one(1.0);
  const Emulated h = r / (one + sqrt(one + r * r));
  const Emulated h2 = h * h;
  Emulated acc(-1.0 / 23.0);
  for (int k = 21; k >= 1; k -= 2) {
    const double c = ((k / 2) % 2 == 0 ? 1.0 : -1.0) / k;
    acc = acc * h2 + Emulated(c);
  }
  const Emulated two(2.0);
  return two * h * acc;
}

Emulated poly_atan2(const Emulated& y, const Emulated& x) {
  QuantityScope<Emulated> scope(Quantity::kPolynomial);
  const double yv = y.value(), xv = x.value();
  if (xv == 0.0 && yv == 0.0) return Emulated(0.0);
  if (std::abs(yv) <= std::abs(xv)) {
    Emulated a = poly_atan_unit(y / x);
    if (xv < 0.0) a = a + Emulated(yv >= 0.0 ? kPi : -kPi);
    return a;
  }
  return Emulated(yv > 0.0 ? kPi / 2 : -kPi / 2) - poly_atan_unit(x / y);
}

Emulated requantize(const Emulated& x) {
  Context& c = active_context();
  return make(finish(c, x.value()));
}

}  // namespace

Emulated sqrt(const Emulated& x) { return unary(Op::kSqrt, x.value()); }

Emulated sin(const Emulated& x) {
  Context& c = active_context();
  if (c.transcendental == TranscendentalMode::kRounded) return unary(Op::kSin, x.value());
  return requantize(poly_sin_reduced(reduce_half_pi(x.value())));
}

Emulated cos(const Emulated& x) {
  Context& c = active_context();
  if (c.transcendental == TranscendentalMode::kRounded) return unary(Op::kCos, x.value());
  return requantize(poly_sin_reduced(reduce_half_pi(x.value() + kPi / 2)));
}

Emulated tan(const Emulated& x) {
  Context& c = active_context();
  if (c.transcendental == TranscendentalMode::kRounded) return unary(Op::kTan, x.value());
  Emulated q;
  {
    QuantityScope<Emulated> scope(Quantity::kPolynomial);
    q = poly_sin_reduced(reduce_half_pi(x.value())) /
        poly_sin_reduced(reduce_half_pi(x.value() + kPi / 2));
  }
  return requantize(q);
}

Emulated atan2(const Emulated& y, const Emulated& x) {
  Context& c = active_context();
  if (c.transcendental == TranscendentalMode::kRounded) return binary(Op::kAtan2, y.value(), x.value());
  return requantize(poly_atan2(y, x));
}

Emulated abs(const Emulated& x) { return x.value() < 0 ? -x : x; }

// ---------------------------------------------------------------------------
// Whole-filter runs

namespace {

CekfConfig precision_config(const CekfConfig& cfg) {
  CekfConfig c = cfg;
  c.ekf.jacobian = JacobianMethod::kAnalytic;
  c.ekf.on_factor_failure = FactorFailure::kSkipUpdate;
  return c;
}

}  // namespace

PrecisionReference make_reference(const PrecisionInputs& in, const PrecisionOptions& opt) {
  PrecisionReference ref;
  Context ctx;
  ctx.formats = uniform_formats(NumberFormat::f64());
  ctx.mode = opt.mode;
  ctx.transcendental = opt.transcendental;
  ctx.recorder = &ref.ranges;
  {
    Session session(ctx);
    ref.trace = replay<Emulated>(in.run, precision_config(in.cfg), in.init);
  }
  ref.counts = ctx.stats.counts;
  ref.cycles = static_cast<long>(in.run.t.size()) - 1;
  return ref;
}

double estimate_cycle_budget(double ops, double clock_hz, double cycles_per_op) {
  if (!(clock_hz > 0.0) || !(cycles_per_op > 0.0)) {
    throw ConfigError("clock and cycles per op must be positive");
  }
  return ops * cycles_per_op / clock_hz * 1e6;
}

double estimate_cycle_budget(const OpCounts& counts, double clock_hz, double cycles_per_op) {
  return estimate_cycle_budget(static_cast<double>(counts.total()), clock_hz, cycles_per_op);
}

PrecisionReport run_with_format(const PrecisionInputs& in, const PrecisionReference& ref,
                                const NumberFormat& f, const PrecisionOptions& opt) {
  f.validate();
  PrecisionReport rep;
  rep.format = f;
  Context ctx;
  if (f.kind == FormatKind::kFixed && opt.global_override) {
    ctx.formats = uniform_formats(*opt.global_override);
  } else if (f.kind == FormatKind::kFixed && f.autoscale) {
    ctx.formats = autoscale(ref.ranges, f.total_bits, f.overflow, opt.quantile);
  } else {
    ctx.formats = uniform_formats(f);
  }
  ctx.mode = opt.mode;
  ctx.transcendental = opt.transcendental;
  {
    Session session(ctx);
    rep.trace = replay<Emulated>(in.run, precision_config(in.cfg), in.init);
  }
  const std::vector<CekfOutput> truth = output_slice(in.run.truth);
  rep.added_rmse = channel_rmse(rep.trace.t, rep.trace.estimate, ref.trace.estimate, opt.burn_in_s);
  rep.rmse_vs_truth = channel_rmse(rep.trace.t, rep.trace.estimate, truth, opt.burn_in_s);
  rep.total_counts = ctx.stats.counts;
  rep.cycles = std::max<long>(1, static_cast<long>(in.run.t.size()) - 1);
  const double n = static_cast<double>(rep.cycles);
  rep.mults_per_cycle = static_cast<double>(rep.total_counts.mults) / n;
  rep.adds_per_cycle = static_cast<double>(rep.total_counts.adds) / n;
  rep.divs_per_cycle = static_cast<double>(rep.total_counts.divs) / n;
  rep.sqrts_per_cycle = static_cast<double>(rep.total_counts.sqrts) / n;
  rep.trigs_per_cycle = static_cast<double>(rep.total_counts.trigs) / n;
  rep.ops_per_cycle = static_cast<double>(rep.total_counts.total()) / n;
  rep.clock_hz = opt.clock_hz;
  rep.cycles_per_op = opt.cycles_per_op;
  rep.cycle_time_us = estimate_cycle_budget(rep.ops_per_cycle, opt.clock_hz, opt.cycles_per_op);
  rep.within_budget = rep.cycle_time_us < rep.realtime_budget_us;
  rep.saturation_fraction =
      ctx.stats.roundings ? static_cast<double>(ctx.stats.saturations) /
                                static_cast<double>(ctx.stats.roundings)
                          : 0.0;
  rep.saturation_flagged = rep.saturation_fraction > opt.saturation_flag;
  rep.skipped_updates = rep.trace.skipped_updates;
  if (f.kind == FormatKind::kFixed) {
    rep.pooled_int_bits = pooled_integer_width(ref.ranges, opt.quantile);
    rep.pooled_signal_int_bits = pooled_integer_width(ref.ranges, signal_classes(), opt.quantile);
  }
  for (int i = 0; i < kQuantityIdCount; ++i) {
    const QuantityId id{static_cast<std::uint8_t>(i)};
    if (ref.ranges.samples(id) == 0) continue;
    const NumberFormat& cf = ctx.formats[i];
    if (ctx.stats.saturations_by_class[i] > 0) {
      rep.class_saturations[quantity_name(id)] = ctx.stats.saturations_by_class[i];
    }
    rep.class_formats[quantity_name(id)] =
        cf.kind == FormatKind::kFixed ? NumberFormat::fixed(cf.total_bits, cf.frac_bits, cf.overflow).name()
                                      : cf.name();
  }
  return rep;
}

PrecisionReport run_with_format(const PrecisionInputs& in, const NumberFormat& f,
                                const PrecisionOptions& opt) {
  return run_with_format(in, make_reference(in, opt), f, opt);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json channels_json(const ChannelRmse& c) {
  return {{"roll_deg", c.roll_deg},
          {"pitch_deg", c.pitch_deg},
          {"yaw_deg", c.yaw_deg},
          {"altitude_mm", c.altitude_mm}};
}

}  // namespace

std::string report_json(const PrecisionReport& r) {
  nlohmann::json j;
  j["format"] = r.format.name();
  j["added_rmse"] = channels_json(r.added_rmse);
  j["rmse_vs_truth"] = channels_json(r.rmse_vs_truth);
  j["per_cycle"] = {{"mults", r.mults_per_cycle}, {"adds", r.adds_per_cycle},
                    {"divs", r.divs_per_cycle},   {"sqrts", r.sqrts_per_cycle},
                    {"trigs", r.trigs_per_cycle}, {"total", r.ops_per_cycle}};
  j["cycles"] = r.cycles;
  j["clock_hz"] = r.clock_hz;
  j["cycles_per_op"] = r.cycles_per_op;
  j["cycle_time_us"] = r.cycle_time_us;
  j["realtime_budget_us"] = r.realtime_budget_us;
  j["within_budget"] = r.within_budget;
  j["reference_flops"] = kReferenceFlops;
  j["reference_mults_plus_adds"] = kReferenceMults + kReferenceAdds;
  j["ops_ratio_to_reference"] = r.ops_per_cycle / kReferenceFlops;
  j["saturation_fraction"] = r.saturation_fraction;
  j["saturation_flagged"] = r.saturation_flagged;
  j["skipped_updates"] = r.skipped_updates;
  if (r.pooled_int_bits) {
    const int w = *r.pooled_int_bits;
    j["pooled_global_q"] = "q" + std::to_string(w) + "." + std::to_string(r.format.total_bits - 1 - w);
  }
  if (r.pooled_signal_int_bits) {
    const int w = *r.pooled_signal_int_bits;
    j["pooled_signal_q"] = "q" + std::to_string(w) + "." + std::to_string(r.format.total_bits - 1 - w);
  }
  j["class_formats"] = r.class_formats;
  j["class_saturations"] = r.class_saturations;
  return j.dump(2);
}

std::string report_csv_header() {
  return "format,roll_added_deg,pitch_added_deg,yaw_added_deg,altitude_added_mm,"
         "roll_deg,pitch_deg,yaw_deg,altitude_mm,ops_per_cycle,cycle_time_us,"
         "saturation_fraction,skipped_updates";
}

std::string report_csv_row(const PrecisionReport& r) {
  std::ostringstream o;
  o << std::setprecision(12) << r.format.name() << ',' << r.added_rmse.roll_deg << ','
    << r.added_rmse.pitch_deg << ',' << r.added_rmse.yaw_deg << ',' << r.added_rmse.altitude_mm
    << ',' << r.rmse_vs_truth.roll_deg << ',' << r.rmse_vs_truth.pitch_deg << ','
    << r.rmse_vs_truth.yaw_deg << ',' << r.rmse_vs_truth.altitude_mm << ',' << r.ops_per_cycle
    << ',' << r.cycle_time_us << ',' << r.saturation_fraction << ',' << r.skipped_updates;
  return o.str();
}

}  // namespace cekf::precision
