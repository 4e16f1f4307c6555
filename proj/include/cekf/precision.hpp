#pragma once

// Reduced-precision emulation. Every arithmetic result inside a Session is
// rounded to the number format resolved for the quantity currently in scope,
// and every operation is counted.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cekf/metrics.hpp"
#include "cekf/replay.hpp"
#include "cekf/scalar.hpp"

namespace cekf::precision {

enum class FormatKind { kFloat64, kFloat32, kFixed };
enum class Overflow { kSaturate, kWrap };

struct NumberFormat {
  FormatKind kind = FormatKind::kFloat64;
  int total_bits = 64;
  int frac_bits = 0;
  Overflow overflow = Overflow::kSaturate;
  // Fixed formats only: scale each quantity class from a float64 pre-pass
  // instead of using frac_bits everywhere.
  bool autoscale = false;

  static NumberFormat f64();
  static NumberFormat f32();
  static NumberFormat fixed(int total_bits, int frac_bits, Overflow ov = Overflow::kSaturate);
  static NumberFormat fixed_auto(int total_bits, Overflow ov = Overflow::kSaturate);

  // Accepts f64, float64, f32, float32, fx8, fx16, fx32 (autoscaled) and
  // qI.F (fixed with I integer and F fraction bits plus a sign bit).
  static NumberFormat parse(const std::string& text);
  std::string name() const;

  // Throws ConfigError unless total_bits is 8, 16 or 32 and 1 <= frac_bits < total_bits.
  void validate() const;

  double lsb() const;        // fixed only
  double max_value() const;  // fixed only
  double min_value() const;  // fixed only

  friend bool operator==(const NumberFormat&, const NumberFormat&) = default;
};

struct OpCounts {
  std::uint64_t mults = 0;
  std::uint64_t adds = 0;
  std::uint64_t divs = 0;
  std::uint64_t sqrts = 0;
  std::uint64_t trigs = 0;

  std::uint64_t total() const { return mults + adds + divs + sqrts + trigs; }
  OpCounts& operator+=(const OpCounts& o);
  friend OpCounts operator-(const OpCounts& a, const OpCounts& b);
  friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

// Nearest representable value. Fixed formats saturate (or wrap) at the
// bounds; `saturations` is incremented when that happens.
double quantize(double x, const NumberFormat& f, std::uint64_t* saturations = nullptr);

enum class Op { kAdd, kSub, kMul, kDiv, kSqrt, kSin, kCos, kTan, kAtan2 };

// Exact result of `op` on `args`, rounded to `f`; counter incremented by op
// class. Throws DivideByZero and DomainError.
double arith(Op op, std::span<const double> args, const NumberFormat& f, OpCounts& counter,
             std::uint64_t* saturations = nullptr);

// Where rounding happens.
//   kAfterOp: every arithmetic result.
//   kStoreOnly: only values written back to filter state and lifted inputs.
enum class EmulationMode { kAfterOp, kStoreOnly };

// Transcendentals either as one rounded result, or as a chain of rounded
// polynomial steps in the kPolynomial class.
enum class TranscendentalMode { kRounded, kPolynomial };

// log2-magnitude histogram per quantity id, in 1/8-bit bins.
class RangeRecorder {
 public:
  static constexpr int kBinsPerOctave = 8;
  static constexpr int kMinExp = -80;
  static constexpr int kMaxExp = 80;
  static constexpr int kBins = (kMaxExp - kMinExp) * kBinsPerOctave;

  void record(QuantityId id, double x);
  std::uint64_t samples(QuantityId id) const;
  double max_abs(QuantityId id) const;
  const std::vector<std::uint64_t>& bins_of(QuantityId id) const;  // empty if never recorded

  // Smallest integer width w (possibly negative) with 2^w above the given
  // magnitude quantile. Empty classes return nullopt.
  std::optional<int> integer_width(QuantityId id, double quantile) const;

 private:
  struct Hist {
    std::vector<std::uint64_t> bins;
    std::uint64_t count = 0;
    double max_abs = 0.0;
  };
  std::array<Hist, kQuantityIdCount> hist_{};
};

using FormatTable = std::array<NumberFormat, kQuantityIdCount>;

// Per-id fixed formats from a recorded pre-pass. Classes never observed get
// `fallback_int_bits` integer bits.
FormatTable autoscale(const RangeRecorder& ranges, int total_bits, Overflow ov,
                      double quantile = 0.999, int fallback_int_bits = 4);

// Smallest integer width covering `quantile` of all observed magnitudes pooled
// over every class: the single global Q a one-format design would pick.
std::optional<int> pooled_integer_width(const RangeRecorder& ranges, double quantile = 0.999);

// Same, pooled over the listed classes only.
std::optional<int> pooled_integer_width(const RangeRecorder& ranges, std::span<const QuantityId> ids,
                                        double quantile = 0.999);

// Angles, their trig values, rates, velocity, altitude and raw sensor values:
// the signal-path classes, excluding model constants, Jacobian terms and the
// covariance blocks.
std::vector<QuantityId> signal_classes();

FormatTable uniform_formats(const NumberFormat& f);

struct ContextStats {
  OpCounts counts;
  std::uint64_t saturations = 0;
  std::array<std::uint64_t, kQuantityIdCount> saturations_by_class{};
  std::uint64_t roundings = 0;
};

// Active arithmetic state of the current thread.
struct Context {
  FormatTable formats = uniform_formats(NumberFormat::f64());
  EmulationMode mode = EmulationMode::kAfterOp;
  TranscendentalMode transcendental = TranscendentalMode::kRounded;
  RangeRecorder* recorder = nullptr;
  ContextStats stats;
  QuantityId current = quantity_id(Quantity::kAngle);
};

// Installs a context for the lifetime of the object (nesting restores the
// previous one).
class Session {
 public:
  explicit Session(Context& ctx);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  static Context* active();

 private:
  Context* previous_;
};

class Emulated {
 public:
  Emulated() = default;
  // Rounds x to the format of the quantity in scope. Not counted as an op.
  explicit Emulated(double x);

  static Emulated exact(double x);
  double value() const { return v_; }

  friend Emulated operator+(const Emulated& a, const Emulated& b);
  friend Emulated operator-(const Emulated& a, const Emulated& b);
  friend Emulated operator*(const Emulated& a, const Emulated& b);
  friend Emulated operator/(const Emulated& a, const Emulated& b);
  friend Emulated operator-(const Emulated& a);
  Emulated& operator+=(const Emulated& b) { return *this = *this + b; }
  Emulated& operator-=(const Emulated& b) { return *this = *this - b; }
  Emulated& operator*=(const Emulated& b) { return *this = *this * b; }
  Emulated& operator/=(const Emulated& b) { return *this = *this / b; }

  friend bool operator==(const Emulated& a, const Emulated& b) { return a.v_ == b.v_; }
  friend auto operator<=>(const Emulated& a, const Emulated& b) { return a.v_ <=> b.v_; }

  static QuantityId enter_quantity(QuantityId id);
  static void restore_quantity(QuantityId id);
  static void store(Emulated& x, QuantityId id);

 private:
  double v_ = 0.0;
};

inline double to_double(const Emulated& x) { return x.value(); }

Emulated sqrt(const Emulated& x);
Emulated sin(const Emulated& x);
Emulated cos(const Emulated& x);
Emulated tan(const Emulated& x);
Emulated atan2(const Emulated& y, const Emulated& x);
Emulated abs(const Emulated& x);

// ---------------------------------------------------------------------------
// Whole-filter runs.

struct PrecisionOptions {
  EmulationMode mode = EmulationMode::kAfterOp;
  TranscendentalMode transcendental = TranscendentalMode::kRounded;
  std::optional<NumberFormat> global_override;  // fixed format used for every class
  double quantile = 0.999;
  double clock_hz = 100e6;
  double cycles_per_op = 1.0;
  double burn_in_s = 0.5;
  double saturation_flag = 0.01;  // fraction of roundings
};

struct PrecisionInputs {
  SimulatedRun run;
  CekfConfig cfg;
  InitialStates init;
};

// The float64 trace plus the dynamic ranges observed while producing it.
struct PrecisionReference {
  Trace trace;
  RangeRecorder ranges;
  OpCounts counts;
  long cycles = 0;
};

PrecisionReference make_reference(const PrecisionInputs& in, const PrecisionOptions& opt = {});

struct PrecisionReport {
  NumberFormat format;
  ChannelRmse added_rmse;     // trace vs float64 trace
  ChannelRmse rmse_vs_truth;
  OpCounts total_counts;
  double mults_per_cycle = 0.0;
  double adds_per_cycle = 0.0;
  double divs_per_cycle = 0.0;
  double sqrts_per_cycle = 0.0;
  double trigs_per_cycle = 0.0;
  double ops_per_cycle = 0.0;
  long cycles = 0;
  double clock_hz = 0.0;
  double cycles_per_op = 0.0;
  double cycle_time_us = 0.0;
  double realtime_budget_us = 4000.0;  // 250 Hz
  bool within_budget = false;
  double saturation_fraction = 0.0;
  bool saturation_flagged = false;
  long skipped_updates = 0;
  std::optional<int> pooled_int_bits;          // single global Q for this width, all classes
  std::optional<int> pooled_signal_int_bits;   // same, signal-path classes only
  std::map<std::string, std::string> class_formats;  // observed classes only
  std::map<std::string, std::uint64_t> class_saturations;  // classes that clipped
  Trace trace;
};

PrecisionReport run_with_format(const PrecisionInputs& in, const PrecisionReference& ref,
                                const NumberFormat& f, const PrecisionOptions& opt = {});
PrecisionReport run_with_format(const PrecisionInputs& in, const NumberFormat& f,
                                const PrecisionOptions& opt = {});

// (ops * cycles_per_op) / clock, in microseconds. Throws ConfigError on
// non-positive clock or cycles_per_op.
double estimate_cycle_budget(const OpCounts& counts, double clock_hz, double cycles_per_op);
double estimate_cycle_budget(double ops, double clock_hz, double cycles_per_op);

inline constexpr double kReferenceFlops = 1063.0;
inline constexpr double kReferenceMults = 861.0;
inline constexpr double kReferenceAdds = 225.0;

std::string report_json(const PrecisionReport& r);
std::string report_csv_header();
std::string report_csv_row(const PrecisionReport& r);

}  // namespace cekf::precision

namespace Eigen {
template <>
struct NumTraits<cekf::precision::Emulated> : NumTraits<double> {
  using Real = cekf::precision::Emulated;
  using NonInteger = cekf::precision::Emulated;
  using Nested = cekf::precision::Emulated;
  using Literal = cekf::precision::Emulated;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3
  };
};
}  // namespace Eigen
