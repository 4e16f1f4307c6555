#pragma once

// Scalar plumbing shared by every filter kernel. Kernels are templates over the
// scalar type so the same code runs in plain double and under the emulated
// number formats of the precision engine. The hooks below compile to nothing
// for built-in floating types.

#include <concepts>
#include <cstdint>
#include <string>

namespace cekf {

// Physical role of a value. The precision engine picks one fixed-point scaling
// per role (and per state block for matrix families).
enum class Quantity : std::uint8_t {
  kAngle,
  kTrig,
  kAngularRate,
  kAngularAccel,
  kVelocity,
  kLinearAccel,
  kAltitude,
  kMagField,
  kForce,
  kTorque,
  kMass,
  kInertia,
  kDragCoeff,
  kLength,
  kTime,
  kTimeOverInertia,
  kTimeOverMass,
  kFilterGain,
  kNormSquared,
  kPolynomial,
  kCount
};

// Matrix families whose elements are scaled per (row group, column group).
enum class Family : std::uint8_t {
  kJacobian,
  kCovariance,
  kCovProduct,
  kKalmanGain,
  kInnovation,
  kCount
};

// State groups: attitude (0..2), rates (3..5), velocity (6..8), altitude (9).
inline constexpr int kStateGroups = 4;

constexpr int state_group(int index) {
  return index < 3 ? 0 : index < 6 ? 1 : index < 9 ? 2 : 3;
}

struct QuantityId {
  std::uint8_t value = 0;
  friend constexpr bool operator==(QuantityId, QuantityId) = default;
};

inline constexpr int kScalarQuantities = static_cast<int>(Quantity::kCount);
inline constexpr int kQuantityIdCount =
    kScalarQuantities + static_cast<int>(Family::kCount) * kStateGroups * kStateGroups;

constexpr QuantityId quantity_id(Quantity q) {
  return QuantityId{static_cast<std::uint8_t>(q)};
}

constexpr QuantityId block_id(Family f, int row_group, int col_group) {
  return QuantityId{static_cast<std::uint8_t>(
      kScalarQuantities + (static_cast<int>(f) * kStateGroups + row_group) * kStateGroups +
      col_group)};
}

// Element (i, j) of a 10-wide state matrix family. Measurement columns reuse
// the state group of the state they select.
constexpr QuantityId element_id(Family f, int row_state, int col_state) {
  return block_id(f, state_group(row_state), state_group(col_state));
}

std::string quantity_name(QuantityId id);

template <class T>
concept InstrumentedScalar = requires(QuantityId id) {
  { T::enter_quantity(id) } -> std::same_as<QuantityId>;
  T::restore_quantity(id);
};

// Tags every arithmetic result produced inside the scope with a quantity.
template <class T>
class QuantityScope {
 public:
  explicit QuantityScope(QuantityId id) {
    if constexpr (InstrumentedScalar<T>) previous_ = T::enter_quantity(id);
  }
  explicit QuantityScope(Quantity q) : QuantityScope(quantity_id(q)) {}
  ~QuantityScope() {
    if constexpr (InstrumentedScalar<T>) T::restore_quantity(previous_);
  }
  QuantityScope(const QuantityScope&) = delete;
  QuantityScope& operator=(const QuantityScope&) = delete;

 private:
  QuantityId previous_{};
};

inline double to_double(double x) { return x; }
inline double to_double(float x) { return x; }

// Marks `x` as stored state of the given quantity. Store-only emulation
// quantizes here; everything else ignores it.
template <class T>
void store(T& x, QuantityId id) {
  if constexpr (requires { T::store(x, id); }) T::store(x, id);
}

}  // namespace cekf
