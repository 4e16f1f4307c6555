#pragma once

// Runs a filter over a synthesized stream, one tick per IMU sample.

#include <exception>
#include <vector>

#include "cekf/ekf.hpp"
#include "cekf/sensors.hpp"

namespace cekf {

inline constexpr double kDefaultAlignmentSeconds = 0.2;

struct InitialStates {
  EkfState ekf;
  CcfState ccf;
};

// Ground-truth state at the first tick with the attitude replaced by the
// first accel/mag fix (truth attitude if that fix is degenerate). With
// alignment_s > 0 the fix uses the mean accel and mag readings over the
// first alignment_s seconds, which cancels the body-mode vibration.
InitialStates initial_states(const SimulatedRun& run, const CekfConfig& cfg,
                             double alignment_s = kDefaultAlignmentSeconds);

struct Trace {
  std::vector<double> t;
  std::vector<CekfOutput> estimate;
  std::vector<Vec4> innovation;
  long skipped_updates = 0;
  long degraded_fixes = 0;
  long altitude_dropouts = 0;
};

// Tick k >= 1 consumes rho[k] and the control applied over [t[k-1], t[k]].
// The estimate at tick 0 is the initial state. `after_step(k, filter)` runs
// after each tick. Filter errors are rethrown as TickError with the original
// nested.
template <class T, class Hook>
Trace replay(const SimulatedRun& run, const CekfConfig& cfg, const InitialStates& init,
             Hook&& after_step) {
  Trace trace;
  if (run.t.empty()) return trace;
  BasicCekf<T> filter(cfg, init.ekf, init.ccf, run.dt);
  trace.t = run.t;
  trace.estimate.reserve(run.t.size());
  trace.innovation.reserve(run.t.size());
  trace.estimate.push_back(filter.output());
  trace.innovation.push_back(Vec4::Zero());
  for (std::size_t k = 1; k < run.t.size(); ++k) {
    CekfStepStatus st;
    try {
      st = filter.step(run.rho[k], run.control[k - 1]);
    } catch (const Error& e) {
      std::throw_with_nested(TickError(k, e.what()));
    }
    if (st.fix != AttitudeFixStatus::kOk) ++trace.degraded_fixes;
    if (!st.altitude_valid) ++trace.altitude_dropouts;
    trace.estimate.push_back(filter.output());
    trace.innovation.push_back(filter.innovation());
    after_step(k, filter);
  }
  trace.skipped_updates = filter.skipped_updates();
  return trace;
}

template <class T>
Trace replay(const SimulatedRun& run, const CekfConfig& cfg, const InitialStates& init) {
  return replay<T>(run, cfg, init, [](std::size_t, const BasicCekf<T>&) {});
}

}  // namespace cekf
