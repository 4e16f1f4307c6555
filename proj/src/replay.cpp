#include "cekf/replay.hpp"

namespace cekf {

InitialStates initial_states(const SimulatedRun& run, const CekfConfig& cfg, double alignment_s) {
  if (run.t.empty()) throw EmptyTrajectory("stream has no samples");
  if (!(alignment_s >= 0.0)) throw ConfigError("alignment_s must be >= 0");
  StateVector s0 = run.truth.front();
  Vec3 acc = Vec3::Zero();
  Vec3 mag = Vec3::Zero();
  std::size_t n = 0;
  for (std::size_t k = 0; k < run.t.size(); ++k) {
    if (k > 0 && run.t[k] - run.t.front() >= alignment_s) break;
    acc += run.rho[k].acc;
    mag += run.rho[k].mag;
    ++n;
  }
  acc /= static_cast<double>(n);
  mag /= static_cast<double>(n);
  const auto fix = kernel::accel_mag_attitude<double>(acc, mag, cfg.vehicle.g);
  if (fix.status == AttitudeFixStatus::kOk) s0.q = fix.q;
  InitialStates init;
  init.ekf = EkfState::initial(s0, cfg.ekf);
  init.ccf = CcfState::at(s0.q);
  return init;
}

}  // namespace cekf
