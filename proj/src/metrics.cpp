#include "cekf/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace cekf {

double rmse(const std::vector<double>& estimate, const std::vector<double>& truth, bool angular) {
  if (estimate.size() != truth.size()) {
    throw LengthMismatch("series lengths differ: " + std::to_string(estimate.size()) + " vs " +
                         std::to_string(truth.size()));
  }
  if (estimate.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    double d = estimate[k] - truth[k];
    if (angular) d = wrap_angle(d);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(estimate.size()));
}

double ChannelRmse::max_attitude_deg() const { return std::max({roll_deg, pitch_deg, yaw_deg}); }

ChannelRmse channel_rmse(const std::vector<double>& t, const std::vector<CekfOutput>& estimate,
                         const std::vector<CekfOutput>& truth, double burn_in_s) {
  if (estimate.size() != truth.size() || t.size() != truth.size()) {
    throw LengthMismatch("estimate, truth and time series must have equal length");
  }
  std::vector<std::vector<double>> e(4), g(4);
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] < t.front() + burn_in_s) continue;
    e[0].push_back(estimate[k].q.phi);
    e[1].push_back(estimate[k].q.theta);
    e[2].push_back(estimate[k].q.psi);
    e[3].push_back(estimate[k].zeta);
    g[0].push_back(truth[k].q.phi);
    g[1].push_back(truth[k].q.theta);
    g[2].push_back(truth[k].q.psi);
    g[3].push_back(truth[k].zeta);
  }
  ChannelRmse r;
  r.roll_deg = rmse(e[0], g[0], true) * kRadToDeg;
  r.pitch_deg = rmse(e[1], g[1], true) * kRadToDeg;
  r.yaw_deg = rmse(e[2], g[2], true) * kRadToDeg;
  r.altitude_mm = rmse(e[3], g[3]) * 1e3;
  return r;
}

std::vector<CekfOutput> output_slice(const std::vector<StateVector>& states) {
  std::vector<CekfOutput> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back({s.q, s.zeta});
  return out;
}

}  // namespace cekf
