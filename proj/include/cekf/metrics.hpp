#pragma once

#include <vector>

#include "cekf/ekf.hpp"

namespace cekf {

// Root-mean-square difference. With `angular` the differences are wrapped
// into (-pi, pi] first. Throws LengthMismatch on unequal lengths.
double rmse(const std::vector<double>& estimate, const std::vector<double>& truth,
            bool angular = false);

struct ChannelRmse {
  double roll_deg = 0.0;
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;
  double altitude_mm = 0.0;

  double mean_attitude_deg() const { return (roll_deg + pitch_deg + yaw_deg) / 3.0; }
  double max_attitude_deg() const;
};

// Per-channel RMSE over the ticks with t >= t.front() + burn_in_s.
ChannelRmse channel_rmse(const std::vector<double>& t, const std::vector<CekfOutput>& estimate,
                         const std::vector<CekfOutput>& truth, double burn_in_s);

std::vector<CekfOutput> output_slice(const std::vector<StateVector>& states);

}  // namespace cekf
