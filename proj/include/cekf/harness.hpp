#pragma once

// Experiment orchestration: run configuration, single runs, duty and format
// sweeps, CCF gain tuning and the RMSE table they all emit.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cekf/metrics.hpp"
#include "cekf/precision.hpp"
#include "cekf/replay.hpp"
#include "cekf/sensors.hpp"

namespace cekf {

struct TrajectorySource {
  std::optional<TrajectoryKind> kind = TrajectoryKind::kHover;
  std::string file;                   // used when kind is empty
  std::optional<double> resample_hz;  // file only
  TrajectoryParams params;            // generator only
};

struct RunConfig {
  TrajectorySource trajectory;
  RigConfig rig;
  CekfConfig filter;
  precision::NumberFormat format = precision::NumberFormat::f64();
  precision::PrecisionOptions precision;
  double burn_in_s = 0.5;
  double alignment_s = kDefaultAlignmentSeconds;
  std::uint64_t seed = 1;

  // Rates positive, referenced file present, every sub-config valid.
  void validate() const;
};

// Reads a JSON run configuration. Unknown keys are rejected. Vehicle
// parameters are given in tabulated units (mass_g, inertia_g_m2, b_w, r_w_mm)
// and converted to SI. Throws ConfigError.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_json(const RunConfig& cfg);

// Independent stream seed for `stream` derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Rig and trajectory parameters with every random stream seeded from cfg.seed.
RigConfig seeded_rig(const RunConfig& cfg);
Trajectory make_trajectory(const RunConfig& cfg);
SimulatedRun simulate(const RunConfig& cfg);

struct RmseRow {
  std::string axis;   // run, duty, format or tune
  std::string label;  // cell value as text
  std::string trajectory;
  double duty = 0.0;
  std::string format;
  std::uint64_t seed = 0;
  double roll_deg = 0.0;
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;
  double altitude_mm = 0.0;
  // Format cells only: RMSE against the float64 trace and per-tick op count.
  std::optional<double> roll_added_deg;
  std::optional<double> pitch_added_deg;
  std::optional<double> yaw_added_deg;
  std::optional<double> altitude_added_mm;
  std::optional<double> ops_per_cycle;
  bool ok = true;
  std::string message;  // failure text when !ok

  double mean_attitude_deg() const { return (roll_deg + pitch_deg + yaw_deg) / 3.0; }
  friend bool operator==(const RmseRow&, const RmseRow&) = default;
};

struct RmseTable {
  std::vector<RmseRow> rows;

  // Numbers are written with 12 significant digits.
  std::string to_csv() const;
  static RmseTable from_csv(const std::string& text);  // throws ParseError
  void save(const std::string& path) const;
  static RmseTable load(const std::string& path);
};

// Shortest text that reads back to the same value at 12 significant digits.
std::string format_number(double x);

struct RunResult {
  SimulatedRun run;
  Trace trace;
  RmseRow row;
  std::optional<precision::PrecisionReport> precision;  // non-float64 formats
};

// Synthesizes the streams, runs the CEKF in cfg.format and scores it. With a
// non-empty out_dir writes estimate.csv, truth.csv and rmse.csv (plus
// precision.json for emulated formats).
RunResult run(const RunConfig& cfg, const std::string& out_dir = {});

void write_trace_csv(const std::string& path, const std::vector<double>& t,
                     const std::vector<CekfOutput>& values);

enum class SweepAxis { kDuty, kFormat };

struct SweepSpec {
  SweepAxis axis = SweepAxis::kDuty;
  std::vector<double> duties;
  std::vector<precision::NumberFormat> formats;
};

struct SweepResult {
  RmseTable table;
  std::vector<std::optional<precision::PrecisionReport>> reports;  // format axis
};

// One cell per axis value, run on up to `workers` threads. Cells share the run
// seed; a failing cell is recorded with ok = false and the sweep continues.
// With out_dir, writes table.csv, one estimate trace per cell and (format
// axis) precision.json and precision.csv. Throws ConfigError on an empty axis.
SweepResult sweep(const RunConfig& cfg, const SweepSpec& spec, unsigned workers = 1,
                  const std::string& out_dir = {});

std::vector<double> default_duty_axis();  // 0, 0.1, ..., 0.7
std::vector<precision::NumberFormat> default_format_axis();  // f64 f32 fx32 fx16 fx8

struct GainGrid {
  std::vector<double> kp = {0.5, 1.0, 2.0, 5.0};
  std::vector<double> ki = {0.01, 0.1};
  std::vector<double> alpha = {0.9, 0.95, 0.98};

  std::vector<CcfGains> cells(const CcfGains& base = {}) const;
};

struct TuneCell {
  CcfGains gains;
  double mean_rmse_deg = 0.0;  // mean attitude RMSE averaged over trajectories
  bool ok = true;
  std::string message;
};

struct TuneReport {
  std::vector<TuneCell> cells;
  CcfGains best;
  double best_rmse_deg = 0.0;
  double worst_rmse_deg = 0.0;  // over cells that finished with a finite score
  double ratio = 0.0;           // worst / best

  RmseTable table() const;
};

// Grid search for the gains minimizing mean attitude RMSE over the given
// runs. Failed or non-finite cells are kept in the report and never selected.
// Throws ConfigError on an empty grid or trajectory set, and Error when no
// cell finishes.
TuneReport tune_ccf(const std::vector<CcfGains>& grid, const std::vector<RunConfig>& trajectories,
                    unsigned workers = 1);

// Human-readable fixed-width rendering of a table.
std::string render_table(const RmseTable& table);

}  // namespace cekf
