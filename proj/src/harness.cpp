#include "cekf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace cekf {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Enum text

std::string kinematics_name(GyroKinematics k) {
  return k == GyroKinematics::kEulerRates ? "euler_rates" : "body_rates";
}

GyroKinematics kinematics_from(const std::string& s) {
  if (s == "euler_rates") return GyroKinematics::kEulerRates;
  if (s == "body_rates") return GyroKinematics::kBodyRates;
  throw ConfigError("unknown gyro kinematics '" + s + "'");
}

std::string jacobian_name(JacobianMethod m) {
  return m == JacobianMethod::kNumeric ? "numeric" : "analytic";
}

JacobianMethod jacobian_from(const std::string& s) {
  if (s == "numeric") return JacobianMethod::kNumeric;
  if (s == "analytic") return JacobianMethod::kAnalytic;
  throw ConfigError("unknown jacobian method '" + s + "'");
}

std::string failure_name(FactorFailure f) {
  return f == FactorFailure::kThrow ? "throw" : "skip_update";
}

FactorFailure failure_from(const std::string& s) {
  if (s == "throw") return FactorFailure::kThrow;
  if (s == "skip_update") return FactorFailure::kSkipUpdate;
  throw ConfigError("unknown factor failure policy '" + s + "'");
}

QLayout layout_from(const std::string& s) {
  if (s == "altitude_before_velocity") return QLayout::kAltitudeBeforeVelocity;
  if (s == "as_printed") return QLayout::kAsPrinted;
  throw ConfigError("unknown Q layout '" + s + "'");
}

std::string projection_name(WingProjection w) {
  return w == WingProjection::kAsPrinted ? "as_printed" : "corrected";
}

WingProjection projection_from(const std::string& s) {
  if (s == "as_printed") return WingProjection::kAsPrinted;
  if (s == "corrected") return WingProjection::kCorrected;
  throw ConfigError("unknown wing projection '" + s + "'");
}

std::string convention_name(EulerConvention c) { return c == EulerConvention::kZYX ? "zyx" : "xyz"; }

EulerConvention convention_from(const std::string& s) {
  if (s == "zyx") return EulerConvention::kZYX;
  if (s == "xyz") return EulerConvention::kXYZ;
  throw ConfigError("unknown Euler convention '" + s + "'");
}

std::string mode_name(precision::EmulationMode m) {
  return m == precision::EmulationMode::kAfterOp ? "after_op" : "store_only";
}

precision::EmulationMode mode_from(const std::string& s) {
  if (s == "after_op") return precision::EmulationMode::kAfterOp;
  if (s == "store_only") return precision::EmulationMode::kStoreOnly;
  throw ConfigError("unknown emulation mode '" + s + "'");
}

std::string transcendental_name(precision::TranscendentalMode m) {
  return m == precision::TranscendentalMode::kRounded ? "rounded" : "polynomial";
}

precision::TranscendentalMode transcendental_from(const std::string& s) {
  if (s == "rounded") return precision::TranscendentalMode::kRounded;
  if (s == "polynomial") return precision::TranscendentalMode::kPolynomial;
  throw ConfigError("unknown transcendental mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// JSON reading with strict key checking

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    for (const auto& [key, value] : j_.items()) pending_.push_back(key);
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!take(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  void get(const std::string& key, Vec3& out) {
    if (!take(key)) return;
    out = vec<3>(key);
  }

  template <int N>
  Eigen::Matrix<double, N, 1> vec(const std::string& key) {
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != static_cast<std::size_t>(N)) {
      throw ConfigError(where(key) + " must be an array of " + std::to_string(N) + " numbers");
    }
    Eigen::Matrix<double, N, 1> out;
    for (int i = 0; i < N; ++i) {
      if (!v[i].is_number()) throw ConfigError(where(key) + " must hold numbers");
      out(i) = v[i].get<double>();
    }
    return out;
  }

  std::string text(const std::string& key) {
    std::string s;
    get(key, s);
    return s;
  }

  const json& raw(const std::string& key) {
    take(key);
    return j_.at(key);
  }

  Reader child(const std::string& key) {
    take(key);
    return Reader(j_.at(key), where(key));
  }

  bool take(const std::string& key) {
    if (!j_.contains(key)) return false;
    pending_.erase(std::remove(pending_.begin(), pending_.end(), key), pending_.end());
    return true;
  }

  void finish() const {
    if (!pending_.empty()) throw ConfigError("unknown key " + where(pending_.front()));
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> pending_;
};

void read_trajectory(Reader r, TrajectorySource& src) {
  if (r.has("kind") && r.has("file")) throw ConfigError("trajectory takes either kind or file");
  if (r.has("kind")) src.kind = trajectory_kind_from_string(r.text("kind"));
  if (r.has("file")) {
    src.kind.reset();
    src.file = r.text("file");
  }
  if (r.has("resample_hz")) {
    double hz = 0.0;
    r.get("resample_hz", hz);
    src.resample_hz = hz;
  }
  if (r.has("params")) {
    Reader p = r.child("params");
    TrajectoryParams& tp = src.params;
    p.get("sample_hz", tp.sample_hz);
    p.get("jitter_deg", tp.jitter_deg);
    p.get("hover_altitude", tp.hover_altitude);
    p.get("hold_s", tp.hold_s);
    p.get("excursion_deg", tp.excursion_deg);
    p.get("oscillation_s", tp.oscillation_s);
    p.get("oscillation_hz_lo", tp.oscillation_hz_lo);
    p.get("oscillation_hz_hi", tp.oscillation_hz_hi);
    p.finish();
  }
  r.finish();
}

void read_noise(Reader r, NoiseConfig& n) {
  bool enabled = true;
  r.get("enabled", enabled);
  if (!enabled) {
    const std::uint64_t seed = n.seed;
    n = NoiseConfig::noiseless();
    n.seed = seed;
  }
  r.get("accel_sigma", n.accel_noise_sigma);
  r.get("gyro_sigma", n.gyro_noise_sigma);
  r.get("gyro_bias", n.gyro_bias);
  r.get("mag_sigma", n.mag_noise_sigma);
  r.get("tof_sigma", n.tof_noise_sigma);
  r.get("quantize", n.quantize);
  r.finish();
}

std::vector<std::pair<double, double>> read_anchors(const json& a, const std::string& where) {
  if (!a.is_array() || a.empty()) throw ConfigError(where + " must be a non-empty array");
  std::vector<std::pair<double, double>> out;
  for (const auto& e : a) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
      throw ConfigError(where + " entries must be [duty, scale] pairs");
    }
    out.emplace_back(e[0].get<double>(), e[1].get<double>());
  }
  return out;
}

void read_vibration(Reader r, VibrationConfig& v) {
  r.get("duty", v.duty);
  r.get("body_mode_hz", v.body_mode_hz);
  r.get("amp_x_1g", v.amp_x_1g);
  r.get("amp_y_halfg", v.amp_y_halfg);
  if (r.has("anchors")) v.anchors = read_anchors(r.raw("anchors"), r.where("anchors"));
  r.get("irregular", v.irregular);
  r.get("irregular_phase_rad", v.irregular_phase_rad);
  r.get("irregular_amp_frac", v.irregular_amp_frac);
  r.get("wingbeat_hz", v.wingbeat_hz);
  r.get("wingbeat_amp_g", v.wingbeat_amp_g);
  r.get("gyro_coupling", v.gyro_coupling);
  r.get("axis_gain", v.axis_gain);
  r.finish();
}


void read_ccf(Reader r, CcfGains& g) {
  r.get("alpha", g.alpha);
  r.get("kp", g.kp);
  r.get("ki", g.ki);
  r.get("integrator_limit", g.integrator_limit);
  if (r.has("kinematics")) g.kinematics = kinematics_from(r.text("kinematics"));
  r.finish();
}

void read_ekf(Reader r, EkfConfig& e) {
  QLayout layout = QLayout::kAltitudeBeforeVelocity;
  if (r.has("q_layout")) layout = layout_from(r.text("q_layout"));
  if (r.take("Q")) {
    e.Q = EkfConfig::map_process_noise(r.vec<kStateDim>("Q"), layout);
  } else {
    e.Q = EkfConfig::tuned_process_noise(layout);
  }
  if (r.take("R")) e.R = r.vec<kMeasDim>("R");
  if (r.has("jacobian")) e.jacobian = jacobian_from(r.text("jacobian"));
  if (r.has("on_factor_failure")) e.on_factor_failure = failure_from(r.text("on_factor_failure"));
  r.finish();
}

void read_vehicle(Reader r, VehicleParams& v) {
  double mass_g = v.m * 1e3;
  Vec3 inertia_g_m2 = v.inertia * 1e3;
  double b_w = v.b_w;
  double r_w_mm = v.r_w * 1e3;
  double g = v.g;
  r.get("mass_g", mass_g);
  r.get("inertia_g_m2", inertia_g_m2);
  r.get("b_w", b_w);
  r.get("r_w_mm", r_w_mm);
  r.get("g", g);
  r.finish();
  v = VehicleParams::from_table_units(mass_g, inertia_g_m2, b_w, r_w_mm, g);
}

void read_model(Reader r, ModelOptions& m) {
  r.get("gravity", m.gravity);
  if (r.has("wing_projection")) m.wing_projection = projection_from(r.text("wing_projection"));
  if (r.has("gimbal_margin_deg")) {
    double deg = 0.0;
    r.get("gimbal_margin_deg", deg);
    m.gimbal_margin = deg * kDegToRad;
  }
  r.finish();
}

void read_sensor(Reader r, SensorModel& s) {
  if (r.has("convention")) s.convention = convention_from(r.text("convention"));
  r.get("world_field", s.world_field);
  r.finish();
}

void read_precision(Reader r, precision::PrecisionOptions& p) {
  if (r.has("mode")) p.mode = mode_from(r.text("mode"));
  if (r.has("transcendental")) p.transcendental = transcendental_from(r.text("transcendental"));
  if (r.has("global_override")) p.global_override = precision::NumberFormat::parse(r.text("global_override"));
  r.get("quantile", p.quantile);
  r.get("clock_hz", p.clock_hz);
  r.get("cycles_per_op", p.cycles_per_op);
  r.get("saturation_flag", p.saturation_flag);
  r.finish();
}

json vec_json(const auto& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  if (!(rig.imu_hz > 0.0) || !(rig.tof_hz > 0.0)) throw ConfigError("sample rates must be positive");
  if (!(burn_in_s >= 0.0)) throw ConfigError("burn_in_s must be >= 0");
  if (!(alignment_s >= 0.0)) throw ConfigError("alignment_s must be >= 0");
  if (!trajectory.kind) {
    if (trajectory.file.empty()) throw ConfigError("trajectory needs a kind or a file");
    if (!fs::exists(trajectory.file)) {
      throw ConfigError("trajectory file '" + trajectory.file + "' does not exist");
    }
    if (trajectory.resample_hz && !(*trajectory.resample_hz > 0.0)) {
      throw ConfigError("resample_hz must be positive");
    }
  }
  rig.noise.validate();
  rig.vibration.validate();
  rig.vehicle.validate();
  filter.gains.validate();
  filter.ekf.validate();
  filter.vehicle.validate();
  if (format.kind == precision::FormatKind::kFixed) format.validate();
  if (!(precision.quantile > 0.0 && precision.quantile <= 1.0)) {
    throw ConfigError("precision quantile must lie in (0, 1]");
  }
  if (!(precision.clock_hz > 0.0) || !(precision.cycles_per_op > 0.0)) {
    throw ConfigError("clock_hz and cycles_per_op must be positive");
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Reader r(j, "");
  r.get("seed", cfg.seed);
  r.get("imu_hz", cfg.rig.imu_hz);
  r.get("tof_hz", cfg.rig.tof_hz);
  r.get("burn_in_s", cfg.burn_in_s);
  r.get("alignment_s", cfg.alignment_s);
  if (r.has("format")) cfg.format = precision::NumberFormat::parse(r.text("format"));
  if (r.has("trajectory")) read_trajectory(r.child("trajectory"), cfg.trajectory);
  if (r.has("noise")) read_noise(r.child("noise"), cfg.rig.noise);
  if (r.has("vibration")) read_vibration(r.child("vibration"), cfg.rig.vibration);
  if (r.has("ccf")) read_ccf(r.child("ccf"), cfg.filter.gains);
  if (r.has("ekf")) read_ekf(r.child("ekf"), cfg.filter.ekf);
  if (r.has("vehicle")) read_vehicle(r.child("vehicle"), cfg.rig.vehicle);
  if (r.has("model")) read_model(r.child("model"), cfg.rig.model);
  if (r.has("sensor")) read_sensor(r.child("sensor"), cfg.rig.sensor);
  if (r.has("precision")) read_precision(r.child("precision"), cfg.precision);
  r.finish();
  // The filter uses the same vehicle and model as the rig.
  cfg.filter.vehicle = cfg.rig.vehicle;
  cfg.filter.model = cfg.rig.model;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_run_config(ss.str());
  // Relative trajectory files resolve against the config's directory.
  if (!cfg.trajectory.kind && fs::path(cfg.trajectory.file).is_relative() &&
      !fs::exists(cfg.trajectory.file)) {
    cfg.trajectory.file = (fs::path(path).parent_path() / cfg.trajectory.file).string();
  }
  cfg.validate();
  return cfg;
}

std::string run_config_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["imu_hz"] = cfg.rig.imu_hz;
  j["tof_hz"] = cfg.rig.tof_hz;
  j["burn_in_s"] = cfg.burn_in_s;
  j["alignment_s"] = cfg.alignment_s;
  j["format"] = cfg.format.name();
  json t;
  if (cfg.trajectory.kind) {
    t["kind"] = to_string(*cfg.trajectory.kind);
  } else {
    t["file"] = cfg.trajectory.file;
    if (cfg.trajectory.resample_hz) t["resample_hz"] = *cfg.trajectory.resample_hz;
  }
  const TrajectoryParams& tp = cfg.trajectory.params;
  t["params"] = {{"sample_hz", tp.sample_hz},
                 {"jitter_deg", tp.jitter_deg},
                 {"hover_altitude", tp.hover_altitude},
                 {"hold_s", tp.hold_s},
                 {"excursion_deg", tp.excursion_deg},
                 {"oscillation_s", tp.oscillation_s},
                 {"oscillation_hz_lo", tp.oscillation_hz_lo},
                 {"oscillation_hz_hi", tp.oscillation_hz_hi}};
  j["trajectory"] = t;
  const NoiseConfig& n = cfg.rig.noise;
  j["noise"] = {{"accel_sigma", n.accel_noise_sigma}, {"gyro_sigma", n.gyro_noise_sigma},
                {"gyro_bias", vec_json(n.gyro_bias)}, {"mag_sigma", n.mag_noise_sigma},
                {"tof_sigma", n.tof_noise_sigma},     {"quantize", n.quantize}};
  const VibrationConfig& v = cfg.rig.vibration;
  json anchors = json::array();
  for (const auto& [d, a] : v.anchors) anchors.push_back({d, a});
  j["vibration"] = {{"duty", v.duty},
                    {"body_mode_hz", v.body_mode_hz},
                    {"amp_x_1g", v.amp_x_1g},
                    {"amp_y_halfg", v.amp_y_halfg},
                    {"anchors", anchors},
                    {"irregular", v.irregular},
                    {"irregular_phase_rad", v.irregular_phase_rad},
                    {"irregular_amp_frac", v.irregular_amp_frac},
                    {"wingbeat_hz", v.wingbeat_hz},
                    {"wingbeat_amp_g", v.wingbeat_amp_g},
                    {"gyro_coupling", v.gyro_coupling},
                    {"axis_gain", vec_json(v.axis_gain)}};
  const CcfGains& g = cfg.filter.gains;
  j["ccf"] = {{"alpha", g.alpha},
              {"kp", g.kp},
              {"ki", g.ki},
              {"integrator_limit", g.integrator_limit},
              {"kinematics", kinematics_name(g.kinematics)}};
  const EkfConfig& e = cfg.filter.ekf;
  // Q is written in state order, which is what the as_printed layout reads.
  j["ekf"] = {{"q_layout", "as_printed"},
              {"Q", vec_json(e.Q)},
              {"R", vec_json(e.R)},
              {"jacobian", jacobian_name(e.jacobian)},
              {"on_factor_failure", failure_name(e.on_factor_failure)}};
  const VehicleParams& vp = cfg.rig.vehicle;
  j["vehicle"] = {{"mass_g", vp.m * 1e3},
                  {"inertia_g_m2", vec_json(Vec3(vp.inertia * 1e3))},
                  {"b_w", vp.b_w},
                  {"r_w_mm", vp.r_w * 1e3},
                  {"g", vp.g}};
  const ModelOptions& m = cfg.rig.model;
  j["model"] = {{"gravity", m.gravity},
                {"wing_projection", projection_name(m.wing_projection)},
                {"gimbal_margin_deg", m.gimbal_margin * kRadToDeg}};
  j["sensor"] = {{"convention", convention_name(cfg.rig.sensor.convention)},
                 {"world_field", vec_json(cfg.rig.sensor.world_field)}};
  const precision::PrecisionOptions& p = cfg.precision;
  json pj = {{"mode", mode_name(p.mode)},
             {"transcendental", transcendental_name(p.transcendental)},
             {"quantile", p.quantile},
             {"clock_hz", p.clock_hz},
             {"cycles_per_op", p.cycles_per_op},
             {"saturation_flag", p.saturation_flag}};
  if (p.global_override) pj["global_override"] = p.global_override->name();
  j["precision"] = pj;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Streams

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RigConfig seeded_rig(const RunConfig& cfg) {
  RigConfig rig = cfg.rig;
  rig.noise.seed = derive_seed(cfg.seed, 1);
  rig.vibration.seed = derive_seed(cfg.seed, 2);
  return rig;
}

Trajectory make_trajectory(const RunConfig& cfg) {
  if (cfg.trajectory.kind) {
    TrajectoryParams tp = cfg.trajectory.params;
    tp.seed = derive_seed(cfg.seed, 3);
    return generate_trajectory(*cfg.trajectory.kind, tp);
  }
  return load_trajectory(cfg.trajectory.file, cfg.trajectory.resample_hz);
}

SimulatedRun simulate(const RunConfig& cfg) {
  const Trajectory traj = make_trajectory(cfg);
  const TrajectorySpline spline(traj);
  return synthesize(spline, seeded_rig(cfg));
}

// ---------------------------------------------------------------------------
// RMSE table

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

namespace {

const char* const kTableHeader =
    "axis,label,trajectory,duty,format,seed,roll_deg,pitch_deg,yaw_deg,altitude_mm,"
    "roll_added_deg,pitch_added_deg,yaw_added_deg,altitude_added_mm,ops_per_cycle,ok,message";
constexpr std::size_t kTableColumns = 17;

std::string opt_number(const std::optional<double>& x) { return x ? format_number(*x) : ""; }

// Fields holding a comma or quote are quoted with doubled inner quotes. Rows
// are read line by line, so line breaks become spaces.
std::string clean_text(std::string s) {
  bool quote = false;
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == ',' || c == '"') quote = true;
  }
  if (!quote) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv(const std::string& line, std::size_t row) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c != '"') {
        cell += c;
      } else if (i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else {
        quoted = false;
      }
    } else if (c == '"' && cell.empty()) {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) throw ParseError(row, "unterminated quoted field");
  out.push_back(std::move(cell));
  return out;
}

double parse_double(const std::string& s, std::size_t row) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw ParseError(row, "bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ParseError(row, "bad number '" + s + "'");
  }
}

std::optional<double> parse_opt(const std::string& s, std::size_t row) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, row);
}

}  // namespace

std::string RmseTable::to_csv() const {
  std::ostringstream out;
  out << kTableHeader << '\n';
  for (const RmseRow& r : rows) {
    out << clean_text(r.axis) << ',' << clean_text(r.label) << ',' << clean_text(r.trajectory) << ','
        << format_number(r.duty) << ',' << clean_text(r.format) << ',' << r.seed << ','
        << format_number(r.roll_deg) << ',' << format_number(r.pitch_deg) << ','
        << format_number(r.yaw_deg) << ',' << format_number(r.altitude_mm) << ','
        << opt_number(r.roll_added_deg) << ',' << opt_number(r.pitch_added_deg) << ','
        << opt_number(r.yaw_added_deg) << ',' << opt_number(r.altitude_added_mm) << ','
        << opt_number(r.ops_per_cycle) << ',' << (r.ok ? 1 : 0) << ',' << clean_text(r.message)
        << '\n';
  }
  return out.str();
}

RmseTable RmseTable::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTableHeader) throw ParseError(1, "unexpected table header");
  RmseTable table;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto c = split_csv(line, row);
    if (c.size() != kTableColumns) {
      throw ParseError(row, "expected " + std::to_string(kTableColumns) + " columns, got " +
                                std::to_string(c.size()));
    }
    RmseRow r;
    r.axis = c[0];
    r.label = c[1];
    r.trajectory = c[2];
    r.duty = parse_double(c[3], row);
    r.format = c[4];
    try {
      r.seed = std::stoull(c[5]);
    } catch (const std::logic_error&) {
      throw ParseError(row, "bad seed '" + c[5] + "'");
    }
    r.roll_deg = parse_double(c[6], row);
    r.pitch_deg = parse_double(c[7], row);
    r.yaw_deg = parse_double(c[8], row);
    r.altitude_mm = parse_double(c[9], row);
    r.roll_added_deg = parse_opt(c[10], row);
    r.pitch_added_deg = parse_opt(c[11], row);
    r.yaw_added_deg = parse_opt(c[12], row);
    r.altitude_added_mm = parse_opt(c[13], row);
    r.ops_per_cycle = parse_opt(c[14], row);
    if (c[15] != "0" && c[15] != "1") throw ParseError(row, "ok must be 0 or 1");
    r.ok = c[15] == "1";
    r.message = c[16];
    table.rows.push_back(std::move(r));
  }
  return table;
}

void RmseTable::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << to_csv();
}

RmseTable RmseTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_csv(ss.str());
}

std::string render_table(const RmseTable& table) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %-10s %-12s %9s %9s %9s %9s %11s %s\n", "axis", "label",
                "trajectory", "roll_deg", "pitch_deg", "yaw_deg", "mean_deg", "altitude_mm",
                "status");
  out << buf;
  for (const RmseRow& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%-8s %-10s %-12s %9.3f %9.3f %9.3f %9.3f %11.3f %s\n",
                  r.axis.c_str(), r.label.c_str(), r.trajectory.c_str(), r.roll_deg, r.pitch_deg,
                  r.yaw_deg, r.mean_attitude_deg(), r.altitude_mm,
                  r.ok ? "ok" : ("FAILED: " + r.message).c_str());
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Single runs

void write_trace_csv(const std::string& path, const std::vector<double>& t,
                     const std::vector<CekfOutput>& values) {
  if (t.size() != values.size()) throw LengthMismatch("trace and time base differ in length");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "t,phi,theta,psi,zeta\n";
  for (std::size_t k = 0; k < t.size(); ++k) {
    const CekfOutput& v = values[k];
    out << format_number(t[k]) << ',' << format_number(v.q.phi) << ',' << format_number(v.q.theta)
        << ',' << format_number(v.q.psi) << ',' << format_number(v.zeta) << '\n';
  }
}

namespace {

std::string trajectory_label(const RunConfig& cfg) {
  return cfg.trajectory.kind ? to_string(*cfg.trajectory.kind)
                             : fs::path(cfg.trajectory.file).stem().string();
}

RmseRow base_row(const RunConfig& cfg, const std::string& axis, const std::string& label) {
  RmseRow row;
  row.axis = axis;
  row.label = label;
  row.trajectory = trajectory_label(cfg);
  row.duty = cfg.rig.vibration.duty;
  row.format = cfg.format.name();
  row.seed = cfg.seed;
  return row;
}

void fill_rmse(RmseRow& row, const ChannelRmse& r) {
  row.roll_deg = r.roll_deg;
  row.pitch_deg = r.pitch_deg;
  row.yaw_deg = r.yaw_deg;
  row.altitude_mm = r.altitude_mm;
}

void fill_precision(RmseRow& row, const precision::PrecisionReport& rep) {
  fill_rmse(row, rep.rmse_vs_truth);
  row.roll_added_deg = rep.added_rmse.roll_deg;
  row.pitch_added_deg = rep.added_rmse.pitch_deg;
  row.yaw_added_deg = rep.added_rmse.yaw_deg;
  row.altitude_added_mm = rep.added_rmse.altitude_mm;
  row.ops_per_cycle = rep.ops_per_cycle;
}

precision::PrecisionOptions precision_options(const RunConfig& cfg) {
  precision::PrecisionOptions opt = cfg.precision;
  opt.burn_in_s = cfg.burn_in_s;
  return opt;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir + "': " + ec.message());
}

}  // namespace

RunResult run(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  RunResult result;
  result.run = simulate(cfg);
  const InitialStates init = initial_states(result.run, cfg.filter, cfg.alignment_s);
  result.row = base_row(cfg, "run", to_string(cfg.trajectory.kind.value_or(TrajectoryKind::kHover)));
  if (!cfg.trajectory.kind) result.row.label = result.row.trajectory;
  const std::vector<CekfOutput> truth = output_slice(result.run.truth);
  if (cfg.format.kind == precision::FormatKind::kFloat64) {
    result.trace = replay<double>(result.run, cfg.filter, init);
    fill_rmse(result.row, channel_rmse(result.trace.t, result.trace.estimate, truth, cfg.burn_in_s));
  } else {
    const precision::PrecisionInputs in{result.run, cfg.filter, init};
    const precision::PrecisionOptions opt = precision_options(cfg);
    const precision::PrecisionReference ref = precision::make_reference(in, opt);
    result.precision = precision::run_with_format(in, ref, cfg.format, opt);
    result.trace = result.precision->trace;
    fill_precision(result.row, *result.precision);
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    const fs::path dir(out_dir);
    write_trace_csv((dir / "estimate.csv").string(), result.trace.t, result.trace.estimate);
    write_trace_csv((dir / "truth.csv").string(), result.run.t, truth);
    RmseTable{{result.row}}.save((dir / "rmse.csv").string());
    if (result.precision) write_text((dir / "precision.json").string(), precision::report_json(*result.precision) + "\n");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

// Runs task(i) for i in [0, n) on up to `workers` threads. Each index is
// claimed by exactly one thread; results are written by index.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& task) {
  const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) task(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string describe(const std::exception& e) {
  std::string text = e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    if (text.find(inner.what()) == std::string::npos) text += " (" + std::string(inner.what()) + ")";
  } catch (...) {
  }
  return text;
}

std::string cell_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cell_%02zu", i);
  return buf;
}

}  // namespace

std::vector<double> default_duty_axis() { return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}; }

std::vector<precision::NumberFormat> default_format_axis() {
  using precision::NumberFormat;
  return {NumberFormat::f64(), NumberFormat::f32(), NumberFormat::fixed_auto(32),
          NumberFormat::fixed_auto(16), NumberFormat::fixed_auto(8)};
}

SweepResult sweep(const RunConfig& cfg, const SweepSpec& spec, unsigned workers,
                  const std::string& out_dir) {
  cfg.validate();
  const bool duty_axis = spec.axis == SweepAxis::kDuty;
  const std::size_t n = duty_axis ? spec.duties.size() : spec.formats.size();
  if (n == 0) throw ConfigError("sweep axis has no values");
  for (double d : spec.duties) {
    if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("duty values must lie in [0, 1]");
  }
  for (const auto& f : spec.formats) {
    if (f.kind == precision::FormatKind::kFixed) f.validate();
  }
  if (!out_dir.empty()) ensure_dir(out_dir);

  SweepResult result;
  result.table.rows.resize(n);
  result.reports.resize(n);
  std::vector<Trace> traces(n);

  if (duty_axis) {
    parallel_for(n, workers, [&](std::size_t i) {
      RunConfig c = cfg;
      c.rig.vibration.duty = spec.duties[i];
      RmseRow& row = result.table.rows[i];
      row = base_row(c, "duty", format_number(spec.duties[i]));
      try {
        RunResult r = run(c);
        const std::string label = row.label;
        row = r.row;
        row.axis = "duty";
        row.label = label;
        traces[i] = std::move(r.trace);
        result.reports[i] = std::move(r.precision);
      } catch (const std::exception& e) {
        row.ok = false;
        row.message = describe(e);
      }
    });
  } else {
    // Every format cell replays the same streams against one float64 reference.
    const SimulatedRun sim = simulate(cfg);
    const InitialStates init = initial_states(sim, cfg.filter, cfg.alignment_s);
    const precision::PrecisionInputs in{sim, cfg.filter, init};
    const precision::PrecisionOptions opt = precision_options(cfg);
    const precision::PrecisionReference ref = precision::make_reference(in, opt);
    parallel_for(n, workers, [&](std::size_t i) {
      RunConfig c = cfg;
      c.format = spec.formats[i];
      RmseRow& row = result.table.rows[i];
      row = base_row(c, "format", spec.formats[i].name());
      try {
        precision::PrecisionReport rep = precision::run_with_format(in, ref, spec.formats[i], opt);
        fill_precision(row, rep);
        traces[i] = rep.trace;
        result.reports[i] = std::move(rep);
      } catch (const std::exception& e) {
        row.ok = false;
        row.message = describe(e);
      }
    });
  }

  if (!out_dir.empty()) {
    const fs::path dir(out_dir);
    for (std::size_t i = 0; i < n; ++i) {
      if (!result.table.rows[i].ok) continue;
      write_trace_csv((dir / (cell_name(i) + "_estimate.csv")).string(), traces[i].t,
                      traces[i].estimate);
    }
    result.table.save((dir / "table.csv").string());
    if (!duty_axis) {
      std::string csv = precision::report_csv_header() + "\n";
      json reports = json::array();
      for (const auto& rep : result.reports) {
        if (!rep) continue;
        csv += precision::report_csv_row(*rep) + "\n";
        reports.push_back(json::parse(precision::report_json(*rep)));
      }
      write_text((dir / "precision.csv").string(), csv);
      write_text((dir / "precision.json").string(), reports.dump(2) + "\n");
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gain tuning

std::vector<CcfGains> GainGrid::cells(const CcfGains& base) const {
  std::vector<CcfGains> out;
  for (double p : kp) {
    for (double i : ki) {
      for (double a : alpha) {
        CcfGains g = base;
        g.kp = p;
        g.ki = i;
        g.alpha = a;
        out.push_back(g);
      }
    }
  }
  return out;
}

RmseTable TuneReport::table() const {
  RmseTable t;
  for (const TuneCell& c : cells) {
    RmseRow r;
    r.axis = "tune";
    r.label = "kp=" + format_number(c.gains.kp) + " ki=" + format_number(c.gains.ki) +
              " alpha=" + format_number(c.gains.alpha);
    r.trajectory = "suite";
    r.format = "f64";
    r.roll_deg = r.pitch_deg = r.yaw_deg = c.mean_rmse_deg;
    r.ok = c.ok;
    r.message = c.message;
    t.rows.push_back(std::move(r));
  }
  return t;
}

TuneReport tune_ccf(const std::vector<CcfGains>& grid, const std::vector<RunConfig>& trajectories,
                    unsigned workers) {
  if (grid.empty()) throw ConfigError("gain grid is empty");
  if (trajectories.empty()) throw ConfigError("tuning needs at least one trajectory");
  for (const auto& g : grid) g.validate();

  // Streams do not depend on the gains, so each trajectory is synthesized once.
  std::vector<SimulatedRun> runs;
  runs.reserve(trajectories.size());
  for (const RunConfig& c : trajectories) {
    c.validate();
    runs.push_back(simulate(c));
  }

  TuneReport report;
  report.cells.resize(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    TuneCell& cell = report.cells[i];
    cell.gains = grid[i];
    double sum = 0.0;
    try {
      for (std::size_t k = 0; k < runs.size(); ++k) {
        CekfConfig f = trajectories[k].filter;
        f.gains = grid[i];
        const InitialStates init = initial_states(runs[k], f, trajectories[k].alignment_s);
        const Trace tr = replay<double>(runs[k], f, init);
        const ChannelRmse r = channel_rmse(tr.t, tr.estimate, output_slice(runs[k].truth),
                                           trajectories[k].burn_in_s);
        sum += r.mean_attitude_deg();
      }
      cell.mean_rmse_deg = sum / static_cast<double>(runs.size());
      if (!std::isfinite(cell.mean_rmse_deg)) {
        cell.ok = false;
        cell.message = "non-finite RMSE";
      }
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.message = describe(e);
      cell.mean_rmse_deg = std::numeric_limits<double>::quiet_NaN();
    }
  });

  const TuneCell* best = nullptr;
  const TuneCell* worst = nullptr;
  for (const TuneCell& c : report.cells) {
    if (!c.ok) continue;
    if (!best || c.mean_rmse_deg < best->mean_rmse_deg) best = &c;
    if (!worst || c.mean_rmse_deg > worst->mean_rmse_deg) worst = &c;
  }
  if (!best) throw Error("no gain cell finished");
  report.best = best->gains;
  report.best_rmse_deg = best->mean_rmse_deg;
  report.worst_rmse_deg = worst->mean_rmse_deg;
  report.ratio = report.best_rmse_deg > 0.0 ? report.worst_rmse_deg / report.best_rmse_deg
                                            : std::numeric_limits<double>::infinity();
  return report;
}

}  // namespace cekf
