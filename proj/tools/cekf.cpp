// cekf: command-line front end for runs, sweeps, tuning and trajectory files.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cekf/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  unsigned workers = 1;
  std::optional<std::string> trajectory;
  std::optional<double> duty;
  std::optional<std::string> format;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Run seed (overrides the config)");
  cmd->add_option("--out-dir", o.out_dir, "Output directory")->envname("CEKF_OUT_DIR");
  cmd->add_option("--workers", o.workers, "Worker threads for sweeps")
      ->envname("CEKF_WORKERS")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--trajectory", o.trajectory, "Generator kind: hover, leaf_hop or oscillating");
  cmd->add_option("--duty", o.duty, "Vibration duty cycle in [0, 1]");
  cmd->add_option("--format", o.format, "Number format: f64, f32, fx8, fx16, fx32 or qI.F");
}

cekf::RunConfig resolve(const CommonOptions& o) {
  cekf::RunConfig cfg = o.config.empty() ? cekf::RunConfig{} : cekf::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.trajectory) {
    cfg.trajectory.kind = cekf::trajectory_kind_from_string(*o.trajectory);
    cfg.trajectory.file.clear();
  }
  if (o.duty) cfg.rig.vibration.duty = *o.duty;
  if (o.format) cfg.format = cekf::precision::NumberFormat::parse(*o.format);
  cfg.validate();
  return cfg;
}

void print_table(const cekf::RmseTable& t) { std::cout << cekf::render_table(t); }

std::vector<cekf::precision::NumberFormat> parse_formats(const std::vector<std::string>& names) {
  std::vector<cekf::precision::NumberFormat> out;
  for (const auto& n : names) out.push_back(cekf::precision::NumberFormat::parse(n));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complementary EKF evaluation harness"};
  app.require_subcommand(1);

  CommonOptions simulate_opts;
  auto* simulate = app.add_subcommand("simulate", "One run: synthesize streams, filter, score");
  add_common(simulate, simulate_opts);

  CommonOptions noise_opts;
  std::vector<double> duties = cekf::default_duty_axis();
  auto* sweep_noise = app.add_subcommand("sweep-noise", "RMSE table over vibration duty cycles");
  add_common(sweep_noise, noise_opts);
  sweep_noise->add_option("--duties", duties, "Duty values")->delimiter(',');

  CommonOptions precision_opts;
  std::vector<std::string> formats = {"f64", "f32", "fx32", "fx16", "fx8"};
  auto* sweep_precision =
      app.add_subcommand("sweep-precision", "RMSE and op counts over number formats");
  add_common(sweep_precision, precision_opts);
  sweep_precision->add_option("--formats", formats, "Formats")->delimiter(',');

  CommonOptions tune_opts;
  cekf::GainGrid grid;
  std::vector<std::string> suite = {"oscillating"};
  auto* tune = app.add_subcommand("tune", "Grid search over CCF gains");
  add_common(tune, tune_opts);
  tune->add_option("--kp", grid.kp, "Proportional gains")->delimiter(',');
  tune->add_option("--ki", grid.ki, "Integral gains")->delimiter(',');
  tune->add_option("--alpha", grid.alpha, "Blend weights")->delimiter(',');
  tune->add_option("--suite", suite, "Trajectory kinds to score on")->delimiter(',');

  CommonOptions gen_opts;
  std::string gen_file = "trajectory.csv";
  auto* gen = app.add_subcommand("gen-traj", "Write a generated trajectory as CSV");
  add_common(gen, gen_opts);
  gen->add_option("--file", gen_file, "File name inside the output directory");

  std::string report_input;
  auto* report = app.add_subcommand("report", "Print an RMSE table CSV");
  report->add_option("input", report_input, "table.csv or rmse.csv")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*simulate) {
      const cekf::RunConfig cfg = resolve(simulate_opts);
      const cekf::RunResult r = cekf::run(cfg, simulate_opts.out_dir);
      print_table(cekf::RmseTable{{r.row}});
    } else if (*sweep_noise) {
      const cekf::RunConfig cfg = resolve(noise_opts);
      cekf::SweepSpec spec;
      spec.axis = cekf::SweepAxis::kDuty;
      spec.duties = duties;
      const auto r = cekf::sweep(cfg, spec, noise_opts.workers, noise_opts.out_dir);
      print_table(r.table);
    } else if (*sweep_precision) {
      const cekf::RunConfig cfg = resolve(precision_opts);
      cekf::SweepSpec spec;
      spec.axis = cekf::SweepAxis::kFormat;
      spec.formats = parse_formats(formats);
      const auto r = cekf::sweep(cfg, spec, precision_opts.workers, precision_opts.out_dir);
      print_table(r.table);
      for (const auto& rep : r.reports) {
        if (!rep) continue;
        std::printf("%-8s ops/cycle %.0f (reference %.0f)  cycle %.2f us  budget %.0f us  %s\n",
                    rep->format.name().c_str(), rep->ops_per_cycle,
                    cekf::precision::kReferenceFlops, rep->cycle_time_us,
                    rep->realtime_budget_us, rep->within_budget ? "within budget" : "OVER BUDGET");
      }
    } else if (*tune) {
      const cekf::RunConfig base = resolve(tune_opts);
      std::vector<cekf::RunConfig> runs;
      for (const auto& kind : suite) {
        cekf::RunConfig c = base;
        c.trajectory.kind = cekf::trajectory_kind_from_string(kind);
        c.trajectory.file.clear();
        runs.push_back(c);
      }
      const cekf::TuneReport rep =
          cekf::tune_ccf(grid.cells(base.filter.gains), runs, tune_opts.workers);
      fs::create_directories(tune_opts.out_dir);
      const cekf::RmseTable table = rep.table();
      table.save((fs::path(tune_opts.out_dir) / "tune.csv").string());
      print_table(table);
      std::printf("best kp %g ki %g alpha %g: %.4f deg; worst %.4f deg; ratio %.3f\n", rep.best.kp,
                  rep.best.ki, rep.best.alpha, rep.best_rmse_deg, rep.worst_rmse_deg, rep.ratio);
    } else if (*gen) {
      const cekf::RunConfig cfg = resolve(gen_opts);
      fs::create_directories(gen_opts.out_dir);
      const std::string path = (fs::path(gen_opts.out_dir) / gen_file).string();
      cekf::save_trajectory(path, cekf::make_trajectory(cfg));
      std::printf("wrote %s\n", path.c_str());
    } else if (*report) {
      print_table(cekf::RmseTable::load(report_input));
    }
  } catch (const cekf::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const cekf::ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
