#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "streambp/errors.hpp"
#include "streambp/experiments/config.hpp"
#include "streambp/experiments/io.hpp"
#include "streambp/experiments/runners.hpp"

namespace ex = streambp::experiments;

namespace {

// Resolution order for every setting: built-in default, then config file,
// then command-line flag.
struct CommonArgs {
  std::string config_path;
  std::string out_path;
  std::string format = "csv";
  std::uint64_t seed = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value configuration file");
  cmd->add_option("--out", args.out_path, "write the report here instead of stdout");
  cmd->add_option("--format", args.format, "output format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--seed", args.seed, "master seed");
}

ex::KeyValueConfig load_config(const CommonArgs& args) {
  if (args.config_path.empty()) return {};
  return ex::KeyValueConfig::parse_file(args.config_path);
}

template <typename Report>
int emit(const CommonArgs& args, const Report& report) {
  const ex::OutputFormat format = ex::parse_format(args.format);
  if (args.out_path.empty()) {
    ex::write_report(std::cout, report, format);
  } else {
    std::ofstream out(args.out_path);
    if (!out) throw ex::ConfigError("cannot open output file: " + args.out_path);
    ex::write_report(out, report, format);
  }
  return 0;
}

// A flag wins over the config file only when the user actually passed it.
template <typename T>
T pick(const CLI::Option* opt, T flag_value, T config_value) {
  return opt->count() > 0 ? flag_value : config_value;
}

const std::vector<std::string> kCommonKeys = {"seed", "format"};

std::vector<std::string> with_common(std::vector<std::string> keys) {
  keys.insert(keys.end(), kCommonKeys.begin(), kCommonKeys.end());
  return keys;
}

void apply_common(const ex::KeyValueConfig& cfg, const CLI::App* cmd, CommonArgs& args) {
  args.seed = pick(cmd->get_option("--seed"), args.seed, cfg.get_u64("seed", args.seed));
  args.format =
      pick(cmd->get_option("--format"), args.format, cfg.get_string("format", args.format));
}

int run_kalman_cmd(const CLI::App* cmd, CommonArgs& common, int steps, int dim) {
  const ex::KeyValueConfig cfg = load_config(common);
  cfg.ensure_known(with_common({"steps", "dim"}));
  apply_common(cfg, cmd, common);
  ex::KalmanRunConfig run;
  run.steps = pick(cmd->get_option("--steps"), steps, cfg.get_int("steps", run.steps));
  run.dim = pick(cmd->get_option("--dim"), dim, cfg.get_int("dim", run.dim));
  run.seed = common.seed;
  const auto report = ex::run_kalman(run);
  std::cerr << "kalman: dim=" << run.dim << " steps=" << run.steps
            << " max_mean_abs_diff=" << ex::g17(report.max_mean_abs_diff)
            << " max_cov_abs_diff=" << ex::g17(report.max_cov_abs_diff)
            << " bp_ms=" << report.bp_ms << " kalman_ms=" << report.kalman_ms << "\n";
  return emit(common, report);
}

int run_bridge_cmd(const CLI::App* cmd, CommonArgs& common, int steps, double horizon_time) {
  const ex::KeyValueConfig cfg = load_config(common);
  cfg.ensure_known(with_common({"steps", "T"}));
  apply_common(cfg, cmd, common);
  ex::BridgeRunConfig run;
  run.n_steps = pick(cmd->get_option("--steps"), steps, cfg.get_int("steps", run.n_steps));
  run.horizon_time =
      pick(cmd->get_option("--T"), horizon_time, cfg.get_double("T", run.horizon_time));
  const auto report = ex::run_bridge(run);
  std::cerr << "bridge: n=" << run.n_steps << " T=" << run.horizon_time
            << " max_abs_err=" << ex::g17(report.max_abs_err) << "\n";
  return emit(common, report);
}

int run_tracker_cmd(const CLI::App* cmd, CommonArgs& common, const ex::TrackerStudyConfig& flags) {
  const ex::KeyValueConfig cfg = load_config(common);
  cfg.ensure_known(with_common({
      "algo", "particles", "sims", "steps", "threads", "observe_every",
      "sigma_s0", "sigma_x0", "sigma_s", "sigma_x", "sigma_t", "sigma_b",
      "divergence_threshold", "divergence_patience",
      "terrain", "terrain_amp1", "terrain_period1", "terrain_amp2", "terrain_period2",
  }));
  apply_common(cfg, cmd, common);

  ex::TrackerStudyConfig run;
  run.algo = pick(cmd->get_option("--algo"), flags.algo, cfg.get_string("algo", run.algo));
  run.particles =
      pick(cmd->get_option("--particles"), flags.particles, cfg.get_int("particles", run.particles));
  run.sims = pick(cmd->get_option("--sims"), flags.sims, cfg.get_int("sims", run.sims));
  run.threads = pick(cmd->get_option("--threads"), flags.threads, cfg.get_int("threads", 0));
  run.seed = common.seed;

  ex::TrackerConfig& m = run.model;
  m.horizon = pick(cmd->get_option("--steps"), flags.model.horizon, cfg.get_int("steps", m.horizon));
  m.observe_every = cfg.get_int("observe_every", m.observe_every);
  m.sigma_s0 = cfg.get_double("sigma_s0", m.sigma_s0);
  m.sigma_x0 = cfg.get_double("sigma_x0", m.sigma_x0);
  m.sigma_s = cfg.get_double("sigma_s", m.sigma_s);
  m.sigma_x = cfg.get_double("sigma_x", m.sigma_x);
  m.sigma_t = cfg.get_double("sigma_t", m.sigma_t);
  m.sigma_b = cfg.get_double("sigma_b", m.sigma_b);
  m.divergence_threshold = cfg.get_double("divergence_threshold", m.divergence_threshold);
  m.divergence_patience = cfg.get_int("divergence_patience", m.divergence_patience);
  m.terrain.id = cfg.get_string("terrain", m.terrain.id);
  m.terrain.amp1 = cfg.get_double("terrain_amp1", m.terrain.amp1);
  m.terrain.period1 = cfg.get_double("terrain_period1", m.terrain.period1);
  m.terrain.amp2 = cfg.get_double("terrain_amp2", m.terrain.amp2);
  m.terrain.period2 = cfg.get_double("terrain_period2", m.terrain.period2);

  const auto report = ex::run_tracker(run);
  std::cerr << "tracker: algo=" << run.algo << " particles=" << run.particles
            << " sims=" << run.sims << " horizon=" << m.horizon
            << " divergence median=" << report.summary.median << " q25=" << report.summary.q25
            << " q75=" << report.summary.q75 << "\n";
  return emit(common, report);
}

int run_bench_cmd(const CLI::App* cmd, CommonArgs& common, int dim, bool no_observe) {
  const ex::KeyValueConfig cfg = load_config(common);
  cfg.ensure_known(with_common({"horizons", "dim", "observe"}));
  apply_common(cfg, cmd, common);
  ex::BenchRunConfig run;
  run.horizons = cfg.get_int_list("horizons", run.horizons);
  run.dim = pick(cmd->get_option("--dim"), dim, cfg.get_int("dim", run.dim));
  run.observe = cmd->get_option("--no-observe")->count() > 0
                    ? !no_observe
                    : cfg.get_int("observe", 1) != 0;
  run.seed = common.seed;
  const auto report = ex::run_bench(run);
  for (const auto& row : report.rows) {
    std::cerr << "bench: horizon=" << row.horizon
              << " steps_per_sec=" << ex::g17(row.steps_per_sec) << "\n";
  }
  return emit(common, report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming Gaussian belief propagation with SMC fallback"};
  app.require_subcommand(1);

  CommonArgs common;

  auto* kalman = app.add_subcommand("kalman", "linear SSM: engine vs closed-form Kalman filter");
  int kalman_steps = 1000, kalman_dim = 1;
  add_common(kalman, common);
  kalman->add_option("--steps", kalman_steps, "filtering steps");
  kalman->add_option("--dim", kalman_dim, "state dimension");

  auto* bridge = app.add_subcommand("bridge", "conditioned random walk covariance");
  int bridge_steps = 50;
  double bridge_T = 1.0;
  add_common(bridge, common);
  bridge->add_option("--steps", bridge_steps, "number of walk steps");
  bridge->add_option("--T", bridge_T, "endpoint time");

  auto* tracker = app.add_subcommand("tracker", "runner tracking divergence study");
  ex::TrackerStudyConfig tracker_flags;
  add_common(tracker, common);
  tracker->add_option("--algo", tracker_flags.algo, "sbp or smc")
      ->check(CLI::IsMember({"sbp", "smc"}));
  tracker->add_option("--particles", tracker_flags.particles, "particle count");
  tracker->add_option("--sims", tracker_flags.sims, "number of simulations");
  tracker->add_option("--steps", tracker_flags.model.horizon, "horizon (steps per simulation)");
  tracker->add_option("--threads", tracker_flags.threads, "worker threads (0 = hardware)");

  auto* bench = app.add_subcommand("bench", "engine throughput on the linear SSM");
  int bench_dim = 1;
  bool bench_no_observe = false;
  add_common(bench, common);
  bench->add_option("--dim", bench_dim, "state dimension");
  bench->add_flag("--no-observe", bench_no_observe, "predict-only run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (kalman->parsed()) return run_kalman_cmd(kalman, common, kalman_steps, kalman_dim);
    if (bridge->parsed()) return run_bridge_cmd(bridge, common, bridge_steps, bridge_T);
    if (tracker->parsed()) return run_tracker_cmd(tracker, common, tracker_flags);
    if (bench->parsed()) return run_bench_cmd(bench, common, bench_dim, bench_no_observe);
  } catch (const ex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const streambp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const streambp::DegenerateCloudError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
