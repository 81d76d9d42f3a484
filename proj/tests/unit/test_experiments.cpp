#include "streambp/experiments/runners.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "streambp/experiments/bp_filter.hpp"
#include "streambp/experiments/config.hpp"
#include "streambp/experiments/io.hpp"
#include "streambp/smc.hpp"
#include "support/test_support.hpp"

using namespace streambp;
namespace ex = streambp::experiments;

namespace {

// Strips the trailing (timing) column from each CSV line.
std::string mask_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    out << line.substr(0, comma) << '\n';
  }
  return out.str();
}

std::string tmp_path(const std::string& name) {
  return std::string("/tmp/streambp_test_") + name;
}

}  // namespace

TEST_SUITE("experiments-cli") {

TEST_CASE("config: parsing, comments, errors") {
  std::istringstream good(
      "# tracker defaults\n"
      "sigma_s = 0.3   # process noise\n"
      "particles = 12\n"
      "algo = smc\n"
      "horizons = 10, 20,30\n"
      "\n");
  const ex::KeyValueConfig cfg = ex::KeyValueConfig::parse(good);
  CHECK(cfg.get_double("sigma_s", 0) == doctest::Approx(0.3));
  CHECK(cfg.get_int("particles", 0) == 12);
  CHECK(cfg.get_string("algo", "") == "smc");
  CHECK(cfg.get_int_list("horizons", {}) == std::vector<int>{10, 20, 30});
  CHECK(cfg.get_int("missing", 7) == 7);

  std::istringstream bad_line("sigma_s 0.3\n");
  CHECK_THROWS_AS(ex::KeyValueConfig::parse(bad_line), ex::ConfigError);

  std::istringstream bad_value("particles = twelve\n");
  CHECK_THROWS_AS(ex::KeyValueConfig::parse(bad_value).get_int("particles", 0), ex::ConfigError);

  std::istringstream unknown("no_such_key = 1\n");
  CHECK_THROWS_AS(ex::KeyValueConfig::parse(unknown).ensure_known({"steps"}), ex::ConfigError);

  CHECK_THROWS_AS(ex::KeyValueConfig::parse_file("/nonexistent/path.cfg"), ex::ConfigError);
}

TEST_CASE("kalman runner: engine and oracle agree in 1 and 3 dimensions") {
  for (const int dim : {1, 3}) {
    ex::KalmanRunConfig cfg;
    cfg.dim = dim;
    cfg.steps = 200;
    cfg.seed = 42;
    const ex::KalmanReport report = ex::run_kalman(cfg);
    CHECK(report.max_mean_abs_diff < 1e-8);
    CHECK(report.max_cov_abs_diff < 1e-8);
  }
}

TEST_CASE("kalman runner: deterministic discrepancies") {
  ex::KalmanRunConfig cfg;
  cfg.dim = 3;
  cfg.steps = 50;
  cfg.seed = 9;
  const auto a = ex::run_kalman(cfg);
  const auto b = ex::run_kalman(cfg);
  CHECK(a.max_mean_abs_diff == b.max_mean_abs_diff);
  CHECK(a.max_cov_abs_diff == b.max_cov_abs_diff);
}

TEST_CASE("predict-only filtering with near-zero process noise holds the posterior still") {
  LinearSSM<double> ssm{Eigen::MatrixXd::Identity(1, 1),
                        Eigen::MatrixXd::Constant(1, 1, 1e-14),
                        Eigen::MatrixXd::Identity(1, 1),
                        Eigen::MatrixXd::Identity(1, 1),
                        Gaussian<double>(Eigen::VectorXd::Constant(1, 2.0),
                                         Eigen::MatrixXd::Constant(1, 1, 3.0))};
  ex::BpLinearFilter filter(ssm);
  for (int t = 0; t < 100; ++t) filter.predict();
  const Gaussian<double> post = filter.posterior();
  CHECK(std::abs(post.mean()(0) - 2.0) < 1e-10);
  CHECK(std::abs(post.cov()(0, 0) - 3.0) < 1e-9);
}

TEST_CASE("bridge runner: exact grid covariance") {
  ex::BridgeRunConfig cfg;
  cfg.n_steps = 10;
  cfg.horizon_time = 1.0;
  const ex::BridgeReport report = ex::run_bridge(cfg);
  CHECK(report.max_abs_err < 1e-8);
  CHECK(report.cov(4, 4) == doctest::Approx(0.5 - 0.25).epsilon(1e-10));  // s = 1/2
  CHECK(report.cov(9, 9) == doctest::Approx(0.0));                        // pinned endpoint
  CHECK(report.cov(0, 1) == doctest::Approx(0.1 - 0.02).epsilon(1e-10));

  // n = 4 spot value from the worked example.
  ex::BridgeRunConfig small;
  small.n_steps = 4;
  const ex::BridgeReport tiny = ex::run_bridge(small);
  CHECK(tiny.cov(0, 1) == doctest::Approx(0.125).epsilon(1e-10));
}

TEST_CASE("tracker: near-noise-free observations track to the horizon") {
  ex::TrackerConfig cfg;
  cfg.horizon = 150;
  cfg.observe_every = 1;
  cfg.sigma_t = 1e-6;
  cfg.sigma_b = 1e-6;
  const ex::TrackerSimResult r = ex::run_tracker_sim(cfg, "sbp", 5, 1, 2, true);
  CHECK_FALSE(r.degenerate);
  CHECK(r.divergence_step == cfg.horizon);
  for (double e : r.abs_error) CHECK(e < cfg.divergence_threshold);
}

TEST_CASE("tracker study: row schema and reproducibility modulo timing") {
  ex::TrackerStudyConfig cfg;
  cfg.model.horizon = 60;
  cfg.algo = "sbp";
  cfg.particles = 4;
  cfg.sims = 2;
  cfg.seed = 1;
  cfg.threads = 2;

  const ex::TrackerReport report = ex::run_tracker(cfg);
  CHECK(report.rows.size() == 2);

  std::ostringstream csv;
  ex::write_csv(csv, report);
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "sim,seed,algo,particles,divergence_step,wallclock_ms");
  int rows = 0;
  std::string line;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 5);
  }
  CHECK(rows == 2);

  // Identical seeds, different thread counts: identical rows except timing.
  ex::TrackerStudyConfig serial = cfg;
  serial.threads = 1;
  const ex::TrackerReport again = ex::run_tracker(serial);
  std::ostringstream csv2;
  ex::write_csv(csv2, again);
  CHECK(mask_last_column(csv.str()) == mask_last_column(csv2.str()));
}

TEST_CASE("tracker sbp: only positions are sampled, the speed chain stays symbolic") {
  // The restructured model observes the speed before the position update, so
  // the speed submodel is filtered exactly; the nonlinear altitude forces one
  // position sample per step (plus the position parent folded at t = 1).
  ex::TrackerConfig cfg;
  cfg.horizon = 30;
  const ex::GroundTruth gt = ex::simulate_runner(cfg, 77);
  ParticleCloud<ex::RunnerModel> cloud(ex::RunnerModel{cfg}, 3, 78);
  for (int t = 1; t <= cfg.horizon; ++t) {
    cloud.step({gt.speed_obs[t], gt.alt_obs[t]});
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      CHECK(cloud.particle_ctx(i).is_symbolic(cloud.particle_state(i).speed));
      CHECK_FALSE(cloud.particle_ctx(i).is_symbolic(cloud.particle_state(i).position));
      // First-order Markov access pattern: per-particle forests stay small.
      CHECK(cloud.particle_ctx(i).forest().live_node_count() <= 4);
    }
  }
  // Per particle: one sample per step for the position, plus the initial
  // multi-parent reduction at the first step.
  CHECK(cloud.total_sample_count() == cloud.size() * (cfg.horizon + 1));
}

TEST_CASE("bench: wall-clock grows linearly with the horizon") {
  ex::BenchRunConfig cfg;
  cfg.horizons = {10'000, 20'000, 40'000, 80'000};
  const ex::BenchReport report = ex::run_bench(cfg);

  // Log-log least squares: constant per-step cost means slope 1, R^2 near 1.
  const int n = static_cast<int>(report.rows.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (const auto& row : report.rows) {
    const double x = std::log(static_cast<double>(row.horizon));
    const double y = std::log(row.wallclock_ms);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  const double cov = sxy - sx * sy / n;
  const double vx = sxx - sx * sx / n;
  const double vy = syy - sy * sy / n;
  const double r2 = cov * cov / (vx * vy);
  CHECK(r2 > 0.95);
}

TEST_CASE("tracker: validation errors") {
  ex::TrackerConfig bad;
  bad.sigma_s = 0.0;
  CHECK_THROWS_AS(ex::run_tracker_sim(bad, "sbp", 4, 1, 1), std::invalid_argument);
  ex::TrackerConfig cfg;
  CHECK_THROWS_AS(ex::run_tracker_sim(cfg, "nope", 4, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(ex::run_tracker_sim(cfg, "sbp", 0, 1, 1), std::invalid_argument);
}

TEST_CASE("bench: reports {horizon, steps_per_sec} and observation cost") {
  ex::BenchRunConfig cfg;
  cfg.horizons = {2000, 4000};
  const ex::BenchReport report = ex::run_bench(cfg);
  CHECK(report.rows.size() == 2);

  std::ostringstream json_out;
  ex::write_json(json_out, report);
  const auto parsed = nlohmann::json::parse(json_out.str());
  CHECK(parsed["results"].size() == 2);
  CHECK(parsed["results"][0].contains("horizon"));
  CHECK(parsed["results"][0].contains("steps_per_sec"));
  CHECK(parsed["results"][0]["horizon"] == 2000);
  CHECK(parsed["results"][0]["steps_per_sec"].get<double>() > 0);

  // A run that skips the update step does strictly less work.
  ex::BenchRunConfig with_obs;
  with_obs.horizons = {30'000};
  ex::BenchRunConfig without_obs = with_obs;
  without_obs.observe = false;
  const double with_ms = ex::run_bench(with_obs).rows[0].wallclock_ms;
  const double without_ms = ex::run_bench(without_obs).rows[0].wallclock_ms;
  CHECK(without_ms < with_ms);
}

TEST_CASE("g17 float formatting round-trips") {
  CHECK(ex::g17(0.1) == "0.10000000000000001");
  CHECK(ex::g17(1.0) == "1");
  for (const double v : {3.141592653589793, -1e-9, 1e300, 0.3333333333333333}) {
    CHECK(std::strtod(ex::g17(v).c_str(), nullptr) == v);
  }
}

TEST_CASE("cli binary: exit codes and byte-stable output") {
  const std::string cli = STREAMBP_CLI_PATH;

  // Config parse failure exits with 2.
  {
    const std::string bad = tmp_path("bad.cfg");
    std::ofstream(bad) << "particles twelve\n";
    const std::string cmd = cli + " tracker --config " + bad + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 2);
  }
  {
    const std::string cmd = cli + " tracker --algo bogus >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 2);
  }

  // Smoke run: two sims, CSV out, exit zero, identical re-run modulo timing.
  const std::string out1 = tmp_path("t1.csv"), out2 = tmp_path("t2.csv");
  const std::string base = cli +
                           " tracker --algo sbp --particles 4 --sims 2 --steps 40 --seed 3 "
                           "--threads 1 --out ";
  CHECK(WEXITSTATUS(std::system((base + out1 + " 2>/dev/null").c_str())) == 0);
  CHECK(WEXITSTATUS(std::system((base + out2 + " 2>/dev/null").c_str())) == 0);
  std::stringstream s1, s2;
  s1 << std::ifstream(out1).rdbuf();
  s2 << std::ifstream(out2).rdbuf();
  CHECK(mask_last_column(s1.str()) == mask_last_column(s2.str()));
  CHECK(s1.str().rfind("sim,seed,algo,particles,divergence_step,wallclock_ms\n", 0) == 0);

  // Bridge in JSON with a fixed seed is byte-identical (no timing fields).
  const std::string b1 = tmp_path("b1.json"), b2 = tmp_path("b2.json");
  const std::string bridge = cli + " bridge --steps 8 --format json --out ";
  CHECK(WEXITSTATUS(std::system((bridge + b1 + " 2>/dev/null").c_str())) == 0);
  CHECK(WEXITSTATUS(std::system((bridge + b2 + " 2>/dev/null").c_str())) == 0);
  std::stringstream j1, j2;
  j1 << std::ifstream(b1).rdbuf();
  j2 << std::ifstream(b2).rdbuf();
  CHECK(j1.str() == j2.str());
  CHECK(!j1.str().empty());
}

TEST_CASE("cli binary: flags override config file") {
  const std::string cli = STREAMBP_CLI_PATH;
  const std::string cfgfile = tmp_path("override.cfg");
  std::ofstream(cfgfile) << "steps = 6\nT = 2.0\n";
  const std::string out = tmp_path("bridge_override.csv");
  const std::string cmd =
      cli + " bridge --config " + cfgfile + " --steps 4 --out " + out + " 2>/dev/null";
  CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  std::stringstream data;
  data << std::ifstream(out).rdbuf();
  // 4x4 grid plus header: flag --steps 4 beat the config's 6; T stayed 2.0.
  int lines = 0;
  std::string line;
  while (std::getline(data, line)) ++lines;
  CHECK(lines == 1 + 16);
  CHECK(data.str().find("0.5,0.5,") != std::string::npos);  // s = t = T/4 = 0.5 appears
}

}  // TEST_SUITE
