#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "streambp/experiments/tracker.hpp"
#include "streambp/kalman.hpp"

namespace streambp::experiments {

// ---- kalman: engine vs closed-form filter on a simulated trajectory ----

struct KalmanRunConfig {
  int dim = 1;
  int steps = 1000;
  std::uint64_t seed = 1;
};

struct KalmanReport {
  KalmanRunConfig cfg;
  double max_mean_abs_diff = 0;
  double max_cov_abs_diff = 0;
  double bp_ms = 0;
  double kalman_ms = 0;
};

// dim == 1 is the canonical random walk; higher dims draw a random stable
// transition and random SPD noises from the seed.
LinearSSM<double> make_test_ssm(int dim, std::uint64_t seed);

KalmanReport run_kalman(const KalmanRunConfig& cfg);

// ---- bridge: conditioned random walk vs the closed-form covariance ----

struct BridgeRunConfig {
  int n_steps = 50;
  double horizon_time = 1.0;  // T
};

struct BridgeReport {
  BridgeRunConfig cfg;
  Eigen::MatrixXd cov;    // engine covariance, (n x n), grid i = 1..n
  Eigen::MatrixXd exact;  // min(s,t) - s t / T at the same grid
  double max_abs_err = 0;
};

BridgeReport run_bridge(const BridgeRunConfig& cfg);

// ---- tracker: divergence-time study ----

struct TrackerStudyConfig {
  TrackerConfig model;
  std::string algo = "sbp";  // sbp | smc
  int particles = 10;
  int sims = 30;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
};

struct TrackerRow {
  int sim = 0;
  std::uint64_t seed = 0;  // ground-truth seed for this simulation
  std::string algo;
  int particles = 0;
  int divergence_step = 0;
  double wallclock_ms = 0;
};

struct TrackerSummary {
  double median = 0;
  double q25 = 0;
  double q75 = 0;
};

struct TrackerReport {
  TrackerStudyConfig cfg;
  std::vector<TrackerRow> rows;
  TrackerSummary summary;
};

struct TrackerSimResult {
  int divergence_step = 0;
  double wallclock_ms = 0;
  bool degenerate = false;
  std::vector<double> abs_error;  // filled only when requested
};

// One simulation: generates ground truth from gt_seed, runs the chosen
// algorithm seeded from inf_seed, and reports the first step at which the
// position estimate stays beyond the divergence threshold for
// divergence_patience consecutive steps (horizon if that never happens).
// A degenerate cloud is recorded as divergence at that step, not an error.
TrackerSimResult run_tracker_sim(const TrackerConfig& cfg, const std::string& algo, int particles,
                                 std::uint64_t gt_seed, std::uint64_t inf_seed,
                                 bool keep_errors = false);

// Ground-truth seeds depend only on (study seed, sim index), so studies run
// with different algorithms but the same seed are paired.
TrackerReport run_tracker(const TrackerStudyConfig& cfg);

// ---- bench: engine throughput on the linear SSM ----

struct BenchRunConfig {
  std::vector<int> horizons = {1000, 2000, 4000, 8000};
  int dim = 1;
  bool observe = true;
  std::uint64_t seed = 1;
};

struct BenchRow {
  int horizon = 0;
  double steps_per_sec = 0;
  double wallclock_ms = 0;
};

struct BenchReport {
  BenchRunConfig cfg;
  std::vector<BenchRow> rows;
};

BenchReport run_bench(const BenchRunConfig& cfg);

}  // namespace streambp::experiments
