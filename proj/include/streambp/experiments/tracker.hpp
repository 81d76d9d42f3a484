#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "streambp/model.hpp"
#include "streambp/rng.hpp"

namespace streambp::experiments {

// Altitude map. The default is a sum of two incommensurate sines so the
// altimeter is informative almost everywhere but still ambiguous across
// positions; "flat" is kept for tests where altitude should carry nothing.
struct Terrain {
  std::string id = "two_sine";
  double amp1 = 10.0, period1 = 10.0;
  double amp2 = 4.0, period2 = 4.0;

  double operator()(double x) const {
    if (id == "flat") return 0.0;
    if (id == "two_sine") {
      return amp1 * std::sin(x / period1) + amp2 * std::sin(x / period2);
    }
    throw std::invalid_argument("Terrain: unknown terrain id '" + id + "'");
  }
};

// Runner-on-a-trail tracking problem: a Gaussian random-walk speed, a
// position that integrates the speed, and noisy speedometer/altimeter
// readings available every observe_every steps.
struct TrackerConfig {
  double sigma_s0 = 0.3;  // initial speed std dev
  double sigma_x0 = 0.3;  // initial position std dev
  double sigma_s = 0.3;   // speed random-walk noise
  double sigma_x = 0.15;  // position process noise
  double sigma_t = 0.2;   // speedometer noise
  double sigma_b = 0.2;   // altimeter noise
  int horizon = 1000;
  int observe_every = 5;
  Terrain terrain{};
  double divergence_threshold = 10.0;
  int divergence_patience = 10;

  void validate() const {
    const double sigmas[] = {sigma_s0, sigma_x0, sigma_s, sigma_x, sigma_t, sigma_b};
    for (double s : sigmas) {
      if (!(s > 0)) throw std::invalid_argument("TrackerConfig: every sigma must be positive");
    }
    if (observe_every < 1) throw std::invalid_argument("TrackerConfig: observe_every must be >= 1");
    if (horizon < 1) throw std::invalid_argument("TrackerConfig: horizon must be >= 1");
    if (divergence_patience < 1) {
      throw std::invalid_argument("TrackerConfig: divergence_patience must be >= 1");
    }
  }
};

// The tracker as a streaming model. Observations are made inside the step,
// with the speed observed before the position update so the speed chain is
// conditioned symbolically; the altitude is a nonlinear map of the position,
// which forces the position to be sampled.
struct RunnerModel {
  using Scalar = double;

  struct State {
    RandomVar<double> speed;
    RandomVar<double> position;
  };
  struct Input {
    std::optional<double> speed_obs;
    std::optional<double> alt_obs;
  };
  struct Output {
    double altitude;
  };

  TrackerConfig cfg;

  State init(ModelContext<double>& ctx) const {
    auto speed = ctx.rand_gaussian(AffineExpr<double>(0.0), var1(cfg.sigma_s0));
    auto position = ctx.rand_gaussian(AffineExpr<double>(0.0), var1(cfg.sigma_x0));
    return {speed, position};
  }

  std::pair<State, Output> step(ModelContext<double>& ctx, State prev, const Input& in) const {
    auto speed = ctx.rand_gaussian(AffineExpr<double>(prev.speed), var1(cfg.sigma_s));
    if (in.speed_obs) {
      auto speedometer = ctx.rand_gaussian(AffineExpr<double>(speed), var1(cfg.sigma_t));
      ctx.observe(speedometer, *in.speed_obs);
    }
    auto position = ctx.rand_gaussian(prev.position + prev.speed, var1(cfg.sigma_x));
    const double altitude = cfg.terrain(ctx.value_of(position)(0));
    if (in.alt_obs) {
      auto altimeter = ctx.rand_gaussian(AffineExpr<double>(altitude), var1(cfg.sigma_b));
      ctx.observe(altimeter, *in.alt_obs);
    }
    return {State{speed, position}, Output{altitude}};
  }

 private:
  static MatrixX<double> var1(double sigma) {
    return MatrixX<double>::Constant(1, 1, sigma * sigma);
  }
};

// Ground truth simulated from the same equations on an rng stream that is
// never touched by inference, so the algorithm choice cannot perturb the
// simulated runner. Index t in [1, horizon]; index 0 holds the initial state.
struct GroundTruth {
  std::vector<double> speed;
  std::vector<double> position;
  std::vector<std::optional<double>> speed_obs;  // engaged on observation steps
  std::vector<std::optional<double>> alt_obs;
};

inline GroundTruth simulate_runner(const TrackerConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  GroundTruth gt;
  gt.speed.resize(cfg.horizon + 1);
  gt.position.resize(cfg.horizon + 1);
  gt.speed_obs.resize(cfg.horizon + 1);
  gt.alt_obs.resize(cfg.horizon + 1);
  gt.speed[0] = cfg.sigma_s0 * rng.normal();
  gt.position[0] = cfg.sigma_x0 * rng.normal();
  for (int t = 1; t <= cfg.horizon; ++t) {
    gt.speed[t] = gt.speed[t - 1] + cfg.sigma_s * rng.normal();
    gt.position[t] = gt.position[t - 1] + gt.speed[t - 1] + cfg.sigma_x * rng.normal();
    if (t % cfg.observe_every == 0) {
      gt.speed_obs[t] = gt.speed[t] + cfg.sigma_t * rng.normal();
      gt.alt_obs[t] = cfg.terrain(gt.position[t]) + cfg.sigma_b * rng.normal();
    }
  }
  return gt;
}

}  // namespace streambp::experiments
