#include "streambp/smc.hpp"

#include <cmath>
#include <map>

#include "doctest.h"
#include "streambp/kalman.hpp"
#include "support/test_support.hpp"

using namespace streambp;
namespace ts = streambp::testsupport;

namespace {

Eigen::MatrixXd m1(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }
Eigen::VectorXd v1(double v) { return Eigen::VectorXd::Constant(1, v); }

Gaussian<double> g1(double mean, double var) {
  return Gaussian<double>(v1(mean), m1(var));
}

Eigen::VectorXd weights(std::initializer_list<double> w) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(w.size()));
  Eigen::Index i = 0;
  for (double x : w) out(i++) = x;
  return out;
}

// 1-D linear-Gaussian chain with a per-step observation: fully symbolic, so
// inference is exact and every particle carries the same computation.
struct LinearChainModel {
  using Scalar = double;
  struct State {
    RandomVar<double> x;
  };
  struct Input {
    double y;
  };
  struct Output {
    RandomVar<double> x;
  };

  double q = 0.4, r = 0.25;

  State init(ModelContext<double>& ctx) const {
    return {ctx.rand_gaussian(AffineExpr<double>(0.0), m1(1.0))};
  }
  std::pair<State, Output> step(ModelContext<double>& ctx, State prev, const Input& in) const {
    auto x = ctx.rand_gaussian(1.0 * prev.x, m1(q));
    auto obs = ctx.rand_gaussian(1.0 * x, m1(r));
    ctx.observe(obs, in.y);
    return {State{x}, Output{x}};
  }
};

// Speed chain of the runner restructure: exactly the Kalman pair, run through
// the particle machinery.
struct SpeedOnlyModel {
  using Scalar = double;
  struct State {
    RandomVar<double> s;
  };
  struct Input {
    double s_obs;
  };
  struct Output {};

  double sigma_s0 = 1.0, sigma_s = 0.3, sigma_t = 0.5;

  State init(ModelContext<double>& ctx) const {
    return {ctx.rand_gaussian(AffineExpr<double>(0.0), m1(sigma_s0 * sigma_s0))};
  }
  std::pair<State, Output> step(ModelContext<double>& ctx, State prev, const Input& in) const {
    auto s = ctx.rand_gaussian(1.0 * prev.s, m1(sigma_s * sigma_s));
    auto obs = ctx.rand_gaussian(1.0 * s, m1(sigma_t * sigma_t));
    ctx.observe(obs, in.s_obs);
    return {State{s}, Output{}};
  }
};

// Init-only model whose single variable is forced concrete immediately.
struct ConcreteInitModel {
  using Scalar = double;
  struct State {
    RandomVar<double> x;
  };
  struct Input {};
  struct Output {};

  State init(ModelContext<double>& ctx) const {
    auto x = ctx.rand_gaussian(AffineExpr<double>(1.0), m1(4.0));
    ctx.value_of(x);
    return {x};
  }
  std::pair<State, Output> step(ModelContext<double>& ctx, State prev, const Input&) const {
    (void)ctx;
    return {std::move(prev), Output{}};
  }
};

}  // namespace

TEST_SUITE("rbsmc") {

TEST_CASE("init: uniform weights, deterministic under the seed") {
  ParticleCloud<LinearChainModel> one(LinearChainModel{}, 1, 7);
  CHECK(one.weights().size() == 1);
  CHECK(one.weights()(0) == 1.0);

  ParticleCloud<LinearChainModel> ten(LinearChainModel{}, 10, 7);
  for (Eigen::Index i = 0; i < 10; ++i) CHECK(ten.weights()(i) == doctest::Approx(0.1));

  CHECK_THROWS_AS(ParticleCloud<LinearChainModel>(LinearChainModel{}, 0, 7),
                  std::invalid_argument);

  // Identical seeds give identical clouds.
  ParticleCloud<SpeedOnlyModel> a(SpeedOnlyModel{}, 5, 99), b(SpeedOnlyModel{}, 5, 99);
  for (int t = 0; t < 5; ++t) {
    a.step({0.3 * t});
    b.step({0.3 * t});
  }
  CHECK(a.weights() == b.weights());
  const auto ea = a.estimate([](const SpeedOnlyModel::State& s) { return s.s; });
  const auto eb = b.estimate([](const SpeedOnlyModel::State& s) { return s.s; });
  CHECK(ea.first == eb.first);
  CHECK(ea.second == eb.second);
}

TEST_CASE("exact model: weights stay uniform bit-for-bit") {
  ParticleCloud<LinearChainModel> cloud(LinearChainModel{}, 8, 3);
  Rng obs(30);
  for (int t = 0; t < 10; ++t) {
    cloud.step({obs.normal()});
    for (Eigen::Index i = 0; i < 8; ++i) CHECK(cloud.weights()(i) == 0.125);
    CHECK(std::abs(cloud.weights().sum() - 1.0) < 1e-12);
  }
  CHECK(cloud.total_sample_count() == 0);
  CHECK(cloud.effective_sample_size() == doctest::Approx(8.0));
}

TEST_CASE("exact model: estimate equals the Kalman recursion for any n") {
  for (const std::size_t n : {1u, 7u}) {
    LinearChainModel model;
    ParticleCloud<LinearChainModel> cloud(model, n, 17);
    Gaussian<double> state = g1(0, 1);
    Rng obs(170);
    for (int t = 0; t < 12; ++t) {
      const double y = obs.normal();
      cloud.step({y});
      state = kalman_predict(state, m1(1), m1(model.q));
      state = kalman_update(state, m1(1), m1(model.r), v1(y)).first;
      const auto [mean, cov] = cloud.estimate([](const LinearChainModel::State& s) { return s.x; });
      CHECK(std::abs(mean(0) - state.mean()(0)) < 1e-10);
      CHECK(std::abs(cov(0, 0) - state.cov()(0, 0)) < 1e-10);
    }
  }
}

TEST_CASE("speed chain: per-particle marginals equal the Kalman posterior") {
  SpeedOnlyModel model;
  ParticleCloud<SpeedOnlyModel> cloud(model, 10, 5);
  Gaussian<double> state = g1(0, model.sigma_s0 * model.sigma_s0);
  Rng obs(50);
  for (int t = 0; t < 8; ++t) {
    const double y = 0.4 * t + 0.2 * obs.normal();
    cloud.step({y});
    state = kalman_predict(state, m1(1), m1(model.sigma_s * model.sigma_s));
    state = kalman_update(state, m1(1), m1(model.sigma_t * model.sigma_t), v1(y)).first;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Gaussian<double> marg =
          cloud.particle_ctx(i).marginal_of(cloud.particle_state(i).s);
      CHECK(std::abs(marg.mean()(0) - state.mean()(0)) < 1e-8);
      CHECK(std::abs(marg.cov()(0, 0) - state.cov()(0, 0)) < 1e-8);
    }
  }
  CHECK(cloud.total_sample_count() == 0);
}

TEST_CASE("ess: hand values") {
  CHECK(ess(weights({0.25, 0.25, 0.25, 0.25})) == 4.0);
  CHECK(ess(weights({1.0, 0.0, 0.0})) == 1.0);
  CHECK(ess(weights({0.5, 0.25, 0.25})) == 1.0 / 0.375);
  CHECK(ess(weights({0.5, 0.25, 0.25})) == doctest::Approx(2.6667).epsilon(1e-4));
}

TEST_CASE("systematic resampling: hand-driven cases") {
  // One-hot weights duplicate the hot index.
  const auto hot = systematic_resample_at(weights({0.0, 0.0, 1.0, 0.0}), 0.1 / 4);
  for (std::size_t i : hot) CHECK(i == 2);

  // Uniform weights select every index exactly once, in order.
  const auto uniform = systematic_resample_at(weights({0.25, 0.25, 0.25, 0.25}), 0.17 / 4);
  CHECK(uniform == std::vector<std::size_t>{0, 1, 2, 3});

  // Worked example: w = [0.5, 0.5], u = 0.1 -> positions 0.1, 0.6 -> [0, 1].
  CHECK(systematic_resample_at(weights({0.5, 0.5}), 0.1) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("systematic resampling: offspring counts sit between floor and ceil of n w") {
  Rng rng(60);
  for (int it = 0; it < 200; ++it) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.next() % 12);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = rng.uniform() + 1e-3;
    w /= w.sum();
    const auto picks = systematic_resample(w, rng);
    std::map<std::size_t, int> counts;
    for (std::size_t p : picks) ++counts[p];
    for (Eigen::Index i = 0; i < n; ++i) {
      const double expected = n * w(i);
      const std::size_t key = static_cast<std::size_t>(i);
      const int c = counts.count(key) ? counts[key] : 0;
      CHECK(c >= static_cast<int>(std::floor(expected)));
      CHECK(c <= static_cast<int>(std::ceil(expected)));
    }
  }
}

TEST_CASE("systematic resampling: chi-square unbiasedness over 10^4 trials") {
  const Eigen::VectorXd w = weights({0.05, 0.1, 0.2, 0.3, 0.35});
  const int trials = 10'000;
  const Eigen::Index n = w.size();
  std::vector<double> counts(n, 0.0);
  for (int t = 0; t < trials; ++t) {
    Rng rng(Rng::derive(4242, static_cast<std::uint64_t>(t)));
    for (std::size_t p : systematic_resample(w, rng)) counts[p] += 1.0;
  }
  double chi2 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double expected = trials * n * w(i);
    chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  }
  // dof = 4, level 0.01. Systematic counts are under-dispersed relative to
  // multinomial, so this is conservative.
  CHECK(chi2 < 13.2767);
}

TEST_CASE("estimate: symbolic marginals and forced values mix correctly") {
  // Single symbolic particle: estimate returns its exact marginal.
  struct SymbolicInit {
    using Scalar = double;
    struct State {
      RandomVar<double> x;
    };
    struct Input {};
    struct Output {};
    State init(ModelContext<double>& ctx) const {
      return {ctx.rand_gaussian(AffineExpr<double>(2.0), m1(3.0))};
    }
    std::pair<State, Output> step(ModelContext<double>& ctx, State prev, const Input&) const {
      (void)ctx;
      return {std::move(prev), Output{}};
    }
  };
  ParticleCloud<SymbolicInit> one(SymbolicInit{}, 1, 11);
  const auto [mean, cov] = one.estimate([](const SymbolicInit::State& s) { return s.x; });
  CHECK(mean(0) == doctest::Approx(2.0));
  CHECK(cov(0, 0) == doctest::Approx(3.0));

  // Concrete particles: mixture moments recomputed by hand from the draws.
  ParticleCloud<ConcreteInitModel> two(ConcreteInitModel{}, 2, 12);
  const double v0 = two.particle_ctx(0).value_of(two.particle_state(0).x)(0);
  const double v1_ = two.particle_ctx(1).value_of(two.particle_state(1).x)(0);
  const auto [m, c] = two.estimate([](const ConcreteInitModel::State& s) { return s.x; });
  const double hand_mean = 0.5 * (v0 + v1_);
  const double hand_cov = 0.5 * (v0 * v0 + v1_ * v1_) - hand_mean * hand_mean;
  CHECK(m(0) == doctest::Approx(hand_mean).epsilon(1e-12));
  CHECK(c(0, 0) == doctest::Approx(hand_cov).epsilon(1e-12));
}

TEST_CASE("estimator consistency: forced sampling converges to the Kalman posterior") {
  LinearChainModel model;
  CloudOptions options;
  options.context.sample_everything = true;
  ParticleCloud<LinearChainModel> cloud(model, 10'000, 888, options);

  Gaussian<double> state = g1(0, 1);
  Rng obs(8880);
  for (int t = 0; t < 10; ++t) {
    const double y = obs.normal();
    cloud.step({y});
    state = kalman_predict(state, m1(1), m1(model.q));
    state = kalman_update(state, m1(1), m1(model.r), v1(y)).first;
  }
  CHECK(cloud.total_sample_count() > 0);
  const auto [mean, cov] = cloud.estimate([](const LinearChainModel::State& s) { return s.x; });
  const double posterior_sd = std::sqrt(state.cov()(0, 0));
  CHECK(std::abs(mean(0) - state.mean()(0)) < 5 * posterior_sd);
}

TEST_CASE("resampling keeps the invariants") {
  LinearChainModel model;
  CloudOptions options;
  options.context.sample_everything = true;
  ParticleCloud<LinearChainModel> cloud(model, 50, 321, options);
  Rng obs(3210);
  for (int t = 0; t < 20; ++t) {
    cloud.step({obs.normal()});
    CHECK(cloud.size() == 50);
    CHECK(std::abs(cloud.weights().sum() - 1.0) < 1e-12);
    CHECK(cloud.effective_sample_size() >= 1.0);
    CHECK(cloud.effective_sample_size() <= 50.0 + 1e-9);
  }
}

TEST_CASE("degenerate cloud: impossible observation in every particle") {
  LinearChainModel model;
  ParticleCloud<LinearChainModel> cloud(model, 4, 55);
  CHECK_THROWS_AS(cloud.step({1e200}), DegenerateCloudError);
}

}  // TEST_SUITE
