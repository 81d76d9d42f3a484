#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "streambp/errors.hpp"
#include "streambp/model.hpp"
#include "streambp/rng.hpp"

namespace streambp {

// Effective sample size 1 / sum w_i^2 of a normalized weight vector; ranges
// from 1 (one-hot) to n (uniform).
template <typename Scalar>
Scalar ess(const VectorX<Scalar>& weights) {
  return Scalar(1) / weights.squaredNorm();
}

// Systematic resampling with an explicit offset u0 in [0, 1/n): positions
// u0 + k/n are scanned against the cumulative weights, so index i appears
// between floor(n w_i) and ceil(n w_i) times.
template <typename Scalar>
std::vector<std::size_t> systematic_resample_at(const VectorX<Scalar>& weights, Scalar u0) {
  const Eigen::Index n = weights.size();
  std::vector<std::size_t> out(n);
  Eigen::Index i = 0;
  Scalar cum = weights(0);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Scalar pos = u0 + static_cast<Scalar>(k) / static_cast<Scalar>(n);
    while (pos >= cum && i + 1 < n) cum += weights(++i);
    out[k] = static_cast<std::size_t>(i);
  }
  return out;
}

template <typename Scalar>
std::vector<std::size_t> systematic_resample(const VectorX<Scalar>& weights, Rng& rng) {
  const Scalar u0 = static_cast<Scalar>(rng.uniform()) / static_cast<Scalar>(weights.size());
  return systematic_resample_at(weights, u0);
}

template <typename Scalar>
std::vector<std::size_t> multinomial_resample(const VectorX<Scalar>& weights, Rng& rng) {
  const Eigen::Index n = weights.size();
  std::vector<std::size_t> out(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Scalar u = static_cast<Scalar>(rng.uniform());
    Scalar cum = 0;
    Eigen::Index i = 0;
    for (; i < n; ++i) {
      cum += weights(i);
      if (u < cum) break;
    }
    out[k] = static_cast<std::size_t>(std::min(i, n - 1));
  }
  return out;
}

enum class ResampleScheme { Systematic, Multinomial };

struct CloudOptions {
  double resample_threshold = 0.5;  // resample when ess < threshold * n
  ResampleScheme scheme = ResampleScheme::Systematic;
  ContextOptions context;
};

// N independent particles, each running its own ModelProgram instance with a
// private forest and rng. Log-weights accumulate from exact observations;
// resampling is adaptive so a fully exact model keeps equal weights forever.
//
// Seeding is counter-based throughout - hash(master, tag, step, index) - so
// stepping particles in parallel or serially gives identical results.
template <ModelProgram Model>
class ParticleCloud {
 public:
  using Scalar = typename Model::Scalar;
  using State = typename Model::State;
  using Input = typename Model::Input;
  using Output = typename Model::Output;

  ParticleCloud(Model model, std::size_t n, std::uint64_t seed, CloudOptions options = {})
      : model_(std::move(model)), seed_(seed), options_(options) {
    if (n == 0) throw std::invalid_argument("ParticleCloud: need at least one particle");
    particles_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      ModelContext<Scalar> ctx(Rng::derive(seed_, kInitTag, i), options_.context);
      State state = model_.init(ctx);
      const Scalar lw = ctx.take_log_weight();
      particles_.push_back(Particle{std::move(ctx), std::move(state), lw});
    }
    normalize();
  }

  std::size_t size() const { return particles_.size(); }
  int step_index() const { return t_; }
  const VectorX<Scalar>& weights() const { return weights_; }
  Scalar effective_sample_size() const { return ess(weights_); }

  std::vector<Output> step(const Input& input) {
    std::vector<Output> outputs;
    outputs.reserve(particles_.size());
    for (Particle& p : particles_) {
      auto [state, output] = model_.step(p.ctx, std::move(p.state), input);
      p.state = std::move(state);
      p.log_weight += p.ctx.take_log_weight();
      outputs.push_back(std::move(output));
    }
    ++t_;
    normalize();
    if (effective_sample_size() < Scalar(options_.resample_threshold) * Scalar(size())) {
      resample();
    }
    return outputs;
  }

  // Mixture posterior moments of extractor(state):
  //   mean = sum_i w_i m_i
  //   cov  = sum_i w_i (S_i + m_i m_i^T) - mean mean^T
  // where (m_i, S_i) is the particle's exact marginal, or (value, 0) when the
  // variable has been forced to a concrete value.
  template <typename Extractor>
  std::pair<VectorX<Scalar>, MatrixX<Scalar>> estimate(Extractor&& extract) {
    VectorX<Scalar> mean;
    MatrixX<Scalar> second;
    for (std::size_t i = 0; i < particles_.size(); ++i) {
      auto [m, cov] = particles_[i].ctx.moments_of(extract(particles_[i].state));
      if (i == 0) {
        mean = VectorX<Scalar>::Zero(m.size());
        second = MatrixX<Scalar>::Zero(m.size(), m.size());
      } else if (m.size() != mean.size()) {
        throw std::invalid_argument("estimate: variable dimension differs across particles");
      }
      mean += weights_(i) * m;
      second += weights_(i) * (cov + m * m.transpose());
    }
    return {mean, MatrixX<Scalar>(second - mean * mean.transpose())};
  }

  std::size_t total_sample_count() const {
    std::size_t n = 0;
    for (const Particle& p : particles_) n += p.ctx.sample_count();
    return n;
  }

  ModelContext<Scalar>& particle_ctx(std::size_t i) { return particles_.at(i).ctx; }
  const State& particle_state(std::size_t i) const { return particles_.at(i).state; }

 private:
  struct Particle {
    ModelContext<Scalar> ctx;
    State state;
    Scalar log_weight;
  };

  static constexpr std::uint64_t kInitTag = 0x696e6974;      // particle init streams
  static constexpr std::uint64_t kResampleTag = 0x72657331;  // the resampler's own draw
  static constexpr std::uint64_t kOffspringTag = 0x72657332; // offspring rng streams

  void normalize() {
    const Eigen::Index n = static_cast<Eigen::Index>(particles_.size());
    Scalar max_lw = -std::numeric_limits<Scalar>::infinity();
    for (const Particle& p : particles_) max_lw = std::max(max_lw, p.log_weight);
    if (!std::isfinite(max_lw)) {
      throw DegenerateCloudError("ParticleCloud: every particle weight vanished");
    }
    weights_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      // Rebase so the running log-weights stay near zero on long runs.
      particles_[i].log_weight -= max_lw;
      weights_(i) = std::exp(particles_[i].log_weight);
    }
    weights_ /= weights_.sum();
  }

  void resample() {
    Rng resample_rng(Rng::derive(seed_, kResampleTag, static_cast<std::uint64_t>(t_)));
    const std::vector<std::size_t> picks =
        options_.scheme == ResampleScheme::Systematic
            ? systematic_resample(weights_, resample_rng)
            : multinomial_resample(weights_, resample_rng);

    std::vector<Particle> next;
    next.reserve(particles_.size());
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const Particle& src = particles_[picks[i]];
      // Offspring get fresh, counter-derived rng streams; duplicated parents
      // must not share randomness going forward.
      Particle p{src.ctx.clone(Rng::derive(seed_, kOffspringTag, static_cast<std::uint64_t>(t_), i)),
                 src.state, Scalar(0)};
      next.push_back(std::move(p));
    }
    particles_ = std::move(next);
    weights_.setConstant(Scalar(1) / Scalar(particles_.size()));
  }

  Model model_;
  std::uint64_t seed_;
  CloudOptions options_;
  std::vector<Particle> particles_;
  VectorX<Scalar> weights_;
  int t_ = 0;
};

}  // namespace streambp
