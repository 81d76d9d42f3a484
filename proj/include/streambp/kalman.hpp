#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

#include "streambp/gaussian.hpp"
#include "streambp/rng.hpp"

namespace streambp {

// Closed-form Kalman reference filter. Uses the innovation/Joseph form so it
// shares no algebra with the belief-propagation engine it is checked against.

template <typename Scalar>
struct LinearSSM {
  MatrixX<Scalar> transition;       // F
  MatrixX<Scalar> transition_cov;   // Q, SPD
  MatrixX<Scalar> observation;      // H
  MatrixX<Scalar> observation_cov;  // R, SPD
  Gaussian<Scalar> init;

  Eigen::Index state_dim() const { return transition.rows(); }
  Eigen::Index obs_dim() const { return observation.rows(); }
};

template <typename Scalar>
Gaussian<Scalar> kalman_predict(const Gaussian<Scalar>& state, const MatrixX<Scalar>& F,
                                const MatrixX<Scalar>& Q) {
  if (F.cols() != state.dim() || Q.rows() != F.rows()) {
    throw std::invalid_argument("kalman_predict: dimension mismatch");
  }
  return Gaussian<Scalar>(F * state.mean(), Q + F * state.cov() * F.transpose());
}

// Innovation-form update with Joseph-stabilized covariance.
// Returns the posterior and log N(y | H m, H P H^T + R).
template <typename Scalar>
std::pair<Gaussian<Scalar>, Scalar> kalman_update(const Gaussian<Scalar>& prior,
                                                  const MatrixX<Scalar>& H,
                                                  const MatrixX<Scalar>& R,
                                                  const VectorX<Scalar>& y) {
  if (H.cols() != prior.dim() || R.rows() != H.rows() || y.size() != H.rows()) {
    throw std::invalid_argument("kalman_update: dimension mismatch");
  }
  const Eigen::Index n = prior.dim();

  MatrixX<Scalar> innov_cov = H * prior.cov() * H.transpose() + R;
  Gaussian<Scalar> predictive(H * prior.mean(), innov_cov);
  const Scalar log_evidence = logpdf(predictive, y);

  // K = P H^T S^-1 via a solve against the factored innovation covariance.
  MatrixX<Scalar> gain = predictive.llt().solve(H * prior.cov()).transpose();
  VectorX<Scalar> mean = prior.mean() + gain * (y - H * prior.mean());
  MatrixX<Scalar> ikh = MatrixX<Scalar>::Identity(n, n) - gain * H;
  MatrixX<Scalar> cov = ikh * prior.cov() * ikh.transpose() + gain * R * gain.transpose();
  return {Gaussian<Scalar>(std::move(mean), std::move(cov)), log_evidence};
}

template <typename Scalar>
struct SsmTrajectory {
  std::vector<VectorX<Scalar>> states;
  std::vector<VectorX<Scalar>> observations;
};

template <typename Scalar>
SsmTrajectory<Scalar> simulate(const LinearSSM<Scalar>& ssm, int steps, Rng& rng) {
  SsmTrajectory<Scalar> out;
  out.states.reserve(steps);
  out.observations.reserve(steps);
  Gaussian<Scalar> obs_noise(VectorX<Scalar>::Zero(ssm.obs_dim()), ssm.observation_cov);
  Gaussian<Scalar> proc_noise(VectorX<Scalar>::Zero(ssm.state_dim()), ssm.transition_cov);
  VectorX<Scalar> x = draw(ssm.init, rng);
  for (int t = 0; t < steps; ++t) {
    x = ssm.transition * x + draw(proc_noise, rng);
    out.states.push_back(x);
    out.observations.push_back(ssm.observation * x + draw(obs_noise, rng));
  }
  return out;
}

using LinearSSMXd = LinearSSM<double>;

}  // namespace streambp
