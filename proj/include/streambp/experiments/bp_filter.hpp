#pragma once

#include "streambp/forest.hpp"
#include "streambp/kalman.hpp"

namespace streambp::experiments {

// Streaming linear-Gaussian filter driven entirely by forest operations.
// Only the latest state handle is retained, so reclamation keeps the live
// node count constant no matter how long the run is.
class BpLinearFilter {
 public:
  explicit BpLinearFilter(LinearSSM<double> ssm) : ssm_(std::move(ssm)) {
    state_ = forest_.new_root(ssm_.init);
  }

  void predict() {
    AffineEdge<double> transition(ssm_.transition, VectorX<double>::Zero(ssm_.state_dim()),
                                  ssm_.transition_cov);
    state_ = forest_.add_child(state_, std::move(transition));
  }

  double update(const VectorX<double>& y) {
    AffineEdge<double> observation(ssm_.observation, VectorX<double>::Zero(ssm_.obs_dim()),
                                   ssm_.observation_cov);
    NodeHandle obs = forest_.add_child(state_, std::move(observation));
    return forest_.observe(obs, y);
  }

  Gaussian<double> posterior() { return forest_.marginal(state_); }

  std::size_t live_nodes() const { return forest_.live_node_count(); }

 private:
  LinearSSM<double> ssm_;
  GaussForest<double> forest_;
  NodeHandle state_;
};

}  // namespace streambp::experiments
