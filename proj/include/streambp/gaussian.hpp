#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "streambp/errors.hpp"
#include "streambp/rng.hpp"

namespace streambp {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

// Tolerances are implementation choices; nothing upstream prescribes them.
inline constexpr double kSymmetryTol = 1e-10;   // relative asymmetry allowed on input
inline constexpr double kJitterScale = 1e-10;   // one-shot diagonal jitter: scale * trace/dim

// Symmetrize, then factor; on failure add the jitter once and retry.
// Returns the (possibly jittered) matrix through `cov`.
template <typename Scalar>
Eigen::LLT<MatrixX<Scalar>> factor_spd(MatrixX<Scalar>& cov, const char* what) {
  if (cov.rows() != cov.cols()) {
    throw std::invalid_argument(std::string(what) + ": covariance must be square");
  }
  const Scalar scale = cov.size() > 0 ? cov.cwiseAbs().maxCoeff() : Scalar(0);
  const Scalar asym = cov.size() > 0 ? (cov - cov.transpose()).cwiseAbs().maxCoeff() : Scalar(0);
  if (asym > kSymmetryTol * std::max<Scalar>(Scalar(1), scale)) {
    throw std::invalid_argument(std::string(what) + ": covariance is not symmetric");
  }
  cov = ((cov + cov.transpose()) / Scalar(2)).eval();

  Eigen::LLT<MatrixX<Scalar>> llt(cov);
  if (llt.info() == Eigen::Success) return llt;

  const Scalar dim = static_cast<Scalar>(cov.rows());
  const Scalar jitter = Scalar(kJitterScale) * cov.trace() / dim;
  if (jitter > Scalar(0)) {
    cov.diagonal().array() += jitter;
    llt.compute(cov);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError(std::string(what) + ": covariance is not positive definite within the jitter budget");
}

}  // namespace detail

// Multivariate normal in moment parameterization. The covariance is
// symmetrized on construction and must be positive definite after at most
// one diagonal jitter of kJitterScale * trace/dim.
template <typename Scalar>
class Gaussian {
 public:
  Gaussian(VectorX<Scalar> mean, MatrixX<Scalar> cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (mean_.size() != cov_.rows()) {
      throw std::invalid_argument("Gaussian: mean/covariance dimension mismatch");
    }
    llt_ = detail::factor_spd<Scalar>(cov_, "Gaussian");
  }

  Eigen::Index dim() const { return mean_.size(); }
  const VectorX<Scalar>& mean() const { return mean_; }
  const MatrixX<Scalar>& cov() const { return cov_; }

  // Cached Cholesky factor of cov (lower triangular).
  const Eigen::LLT<MatrixX<Scalar>>& llt() const { return llt_; }

 private:
  VectorX<Scalar> mean_;
  MatrixX<Scalar> cov_;
  Eigen::LLT<MatrixX<Scalar>> llt_;
};

// Conditional linear-Gaussian edge p(child | parent) = N(A * parent + b, noise_cov).
// Noise must be strictly positive definite; deterministic affine relations are
// expressed at the model layer, never as edges.
template <typename Scalar>
class AffineEdge {
 public:
  AffineEdge(MatrixX<Scalar> coef, VectorX<Scalar> offset, MatrixX<Scalar> noise_cov)
      : coef_(std::move(coef)), offset_(std::move(offset)), noise_cov_(std::move(noise_cov)) {
    if (coef_.rows() != offset_.size() || coef_.rows() != noise_cov_.rows()) {
      throw std::invalid_argument("AffineEdge: inconsistent dimensions");
    }
    noise_llt_ = detail::factor_spd<Scalar>(noise_cov_, "AffineEdge");
  }

  Eigen::Index parent_dim() const { return coef_.cols(); }
  Eigen::Index child_dim() const { return coef_.rows(); }
  const MatrixX<Scalar>& coef() const { return coef_; }
  const VectorX<Scalar>& offset() const { return offset_; }
  const MatrixX<Scalar>& noise_cov() const { return noise_cov_; }
  const Eigen::LLT<MatrixX<Scalar>>& noise_llt() const { return noise_llt_; }

 private:
  MatrixX<Scalar> coef_;
  VectorX<Scalar> offset_;
  MatrixX<Scalar> noise_cov_;
  Eigen::LLT<MatrixX<Scalar>> noise_llt_;
};

using GaussianXd = Gaussian<double>;
using AffineEdgeXd = AffineEdge<double>;

// Marginal of the child: N(A mu + b, noise + A Sigma A^T).
template <typename Scalar>
Gaussian<Scalar> push_forward(const Gaussian<Scalar>& parent, const AffineEdge<Scalar>& edge) {
  if (parent.dim() != edge.parent_dim()) {
    throw std::invalid_argument("push_forward: parent dimension does not match edge");
  }
  VectorX<Scalar> mean = edge.coef() * parent.mean() + edge.offset();
  MatrixX<Scalar> cov = edge.noise_cov() + edge.coef() * parent.cov() * edge.coef().transpose();
  return Gaussian<Scalar>(std::move(mean), std::move(cov));
}

// Edge reversal: given p(parent) and p(child | parent), returns the child
// marginal and the conditional p(parent | child). The precision-form
// quantities are evaluated with Cholesky solves:
//   Sigma_rev = (Sigma_p^-1 + A^T Sigma_n^-1 A)^-1
//   A_rev     = Sigma_rev A^T Sigma_n^-1
//   b_rev     = Sigma_rev (Sigma_p^-1 mu_p - A^T Sigma_n^-1 b)
template <typename Scalar>
std::pair<Gaussian<Scalar>, AffineEdge<Scalar>> reverse(const Gaussian<Scalar>& parent,
                                                        const AffineEdge<Scalar>& edge) {
  Gaussian<Scalar> child = push_forward(parent, edge);

  const Eigen::Index p = parent.dim();
  const MatrixX<Scalar>& coef = edge.coef();

  // W = Sigma_n^-1 A  (child_dim x parent_dim)
  MatrixX<Scalar> noise_inv_coef = edge.noise_llt().solve(coef);
  MatrixX<Scalar> precision = parent.llt().solve(MatrixX<Scalar>::Identity(p, p));
  precision += coef.transpose() * noise_inv_coef;
  precision = ((precision + precision.transpose()) / Scalar(2)).eval();

  Eigen::LLT<MatrixX<Scalar>> prec_llt(precision);
  if (prec_llt.info() != Eigen::Success) {
    throw NumericalError("reverse: reversed-edge precision is not positive definite");
  }

  MatrixX<Scalar> rev_cov = prec_llt.solve(MatrixX<Scalar>::Identity(p, p));
  MatrixX<Scalar> rev_coef = prec_llt.solve(noise_inv_coef.transpose());
  VectorX<Scalar> rev_offset = prec_llt.solve(
      parent.llt().solve(parent.mean()) - coef.transpose() * edge.noise_llt().solve(edge.offset()));

  AffineEdge<Scalar> reversed(std::move(rev_coef), std::move(rev_offset), std::move(rev_cov));
  return {std::move(child), std::move(reversed)};
}

template <typename Scalar, typename Derived>
Scalar logpdf(const Gaussian<Scalar>& g, const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != g.dim() || x.cols() != 1) {
    throw std::invalid_argument("logpdf: point dimension does not match distribution");
  }
  constexpr Scalar log2pi = Scalar(1.8378770664093454835606594728112);
  const auto& llt = g.llt();
  const Scalar logdet = Scalar(2) * llt.matrixLLT().diagonal().array().log().sum();
  const VectorX<Scalar> white = llt.matrixL().solve(x.derived() - g.mean());
  return Scalar(-0.5) * (static_cast<Scalar>(g.dim()) * log2pi + logdet + white.squaredNorm());
}

// mean + L z with z standard normal; identical rng state gives identical output.
template <typename Scalar>
VectorX<Scalar> draw(const Gaussian<Scalar>& g, Rng& rng) {
  VectorX<Scalar> z(g.dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = static_cast<Scalar>(rng.normal());
  return g.mean() + g.llt().matrixL() * z;
}

}  // namespace streambp
