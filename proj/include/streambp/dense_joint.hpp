#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

#include "streambp/gaussian.hpp"

namespace streambp {

// Verification-only reference: assembles the exact joint of a Gaussian tree
// description by global affine composition and conditions it with Schur
// complements. This deliberately shares no algorithmic path with the
// edge-reversal engine so that agreement between the two is evidence.

template <typename Scalar>
struct DenseSpec {
  struct Root {
    std::uint64_t id;
    Gaussian<Scalar> prior;
  };
  struct Child {
    std::uint64_t parent;
    std::uint64_t id;
    AffineEdge<Scalar> edge;
  };
  std::vector<Root> roots;
  std::vector<Child> children;  // each child must appear after its parent
};

template <typename Scalar>
class DenseJoint {
 public:
  static constexpr int kMaxNodes = 12;
  static constexpr int kMaxTotalDim = 24;

  static DenseJoint build(const DenseSpec<Scalar>& spec) {
    DenseJoint j;
    for (const auto& root : spec.roots) {
      const Eigen::Index d = root.prior.dim();
      j.append(root.id, d);
      j.mean_.tail(d) = root.prior.mean();
      j.cov_.bottomRightCorner(d, d) = root.prior.cov();
    }
    for (const auto& child : spec.children) {
      const Eigen::Index at = j.find(child.id);
      if (at >= 0) {
        throw std::invalid_argument("DenseJoint: node defined twice (cycle or duplicate)");
      }
      const Eigen::Index pi = j.find(child.parent);
      if (pi < 0) {
        throw std::invalid_argument("DenseJoint: child listed before its parent (cycle or missing root)");
      }
      const auto [po, pd] = j.span(pi);
      if (child.edge.parent_dim() != pd) {
        throw std::invalid_argument("DenseJoint: edge parent dimension mismatch");
      }
      const Eigen::Index d = child.edge.child_dim();
      const Eigen::Index old_n = j.mean_.size();
      j.append(child.id, d);

      const auto& A = child.edge.coef();
      j.mean_.tail(d) = A * j.mean_.segment(po, pd) + child.edge.offset();
      // Cross blocks against every existing variable, then the new diagonal.
      MatrixX<Scalar> cross = A * j.cov_.block(po, 0, pd, old_n);  // d x old_n
      j.cov_.block(old_n, 0, d, old_n) = cross;
      j.cov_.block(0, old_n, old_n, d) = cross.transpose();
      j.cov_.bottomRightCorner(d, d) =
          child.edge.noise_cov() + cross.middleCols(po, pd) * A.transpose();
    }
    return j;
  }

  Eigen::Index total_dim() const { return mean_.size(); }
  std::size_t size() const { return ids_.size(); }
  bool contains(std::uint64_t id) const { return find(id) >= 0; }
  const VectorX<Scalar>& mean() const { return mean_; }
  const MatrixX<Scalar>& cov() const { return cov_; }

  Gaussian<Scalar> marginal(std::uint64_t id) const {
    const auto [o, d] = span(require(id));
    return Gaussian<Scalar>(mean_.segment(o, d), cov_.block(o, o, d, d));
  }

  // Cov(x_v, x_u), a (dim_v x dim_u) block.
  MatrixX<Scalar> cross_cov(std::uint64_t u, std::uint64_t v) const {
    const auto [uo, ud] = span(require(u));
    const auto [vo, vd] = span(require(v));
    return cov_.block(vo, uo, vd, ud);
  }

  // Conditions on x_var = value; returns the reduced joint and the marginal
  // log-density of the conditioned block.
  std::pair<DenseJoint, Scalar> condition(std::uint64_t var, const VectorX<Scalar>& value) const {
    const Eigen::Index vi = require(var);
    const auto [vo, vd] = span(vi);
    if (value.size() != vd) {
      throw std::invalid_argument("DenseJoint: conditioning value dimension mismatch");
    }

    MatrixX<Scalar> svv = cov_.block(vo, vo, vd, vd);
    Eigen::LLT<MatrixX<Scalar>> llt(((svv + svv.transpose()) / Scalar(2)).eval());
    if (llt.info() != Eigen::Success) {
      throw NumericalError("DenseJoint: conditioned block is singular");
    }
    const Scalar loglik = logpdf(Gaussian<Scalar>(mean_.segment(vo, vd), svv), value);

    const Eigen::Index n = total_dim();
    const Eigen::Index rest = n - vd;
    DenseJoint out;
    out.mean_.resize(rest);
    out.cov_.resize(rest, rest);

    // Stack [before; after] the removed block.
    MatrixX<Scalar> cross(rest, vd);  // Cov(rest, var)
    VectorX<Scalar> mu(rest);
    auto copy_rows = [&](auto&& src, auto&& dst) {
      dst.topRows(vo) = src.topRows(vo);
      dst.bottomRows(rest - vo) = src.bottomRows(n - vo - vd);
    };
    copy_rows(cov_.middleCols(vo, vd), cross);
    mu.head(vo) = mean_.head(vo);
    mu.tail(rest - vo) = mean_.tail(n - vo - vd);

    MatrixX<Scalar> srr(rest, rest);
    srr.topLeftCorner(vo, vo) = cov_.topLeftCorner(vo, vo);
    srr.topRightCorner(vo, rest - vo) = cov_.topRightCorner(vo, n - vo - vd);
    srr.bottomLeftCorner(rest - vo, vo) = cov_.bottomLeftCorner(n - vo - vd, vo);
    srr.bottomRightCorner(rest - vo, rest - vo) = cov_.bottomRightCorner(n - vo - vd, n - vo - vd);

    MatrixX<Scalar> gain = llt.solve(cross.transpose()).transpose();  // rest x vd
    out.mean_ = mu + gain * (value - mean_.segment(vo, vd));
    out.cov_ = srr - gain * cross.transpose();
    out.cov_ = ((out.cov_ + out.cov_.transpose()) / Scalar(2)).eval();

    for (std::size_t k = 0; k < ids_.size(); ++k) {
      if (static_cast<Eigen::Index>(k) == vi) continue;
      out.ids_.push_back(ids_[k]);
      out.dims_.push_back(dims_[k]);
    }
    return {std::move(out), loglik};
  }

 private:
  DenseJoint() : mean_(0), cov_(0, 0) {}

  void append(std::uint64_t id, Eigen::Index d) {
    if (contains(id)) throw std::invalid_argument("DenseJoint: duplicate node id");
    if (size() + 1 > kMaxNodes || total_dim() + d > kMaxTotalDim) {
      throw std::invalid_argument("DenseJoint: description exceeds oracle size limits");
    }
    const Eigen::Index n = mean_.size();
    mean_.conservativeResize(n + d);
    cov_.conservativeResize(n + d, n + d);
    mean_.tail(d).setZero();
    cov_.rightCols(d).setZero();
    cov_.bottomRows(d).setZero();
    ids_.push_back(id);
    dims_.push_back(d);
  }

  Eigen::Index find(std::uint64_t id) const {
    for (std::size_t k = 0; k < ids_.size(); ++k) {
      if (ids_[k] == id) return static_cast<Eigen::Index>(k);
    }
    return -1;
  }

  Eigen::Index require(std::uint64_t id) const {
    const Eigen::Index k = find(id);
    if (k < 0) throw std::invalid_argument("DenseJoint: unknown node id");
    return k;
  }

  std::pair<Eigen::Index, Eigen::Index> span(Eigen::Index k) const {
    Eigen::Index off = 0;
    for (Eigen::Index i = 0; i < k; ++i) off += dims_[i];
    return {off, dims_[k]};
  }

  std::vector<std::uint64_t> ids_;
  std::vector<Eigen::Index> dims_;
  VectorX<Scalar> mean_;
  MatrixX<Scalar> cov_;
};

using DenseJointXd = DenseJoint<double>;
using DenseSpecXd = DenseSpec<double>;

}  // namespace streambp
