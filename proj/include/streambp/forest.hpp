#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "streambp/gaussian.hpp"
#include "streambp/rng.hpp"

namespace streambp {

// Opaque, reference-counted handle to a forest node. The forest watches the
// handle's control block: once every client copy is gone the node becomes a
// reclamation candidate. Handles are invalidated by observe/sample; any later
// use fails deterministically.
class NodeHandle {
 public:
  NodeHandle() = default;

  std::uint64_t id() const { return cell_ ? *cell_ : 0; }
  explicit operator bool() const { return cell_ != nullptr; }
  void reset() { cell_.reset(); }

 private:
  template <typename>
  friend class GaussForest;

  explicit NodeHandle(std::shared_ptr<const std::uint64_t> cell) : cell_(std::move(cell)) {}

  std::shared_ptr<const std::uint64_t> cell_;
};

// Rooted Gaussian forest. Each tree has exactly one root carrying a Gaussian
// marginal; every other node carries the conditional edge from its parent. The
// implied joint density is
//     p(x_root) * prod_v p(x_v | x_parent(v))
// and every operation below preserves it exactly.
//
// Memory contract: liveness is defined by client-held handles. After each
// mutating operation, unreferenced leaves are dropped and unreferenced
// single-child roots are folded into their child (push_forward), so each tree
// shrinks to the Steiner tree of its referenced nodes. In a first-order Markov
// filtering loop that keeps only the latest handle this bounds the live node
// count by a constant.
template <typename Scalar = double>
class GaussForest {
 public:
  GaussForest() = default;

  GaussForest(const GaussForest&) = delete;
  GaussForest& operator=(const GaussForest&) = delete;
  GaussForest(GaussForest&&) = default;
  GaussForest& operator=(GaussForest&&) = default;

  NodeHandle new_root(Gaussian<Scalar> prior) {
    const Eigen::Index d = prior.dim();
    Node node;
    node.dim = d;
    node.marginal.emplace(std::move(prior));
    return insert(std::move(node));
  }

  NodeHandle add_child(const NodeHandle& parent, AffineEdge<Scalar> edge) {
    Node& pn = expect_live(parent, "add_child");
    if (edge.parent_dim() != pn.dim) {
      throw std::invalid_argument("add_child: edge parent dimension does not match node");
    }
    Node node;
    node.dim = edge.child_dim();
    node.parent.emplace(ParentLink{parent.id(), std::move(edge)});
    NodeHandle h = insert(std::move(node));
    nodes_.at(parent.id()).children.push_back(h.id());
    sweep();
    return h;
  }

  // Re-roots v's tree at v by reversing every edge on the (old root -> v)
  // path; edges off the path are untouched and the joint is preserved.
  void retarget(const NodeHandle& v) {
    expect_live(v, "retarget");
    retarget_id(v.id());
    sweep();
  }

  // Exact marginal of x_v: retarget to v and read the root marginal.
  Gaussian<Scalar> marginal(const NodeHandle& v) {
    expect_live(v, "marginal");
    retarget_id(v.id());
    Gaussian<Scalar> out = *nodes_.at(v.id()).marginal;
    sweep();
    return out;
  }

  // Conditions x_v = value. Returns log p(x_v = value | everything observed so
  // far); v is removed, each former child becomes the root of its own tree
  // with prior N(A value + b, noise), and the handle is invalidated.
  Scalar observe(const NodeHandle& v, const VectorX<Scalar>& value) {
    Node& n = expect_live(v, "observe");
    if (value.size() != n.dim) {
      throw std::invalid_argument("observe: value dimension does not match node");
    }
    retarget_id(v.id());
    const Scalar loglik = logpdf(*nodes_.at(v.id()).marginal, value);
    split_at(v.id(), value);
    return loglik;
  }

  // Draws x_v from its exact marginal, then performs the same surgery as
  // observe with the drawn value. No weight term: the proposal is the
  // marginal itself, so the likelihood contribution cancels.
  VectorX<Scalar> sample_node(const NodeHandle& v, Rng& rng) {
    expect_live(v, "sample_node");
    retarget_id(v.id());
    VectorX<Scalar> value = draw(*nodes_.at(v.id()).marginal, rng);
    split_at(v.id(), value);
    return value;
  }

  // Cov(x_v, x_u): retargets to u and composes edge coefficients down the
  // u -> v path. Nodes in different trees are independent; asking for their
  // cross-covariance is signaled rather than silently returned as zero.
  MatrixX<Scalar> joint_moments(const NodeHandle& u, const NodeHandle& v) {
    expect_live(u, "joint_moments");
    expect_live(v, "joint_moments");
    if (root_of(u.id()) != root_of(v.id())) {
      throw std::domain_error("joint_moments: nodes live in different trees");
    }
    retarget_id(u.id());
    const Eigen::Index vdim = nodes_.at(v.id()).dim;
    MatrixX<Scalar> path_coef = MatrixX<Scalar>::Identity(vdim, vdim);
    for (std::uint64_t at = v.id(); at != u.id();) {
      const Node& n = nodes_.at(at);
      path_coef = (path_coef * n.parent->edge.coef()).eval();
      at = n.parent->id;
    }
    MatrixX<Scalar> cross = path_coef * nodes_.at(u.id()).marginal->cov();
    sweep();
    return cross;
  }

  bool is_live(const NodeHandle& h) const { return h && nodes_.count(h.id()) > 0; }

  std::size_t live_node_count() const { return nodes_.size(); }

  // Explicit reclamation sweep; also run after every mutating operation.
  void collect() { sweep(); }

  // Deep copy with fresh handle cells. Returns the clone and an id -> handle
  // remap so an owning context can rebind its references.
  std::pair<GaussForest, std::map<std::uint64_t, NodeHandle>> clone() const {
    GaussForest out;
    out.next_id_ = next_id_;
    std::map<std::uint64_t, NodeHandle> remap;
    for (const auto& [id, node] : nodes_) {
      Node copy;
      copy.dim = node.dim;
      copy.marginal = node.marginal;
      copy.parent = node.parent;
      copy.children = node.children;
      if (!node.ref.expired()) {
        auto cell = std::make_shared<const std::uint64_t>(id);
        copy.ref = cell;
        remap.emplace(id, NodeHandle(std::move(cell)));
      }
      out.nodes_.emplace(id, std::move(copy));
    }
    return {std::move(out), std::move(remap)};
  }

  // Deterministic structural dump (id order) for debugging and golden tests.
  void dump(std::ostream& os) const {
    os << "GaussForest nodes=" << nodes_.size() << "\n";
    for (const auto& [id, node] : nodes_) {
      os << "node " << id << " dim=" << node.dim;
      if (node.marginal) {
        os << " root mean=" << fmt(node.marginal->mean()) << " cov=" << fmt(node.marginal->cov());
      } else {
        os << " parent=" << node.parent->id << " A=" << fmt(node.parent->edge.coef())
           << " b=" << fmt(node.parent->edge.offset())
           << " noise=" << fmt(node.parent->edge.noise_cov());
      }
      os << "\n";
    }
  }

 private:
  struct ParentLink {
    std::uint64_t id;
    AffineEdge<Scalar> edge;
  };

  struct Node {
    Eigen::Index dim = 0;
    std::optional<Gaussian<Scalar>> marginal;  // engaged iff root
    std::optional<ParentLink> parent;          // engaged iff non-root
    std::vector<std::uint64_t> children;
    std::weak_ptr<const std::uint64_t> ref;
  };

  NodeHandle insert(Node node) {
    const std::uint64_t id = next_id_++;
    auto cell = std::make_shared<const std::uint64_t>(id);
    node.ref = cell;
    nodes_.emplace(id, std::move(node));
    return NodeHandle(std::move(cell));
  }

  Node& expect_live(const NodeHandle& h, const char* op) {
    auto it = h ? nodes_.find(h.id()) : nodes_.end();
    if (it == nodes_.end()) {
      throw std::invalid_argument(std::string(op) + ": dead or null node handle");
    }
    return it->second;
  }

  std::uint64_t root_of(std::uint64_t id) const {
    const Node* n = &nodes_.at(id);
    while (n->parent) {
      id = n->parent->id;
      n = &nodes_.at(id);
    }
    return id;
  }

  void retarget_id(std::uint64_t target) {
    // Path from target up to the root, then reverse edges walking back down.
    std::vector<std::uint64_t> path;
    for (std::uint64_t at = target;;) {
      path.push_back(at);
      const Node& n = nodes_.at(at);
      if (!n.parent) break;
      at = n.parent->id;
    }
    // path.back() is the current root; reverse pairwise toward the target.
    for (std::size_t k = path.size(); k-- > 1;) {
      const std::uint64_t root_id = path[k];
      const std::uint64_t next_id = path[k - 1];
      Node& r = nodes_.at(root_id);
      Node& w = nodes_.at(next_id);
      auto [child_marginal, reversed] = reverse(*r.marginal, w.parent->edge);
      r.marginal.reset();
      r.parent.emplace(ParentLink{next_id, std::move(reversed)});
      r.children.erase(std::find(r.children.begin(), r.children.end(), next_id));
      w.marginal.emplace(std::move(child_marginal));
      w.parent.reset();
      w.children.push_back(root_id);
    }
  }

  // Removes root node `id`, turning each child into the root of its own tree
  // conditioned on x_id = value.
  void split_at(std::uint64_t id, const VectorX<Scalar>& value) {
    Node& n = nodes_.at(id);
    const std::vector<std::uint64_t> children = n.children;
    for (const std::uint64_t cid : children) {
      Node& c = nodes_.at(cid);
      const AffineEdge<Scalar>& e = c.parent->edge;
      c.marginal.emplace(Gaussian<Scalar>(e.coef() * value + e.offset(), e.noise_cov()));
      c.parent.reset();
    }
    nodes_.erase(id);
    sweep();
  }

  // Reclamation fixpoint: drop unreferenced leaves; fold unreferenced
  // single-child roots into their child via push_forward. Both steps are
  // exact marginalizations of the joint.
  void sweep() {
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto it = nodes_.begin(); it != nodes_.end();) {
        Node& n = it->second;
        if (!n.ref.expired()) {
          ++it;
          continue;
        }
        if (n.children.empty()) {
          if (n.parent) {
            auto& siblings = nodes_.at(n.parent->id).children;
            siblings.erase(std::find(siblings.begin(), siblings.end(), it->first));
          }
          it = nodes_.erase(it);
          changed = true;
        } else if (!n.parent && n.children.size() == 1) {
          Node& c = nodes_.at(n.children.front());
          c.marginal.emplace(push_forward(*n.marginal, c.parent->edge));
          c.parent.reset();
          it = nodes_.erase(it);
          changed = true;
        } else {
          ++it;
        }
      }
    }
  }

  static std::string fmt(const MatrixX<Scalar>& m) {
    std::string out = "[";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (i) out += ";";
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) out += ",";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(m(i, j)));
        out += buf;
      }
    }
    return out + "]";
  }

  static std::string fmt(const VectorX<Scalar>& v) { return fmt(MatrixX<Scalar>(v.transpose())); }

  std::map<std::uint64_t, Node> nodes_;
  std::uint64_t next_id_ = 1;
};

using GaussForestXd = GaussForest<double>;

}  // namespace streambp
