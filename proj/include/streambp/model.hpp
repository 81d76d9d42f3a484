#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <iterator>
#include <map>
#include <memory>
#include <numeric>
#include <utility>
#include <variant>
#include <vector>

#include "streambp/forest.hpp"
#include "streambp/gaussian.hpp"
#include "streambp/rng.hpp"

namespace streambp {

// Streaming-model interface. A model is an (init, step) state machine whose
// State may hold RandomVars; the engine threads the previous State back in,
// so memory across time steps is entirely client-managed.
//
// A RandomVar is a stable key into its owning ModelContext. The binding
// (symbolic forest node vs concrete vector) lives in the context, which keeps
// particles clonable: State values copy freely, and a cloned context rebinds
// every live key against its own forest copy.

template <typename Scalar = double>
class RandomVar {
 public:
  RandomVar() = default;

  std::uint64_t id() const { return key_ ? *key_ : 0; }
  Eigen::Index dim() const { return dim_; }
  explicit operator bool() const { return key_ != nullptr; }

 private:
  template <typename>
  friend class ModelContext;

  RandomVar(std::shared_ptr<const std::uint64_t> key, Eigen::Index dim)
      : key_(std::move(key)), dim_(dim) {}

  std::shared_ptr<const std::uint64_t> key_;
  Eigen::Index dim_ = 0;
};

// Affine combination of symbolic variables plus a constant. Terms referencing
// the same variable are merged; concrete variables are folded into the
// constant when the expression is consumed by the owning context (bindings
// are particle-local, so folding cannot happen earlier).
template <typename Scalar = double>
class AffineExpr {
 public:
  struct Term {
    RandomVar<Scalar> var;
    MatrixX<Scalar> coef;
  };

  /* implicit */ AffineExpr(VectorX<Scalar> constant) : constant_(std::move(constant)) {}

  /* implicit */ AffineExpr(Scalar constant) : constant_(VectorX<Scalar>::Constant(1, constant)) {}

  /* implicit */ AffineExpr(const RandomVar<Scalar>& v)
      : constant_(VectorX<Scalar>::Zero(v.dim())) {
    terms_.push_back({v, MatrixX<Scalar>::Identity(v.dim(), v.dim())});
  }

  AffineExpr(const RandomVar<Scalar>& v, MatrixX<Scalar> coef)
      : constant_(VectorX<Scalar>::Zero(coef.rows())) {
    if (coef.cols() != v.dim()) {
      throw std::invalid_argument("AffineExpr: coefficient columns do not match variable dimension");
    }
    terms_.push_back({v, std::move(coef)});
  }

  Eigen::Index dim() const { return constant_.size(); }
  const std::vector<Term>& terms() const { return terms_; }
  const VectorX<Scalar>& constant() const { return constant_; }

  AffineExpr& operator+=(const AffineExpr& other) {
    if (other.dim() != dim()) {
      throw std::invalid_argument("AffineExpr: adding expressions of different dimension");
    }
    constant_ += other.constant_;
    for (const Term& t : other.terms_) add_term(t.var, t.coef);
    return *this;
  }

  AffineExpr& operator*=(Scalar c) {
    constant_ *= c;
    for (Term& t : terms_) t.coef *= c;
    return *this;
  }

  friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
  friend AffineExpr operator-(AffineExpr a, AffineExpr b) { return a += (b *= Scalar(-1)); }
  friend AffineExpr operator*(Scalar c, AffineExpr e) { return e *= c; }

  friend AffineExpr operator*(const MatrixX<Scalar>& m, const AffineExpr& e) {
    AffineExpr out(VectorX<Scalar>(m * e.constant_));
    for (const Term& t : e.terms_) out.add_term(t.var, MatrixX<Scalar>(m * t.coef));
    return out;
  }

 private:
  void add_term(const RandomVar<Scalar>& v, const MatrixX<Scalar>& coef) {
    for (Term& t : terms_) {
      if (t.var.id() == v.id()) {
        t.coef += coef;
        return;
      }
    }
    terms_.push_back({v, coef});
  }

  std::vector<Term> terms_;
  VectorX<Scalar> constant_;
};

template <typename Scalar>
AffineExpr<Scalar> operator+(const RandomVar<Scalar>& a, const RandomVar<Scalar>& b) {
  return AffineExpr<Scalar>(a) + AffineExpr<Scalar>(b);
}
template <typename Scalar>
AffineExpr<Scalar> operator*(const MatrixX<Scalar>& m, const RandomVar<Scalar>& v) {
  return AffineExpr<Scalar>(v, m);
}
template <typename Scalar>
AffineExpr<Scalar> operator*(Scalar c, const RandomVar<Scalar>& v) {
  return AffineExpr<Scalar>(v, MatrixX<Scalar>::Identity(v.dim(), v.dim()) * c);
}

// When a new variable would have more than one symbolic parent (the forest
// maintains trees), parents are sampled until one remains.
enum class MultiParentPolicy {
  RetainMostUncertain,  // sample in ascending order of marginal covariance trace
  RetainFirst,
  RetainLast,
};

struct ContextOptions {
  MultiParentPolicy policy = MultiParentPolicy::RetainMostUncertain;
  // When set, every symbolic parent is sampled on use and each rand starts a
  // fresh root: plain bootstrap behaviour, observations still weigh exactly.
  bool sample_everything = false;
};

// Per-particle execution context: forest + rng + accumulated log-weight.
// Single-owner; clone() produces an independent deep copy for resampling.
template <typename Scalar = double>
class ModelContext {
 public:
  explicit ModelContext(std::uint64_t seed, ContextOptions options = {})
      : rng_(seed), options_(options) {}

  ModelContext(const ModelContext&) = delete;
  ModelContext& operator=(const ModelContext&) = delete;
  ModelContext(ModelContext&&) = default;
  ModelContext& operator=(ModelContext&&) = default;

  // Introduces x ~ N(mean, noise_cov) where mean is affine in earlier
  // variables. Zero symbolic terms start a new root; one becomes a tree
  // child; more than one triggers the multi-parent policy.
  RandomVar<Scalar> rand_gaussian(const AffineExpr<Scalar>& mean, MatrixX<Scalar> noise_cov) {
    sweep_vars();
    VectorX<Scalar> constant = mean.constant();
    std::vector<typename AffineExpr<Scalar>::Term> symbolic;
    for (const auto& term : mean.terms()) {
      Binding& b = binding_of(term.var);
      if (std::holds_alternative<VectorX<Scalar>>(b.value)) {
        constant += term.coef * std::get<VectorX<Scalar>>(b.value);
      } else {
        symbolic.push_back(term);
      }
    }

    if (options_.sample_everything) {
      for (const auto& term : symbolic) constant += term.coef * value_of(term.var);
      symbolic.clear();
    } else if (symbolic.size() > 1) {
      reduce_to_single_parent(symbolic, constant);
    }

    NodeHandle node;
    if (symbolic.empty()) {
      node = forest_.new_root(Gaussian<Scalar>(constant, std::move(noise_cov)));
    } else {
      node = forest_.add_child(
          node_of(symbolic.front().var, "rand_gaussian"),
          AffineEdge<Scalar>(symbolic.front().coef, constant, std::move(noise_cov)));
    }
    return register_var(std::move(node), constant.size());
  }

  // Conditions rv = value through the forest; the log-likelihood accumulates
  // into this particle's pending log-weight. A forced (concrete) value cannot
  // be conditioned.
  void observe(const RandomVar<Scalar>& rv, const VectorX<Scalar>& value) {
    sweep_vars();
    Binding& b = binding_of(rv);
    if (std::holds_alternative<VectorX<Scalar>>(b.value)) {
      throw std::domain_error("observe: variable already holds a forced concrete value");
    }
    pending_log_weight_ += forest_.observe(std::get<NodeHandle>(b.value), value);
  }

  void observe(const RandomVar<Scalar>& rv, Scalar value) {
    observe(rv, VectorX<Scalar>::Constant(1, value));
  }

  // Concrete value of rv, sampling it out of the forest if still symbolic.
  // The binding flips to concrete for every holder of this variable.
  VectorX<Scalar> value_of(const RandomVar<Scalar>& rv) {
    Binding& b = binding_of(rv);
    if (std::holds_alternative<NodeHandle>(b.value)) {
      VectorX<Scalar> v = forest_.sample_node(std::get<NodeHandle>(b.value), rng_);
      ++sample_count_;
      b.value = v;
      return v;
    }
    return std::get<VectorX<Scalar>>(b.value);
  }

  bool is_symbolic(const RandomVar<Scalar>& rv) {
    return std::holds_alternative<NodeHandle>(binding_of(rv).value);
  }

  Gaussian<Scalar> marginal_of(const RandomVar<Scalar>& rv) {
    return forest_.marginal(node_of(rv, "marginal_of"));
  }

  // (mean, cov) of rv: exact marginal when symbolic, point mass when concrete.
  std::pair<VectorX<Scalar>, MatrixX<Scalar>> moments_of(const RandomVar<Scalar>& rv) {
    Binding& b = binding_of(rv);
    if (std::holds_alternative<VectorX<Scalar>>(b.value)) {
      const auto& v = std::get<VectorX<Scalar>>(b.value);
      return {v, MatrixX<Scalar>::Zero(v.size(), v.size())};
    }
    Gaussian<Scalar> m = forest_.marginal(std::get<NodeHandle>(b.value));
    return {m.mean(), m.cov()};
  }

  // Log-weight accumulated by observe calls since the last take.
  Scalar take_log_weight() {
    Scalar w = pending_log_weight_;
    pending_log_weight_ = Scalar(0);
    return w;
  }

  std::size_t sample_count() const { return sample_count_; }
  GaussForest<Scalar>& forest() { return forest_; }
  Rng& rng() { return rng_; }
  const ContextOptions& options() const { return options_; }

  // Independent deep copy with a fresh rng stream; used by resampling.
  ModelContext clone(std::uint64_t seed) const {
    ModelContext out(seed, options_);
    auto [forest, remap] = forest_.clone();
    out.forest_ = std::move(forest);
    out.next_var_ = next_var_;
    out.pending_log_weight_ = pending_log_weight_;
    out.sample_count_ = sample_count_;
    for (const auto& [id, b] : vars_) {
      if (b.key.expired()) continue;
      Binding copy;
      copy.key = b.key;
      if (std::holds_alternative<NodeHandle>(b.value)) {
        const NodeHandle& h = std::get<NodeHandle>(b.value);
        auto it = remap.find(h.id());
        // Dead handles (observed nodes) stay dead in the clone.
        copy.value = it != remap.end() ? it->second : NodeHandle();
      } else {
        copy.value = std::get<VectorX<Scalar>>(b.value);
      }
      out.vars_.emplace(id, std::move(copy));
    }
    return out;
  }

 private:
  struct Binding {
    std::weak_ptr<const std::uint64_t> key;
    std::variant<NodeHandle, VectorX<Scalar>> value;
  };

  RandomVar<Scalar> register_var(NodeHandle node, Eigen::Index dim) {
    const std::uint64_t id = next_var_++;
    auto key = std::make_shared<const std::uint64_t>(id);
    Binding b;
    b.key = key;
    b.value = std::move(node);
    vars_.emplace(id, std::move(b));
    return RandomVar<Scalar>(std::move(key), dim);
  }

  Binding& binding_of(const RandomVar<Scalar>& rv) {
    auto it = rv ? vars_.find(rv.id()) : vars_.end();
    // The key cell must be the one this context (or its clone ancestor)
    // registered; a matching id from an unrelated context is rejected.
    if (it == vars_.end() || it->second.key.lock() != rv.key_) {
      throw std::invalid_argument("ModelContext: variable is not registered with this context");
    }
    return it->second;
  }

  NodeHandle node_of(const RandomVar<Scalar>& rv, const char* op) {
    Binding& b = binding_of(rv);
    if (!std::holds_alternative<NodeHandle>(b.value)) {
      throw std::domain_error(std::string(op) + ": variable is concrete");
    }
    return std::get<NodeHandle>(b.value);
  }

  // Samples all but one symbolic parent, folding the draws into the constant.
  // Under RetainMostUncertain the parents are sampled in ascending order of
  // marginal covariance trace (traces taken before any of them is sampled),
  // so the most-uncertain parent survives; ties resolve by term order.
  void reduce_to_single_parent(std::vector<typename AffineExpr<Scalar>::Term>& symbolic,
                               VectorX<Scalar>& constant) {
    std::vector<std::size_t> order(symbolic.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options_.policy == MultiParentPolicy::RetainMostUncertain) {
      std::vector<Scalar> trace(symbolic.size());
      for (std::size_t i = 0; i < symbolic.size(); ++i) {
        trace[i] = forest_.marginal(node_of(symbolic[i].var, "rand_gaussian")).cov().trace();
      }
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return trace[a] < trace[b]; });
    } else if (options_.policy == MultiParentPolicy::RetainFirst) {
      std::rotate(order.begin(), order.begin() + 1, order.end());
    }
    // Everything except the final entry of `order` gets sampled.
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
      const auto& term = symbolic[order[k]];
      constant += term.coef * value_of(term.var);
    }
    const std::size_t keep = order.back();
    if (keep != 0) symbolic[0] = std::move(symbolic[keep]);
    symbolic.resize(1);
  }

  // Bindings whose RandomVars were all dropped release their forest handles.
  void sweep_vars() {
    for (auto it = vars_.begin(); it != vars_.end();) {
      it = it->second.key.expired() ? vars_.erase(it) : std::next(it);
    }
  }

  GaussForest<Scalar> forest_;
  Rng rng_;
  ContextOptions options_;
  std::map<std::uint64_t, Binding> vars_;
  std::uint64_t next_var_ = 1;
  Scalar pending_log_weight_ = 0;
  std::size_t sample_count_ = 0;
};

// A streaming model: init creates the first State, step consumes the previous
// State plus this tick's inputs and returns the next State and an output.
// Both must be deterministic given the context's rng stream.
template <typename M>
concept ModelProgram = requires(const M m, ModelContext<typename M::Scalar>& ctx,
                                typename M::State state, const typename M::Input& input) {
  typename M::Scalar;
  typename M::State;
  typename M::Input;
  typename M::Output;
  { m.init(ctx) } -> std::same_as<typename M::State>;
  {
    m.step(ctx, std::move(state), input)
  } -> std::same_as<std::pair<typename M::State, typename M::Output>>;
};

using RandomVarXd = RandomVar<double>;
using AffineExprXd = AffineExpr<double>;
using ModelContextXd = ModelContext<double>;

}  // namespace streambp
