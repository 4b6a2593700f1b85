#pragma once

// Minimal tape-free reverse-mode automatic differentiation over Tensor<T>.
//
// Every operation returns a Var whose node remembers its parents and a
// closure that pushes the node's gradient back into them. backward() sorts
// the graph topologically from the loss and replays the closures. Nodes that
// do not depend on any grad-requiring leaf carry no closure, so frozen
// sub-networks cost only their forward pass plus the input-gradient path.

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sfsci/tensor.hpp"

namespace sfsci {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>&)> backward;

  void accumulate(const Tensor<T>& g) {
    if (!requires_grad) return;
    if (grad.empty()) {
      grad = g;
    } else {
      grad += g;
    }
  }
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>::zeros_like(value);
    return grad;
  }
};

template <typename T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const NodePtr& node() const { return node_; }
  const std::vector<std::size_t>& shape() const { return node_->value.shape(); }

  /// Scalar value of a one-element tensor.
  T item() const { return node_->value[0]; }

  /// Builds an interior node. `fn` receives the node's output gradient and
  /// must route it into the parents through Node::accumulate.
  static Var make(Tensor<T> value, std::vector<Var> parents,
                  std::function<void(const Tensor<T>&)> fn) {
    Var out(std::move(value));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(fn);
    return out;
  }

 private:
  NodePtr node_;
};

/// Runs reverse accumulation from a scalar loss. Interior nodes release their
/// closures afterwards, so a graph can be back-propagated only once.
template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->accumulate(Tensor<T>(loss.value().shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad);
  }
  for (Node<T>* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad = Tensor<T>();
    }
  }
}

/// Learnable leaf tensor with value semantics: copying a Parameter copies its
/// value into a fresh node, so model copies never alias storage.
template <typename T>
class Parameter {
 public:
  Parameter() : node_(std::make_shared<Node<T>>()) {}
  explicit Parameter(Tensor<T> value) : Parameter() { node_->value = std::move(value); sync(); }

  Parameter(const Parameter& o) : Parameter() {
    node_->value = o.node_->value;
    frozen_ = o.frozen_;
    sync();
  }
  Parameter& operator=(const Parameter& o) {
    if (this != &o) {
      node_ = std::make_shared<Node<T>>();
      node_->value = o.node_->value;
      frozen_ = o.frozen_;
      sync();
    }
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  Var<T> var() const { return Var<T>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  std::size_t size() const { return node_->value.size(); }

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; sync(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  bool operator==(const Parameter& o) const { return node_->value == o.node_->value; }

 private:
  void sync() { node_->requires_grad = !frozen_; }

  std::shared_ptr<Node<T>> node_;
  bool frozen_ = false;
};

namespace ad {

template <typename T>
Var<T> constant(Tensor<T> v) {
  return Var<T>(std::move(v), false);
}

template <typename T>
Var<T> scalar(T v) {
  return Var<T>(Tensor<T>({1}, v), false);
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>(a.value(), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto an = a.node(), bn = b.node();
  return Var<T>::make(a.value() + b.value(), {a, b}, [an, bn](const Tensor<T>& g) {
    an->accumulate(g);
    bn->accumulate(g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto an = a.node(), bn = b.node();
  return Var<T>::make(a.value() - b.value(), {a, b}, [an, bn](const Tensor<T>& g) {
    an->accumulate(g);
    if (bn->requires_grad) bn->accumulate(g * T(-1));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  auto an = a.node();
  return Var<T>::make(a.value() * s, {a}, [an, s](const Tensor<T>& g) { an->accumulate(g * s); });
}

/// Elementwise product with a constant tensor of the same shape.
template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& c) {
  Tensor<T>::require_same_shape(a.value(), c, "mul_const");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  auto an = a.node();
  return Var<T>::make(std::move(out), {a}, [an, c](const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= c[i];
    an->accumulate(ga);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  auto an = a.node();
  return Var<T>::make(std::move(out), {a}, [an](const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!(an->value[i] > T(0))) ga[i] = T(0);
    an->accumulate(ga);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = std::tanh(v);
  auto an = a.node();
  Tensor<T> y = out;
  return Var<T>::make(std::move(out), {a}, [an, y](const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= T(1) - y[i] * y[i];
    an->accumulate(ga);
  });
}

template <typename T>
T softplus_value(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = softplus_value(v);
  auto an = a.node();
  return Var<T>::make(std::move(out), {a}, [an](const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= T(1) / (T(1) + std::exp(-an->value[i]));
    an->accumulate(ga);
  });
}

/// Scalar mean of all entries.
template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.value().size());
  auto an = a.node();
  return Var<T>::make(Tensor<T>({1}, sum(a.value()) / n), {a}, [an, n](const Tensor<T>& g) {
    an->accumulate(Tensor<T>(an->value.shape(), g[0] / n));
  });
}

/// Scalar mean squared difference.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  Tensor<T>::require_same_shape(a.value(), b.value(), "mse");
  Tensor<T> diff = a.value() - b.value();
  const T n = static_cast<T>(diff.size());
  auto an = a.node(), bn = b.node();
  const T value = dot(diff, diff) / n;
  return Var<T>::make(Tensor<T>({1}, value), {a, b}, [an, bn, diff, n](const Tensor<T>& g) {
    Tensor<T> gd = diff * (T(2) * g[0] / n);
    if (an->requires_grad) an->accumulate(gd);
    if (bn->requires_grad) bn->accumulate(gd * T(-1));
  });
}

/// Weighted sum of scalar vars.
template <typename T>
Var<T> weighted_sum(const std::vector<std::pair<T, Var<T>>>& terms) {
  T total = 0;
  std::vector<Var<T>> parents;
  std::vector<T> weights;
  for (const auto& [w, v] : terms) {
    total += w * v.item();
    parents.push_back(v);
    weights.push_back(w);
  }
  std::vector<typename Var<T>::NodePtr> nodes;
  for (auto& p : parents) nodes.push_back(p.node());
  return Var<T>::make(Tensor<T>({1}, total), parents, [nodes, weights](const Tensor<T>& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (weights[i] != T(0)) nodes[i]->accumulate(Tensor<T>({1}, g[0] * weights[i]));
  });
}

/// Dense layer on a rank-1 input: out = W x + b with W of shape (out, in).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const std::size_t no = w.value().dim(0), ni = w.value().dim(1);
  if (x.value().size() != ni || b.value().size() != no) throw DimensionError("linear: shape mismatch");
  Tensor<T> out({no});
  for (std::size_t o = 0; o < no; ++o) {
    T acc = b.value()[o];
    for (std::size_t i = 0; i < ni; ++i) acc += w.value()[o * ni + i] * x.value()[i];
    out[o] = acc;
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return Var<T>::make(std::move(out), {x, w, b}, [xn, wn, bn, no, ni](const Tensor<T>& g) {
    if (bn->requires_grad) bn->accumulate(g);
    if (wn->requires_grad) {
      Tensor<T> gw(wn->value.shape());
      for (std::size_t o = 0; o < no; ++o)
        for (std::size_t i = 0; i < ni; ++i) gw[o * ni + i] = g[o] * xn->value[i];
      wn->accumulate(gw);
    }
    if (xn->requires_grad) {
      Tensor<T> gx(xn->value.shape());
      for (std::size_t o = 0; o < no; ++o)
        for (std::size_t i = 0; i < ni; ++i) gx[i] += g[o] * wn->value[o * ni + i];
      xn->accumulate(gx);
    }
  });
}

}  // namespace ad
}  // namespace sfsci
