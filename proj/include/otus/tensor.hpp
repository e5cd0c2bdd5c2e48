#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "otus/common.hpp"

namespace otus {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= size_t(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct TensorNode;

// Pass-local gradient buffers: one backward() call scatters gradients through
// these, then adds the result into each requires_grad node's .grad. Running
// backward twice without zeroing therefore doubles every gradient.
template <class T>
using GradBuffers = std::vector<std::vector<T>*>;

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first backward; same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  // backward(upstream, parent_buffers): accumulate d(loss)/d(parent) into
  // parent_buffers[i] given d(loss)/d(this) = upstream. Entries of
  // parent_buffers are null for parents that do not need gradients.
  std::function<void(const std::vector<T>&, const GradBuffers<T>&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

inline thread_local bool g_grad_enabled = true;

inline bool grad_enabled() { return g_grad_enabled; }

struct NoGrad {
  bool prev;
  NoGrad() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGrad() { g_grad_enabled = prev; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<T>>();
    n->value.assign(shape_numel(shape), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                  std::to_string(data.size()));
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v) { return from_data({}, {v}); }

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[size_t(i)]; }
  int rank() const { return int(n_->shape.size()); }
  size_t size() const { return n_->value.size(); }

  std::vector<T>& data() { return n_->value; }
  const std::vector<T>& data() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  bool has_grad() const { return !n_->grad.empty(); }
  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<T>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }

  void zero_grad() {
    if (!n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
  }

  T item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
    return n_->value[0];
  }

  // Copy of the value with no tape history.
  Tensor detach() const {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = n_->shape;
    n->value = n_->value;
    return Tensor(std::move(n));
  }

  std::shared_ptr<TensorNode<T>> node() const { return n_; }

 private:
  std::shared_ptr<TensorNode<T>> n_;
};

template <class T>
void debug_check_finite(const char* op, const std::vector<T>& v) {
#ifndef NDEBUG
  for (T x : v)
    if (!std::isfinite(double(x))) throw std::runtime_error(std::string(op) + ": non-finite output");
#else
  (void)op;
  (void)v;
#endif
}

// Builds an op result node. Tape edges are recorded only while gradients are
// enabled and at least one input wants them.
template <class T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                  std::function<void(const std::vector<T>&, const GradBuffers<T>&)> backward) {
  debug_check_finite(name, value);
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = grad_enabled();
  bool any = false;
  if (track)
    for (const auto& in : inputs) any = any || in.requires_grad();
  if (track && any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

namespace detail {

template <class T>
void topo_collect(TensorNode<T>* root, std::vector<TensorNode<T>*>& order) {
  // Iterative post-order DFS over requires_grad nodes.
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, size_t>> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients of every reachable
// requires_grad tensor are accumulated additively into .grad.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<TensorNode<T>*> post;
  detail::topo_collect(loss.node().get(), post);

  std::unordered_map<TensorNode<T>*, std::vector<T>> pass;
  pass.reserve(post.size());
  for (TensorNode<T>* n : post) pass.emplace(n, std::vector<T>(n->value.size(), T(0)));
  pass[loss.node().get()][0] = T(1);

  // post is parents-before-children; walk it backwards.
  for (auto it = post.rbegin(); it != post.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (!n->backward) continue;
    GradBuffers<T> pbufs(n->parents.size(), nullptr);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      auto f = pass.find(n->parents[i].get());
      if (f != pass.end()) pbufs[i] = &f->second;
    }
    n->backward(pass[n], pbufs);
  }

  for (TensorNode<T>* n : post) {
    n->ensure_grad();
    const auto& g = pass[n];
    for (size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives
// ---------------------------------------------------------------------------

template <class T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("add", a, b);
  std::vector<T> v(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  return make_op<T>("add", a.shape(), std::move(v), {a, b},
                    [](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      for (int k = 0; k < 2; ++k)
                        if (pg[k])
                          for (size_t i = 0; i < up.size(); ++i) (*pg[k])[i] += up[i];
                    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("sub", a, b);
  std::vector<T> v(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  return make_op<T>("sub", a.shape(), std::move(v), {a, b},
                    [](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (pg[0])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i];
                      if (pg[1])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[1])[i] -= up[i];
                    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("mul", a, b);
  std::vector<T> v(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>("mul", a.shape(), std::move(v), {a, b},
                    [an, bn](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (pg[0])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i] * bn->value[i];
                      if (pg[1])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[1])[i] += up[i] * an->value[i];
                    });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("div", a, b);
  std::vector<T> v(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] / bv[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>("div", a.shape(), std::move(v), {a, b},
                    [an, bn](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (pg[0])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i] / bn->value[i];
                      if (pg[1])
                        for (size_t i = 0; i < up.size(); ++i)
                          (*pg[1])[i] -= up[i] * an->value[i] / (bn->value[i] * bn->value[i]);
                    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * c;
  return make_op<T>("scale", a.shape(), std::move(v), {a},
                    [c](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (pg[0])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i] * c;
                    });
}

template <class T>
Tensor<T> add_const(const Tensor<T>& a, T c) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + c;
  return make_op<T>("add_const", a.shape(), std::move(v), {a},
                    [](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (pg[0])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i];
                    });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * av[i];
  auto an = a.node();
  return make_op<T>("square", a.shape(), std::move(v), {a},
                    [an](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (pg[0])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i] * T(2) * an->value[i];
                    });
}

// Subgradient 0 at x = 0.
template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::abs(av[i]);
  auto an = a.node();
  return make_op<T>("abs", a.shape(), std::move(v), {a},
                    [an](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (!pg[0]) return;
                      for (size_t i = 0; i < up.size(); ++i) {
                        T x = an->value[i];
                        (*pg[0])[i] += up[i] * (x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)));
                      }
                    });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] > 0 ? av[i] : T(0);
  auto an = a.node();
  return make_op<T>("relu", a.shape(), std::move(v), {a},
                    [an](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (!pg[0]) return;
                      for (size_t i = 0; i < up.size(); ++i)
                        if (an->value[i] > 0) (*pg[0])[i] += up[i];
                    });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] > 0 ? av[i] : slope * av[i];
  auto an = a.node();
  return make_op<T>("leaky_relu", a.shape(), std::move(v), {a},
                    [an, slope](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (!pg[0]) return;
                      for (size_t i = 0; i < up.size(); ++i)
                        (*pg[0])[i] += up[i] * (an->value[i] > 0 ? T(1) : slope);
                    });
}

// Reductions accumulate in double regardless of T; cheap, and it keeps
// float32 loss values accurate enough for finite-difference checks.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  double s = 0;
  for (T x : a.data()) s += double(x);
  return make_op<T>("sum", {}, {T(s)}, {a}, [](const std::vector<T>& up, const GradBuffers<T>& pg) {
    if (pg[0])
      for (auto& g : *pg[0]) g += up[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0;
  for (T x : a.data()) s += double(x);
  T inv = T(1) / T(a.size());
  return make_op<T>("mean", {}, {T(s / double(a.size()))}, {a},
                    [inv](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (pg[0])
                        for (auto& g : *pg[0]) g += up[0] * inv;
                    });
}

// Mean of absolute values: the L1 realization used by the cycle loss.
template <class T>
Tensor<T> abs_mean(const Tensor<T>& a) {
  if (a.size() == 0) throw std::invalid_argument("abs_mean: empty tensor");
  double s = 0;
  for (T x : a.data()) s += std::abs(double(x));
  T inv = T(1) / T(a.size());
  auto an = a.node();
  return make_op<T>("abs_mean", {}, {T(s / double(a.size()))}, {a},
                    [an, inv](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (!pg[0]) return;
                      for (size_t i = 0; i < pg[0]->size(); ++i) {
                        T x = an->value[i];
                        (*pg[0])[i] += up[0] * inv * (x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)));
                      }
                    });
}

}  // namespace otus
