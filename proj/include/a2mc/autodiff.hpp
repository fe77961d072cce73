#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "a2mc/error.hpp"
#include "a2mc/tensor.hpp"

namespace a2mc {

template <typename T>
class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
// lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t numel() const { return value().numel(); }
  T item() const { return value().item(); }

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode record. Nodes are appended in evaluation order, so ids are a
// topological order and backward is a single reverse sweep.
template <typename T>
class Tape {
 public:
  // Receives the tape, the node's own id (to read its saved output) and the
  // incoming gradient.
  using BackwardFn = std::function<void(Tape&, std::size_t self, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    check_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), {}, false, requires_grad, true, "leaf", nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Appends an op result. The backward rule is dropped when no input needs a
  // gradient.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn fn) {
    check_finite(value, op);
    bool needs = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError(std::string(op) + ": inputs from another tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, false, needs, false, op, needs ? std::move(fn) : nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn fn) {
    check_finite(value, op);
    bool needs = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError(std::string(op) + ": inputs from another tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, false, needs, false, op, needs ? std::move(fn) : nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id()).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id()).requires_grad; }

  // Gradient accumulator for node `id`, or nullptr when the node does not
  // take part in differentiation.
  Tensor<T>* grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros(n.value.shape());
      n.has_grad = true;
    }
    return &n.grad;
  }

  void backward(Var<T> loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    const Node& root = nodes_.at(loss.id());
    if (root.value.numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " +
                          shape_string(root.value.shape()));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    if (Tensor<T>* g = grad_slot(loss.id())) (*g)[0] = T{1};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, i, n.grad);
    }
  }

  // Gradient of the last backward() loss with respect to v; zeros when v was
  // not reached.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id());
    if (!n.has_grad) return Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  bool is_leaf(Var<T> v) const { return nodes_.at(v.id()).is_leaf; }
  std::string_view op_name(Var<T> v) const { return nodes_.at(v.id()).op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad;
    bool requires_grad;
    bool is_leaf;
    std::string_view op;
    BackwardFn backward;
  };

  static void check_finite(const Tensor<T>& v, std::string_view op) {
    if (!v.all_finite()) {
      throw NumericDomainError("non-finite value produced by " + std::string(op) + " " +
                               shape_string(v.shape()));
    }
  }

  std::deque<Node> nodes_;
};

namespace detail {

template <typename T>
void require_matrix(const Var<T>& a, std::string_view op) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_string(a.shape()));
  }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// C(m x n) += A(m x k) * B(k x n)
template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c.data() + i * n;
    const T* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C(m x k) += G(m x n) * B(k x n)^T
template <typename T>
void gemm_nt(std::span<const T> g, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* gi = g.data() + i * n;
    T* ci = c.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b.data() + p * n;
      T s{0};
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// C(k x n) += A(m x k)^T * G(m x n)
template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> g, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a.data() + i * k;
    const T* gi = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{0}) continue;
      T* cp = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear ops

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor<T> out({m, n});
  detail::gemm_nn<T>(a.value().data(), b.value().data(), out.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b},
                         [ia, ib, m, k, n](Tape<T>& t, std::size_t, const Tensor<T>& g) {
                           if (auto* ga = t.grad_slot(ia))
                             detail::gemm_nt<T>(g.data(), t.value(ib).data(), ga->data(), m, n, k);
                           if (auto* gb = t.grad_slot(ib))
                             detail::gemm_tn<T>(t.value(ia).data(), g.data(), gb->data(), m, k, n);
                         });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    if (auto* ga = t.grad_slot(ia)) axpy(T{1}, g, *ga);
    if (auto* gb = t.grad_slot(ib)) axpy(T{1}, g, *gb);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    if (auto* ga = t.grad_slot(ia)) axpy(T{1}, g, *ga);
    if (auto* gb = t.grad_slot(ib)) axpy(T{-1}, g, *gb);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record("scale", std::move(out), {a}, [ia, s](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    if (auto* ga = t.grad_slot(ia)) axpy(s, g, *ga);
  });
}

// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    if (auto* ga = t.grad_slot(ia)) {
      const auto& bv = t.value(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (auto* gb = t.grad_slot(ib)) {
      const auto& av = t.value(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

// a (m x n) + row (1 x n) broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  detail::require_matrix(a, "add_row");
  detail::require_matrix(row, "add_row");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (row.shape()[0] != 1 || row.shape()[1] != n) {
    throw DimensionError("add_row: row shape " + shape_string(row.shape()) + " does not broadcast over " +
                         shape_string(a.shape()));
  }
  Tensor<T> out = a.value();
  const auto& rv = row.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += rv[j];
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record("add_row", std::move(out), {a, row},
                         [ia, ir, m, n](Tape<T>& t, std::size_t, const Tensor<T>& g) {
                           if (auto* ga = t.grad_slot(ia)) axpy(T{1}, g, *ga);
                           if (auto* gr = t.grad_slot(ir)) {
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) (*gr)[j] += g.at(i, j);
                           }
                         });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::require_matrix(p, "concat");
  const std::size_t other = 1 - axis;
  const std::size_t fixed = parts[0].shape()[other];
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.shape()[other] != fixed) {
      throw DimensionError("concat: shape " + shape_string(p.shape()) + " incompatible with " +
                           shape_string(parts[0].shape()) + " along axis " + std::to_string(axis));
    }
    total += p.shape()[axis];
  }
  Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  Tensor<T> out(shape);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    const std::size_t r = v.shape()[0], c = v.shape()[1];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        if (axis == 0)
          out.at(off + i, j) = v.at(i, j);
        else
          out.at(i, off + j) = v.at(i, j);
      }
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.shape()[axis];
  }
  return parts[0].tape().record(
      "concat", std::move(out), parts,
      [ids = std::move(ids), offsets = std::move(offsets), axis](Tape<T>& t, std::size_t, const Tensor<T>& g) {
        for (std::size_t p = 0; p < ids.size(); ++p) {
          auto* gp = t.grad_slot(ids[p]);
          if (!gp) continue;
          const std::size_t r = gp->shape()[0], c = gp->shape()[1];
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              gp->at(i, j) += axis == 0 ? g.at(offsets[p] + i, j) : g.at(i, offsets[p] + j);
        }
      });
}

// Half-open range [begin, end) along `axis` of a matrix.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice");
  if (axis > 1 || begin >= end || end > a.shape()[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " invalid for " +
                         shape_string(a.shape()));
  }
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const std::size_t orows = axis == 0 ? end - begin : r;
  const std::size_t ocols = axis == 1 ? end - begin : c;
  Tensor<T> out({orows, ocols});
  const auto& av = a.value();
  const std::size_t r0 = axis == 0 ? begin : 0, c0 = axis == 1 ? begin : 0;
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j) out.at(i, j) = av.at(r0 + i, c0 + j);
  const std::size_t ia = a.id();
  return a.tape().record("slice", std::move(out), {a},
                         [ia, r0, c0, orows, ocols](Tape<T>& t, std::size_t, const Tensor<T>& g) {
                           if (auto* ga = t.grad_slot(ia))
                             for (std::size_t i = 0; i < orows; ++i)
                               for (std::size_t j = 0; j < ocols; ++j) ga->at(r0 + i, c0 + j) += g.at(i, j);
                         });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out({c, r});
  const auto& av = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const std::size_t ia = a.id();
  return a.tape().record("transpose", std::move(out), {a}, [ia, r, c](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    if (auto* ga = t.grad_slot(ia))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += g.at(j, i);
  });
}

// Same elements in row-major order under a new 2-D shape.
template <typename T>
Var<T> reshape(const Var<T>& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as [" + std::to_string(rows) + ", " +
                         std::to_string(cols) + "]");
  }
  const std::size_t ia = a.id();
  return a.tape().record("reshape", a.value().reshaped({rows, cols}), {a},
                         [ia](Tape<T>& t, std::size_t, const Tensor<T>& g) {
                           if (auto* ga = t.grad_slot(ia))
                             for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
                         });
}

// Value copy that blocks gradient flow.
template <typename T>
Var<T> detach(const Var<T>& a) {
  return a.tape().constant(a.value());
}

// ---------------------------------------------------------------------------
// Nonlinear ops

namespace detail {

// Elementwise op whose derivative is expressed through the input value x and
// the output value y.
template <typename T, typename F, typename D>
Var<T> elementwise(const Var<T>& a, std::string_view op, F&& f, D&& dfdx) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = f(v);
  const std::size_t ia = a.id();
  return a.tape().record(op, std::move(out), {a},
                         [ia, dfdx](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                           auto* ga = t.grad_slot(ia);
                           if (!ga) return;
                           const auto& x = t.value(ia);
                           const auto& y = t.value(self);
                           for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * dfdx(x[i], y[i]);
                         });
}

}  // namespace detail

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return detail::elementwise(
      a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::elementwise(
      a, "sigmoid",
      [](T x) {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return detail::elementwise(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  for (T v : a.value().data()) {
    if (!(v > T{0})) throw NumericDomainError("log: non-positive input " + std::to_string(v));
  }
  return detail::elementwise(
      a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::elementwise(
      a, "relu", [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

// Sum of all elements as a 1 x 1 tensor.
template <typename T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (T v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor<T>::scalar(s), {a}, [ia](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    if (auto* ga = t.grad_slot(ia))
      for (auto& v : ga->data()) v += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.numel());
  return scale(sum(a), T{1} / n);
}

// Full inner product of two equally shaped tensors, 1 x 1.
template <typename T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "dot");
  const auto& av = a.value();
  const auto& bv = b.value();
  T s{0};
  for (std::size_t i = 0; i < av.numel(); ++i) s += av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("dot", Tensor<T>::scalar(s), {a, b},
                         [ia, ib](Tape<T>& t, std::size_t, const Tensor<T>& g) {
                           if (auto* ga = t.grad_slot(ia)) axpy(g[0], t.value(ib), *ga);
                           if (auto* gb = t.grad_slot(ib)) axpy(g[0], t.value(ia), *gb);
                         });
}

// Euclidean norm of the whole tensor, 1 x 1. The gradient at the origin is
// taken as zero.
template <typename T>
Var<T> l2_norm(const Var<T>& a) {
  const T n = frobenius_norm(a.value());
  const std::size_t ia = a.id();
  return a.tape().record("l2_norm", Tensor<T>::scalar(n), {a},
                         [ia](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                           auto* ga = t.grad_slot(ia);
                           const T norm = t.value(self)[0];
                           if (!ga || norm == T{0}) return;
                           axpy(g[0] / norm, t.value(ia), *ga);
                         });
}

namespace detail {

template <typename T>
void check_tau(T tau, std::string_view op) {
  if (!(tau > T{0})) throw ConfigError(std::string(op) + ": temperature must be positive");
}

}  // namespace detail

// Row-wise softmax of logits / tau with max subtraction.
template <typename T>
Var<T> softmax_t(const Var<T>& logits, T tau) {
  detail::check_tau(tau, "softmax_t");
  detail::require_matrix(logits, "softmax_t");
  const std::size_t r = logits.shape()[0], c = logits.shape()[1];
  Tensor<T> out = logits.value();
  for (std::size_t i = 0; i < r; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, out.at(i, j));
    T z{0};
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp((out.at(i, j) - mx) / tau);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  const std::size_t ia = logits.id();
  return logits.tape().record("softmax_t", std::move(out), {logits},
                              [ia, r, c, tau](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                                auto* ga = t.grad_slot(ia);
                                if (!ga) return;
                                const auto& y = t.value(self);
                                for (std::size_t i = 0; i < r; ++i) {
                                  T gy{0};
                                  for (std::size_t j = 0; j < c; ++j) gy += g.at(i, j) * y.at(i, j);
                                  for (std::size_t j = 0; j < c; ++j)
                                    ga->at(i, j) += y.at(i, j) * (g.at(i, j) - gy) / tau;
                                }
                              });
}

// Row-wise log(softmax(logits / tau)) via log-sum-exp.
template <typename T>
Var<T> log_softmax_t(const Var<T>& logits, T tau) {
  detail::check_tau(tau, "log_softmax_t");
  detail::require_matrix(logits, "log_softmax_t");
  const std::size_t r = logits.shape()[0], c = logits.shape()[1];
  Tensor<T> out = logits.value();
  for (std::size_t i = 0; i < r; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, out.at(i, j));
    T z{0};
    for (std::size_t j = 0; j < c; ++j) z += std::exp((out.at(i, j) - mx) / tau);
    const T lse = std::log(z);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = (out.at(i, j) - mx) / tau - lse;
  }
  const std::size_t ia = logits.id();
  return logits.tape().record("log_softmax_t", std::move(out), {logits},
                              [ia, r, c, tau](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                                auto* ga = t.grad_slot(ia);
                                if (!ga) return;
                                const auto& y = t.value(self);
                                for (std::size_t i = 0; i < r; ++i) {
                                  T gs{0};
                                  for (std::size_t j = 0; j < c; ++j) gs += g.at(i, j);
                                  for (std::size_t j = 0; j < c; ++j)
                                    ga->at(i, j) += (g.at(i, j) - std::exp(y.at(i, j)) * gs) / tau;
                                }
                              });
}

inline constexpr double kMinNormalizeNorm = 1e-12;

// Scales every row to unit Euclidean norm.
template <typename T>
Var<T> l2_normalize(const Var<T>& a) {
  detail::require_matrix(a, "l2_normalize");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out = a.value();
  std::vector<T> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    T s{0};
    for (std::size_t j = 0; j < c; ++j) s += out.at(i, j) * out.at(i, j);
    norms[i] = std::sqrt(s);
    if (!(static_cast<double>(norms[i]) > kMinNormalizeNorm)) {
      throw DegenerateInputError("l2_normalize: row " + std::to_string(i) + " has near-zero norm");
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= norms[i];
  }
  const std::size_t ia = a.id();
  return a.tape().record("l2_normalize", std::move(out), {a},
                         [ia, r, c, norms = std::move(norms)](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                           auto* ga = t.grad_slot(ia);
                           if (!ga) return;
                           const auto& y = t.value(self);
                           for (std::size_t i = 0; i < r; ++i) {
                             T gy{0};
                             for (std::size_t j = 0; j < c; ++j) gy += g.at(i, j) * y.at(i, j);
                             for (std::size_t j = 0; j < c; ++j)
                               ga->at(i, j) += (g.at(i, j) - y.at(i, j) * gy) / norms[i];
                           }
                         });
}

}  // namespace a2mc
