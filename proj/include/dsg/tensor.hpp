// Reverse-mode automatic differentiation over dense N-D arrays.
//
// The engine is deliberately small: dense row-major storage, a tape of
// shared nodes, and exactly the operations the networks in this project
// need. Scalar type is a template parameter; training runs float,
// gradient checking runs double.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace dsg {

/// Thrown on dimension/shape violations.
class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a computation produces or detects invalid numerics.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long e : s) {
    if (e < 0) throw ShapeError("negative extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
}

/// Global (thread-local) autodiff recording switch.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// RAII guard that disables graph recording, for inference paths.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void()> backward_fn;

  long numel() const { return static_cast<long>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

/// Handle to a node in the autodiff graph. Copies share the node.
template <class S>
class Tensor {
public:
  using NodePtr = std::shared_ptr<Node<S>>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

  static Tensor full(Shape shape, S v) {
    auto n = std::make_shared<Node<S>>();
    long count = shape_numel(shape);
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(count), v);
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape shape, std::vector<S> data) {
    if (shape_numel(shape) != static_cast<long>(data.size()))
      throw ShapeError("from_data: data length does not match shape " +
                       shape_str(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v) { return full({1}, v); }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  long numel() const { return n_->numel(); }
  long dim(size_t i) const { return n_->shape.at(i); }
  size_t rank() const { return n_->shape.size(); }

  std::vector<S>& values() { return n_->value; }
  const std::vector<S>& values() const { return n_->value; }

  std::vector<S>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<S>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) {
    if (!n_->leaf) throw NumericError("set_requires_grad: not a leaf tensor");
    n_->requires_grad = b;
    if (b) n_->ensure_grad();
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  /// Scalar extraction; requires numel == 1.
  S item() const {
    if (numel() != 1)
      throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
    return n_->value[0];
  }

  Node<S>* node() const { return n_.get(); }
  NodePtr ptr() const { return n_; }

private:
  NodePtr n_;
};

namespace detail {

/// Creates the output node of an operation and, when recording is on and
/// any input requires grad, wires parents and the backward closure.
/// `make_backward` is invoked lazily with the raw output node pointer and
/// must return the closure; it is never called when recording is off.
template <class S, class MakeBackward>
Tensor<S> op_node(const char* op, Shape out_shape, std::vector<S> out_value,
                  std::initializer_list<Tensor<S>> inputs,
                  MakeBackward&& make_backward) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(out_shape);
  n->value = std::move(out_value);
  n->op = op;
  bool need = false;
  if (grad_mode()) {
    for (const auto& t : inputs) need = need || t.node()->requires_grad;
  }
  if (need) {
    n->requires_grad = true;
    n->leaf = false;
    for (const auto& t : inputs) n->parents.push_back(t.ptr());
    n->backward_fn = make_backward(n.get());
  }
  return Tensor<S>(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape only; no general broadcasting)

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return detail::op_node<S>("add", a.shape(), std::move(out), {a, b},
                            [a, b](Node<S>* self) {
    return [a, b, self]() {
      const auto& g = self->grad;
      if (a.node()->requires_grad) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.node()->requires_grad) {
        b.node()->ensure_grad();
        auto& gb = b.node()->grad;
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return detail::op_node<S>("sub", a.shape(), std::move(out), {a, b},
                            [a, b](Node<S>* self) {
    return [a, b, self]() {
      const auto& g = self->grad;
      if (a.node()->requires_grad) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.node()->requires_grad) {
        b.node()->ensure_grad();
        auto& gb = b.node()->grad;
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return detail::op_node<S>("mul", a.shape(), std::move(out), {a, b},
                            [a, b](Node<S>* self) {
    return [a, b, self]() {
      const auto& g = self->grad;
      const auto& av = a.values();
      const auto& bv = b.values();
      if (a.node()->requires_grad) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.node()->requires_grad) {
        b.node()->ensure_grad();
        auto& gb = b.node()->grad;
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    };
  });
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "div");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
  return detail::op_node<S>("div", a.shape(), std::move(out), {a, b},
                            [a, b](Node<S>* self) {
    return [a, b, self]() {
      const auto& g = self->grad;
      const auto& av = a.values();
      const auto& bv = b.values();
      if (a.node()->requires_grad) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
      }
      if (b.node()->requires_grad) {
        b.node()->ensure_grad();
        auto& gb = b.node()->grad;
        for (size_t i = 0; i < g.size(); ++i)
          gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Scalar ops

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  const auto& av = a.values();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
  return detail::op_node<S>("add_scalar", a.shape(), std::move(out), {a},
                            [a](Node<S>* self) {
    return [a, self]() {
      if (!a.node()->requires_grad) return;
      a.node()->ensure_grad();
      auto& ga = a.node()->grad;
      const auto& g = self->grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  });
}

template <class S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  const auto& av = a.values();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
  return detail::op_node<S>("mul_scalar", a.shape(), std::move(out), {a},
                            [a, c](Node<S>* self) {
    return [a, c, self]() {
      if (!a.node()->requires_grad) return;
      a.node()->ensure_grad();
      auto& ga = a.node()->grad;
      const auto& g = self->grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    };
  });
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return mul_scalar(a, S(-1));
}

// ---------------------------------------------------------------------------
// Unary ops

/// |x|; subgradient 0 at x == 0.
template <class S>
Tensor<S> abs_t(const Tensor<S>& a) {
  const auto& av = a.values();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = std::abs(av[i]);
  return detail::op_node<S>("abs", a.shape(), std::move(out), {a},
                            [a](Node<S>* self) {
    return [a, self]() {
      if (!a.node()->requires_grad) return;
      a.node()->ensure_grad();
      auto& ga = a.node()->grad;
      const auto& av = a.values();
      const auto& g = self->grad;
      for (size_t i = 0; i < g.size(); ++i) {
        if (av[i] > S(0))
          ga[i] += g[i];
        else if (av[i] < S(0))
          ga[i] -= g[i];
      }
    };
  });
}

/// max(x, 0); subgradient 0 at x == 0.
template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  const auto& av = a.values();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > S(0) ? av[i] : S(0);
  return detail::op_node<S>("relu", a.shape(), std::move(out), {a},
                            [a](Node<S>* self) {
    return [a, self]() {
      if (!a.node()->requires_grad) return;
      a.node()->ensure_grad();
      auto& ga = a.node()->grad;
      const auto& av = a.values();
      const auto& g = self->grad;
      for (size_t i = 0; i < g.size(); ++i)
        if (av[i] > S(0)) ga[i] += g[i];
    };
  });
}

/// PReLU with one learnable slope per channel. `x` is [N,C,...], `slope` is [C].
template <class S>
Tensor<S> prelu(const Tensor<S>& x, const Tensor<S>& slope) {
  if (x.rank() < 2) throw ShapeError("prelu: input rank must be >= 2");
  const long C = x.dim(1);
  if (slope.rank() != 1 || slope.dim(0) != C)
    throw ShapeError("prelu: slope must be [C] with C = " + std::to_string(C));
  const long N = x.dim(0);
  long inner = 1;
  for (size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  const auto& xv = x.values();
  const auto& av = slope.values();
  std::vector<S> out(xv.size());
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c) {
      const S a = av[c];
      const size_t base = static_cast<size_t>((n * C + c) * inner);
      for (long i = 0; i < inner; ++i) {
        const S v = xv[base + i];
        out[base + i] = v > S(0) ? v : a * v;
      }
    }
  return detail::op_node<S>("prelu", x.shape(), std::move(out), {x, slope},
                            [x, slope, N, C, inner](Node<S>* self) {
    return [x, slope, N, C, inner, self]() {
      const auto& g = self->grad;
      const auto& xv = x.values();
      const auto& av = slope.values();
      if (x.node()->requires_grad) {
        x.node()->ensure_grad();
        auto& gx = x.node()->grad;
        for (long n = 0; n < N; ++n)
          for (long c = 0; c < C; ++c) {
            const S a = av[c];
            const size_t base = static_cast<size_t>((n * C + c) * inner);
            for (long i = 0; i < inner; ++i) {
              const S v = xv[base + i];
              gx[base + i] += g[base + i] * (v > S(0) ? S(1) : a);
            }
          }
      }
      if (slope.node()->requires_grad) {
        slope.node()->ensure_grad();
        auto& ga = slope.node()->grad;
        for (long c = 0; c < C; ++c) {
          S acc = 0;
          for (long n = 0; n < N; ++n) {
            const size_t base = static_cast<size_t>((n * C + c) * inner);
            for (long i = 0; i < inner; ++i) {
              const S v = xv[base + i];
              if (v <= S(0)) acc += g[base + i] * v;
            }
          }
          ga[c] += acc;
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  const auto& av = a.values();
  S s = 0;
  for (S v : av) s += v;
  return detail::op_node<S>("sum", Shape{1}, std::vector<S>{s}, {a},
                            [a](Node<S>* self) {
    return [a, self]() {
      if (!a.node()->requires_grad) return;
      a.node()->ensure_grad();
      auto& ga = a.node()->grad;
      const S g = self->grad[0];
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  });
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
  const auto& av = a.values();
  S s = 0;
  for (S v : av) s += v;
  const S inv = S(1) / static_cast<S>(av.size());
  return detail::op_node<S>("mean", Shape{1}, std::vector<S>{s * inv}, {a},
                            [a, inv](Node<S>* self) {
    return [a, inv, self]() {
      if (!a.node()->requires_grad) return;
      a.node()->ensure_grad();
      auto& ga = a.node()->grad;
      const S g = self->grad[0] * inv;
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  });
}

/// Sums over batch and spatial axes, keeping the channel axis: [N,C,...] -> [C].
template <class S>
Tensor<S> sum_per_channel(const Tensor<S>& a) {
  if (a.rank() < 2) throw ShapeError("sum_per_channel: input rank must be >= 2");
  const long N = a.dim(0), C = a.dim(1);
  long inner = 1;
  for (size_t i = 2; i < a.rank(); ++i) inner *= a.dim(i);
  const auto& av = a.values();
  std::vector<S> out(static_cast<size_t>(C), S(0));
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c) {
      const size_t base = static_cast<size_t>((n * C + c) * inner);
      S acc = 0;
      for (long i = 0; i < inner; ++i) acc += av[base + i];
      out[static_cast<size_t>(c)] += acc;
    }
  return detail::op_node<S>("sum_per_channel", Shape{C}, std::move(out), {a},
                            [a, N, C, inner](Node<S>* self) {
    return [a, N, C, inner, self]() {
      if (!a.node()->requires_grad) return;
      a.node()->ensure_grad();
      auto& ga = a.node()->grad;
      const auto& g = self->grad;
      for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
          const size_t base = static_cast<size_t>((n * C + c) * inner);
          const S gc = g[static_cast<size_t>(c)];
          for (long i = 0; i < inner; ++i) ga[base + i] += gc;
        }
    };
  });
}

/// Slice of a rank-1 tensor: elements [c0, c1).
template <class S>
Tensor<S> slice_vec(const Tensor<S>& a, long c0, long c1) {
  if (a.rank() != 1) throw ShapeError("slice_vec: rank-1 tensor required");
  if (c0 < 0 || c1 > a.dim(0) || c0 >= c1)
    throw ShapeError("slice_vec: invalid range");
  const auto& av = a.values();
  std::vector<S> out(av.begin() + c0, av.begin() + c1);
  return detail::op_node<S>("slice", Shape{c1 - c0}, std::move(out), {a},
                            [a, c0, c1](Node<S>* self) {
    return [a, c0, c1, self]() {
      if (!a.node()->requires_grad) return;
      a.node()->ensure_grad();
      auto& ga = a.node()->grad;
      const auto& g = self->grad;
      for (long i = 0; i < c1 - c0; ++i) ga[static_cast<size_t>(c0 + i)] += g[static_cast<size_t>(i)];
    };
  });
}

// ---------------------------------------------------------------------------
// Structure ops

/// Concatenation along the channel axis of [N,C,...] tensors.
template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != b.rank() || a.rank() < 2)
    throw ShapeError("concat_channels: rank mismatch");
  Shape sa = a.shape(), sb = b.shape();
  for (size_t i = 0; i < sa.size(); ++i)
    if (i != 1 && sa[i] != sb[i])
      throw ShapeError("concat_channels: non-channel extents differ " +
                       shape_str(sa) + " vs " + shape_str(sb));
  const long N = sa[0], Ca = sa[1], Cb = sb[1];
  long inner = 1;
  for (size_t i = 2; i < sa.size(); ++i) inner *= sa[i];
  Shape out_shape = sa;
  out_shape[1] = Ca + Cb;
  std::vector<S> out(static_cast<size_t>(shape_numel(out_shape)));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (long n = 0; n < N; ++n) {
    std::copy(av.begin() + n * Ca * inner, av.begin() + (n + 1) * Ca * inner,
              out.begin() + n * (Ca + Cb) * inner);
    std::copy(bv.begin() + n * Cb * inner, bv.begin() + (n + 1) * Cb * inner,
              out.begin() + n * (Ca + Cb) * inner + Ca * inner);
  }
  return detail::op_node<S>("concat", std::move(out_shape), std::move(out),
                            {a, b}, [a, b, N, Ca, Cb, inner](Node<S>* self) {
    return [a, b, N, Ca, Cb, inner, self]() {
      const auto& g = self->grad;
      if (a.node()->requires_grad) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (long n = 0; n < N; ++n) {
          const size_t src = static_cast<size_t>(n * (Ca + Cb) * inner);
          const size_t dst = static_cast<size_t>(n * Ca * inner);
          for (long i = 0; i < Ca * inner; ++i) ga[dst + i] += g[src + i];
        }
      }
      if (b.node()->requires_grad) {
        b.node()->ensure_grad();
        auto& gb = b.node()->grad;
        for (long n = 0; n < N; ++n) {
          const size_t src = static_cast<size_t>(n * (Ca + Cb) * inner + Ca * inner);
          const size_t dst = static_cast<size_t>(n * Cb * inner);
          for (long i = 0; i < Cb * inner; ++i) gb[dst + i] += g[src + i];
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Softmax over the channel axis

/// Numerically stable softmax across axis 1 of [N,C,...]; per-voxel simplex.
template <class S>
Tensor<S> softmax_channels(const Tensor<S>& x) {
  if (x.rank() < 2) throw ShapeError("softmax_channels: input rank must be >= 2");
  const long N = x.dim(0), C = x.dim(1);
  long inner = 1;
  for (size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  const auto& xv = x.values();
  std::vector<S> out(xv.size());
  for (long n = 0; n < N; ++n)
    for (long i = 0; i < inner; ++i) {
      const size_t base = static_cast<size_t>(n * C * inner + i);
      S mx = xv[base];
      for (long c = 1; c < C; ++c)
        mx = std::max(mx, xv[base + static_cast<size_t>(c * inner)]);
      S sum = 0;
      for (long c = 0; c < C; ++c) {
        const S e = std::exp(xv[base + static_cast<size_t>(c * inner)] - mx);
        out[base + static_cast<size_t>(c * inner)] = e;
        sum += e;
      }
      const S inv = S(1) / sum;
      for (long c = 0; c < C; ++c) out[base + static_cast<size_t>(c * inner)] *= inv;
    }
  return detail::op_node<S>("softmax_channels", x.shape(), std::move(out),
                            {x}, [x, N, C, inner](Node<S>* self) {
    return [x, N, C, inner, self]() {
      if (!x.node()->requires_grad) return;
      x.node()->ensure_grad();
      auto& gx = x.node()->grad;
      const auto& p = self->value;
      const auto& g = self->grad;
      for (long n = 0; n < N; ++n)
        for (long i = 0; i < inner; ++i) {
          const size_t base = static_cast<size_t>(n * C * inner + i);
          S dot = 0;
          for (long c = 0; c < C; ++c) {
            const size_t k = base + static_cast<size_t>(c * inner);
            dot += p[k] * g[k];
          }
          for (long c = 0; c < C; ++c) {
            const size_t k = base + static_cast<size_t>(c * inner);
            gx[k] += p[k] * (g[k] - dot);
          }
        }
    };
  });
}

// ---------------------------------------------------------------------------
// Backward pass

/// Accumulates gradients of a scalar loss into every reachable leaf with
/// requires_grad set. Non-leaf gradients are reset per call, so repeated
/// calls accumulate additively into leaves.
template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1)
    throw NumericError("backward: loss must be scalar, shape " +
                       shape_str(loss.shape()));
  Node<S>* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS for a reverse topological order.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<S>* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<S>* n : order) {
    n->ensure_grad();
    if (!n->leaf) std::fill(n->grad.begin(), n->grad.end(), S(0));
  }
  root->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn();
}

/// Counts nodes with the given op tag in the graph below `t` (inclusive).
template <class S>
long count_ops(const Tensor<S>& t, const std::string& op) {
  long count = 0;
  std::unordered_set<Node<S>*> visited;
  std::vector<Node<S>*> stack{t.node()};
  visited.insert(t.node());
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    if (op == n->op) ++count;
    for (auto& p : n->parents)
      if (visited.insert(p.get()).second) stack.push_back(p.get());
  }
  return count;
}

}  // namespace dsg
