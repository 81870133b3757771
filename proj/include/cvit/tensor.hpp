#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cvit/common.hpp"

namespace cvit {

// Reverse-mode autodiff over dense row-major tensors. A TensorT is a cheap
// handle to a shared node; ops build a graph of nodes, backward() walks it.
// Copying a TensorT aliases storage — weight sharing relies on this.
//
// Activations are NCHW. Data is contiguous row-major; that layout is an
// internal invariant, not user-visible.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first needed; same length as data after
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;  // set only on requiring op nodes

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& v) {
  for (const T& x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericalError(std::string(op) +
                           " produced a non-finite value in layer " +
                           current_layer_path());
    }
  }
}

template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static TensorT zeros(Shape shape) {
    return from_data_impl(std::move(shape), {}, true);
  }
  static TensorT full(Shape shape, T value) {
    TensorT t = zeros(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }
  static TensorT from_data(Shape shape, std::vector<T> values) {
    return from_data_impl(std::move(shape), std::move(values), false);
  }
  static TensorT scalar(T value) { return full({1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->data.size(); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  const std::vector<T>& grad() const {
    if (!has_grad())
      throw ContractError("grad accessed before any backward pass");
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.assign(node_->data.size(), T(0));
  }

  // Identity of the underlying storage; equal ids mean shared weights.
  const void* storage_id() const { return node_.get(); }
  std::shared_ptr<Node<T>> node() const { return node_; }

  // Accumulates d(loss)/d(leaf) into every requiring leaf's grad. Repeated
  // calls without zero_grad() accumulate; intermediate grads are scratch.
  void backward() const {
    if (!node_) throw ContractError("backward: tensor is empty");
    if (numel() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_str(shape()));
    if (!node_->requires_grad)
      throw ContractError(
          "backward: no requires_grad leaves reachable from loss");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& top = stack.back();
      Node<T>* n = top.first;
      if (top.second < n->parents.size()) {
        Node<T>* p = n->parents[top.second++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    for (Node<T>* n : order) {
      if (n->backward_fn)
        n->grad.assign(n->data.size(), T(0));
      else
        n->ensure_grad();
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

 private:
  static TensorT from_data_impl(Shape shape, std::vector<T> values,
                                bool fill_zero) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0)
        throw DimensionError("tensor extents must be positive, got shape " +
                             shape_str(shape));
      n *= d;
    }
    if (fill_zero) values.assign(n, T(0));
    if (values.size() != n)
      throw DimensionError("tensor data length " +
                           std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    return TensorT(std::move(node));
  }

  std::shared_ptr<Node<T>> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

template <typename T>
TensorT<T> make_op(const char* op, Shape shape, std::vector<T> data,
                   std::vector<TensorT<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  check_finite(op, data);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool req = false;
  for (const auto& p : parents) {
    node->parents.push_back(p.node());
    req = req || p.requires_grad();
  }
  if (req) {
    node->requires_grad = true;
    node->backward_fn = std::move(backward);
  }
  return TensorT<T>(std::move(node));
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

// Exact shape match, or rhs broadcast over lhs's leading dim when
// rhs.shape == lhs.shape[1:].
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool same = sa == sb;
  const bool bcast =
      !same && sa.size() == sb.size() + 1 &&
      std::equal(sa.begin() + 1, sa.end(), sb.begin(), sb.end());
  if (!same && !bcast)
    throw DimensionError("elementwise_add: incompatible shapes " +
                         shape_str(sa) + " and " + shape_str(sb));

  std::vector<T> out = a.data();
  const std::size_t bn = b.numel();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % bn];
  }

  Node<T>* an = a.node().get();
  Node<T>* bn_ = b.node().get();
  return detail::make_op<T>(
      "add", sa, std::move(out), {a, b}, [an, bn_, same, bn](Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (bn_->requires_grad) {
          bn_->ensure_grad();
          if (same) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
              bn_->grad[i] += self.grad[i];
          } else {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
              bn_->grad[i % bn] += self.grad[i];
          }
        }
      });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] * b.data()[i];
  Node<T>* an = a.node().get();
  Node<T>* bn = b.node().get();
  return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b},
                            [an, bn](Node<T>& self) {
                              if (an->requires_grad) {
                                an->ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  an->grad[i] += self.grad[i] * bn->data[i];
                              }
                              if (bn->requires_grad) {
                                bn->ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  bn->grad[i] += self.grad[i] * an->data[i];
                              }
                            });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T s) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
  Node<T>* xn = x.node().get();
  return detail::make_op<T>("scale", x.shape(), std::move(out), {x},
                            [xn, s](Node<T>& self) {
                              xn->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                xn->grad[i] += self.grad[i] * s;
                            });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return add(a, scale(b, T(-1)));
}

// Subgradient at exactly 0 is 0.
template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  Node<T>* xn = x.node().get();
  return detail::make_op<T>("relu", x.shape(), std::move(out), {x},
                            [xn](Node<T>& self) {
                              xn->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                if (xn->data[i] > T(0))
                                  xn->grad[i] += self.grad[i];
                            });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
  Node<T>* xn = x.node().get();
  return detail::make_op<T>(
      "sigmoid", x.shape(), std::move(out), {x}, [xn](Node<T>& self) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T y = self.data[i];
          xn->grad[i] += self.grad[i] * y * (T(1) - y);
        }
      });
}

// Rows are the trailing dimension; each output row sums to 1.
template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
  if (x.rank() == 0 || x.numel() == 0)
    throw DimensionError("softmax_lastdim: empty tensor");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * cols;
    T* o = out.data() + r * cols;
    T m = in[0];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, in[c]);
    T denom = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - m);
      denom += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= denom;
  }
  Node<T>* xn = x.node().get();
  return detail::make_op<T>(
      "softmax", x.shape(), std::move(out), {x},
      [xn, rows, cols](Node<T>& self) {
        xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = self.data.data() + r * cols;
          const T* g = self.grad.data() + r * cols;
          T dot = T(0);
          for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
          T* gx = xn->grad.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c)
            gx[c] += y[c] * (g[c] - dot);
        }
      });
}

// ---- matmul family ---------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = pa[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * pb[kk * n + j];
    }
  Node<T>* an = a.node().get();
  Node<T>* bn = b.node().get();
  return detail::make_op<T>(
      "matmul", {m, n}, std::move(out), {a, b},
      [an, bn, m, k, n](Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          // dA = dC * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const T g = self.grad[i * n + j];
              for (std::size_t kk = 0; kk < k; ++kk)
                an->grad[i * k + kk] += g * bn->data[kk * n + j];
            }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          // dB = A^T * dC
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              const T av = an->data[i * k + kk];
              for (std::size_t j = 0; j < n; ++j)
                bn->grad[kk * n + j] += av * self.grad[i * n + j];
            }
        }
      });
}

template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(B * m * n, T(0));
  for (std::size_t bi = 0; bi < B; ++bi) {
    const T* pa = a.data().data() + bi * m * k;
    const T* pb = b.data().data() + bi * k * n;
    T* po = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T av = pa[i * k + kk];
        for (std::size_t j = 0; j < n; ++j) po[i * n + j] += av * pb[kk * n + j];
      }
  }
  Node<T>* an = a.node().get();
  Node<T>* bn = b.node().get();
  return detail::make_op<T>(
      "bmm", {B, m, n}, std::move(out), {a, b},
      [an, bn, B, m, k, n](Node<T>& self) {
        for (std::size_t bi = 0; bi < B; ++bi) {
          const T* pa = an->data.data() + bi * m * k;
          const T* pb = bn->data.data() + bi * k * n;
          const T* pg = self.grad.data() + bi * m * n;
          if (an->requires_grad) {
            an->ensure_grad();
            T* ga = an->grad.data() + bi * m * k;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) {
                const T g = pg[i * n + j];
                for (std::size_t kk = 0; kk < k; ++kk)
                  ga[i * k + kk] += g * pb[kk * n + j];
              }
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            T* gb = bn->grad.data() + bi * k * n;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t kk = 0; kk < k; ++kk) {
                const T av = pa[i * k + kk];
                for (std::size_t j = 0; j < n; ++j)
                  gb[kk * n + j] += av * pg[i * n + j];
              }
          }
        }
      });
}

template <typename T>
TensorT<T> transpose_last2(const TensorT<T>& x) {
  if (x.rank() < 2)
    throw DimensionError("transpose_last2: needs rank >= 2, got " +
                         shape_str(x.shape()));
  Shape s = x.shape();
  const std::size_t a = s[s.size() - 2], b = s[s.size() - 1];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  const std::size_t batch = x.numel() / (a * b);
  std::vector<T> out(x.numel());
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T* in = x.data().data() + bi * a * b;
    T* o = out.data() + bi * a * b;
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) o[j * a + i] = in[i * b + j];
  }
  Node<T>* xn = x.node().get();
  return detail::make_op<T>(
      "transpose", std::move(s), std::move(out), {x},
      [xn, batch, a, b](Node<T>& self) {
        xn->ensure_grad();
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T* g = self.grad.data() + bi * a * b;
          T* gx = xn->grad.data() + bi * a * b;
          for (std::size_t i = 0; i < a; ++i)
            for (std::size_t j = 0; j < b; ++j) gx[i * b + j] += g[j * a + i];
        }
      });
}

// ---- structural ------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(shape));
  Node<T>* xn = x.node().get();
  return detail::make_op<T>("reshape", std::move(shape),
                            std::vector<T>(x.data()), {x},
                            [xn](Node<T>& self) {
                              xn->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                xn->grad[i] += self.grad[i];
                            });
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, std::size_t c0, std::size_t c1) {
  if (x.rank() != 4)
    throw DimensionError("slice_channels: expected NCHW, got " +
                         shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 >= c1 || c1 > C)
    throw DimensionError("slice_channels: range [" + std::to_string(c0) +
                         ", " + std::to_string(c1) + ") out of " +
                         std::to_string(C) + " channels");
  const std::size_t Cs = c1 - c0, hw = H * W;
  std::vector<T> out(N * Cs * hw);
  for (std::size_t n = 0; n < N; ++n)
    std::copy(x.data().begin() + (n * C + c0) * hw,
              x.data().begin() + (n * C + c1) * hw,
              out.begin() + n * Cs * hw);
  Node<T>* xn = x.node().get();
  return detail::make_op<T>(
      "slice_channels", {N, Cs, H, W}, std::move(out), {x},
      [xn, N, C, c0, Cs, hw](Node<T>& self) {
        xn->ensure_grad();
        for (std::size_t n = 0; n < N; ++n) {
          const T* g = self.grad.data() + n * Cs * hw;
          T* gx = xn->grad.data() + (n * C + c0) * hw;
          for (std::size_t i = 0; i < Cs * hw; ++i) gx[i] += g[i];
        }
      });
}

// Channel-contiguous partition in order; concat of the result reproduces x.
template <typename T>
std::vector<TensorT<T>> split_channels(const TensorT<T>& x, std::size_t n) {
  if (x.rank() != 4)
    throw DimensionError("split_channels: expected NCHW, got " +
                         shape_str(x.shape()));
  if (n < 1) throw ContractError("split_channels: chunk count must be >= 1");
  const std::size_t C = x.dim(1);
  if (C % n != 0)
    throw DivisibilityError("split_channels: " + std::to_string(C) +
                            " channels not divisible by " + std::to_string(n) +
                            " chunks");
  const std::size_t step = C / n;
  std::vector<TensorT<T>> parts;
  parts.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    parts.push_back(slice_channels(x, i * step, (i + 1) * step));
  return parts;
}

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const std::size_t N = parts[0].dim(0), H = parts[0].dim(2),
                    W = parts[0].dim(3);
  std::size_t C = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
      throw DimensionError("concat_channels: mismatched part shape " +
                           shape_str(p.shape()));
    C += p.dim(1);
  }
  const std::size_t hw = H * W;
  std::vector<T> out(N * C * hw);
  std::size_t c_off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    for (std::size_t n = 0; n < N; ++n)
      std::copy(p.data().begin() + n * pc * hw,
                p.data().begin() + (n + 1) * pc * hw,
                out.begin() + (n * C + c_off) * hw);
    c_off += pc;
  }
  std::vector<Node<T>*> pn;
  std::vector<std::size_t> pcs;
  for (const auto& p : parts) {
    pn.push_back(p.node().get());
    pcs.push_back(p.dim(1));
  }
  return detail::make_op<T>(
      "concat_channels", {N, C, H, W}, std::move(out), parts,
      [pn, pcs, N, C, hw](Node<T>& self) {
        std::size_t c_off = 0;
        for (std::size_t pi = 0; pi < pn.size(); ++pi) {
          const std::size_t pc = pcs[pi];
          if (pn[pi]->requires_grad) {
            pn[pi]->ensure_grad();
            for (std::size_t n = 0; n < N; ++n) {
              const T* g = self.grad.data() + (n * C + c_off) * hw;
              T* gp = pn[pi]->grad.data() + n * pc * hw;
              for (std::size_t i = 0; i < pc * hw; ++i) gp[i] += g[i];
            }
          }
          c_off += pc;
        }
      });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T acc = T(0);
  for (const T& v : x.data()) acc += v;
  Node<T>* xn = x.node().get();
  return detail::make_op<T>("sum", {1}, {acc}, {x}, [xn](Node<T>& self) {
    xn->ensure_grad();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  T acc = T(0);
  for (const T& v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  Node<T>* xn = x.node().get();
  return detail::make_op<T>("mean", {1}, {acc * inv}, {x},
                            [xn, inv](Node<T>& self) {
                              xn->ensure_grad();
                              const T g = self.grad[0] * inv;
                              for (std::size_t i = 0; i < xn->grad.size(); ++i)
                                xn->grad[i] += g;
                            });
}

}  // namespace cvit
