#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cvit/tensor.hpp"

namespace cvit {

// Differentiable NN primitives on NCHW tensors. Layer classes wrap these;
// the ops themselves are pure functions of their tensor arguments plus the
// hyperparameters baked into each call.

// Direct convolution. Weight layout [out_ch, in_ch/groups, k, k]; bias may be
// an empty handle. Output spatial size (H + 2p - k) / s + 1 per side.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<T>& bias, std::size_t stride,
                  std::size_t padding, std::size_t groups) {
  if (x.rank() != 4)
    throw DimensionError("conv2d: expected NCHW input, got " +
                         shape_str(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw DimensionError("conv2d: expected square OIHW weight, got " +
                         shape_str(w.shape()));
  if (stride == 0) throw ContractError("conv2d: stride must be >= 1");
  if (groups == 0) throw ContractError("conv2d: groups must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OC = w.dim(0), ICg = w.dim(1), K = w.dim(2);
  if (C != ICg * groups || OC % groups != 0)
    throw DimensionError("conv2d: weight " + shape_str(w.shape()) +
                         " with groups=" + std::to_string(groups) +
                         " does not match input channels " +
                         std::to_string(C));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != OC))
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(OC) +
                         " output channels");
  if (H + 2 * padding < K || W + 2 * padding < K)
    throw DimensionError("conv2d: padded input " + std::to_string(H) + "x" +
                         std::to_string(W) + " (pad " +
                         std::to_string(padding) + ") smaller than kernel " +
                         std::to_string(K));
  const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - K) / stride + 1;
  const std::size_t OCg = OC / groups;

  std::vector<T> out(N * OC * Ho * Wo, T(0));
  const T* px = x.data().data();
  const T* pw = w.data().data();
  const T* pb = bias.defined() ? bias.data().data() : nullptr;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);

  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t ocg = 0; ocg < OCg; ++ocg) {
        const std::size_t oc = g * OCg + ocg;
        T* po = out.data() + ((n * OC + oc) * Ho) * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih0 =
              static_cast<std::ptrdiff_t>(oh * stride) - pad;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw0 =
                static_cast<std::ptrdiff_t>(ow * stride) - pad;
            T acc = pb ? pb[oc] : T(0);
            for (std::size_t icg = 0; icg < ICg; ++icg) {
              const std::size_t ic = g * ICg + icg;
              const T* xc = px + ((n * C + ic) * H) * W;
              const T* wc = pw + ((oc * ICg + icg) * K) * K;
              for (std::size_t kh = 0; kh < K; ++kh) {
                const std::ptrdiff_t ih = ih0 + static_cast<std::ptrdiff_t>(kh);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kw = 0; kw < K; ++kw) {
                  const std::ptrdiff_t iw =
                      iw0 + static_cast<std::ptrdiff_t>(kw);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  acc += xc[ih * static_cast<std::ptrdiff_t>(W) + iw] *
                         wc[kh * K + kw];
                }
              }
            }
            po[oh * Wo + ow] = acc;
          }
        }
      }

  Node<T>* xn = x.node().get();
  Node<T>* wn = w.node().get();
  Node<T>* bn = bias.defined() ? bias.node().get() : nullptr;
  std::vector<TensorT<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);

  auto backward = [xn, wn, bn, N, C, H, W, OC, ICg, K, Ho, Wo, OCg, stride,
                   pad, groups](Node<T>& self) {
    const bool need_x = xn->requires_grad;
    const bool need_w = wn->requires_grad;
    const bool need_b = bn && bn->requires_grad;
    if (need_x) xn->ensure_grad();
    if (need_w) wn->ensure_grad();
    if (need_b) bn->ensure_grad();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t ocg = 0; ocg < OCg; ++ocg) {
          const std::size_t oc = g * OCg + ocg;
          const T* pg = self.grad.data() + ((n * OC + oc) * Ho) * Wo;
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const std::ptrdiff_t ih0 =
                static_cast<std::ptrdiff_t>(oh * stride) - pad;
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const T gv = pg[oh * Wo + ow];
              if (gv == T(0)) continue;
              const std::ptrdiff_t iw0 =
                  static_cast<std::ptrdiff_t>(ow * stride) - pad;
              if (need_b) bn->grad[oc] += gv;
              for (std::size_t icg = 0; icg < ICg; ++icg) {
                const std::size_t ic = g * ICg + icg;
                const std::size_t x_base = ((n * C + ic) * H) * W;
                const std::size_t w_base = ((oc * ICg + icg) * K) * K;
                for (std::size_t kh = 0; kh < K; ++kh) {
                  const std::ptrdiff_t ih =
                      ih0 + static_cast<std::ptrdiff_t>(kh);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t kw = 0; kw < K; ++kw) {
                    const std::ptrdiff_t iw =
                        iw0 + static_cast<std::ptrdiff_t>(kw);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W))
                      continue;
                    const std::size_t xi =
                        x_base + static_cast<std::size_t>(ih) * W +
                        static_cast<std::size_t>(iw);
                    if (need_w) wn->grad[w_base + kh * K + kw] += gv * xn->data[xi];
                    if (need_x) xn->grad[xi] += gv * wn->data[w_base + kh * K + kw];
                  }
                }
              }
            }
          }
        }
  };
  return detail::make_op<T>("conv2d", {N, OC, Ho, Wo}, std::move(out),
                            std::move(parents), std::move(backward));
}

// Training-mode batch norm over N*H*W per channel. Normalization uses the
// biased variance; the running-variance update uses the unbiased estimate
// (falls back to biased when only one sample exists). Mutates the running
// buffers in place; they are not graph parents.
template <typename T>
TensorT<T> batchnorm_train(const TensorT<T>& x, const TensorT<T>& gamma,
                           const TensorT<T>& beta, TensorT<T>& running_mean,
                           TensorT<T>& running_var, double eps,
                           double momentum) {
  if (x.rank() != 4)
    throw DimensionError("batchnorm: expected NCHW, got " +
                         shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (const TensorT<T>* t : std::initializer_list<const TensorT<T>*>{
           &gamma, &beta, &running_mean, &running_var})
    if (t->rank() != 1 || t->dim(0) != C)
      throw DimensionError("batchnorm: per-channel tensor shape " +
                           shape_str(t->shape()) + " does not match " +
                           std::to_string(C) + " channels");
  const std::size_t m = N * H * W;
  const std::size_t hw = H * W;

  std::vector<T> mean(C, T(0)), var(C, T(0)), invstd(C);
  const T* px = x.data().data();
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* p = px + ((n * C + c) * hw);
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    }
    mean[c] = static_cast<T>(acc / static_cast<double>(m));
  }
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* p = px + ((n * C + c) * hw);
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = static_cast<double>(p[i]) - mean[c];
        acc += d * d;
      }
    }
    var[c] = static_cast<T>(acc / static_cast<double>(m));
    invstd[c] = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(var[c]) + eps));
  }

  for (std::size_t c = 0; c < C; ++c) {
    const double unbiased =
        m > 1 ? static_cast<double>(var[c]) * static_cast<double>(m) /
                    static_cast<double>(m - 1)
              : static_cast<double>(var[c]);
    running_mean.data()[c] = static_cast<T>(
        (1.0 - momentum) * running_mean.data()[c] + momentum * mean[c]);
    running_var.data()[c] = static_cast<T>(
        (1.0 - momentum) * running_var.data()[c] + momentum * unbiased);
  }

  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  const T* pg = gamma.data().data();
  const T* pbeta = beta.data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (px[base + i] - mean[c]) * invstd[c];
        (*xhat)[base + i] = xh;
        out[base + i] = pg[c] * xh + pbeta[c];
      }
    }

  Node<T>* xn = x.node().get();
  Node<T>* gn = gamma.node().get();
  Node<T>* bn = beta.node().get();
  auto inv = std::make_shared<std::vector<T>>(std::move(invstd));
  return detail::make_op<T>(
      "batchnorm_train", x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, xhat, inv, N, C, hw, m](Node<T>& self) {
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += self.grad[base + i];
              sum_gx += static_cast<double>(self.grad[base + i]) *
                        (*xhat)[base + i];
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[c] += static_cast<T>(sum_gx);
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[c] += static_cast<T>(sum_g);
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            const T k = gn->data[c] * (*inv)[c];
            const T mg = static_cast<T>(sum_g * inv_m);
            const T mgx = static_cast<T>(sum_gx * inv_m);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * hw;
              for (std::size_t i = 0; i < hw; ++i)
                xn->grad[base + i] +=
                    k * (self.grad[base + i] - mg - (*xhat)[base + i] * mgx);
            }
          }
        }
      });
}

// Inference-mode batch norm: a per-channel affine map using running stats.
template <typename T>
TensorT<T> batchnorm_eval(const TensorT<T>& x, const TensorT<T>& gamma,
                          const TensorT<T>& beta,
                          const TensorT<T>& running_mean,
                          const TensorT<T>& running_var, double eps) {
  if (x.rank() != 4)
    throw DimensionError("batchnorm: expected NCHW, got " +
                         shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const TensorT<T>* t : {&gamma, &beta, &running_mean, &running_var})
    if (t->rank() != 1 || t->dim(0) != C)
      throw DimensionError("batchnorm: per-channel tensor shape " +
                           shape_str(t->shape()) + " does not match " +
                           std::to_string(C) + " channels");
  auto sc = std::make_shared<std::vector<T>>(C);
  auto inv = std::make_shared<std::vector<T>>(C);
  std::vector<T> shift(C);
  for (std::size_t c = 0; c < C; ++c) {
    (*inv)[c] = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + eps));
    (*sc)[c] = gamma.data()[c] * (*inv)[c];
    shift[c] = beta.data()[c] - running_mean.data()[c] * (*sc)[c];
  }
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * hw;
      for (std::size_t i = 0; i < hw; ++i)
        out[base + i] = px[base + i] * (*sc)[c] + shift[c];
    }
  Node<T>* xn = x.node().get();
  Node<T>* gn = gamma.node().get();
  Node<T>* bn = beta.node().get();
  auto rm = std::make_shared<std::vector<T>>(running_mean.data());
  return detail::make_op<T>(
      "batchnorm_eval", x.shape(), std::move(out),
      {x, gamma, beta},
      [xn, gn, bn, sc, inv, rm, N, C, hw](Node<T>& self) {
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const T g = self.grad[base + i];
              sum_g += g;
              sum_gx += static_cast<double>(g) *
                        ((xn->data[base + i] - (*rm)[c]) * (*inv)[c]);
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[c] += static_cast<T>(sum_gx);
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[c] += static_cast<T>(sum_g);
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * hw;
              for (std::size_t i = 0; i < hw; ++i)
                xn->grad[base + i] += self.grad[base + i] * (*sc)[c];
            }
          }
        }
      });
}

// [N,C,H,W] -> [N,C], averaging each channel plane.
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  if (x.rank() != 4)
    throw DimensionError("global_avg_pool: expected NCHW, got " +
                         shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(N * C);
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    T acc = T(0);
    const T* p = x.data().data() + nc * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    out[nc] = acc * inv;
  }
  Node<T>* xn = x.node().get();
  return detail::make_op<T>("global_avg_pool", {N, C}, std::move(out), {x},
                            [xn, N, C, hw, inv](Node<T>& self) {
                              xn->ensure_grad();
                              for (std::size_t nc = 0; nc < N * C; ++nc) {
                                const T g = self.grad[nc] * inv;
                                T* gx = xn->grad.data() + nc * hw;
                                for (std::size_t i = 0; i < hw; ++i)
                                  gx[i] += g;
                              }
                            });
}

// Multiplies each channel plane of x [N,C,H,W] by gate [N,C].
template <typename T>
TensorT<T> channel_gate(const TensorT<T>& x, const TensorT<T>& gate) {
  if (x.rank() != 4 || gate.rank() != 2 || gate.dim(0) != x.dim(0) ||
      gate.dim(1) != x.dim(1))
    throw DimensionError("channel_gate: x " + shape_str(x.shape()) +
                         " with gate " + shape_str(gate.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T g = gate.data()[nc];
    const T* p = x.data().data() + nc * hw;
    T* o = out.data() + nc * hw;
    for (std::size_t i = 0; i < hw; ++i) o[i] = p[i] * g;
  }
  Node<T>* xn = x.node().get();
  Node<T>* gn = gate.node().get();
  return detail::make_op<T>(
      "channel_gate", x.shape(), std::move(out), {x, gate},
      [xn, gn, N, C, hw](Node<T>& self) {
        for (std::size_t nc = 0; nc < N * C; ++nc) {
          if (xn->requires_grad) {
            xn->ensure_grad();
            const T g = gn->data[nc];
            const T* sg = self.grad.data() + nc * hw;
            T* gx = xn->grad.data() + nc * hw;
            for (std::size_t i = 0; i < hw; ++i) gx[i] += sg[i] * g;
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            double acc = 0.0;
            const T* sg = self.grad.data() + nc * hw;
            const T* p = xn->data.data() + nc * hw;
            for (std::size_t i = 0; i < hw; ++i) acc += double(sg[i]) * p[i];
            gn->grad[nc] += static_cast<T>(acc);
          }
        }
      });
}

// Fully connected: x [N,in] * w^T [out,in] (+ optional bias [out]).
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<T>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw DimensionError("linear: x " + shape_str(x.shape()) + " with w " +
                         shape_str(w.shape()));
  const std::size_t N = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f))
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(out_f) +
                         " outputs");
  std::vector<T> out(N * out_f, T(0));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < out_f; ++o) {
      T acc = bias.defined() ? bias.data()[o] : T(0);
      const T* px = x.data().data() + n * in;
      const T* pw = w.data().data() + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += px[i] * pw[i];
      out[n * out_f + o] = acc;
    }
  Node<T>* xn = x.node().get();
  Node<T>* wn = w.node().get();
  Node<T>* bn = bias.defined() ? bias.node().get() : nullptr;
  std::vector<TensorT<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_op<T>(
      "linear", {N, out_f}, std::move(out), std::move(parents),
      [xn, wn, bn, N, in, out_f](Node<T>& self) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t o = 0; o < out_f; ++o) {
            const T g = self.grad[n * out_f + o];
            if (g == T(0)) continue;
            if (bn && bn->requires_grad) {
              bn->ensure_grad();
              bn->grad[o] += g;
            }
            if (xn->requires_grad) {
              xn->ensure_grad();
              for (std::size_t i = 0; i < in; ++i)
                xn->grad[n * in + i] += g * wn->data[o * in + i];
            }
            if (wn->requires_grad) {
              wn->ensure_grad();
              for (std::size_t i = 0; i < in; ++i)
                wn->grad[o * in + i] += g * xn->data[n * in + i];
            }
          }
      });
}

namespace detail {

// Row-wise log-softmax into `out`; returns nothing. Stable via max shift.
template <typename T>
inline void log_softmax_rows(const T* in, T* out, std::size_t rows,
                             std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = in + r * cols;
    T* o = out + r * cols;
    T m = p[0];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, p[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) denom += std::exp(double(p[c] - m));
    const T lse = m + static_cast<T>(std::log(denom));
    for (std::size_t c = 0; c < cols; ++c) o[c] = p[c] - lse;
  }
}

}  // namespace detail

// Mean negative log-likelihood of integer labels under softmax(logits).
// Fused: backward computes (softmax - onehot) / N directly.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits,
                         const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw DimensionError("cross_entropy: expected [N, classes], got " +
                         shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw ContractError("cross_entropy: label " + std::to_string(y) +
                          " outside [0, " + std::to_string(K) + ")");
  std::vector<T> logp(N * K);
  detail::log_softmax_rows(logits.data().data(), logp.data(), N, K);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    loss -= logp[n * K + static_cast<std::size_t>(labels[n])];
  loss /= static_cast<double>(N);

  Node<T>* ln = logits.node().get();
  auto lp = std::make_shared<std::vector<T>>(std::move(logp));
  auto lab = std::make_shared<std::vector<int>>(labels);
  return detail::make_op<T>(
      "cross_entropy", {1}, {static_cast<T>(loss)}, {logits},
      [ln, lp, lab, N, K](Node<T>& self) {
        ln->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(N);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < K; ++c) {
            T p = std::exp((*lp)[n * K + c]);
            if (c == static_cast<std::size_t>((*lab)[n])) p -= T(1);
            ln->grad[n * K + c] += g * p;
          }
      });
}

// Distillation objective:
//   alpha * T^2 * KL(softmax(teacher/T) || softmax(student/T))
//   + (1 - alpha) * cross_entropy(student, labels)
// Gradient flows to the student only; the teacher's gradient is identically
// zero even when it requires grad.
template <typename T>
TensorT<T> kd_loss(const TensorT<T>& student, const TensorT<T>& teacher,
                   const std::vector<int>& labels, double alpha,
                   double temperature) {
  if (student.rank() != 2 || teacher.rank() != 2 ||
      student.shape() != teacher.shape())
    throw DimensionError("kd_loss: student " + shape_str(student.shape()) +
                         " vs teacher " + shape_str(teacher.shape()));
  if (alpha < 0.0 || alpha > 1.0)
    throw ContractError("kd_loss: alpha must lie in [0, 1], got " +
                        std::to_string(alpha));
  if (temperature <= 0.0)
    throw ContractError("kd_loss: temperature must be positive, got " +
                        std::to_string(temperature));
  const std::size_t N = student.dim(0), K = student.dim(1);
  if (labels.size() != N)
    throw DimensionError("kd_loss: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw ContractError("kd_loss: label " + std::to_string(y) +
                          " outside [0, " + std::to_string(K) + ")");

  const T tinv = static_cast<T>(1.0 / temperature);
  std::vector<T> s_t(N * K), t_t(N * K);
  for (std::size_t i = 0; i < N * K; ++i) {
    s_t[i] = student.data()[i] * tinv;
    t_t[i] = teacher.data()[i] * tinv;
  }
  std::vector<T> lps(N * K), lpt(N * K), lps1(N * K);
  detail::log_softmax_rows(s_t.data(), lps.data(), N, K);
  detail::log_softmax_rows(t_t.data(), lpt.data(), N, K);
  detail::log_softmax_rows(student.data().data(), lps1.data(), N, K);

  double kl = 0.0, ce = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < K; ++c) {
      const double pt = std::exp(double(lpt[n * K + c]));
      kl += pt * (double(lpt[n * K + c]) - double(lps[n * K + c]));
    }
    ce -= lps1[n * K + static_cast<std::size_t>(labels[n])];
  }
  kl /= static_cast<double>(N);
  ce /= static_cast<double>(N);
  const double loss =
      alpha * temperature * temperature * kl + (1.0 - alpha) * ce;

  Node<T>* sn = student.node().get();
  Node<T>* tn = teacher.node().get();
  auto ps = std::make_shared<std::vector<T>>(std::move(lps));
  auto pt = std::make_shared<std::vector<T>>(std::move(lpt));
  auto p1 = std::make_shared<std::vector<T>>(std::move(lps1));
  auto lab = std::make_shared<std::vector<int>>(labels);
  return detail::make_op<T>(
      "kd_loss", {1}, {static_cast<T>(loss)}, {student, teacher},
      [sn, tn, ps, pt, p1, lab, N, K, alpha, temperature](Node<T>& self) {
        if (tn->requires_grad) tn->ensure_grad();  // stays all-zero
        if (!sn->requires_grad) return;
        sn->ensure_grad();
        const double g0 = self.grad[0];
        const double ka = alpha * temperature / static_cast<double>(N);
        const double kc = (1.0 - alpha) / static_cast<double>(N);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < K; ++c) {
            const double p_s = std::exp(double((*ps)[n * K + c]));
            const double p_t = std::exp(double((*pt)[n * K + c]));
            double p_1 = std::exp(double((*p1)[n * K + c]));
            if (c == static_cast<std::size_t>((*lab)[n])) p_1 -= 1.0;
            sn->grad[n * K + c] +=
                static_cast<T>(g0 * (ka * (p_s - p_t) + kc * p_1));
          }
      });
}

}  // namespace cvit
