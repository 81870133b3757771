#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is deliberately naive — plain loops, double accumulation,
// no sharing of code with the production ops.

#include <cmath>
#include <cstddef>
#include <vector>

namespace ref {

// C[m,n] = A[m,k] * B[k,n], triple loop, double accumulator.
inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk)
        acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

// Softmax of one row in double precision.
inline std::vector<double> softmax_row(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double denom = 0.0;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    denom += y[i];
  }
  for (double& v : y) v /= denom;
  return y;
}

// Naive grouped convolution, seven explicit loops. x is NCHW, w is
// [oc, ic/groups, k, k], bias may be empty.
inline std::vector<double> conv2d(const std::vector<double>& x,
                                  const std::vector<double>& w,
                                  const std::vector<double>& bias,
                                  std::size_t N, std::size_t C, std::size_t H,
                                  std::size_t W, std::size_t OC, std::size_t K,
                                  std::size_t stride, std::size_t padding,
                                  std::size_t groups) {
  const std::size_t ICg = C / groups;
  const std::size_t OCg = OC / groups;
  const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - K) / stride + 1;
  std::vector<double> out(N * OC * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oc = 0; oc < OC; ++oc)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          const std::size_t g = oc / OCg;
          for (std::size_t icg = 0; icg < ICg; ++icg)
            for (std::size_t kh = 0; kh < K; ++kh)
              for (std::size_t kw = 0; kw < K; ++kw) {
                const long ih = long(oh * stride + kh) - long(padding);
                const long iw = long(ow * stride + kw) - long(padding);
                if (ih < 0 || ih >= long(H) || iw < 0 || iw >= long(W))
                  continue;
                const std::size_t ic = g * ICg + icg;
                acc += x[((n * C + ic) * H + std::size_t(ih)) * W +
                         std::size_t(iw)] *
                       w[((oc * ICg + icg) * K + kh) * K + kw];
              }
          out[((n * OC + oc) * Ho + oh) * Wo + ow] = acc;
        }
  return out;
}

// Two-pass training batch norm: returns the normalized output and reports
// the per-channel batch statistics through the out-parameters.
inline std::vector<double> bn_train(const std::vector<double>& x,
                                    const std::vector<double>& gamma,
                                    const std::vector<double>& beta,
                                    std::size_t N, std::size_t C,
                                    std::size_t HW, double eps,
                                    std::vector<double>* mean_out = nullptr,
                                    std::vector<double>* var_out = nullptr) {
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  const double m = double(N * HW);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i)
        mean[c] += x[(n * C + c) * HW + i];
    mean[c] /= m;
  }
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = x[(n * C + c) * HW + i] - mean[c];
        var[c] += d * d;
      }
    var[c] /= m;
  }
  std::vector<double> y(x.size());
  for (std::size_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(var[c] + eps);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (n * C + c) * HW + i;
        y[idx] = gamma[c] * (x[idx] - mean[c]) * inv + beta[c];
      }
  }
  if (mean_out) *mean_out = mean;
  if (var_out) *var_out = var;
  return y;
}

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1.0});
}

// Central-difference derivative of `loss_fn()` with respect to storage[idx].
// loss_fn must recompute the loss from the current storage contents.
template <typename F>
double fd_grad(std::vector<double>& storage, std::size_t idx, F&& loss_fn,
               double eps = 1e-5) {
  const double keep = storage[idx];
  storage[idx] = keep + eps;
  const double up = loss_fn();
  storage[idx] = keep - eps;
  const double down = loss_fn();
  storage[idx] = keep;
  return (up - down) / (2.0 * eps);
}

}  // namespace ref
