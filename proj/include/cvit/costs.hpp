#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cvit {

// One row of the static cost breakdown. `flops` counts multiply-accumulates
// for a single input sample (the doubled convention is applied at report
// time, not here); normalization, activations, elementwise arithmetic and
// softmax count zero. `params` are learnable scalars, `buffers` are
// persistent non-learnable state (running statistics).
struct CostRow {
  std::string path;
  std::string kind;
  std::size_t params = 0;
  std::size_t buffers = 0;
  std::size_t flops = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k,
                                   std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - k) / stride + 1;
}

inline std::size_t conv_param_count(std::size_t in_ch, std::size_t out_ch,
                                    std::size_t k, std::size_t groups,
                                    bool bias) {
  return out_ch * (in_ch / groups) * k * k + (bias ? out_ch : 0);
}

inline std::size_t conv_flop_count(std::size_t out_h, std::size_t out_w,
                                   std::size_t in_ch, std::size_t out_ch,
                                   std::size_t k, std::size_t groups) {
  return out_h * out_w * out_ch * (in_ch / groups) * k * k;
}

inline std::size_t linear_param_count(std::size_t in, std::size_t out,
                                      bool bias) {
  return in * out + (bias ? out : 0);
}

inline std::size_t linear_flop_count(std::size_t in, std::size_t out) {
  return in * out;
}

}  // namespace cvit
