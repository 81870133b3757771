#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cvit/ccffn.hpp"
#include "cvit/layers.hpp"

namespace cvit {

// Cascaded group attention. Each head works on its own C/heads channel slice
// of the input, and — mirroring the chunked FFN — head i additionally receives
// the output of head i-1 added onto its slice, so heads refine progressively
// instead of seeing identical inputs. Per head: 1x1 conv+BN projections to
// queries/keys/values, a 3x3 depthwise conv+BN on the queries for local
// positional mixing, then scaled dot-product attention over all H*W tokens.
// Head outputs are concatenated, passed through ReLU and a final 1x1 conv+BN.
template <typename T>
class CGALayerT {
 public:
  static constexpr std::size_t kKeyDim = 16;

  CGALayerT() = default;
  CGALayerT(std::size_t channels, std::size_t heads, RngState& rng)
      : channels_(channels), heads_(heads) {
    if (heads < 1) throw ConfigError("attention needs at least one head");
    if (channels == 0 || channels % heads != 0)
      throw DivisibilityError(std::to_string(channels) +
                              " channels not divisible by " +
                              std::to_string(heads) + " heads");
    const std::size_t s = channels / heads;  // slice width == value width
    for (std::size_t i = 0; i < heads; ++i) {
      q_.emplace_back(s, kKeyDim, 1, 1, 0, 1, rng);
      k_.emplace_back(s, kKeyDim, 1, 1, 0, 1, rng);
      v_.emplace_back(s, s, 1, 1, 0, 1, rng);
      q_dw_.emplace_back(kKeyDim, kKeyDim, 3, 1, 1, kKeyDim, rng);
    }
    proj_ = ConvBNT<T>(channels, channels, 1, 1, 0, 1, rng);
  }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    LayerScope scope("cga");
    if (x.rank() != 4 || x.dim(1) != channels_)
      throw DimensionError("attention: expected " + std::to_string(channels_) +
                           " channels, got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t tokens = H * W;
    const std::size_t s = channels_ / heads_;
    const T inv_sqrt_dk =
        static_cast<T>(1.0 / std::sqrt(double(kKeyDim)));

    auto slices = split_channels(x, heads_);
    std::vector<TensorT<T>> outs;
    outs.reserve(heads_);
    TensorT<T> carried;
    last_attention_.clear();
    for (std::size_t i = 0; i < heads_; ++i) {
      LayerScope head_scope("head" + std::to_string(i));
      TensorT<T> in = i == 0 ? slices[i] : add(slices[i], carried);
      auto q = q_dw_[i].forward(q_[i].forward(in, mode), mode);
      auto k = k_[i].forward(in, mode);
      auto v = v_[i].forward(in, mode);
      auto qf = reshape(q, {N, kKeyDim, tokens});
      auto kf = reshape(k, {N, kKeyDim, tokens});
      auto vf = reshape(v, {N, s, tokens});
      // scores[b, tq, tk] = <q_tq, k_tk> / sqrt(d_k)
      auto scores = scale(bmm(transpose_last2(qf), kf), inv_sqrt_dk);
      auto attn = softmax_lastdim(scores);
      if (record_attention_) last_attention_.push_back(attn);
      // out[b, :, tq] = sum_tk v[b, :, tk] * attn[b, tq, tk]
      auto head = reshape(bmm(vf, transpose_last2(attn)), {N, s, H, W});
      outs.push_back(head);
      carried = head;
    }
    return proj_.forward(relu(concat_channels(outs)), mode);
  }

  // When enabled, forward() keeps each head's [N, tokens, tokens] attention
  // matrix for inspection.
  void set_record_attention(bool on) { record_attention_ = on; }
  const std::vector<TensorT<T>>& last_attention() const {
    return last_attention_;
  }

  void fuse() {
    for (auto& l : q_) l.fuse();
    for (auto& l : k_) l.fuse();
    for (auto& l : v_) l.fuse();
    for (auto& l : q_dw_) l.fuse();
    proj_.fuse();
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < heads_; ++i) {
      const std::string head =
          detail::join_name(prefix, "head" + std::to_string(i));
      q_[i].collect(detail::join_name(head, "q"), out);
      q_dw_[i].collect(detail::join_name(head, "q_dw"), out);
      k_[i].collect(detail::join_name(head, "k"), out);
      v_[i].collect(detail::join_name(head, "v"), out);
    }
    proj_.collect(detail::join_name(prefix, "proj"), out);
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    const std::size_t tokens = h * w;
    for (std::size_t i = 0; i < heads_; ++i) {
      const std::string head =
          detail::join_name(prefix, "head" + std::to_string(i));
      q_[i].append_costs(rows, detail::join_name(head, "q"), h, w);
      q_dw_[i].append_costs(rows, detail::join_name(head, "q_dw"), h, w);
      k_[i].append_costs(rows, detail::join_name(head, "k"), h, w);
      v_[i].append_costs(rows, detail::join_name(head, "v"), h, w);
      rows.push_back({detail::join_name(head, "attend"), "attention", 0, 0,
                      tokens * tokens * kKeyDim +
                          tokens * tokens * (channels_ / heads_)});
    }
    proj_.append_costs(rows, detail::join_name(prefix, "proj"), h, w);
  }

  std::size_t heads() const { return heads_; }

 private:
  std::size_t channels_ = 0, heads_ = 0;
  std::vector<ConvBNT<T>> q_, k_, v_, q_dw_;
  ConvBNT<T> proj_;
  bool record_attention_ = false;
  std::vector<TensorT<T>> last_attention_;
};

// ---------------------------------------------------------------------------

// The repeated backbone block: five residual sublayers —
//   depthwise conv+BN, chunked FFN, group attention, depthwise conv+BN,
//   chunked FFN — each wrapped as x + f(x).
template <typename T>
class CViTBlockT {
 public:
  CViTBlockT() = default;
  CViTBlockT(std::size_t channels, std::size_t heads, const CCFFNConfig& ffn,
             RngState& rng)
      : CViTBlockT(channels, heads, ffn, ffn, rng) {}
  // The pre- and post-attention FFNs may differ (the final block of the
  // weight-sharing baseline widens its post FFN).
  CViTBlockT(std::size_t channels, std::size_t heads,
             const CCFFNConfig& ffn_pre, const CCFFNConfig& ffn_post,
             RngState& rng)
      : dw1_(channels, rng),
        ffn_pre_(ffn_pre, rng),
        attn_(channels, heads, rng),
        dw2_(channels, rng),
        ffn_post_(ffn_post, rng) {}

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    auto y = dw1_.forward(x, mode);
    {
      LayerScope scope("ffn_pre");
      y = add(y, ffn_pre_.forward(y, mode));
    }
    y = add(y, attn_.forward(y, mode));
    y = dw2_.forward(y, mode);
    {
      LayerScope scope("ffn_post");
      y = add(y, ffn_post_.forward(y, mode));
    }
    return y;
  }

  void fuse() {
    dw1_.fuse();
    ffn_pre_.fuse();
    attn_.fuse();
    dw2_.fuse();
    ffn_post_.fuse();
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    dw1_.collect(detail::join_name(prefix, "dw1"), out);
    ffn_pre_.collect(detail::join_name(prefix, "ffn_pre"), out);
    attn_.collect(detail::join_name(prefix, "attn"), out);
    dw2_.collect(detail::join_name(prefix, "dw2"), out);
    ffn_post_.collect(detail::join_name(prefix, "ffn_post"), out);
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    dw1_.append_costs(rows, detail::join_name(prefix, "dw1"), h, w);
    ffn_pre_.append_costs(rows, detail::join_name(prefix, "ffn_pre"), h, w);
    attn_.append_costs(rows, detail::join_name(prefix, "attn"), h, w);
    dw2_.append_costs(rows, detail::join_name(prefix, "dw2"), h, w);
    ffn_post_.append_costs(rows, detail::join_name(prefix, "ffn_post"), h, w);
  }

  CCFFNLayerT<T>& ffn_pre() { return ffn_pre_; }
  CCFFNLayerT<T>& ffn_post() { return ffn_post_; }
  const CCFFNLayerT<T>& ffn_pre() const { return ffn_pre_; }
  const CCFFNLayerT<T>& ffn_post() const { return ffn_post_; }
  CGALayerT<T>& attention() { return attn_; }

 private:
  ResidualDWConvT<T> dw1_;
  CCFFNLayerT<T> ffn_pre_;
  CGALayerT<T> attn_;
  ResidualDWConvT<T> dw2_;
  CCFFNLayerT<T> ffn_post_;
};

}  // namespace cvit
