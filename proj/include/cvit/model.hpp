#pragma once

#include <string>
#include <vector>

#include "cvit/cga.hpp"
#include "cvit/model_config.hpp"

namespace cvit {

// Downsampling unit between stages. The halving merge (1x1 expand, stride-2
// depthwise, squeeze-excitation, 1x1 project) is sandwiched between residual
// depthwise convs and residual plain FFNs on each side, which keeps gradients
// flowing around the resolution change.
template <typename T>
class SubsampleUnitT {
 public:
  SubsampleUnitT() = default;
  SubsampleUnitT(std::size_t in_ch, std::size_t out_ch, RngState& rng)
      : pre_dw_(in_ch, rng),
        pre_ffn_(plain_ffn(in_ch), rng),
        merge_(in_ch, out_ch, rng),
        post_dw_(out_ch, rng),
        post_ffn_(plain_ffn(out_ch), rng) {}

  // Single-chunk flat FFN used around the merge regardless of the block FFN
  // configuration.
  static CCFFNConfig plain_ffn(std::size_t channels) {
    return CCFFNConfig{channels, 1, 2.0, false, false};
  }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    LayerScope scope("subsample");
    auto y = pre_dw_.forward(x, mode);
    y = add(y, pre_ffn_.forward(y, mode));
    y = merge_.forward(y, mode);
    y = post_dw_.forward(y, mode);
    return add(y, post_ffn_.forward(y, mode));
  }

  void fuse() {
    pre_dw_.fuse();
    pre_ffn_.fuse();
    merge_.fuse();
    post_dw_.fuse();
    post_ffn_.fuse();
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    pre_dw_.collect(detail::join_name(prefix, "pre_dw"), out);
    pre_ffn_.collect(detail::join_name(prefix, "pre_ffn"), out);
    merge_.collect(detail::join_name(prefix, "merge"), out);
    post_dw_.collect(detail::join_name(prefix, "post_dw"), out);
    post_ffn_.collect(detail::join_name(prefix, "post_ffn"), out);
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    pre_dw_.append_costs(rows, detail::join_name(prefix, "pre_dw"), h, w);
    pre_ffn_.append_costs(rows, detail::join_name(prefix, "pre_ffn"), h, w);
    merge_.append_costs(rows, detail::join_name(prefix, "merge"), h, w);
    post_dw_.append_costs(rows, detail::join_name(prefix, "post_dw"), h, w);
    post_ffn_.append_costs(rows, detail::join_name(prefix, "post_ffn"), h, w);
  }

 private:
  ResidualDWConvT<T> pre_dw_;
  CCFFNLayerT<T> pre_ffn_;
  InvertedResidualMergeT<T> merge_;
  ResidualDWConvT<T> post_dw_;
  CCFFNLayerT<T> post_ffn_;
};

// ---------------------------------------------------------------------------

// How weight sharing paired up the blocks: each pair lists the two block
// paths now backed by one set of FFN tensors; `unpaired` lists blocks left
// out (odd block counts, or geometry with no partner).
struct SharingReport {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> unpaired;
};

// The full classifier: stem, staged blocks with downsampling in between,
// global average pooling, a batch-normed feature vector and a linear head.
template <typename T>
class CViTModelT {
 public:
  CViTModelT(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    RngState rng(seed);
    embed_ = PatchEmbedT<T>(cfg.widths[0], rng);
    for (std::size_t s = 0; s < cfg.stages(); ++s) {
      stages_.emplace_back();
      for (std::size_t b = 0; b < cfg.depths[s]; ++b)
        stages_.back().emplace_back(cfg.widths[s], cfg.heads[s],
                                    cfg.ffn_for(cfg.widths[s]),
                                    cfg.post_ffn_for(s, b), rng);
      if (s + 1 < cfg.stages())
        subsamples_.emplace_back(cfg.widths[s], cfg.widths[s + 1], rng);
    }
    head_bn_ = BatchNorm2dT<T>(cfg.widths.back());
    head_fc_ = LinearT<T>(cfg.widths.back(), cfg.num_classes, /*bias=*/true,
                          rng);
    if (cfg.weight_sharing) sharing_ = apply_weight_sharing();
  }

  const ModelConfig& config() const { return cfg_; }
  const SharingReport& sharing_report() const { return sharing_; }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    if (mode == Mode::train && fused_)
      throw ContractError("fused model is inference-only");
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.image_size ||
        x.dim(3) != cfg_.image_size)
      throw DimensionError(
          "model expects [N, 3, " + std::to_string(cfg_.image_size) + ", " +
          std::to_string(cfg_.image_size) + "] input, got " +
          shape_str(x.shape()));
    LayerScope scope("model");
    auto y = embed_.forward(x, mode);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      LayerScope stage_scope("stage" + std::to_string(s));
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        LayerScope block_scope("block" + std::to_string(b));
        y = stages_[s][b].forward(y, mode);
      }
      if (s < subsamples_.size()) y = subsamples_[s].forward(y, mode);
    }
    LayerScope head_scope("head");
    auto pooled = global_avg_pool(y);  // [N, C]
    const std::size_t N = pooled.dim(0), C = pooled.dim(1);
    if (fused_) return head_fc_.forward(pooled);
    auto normed = head_bn_.forward(reshape(pooled, {N, C, 1, 1}), mode);
    return head_fc_.forward(reshape(normed, {N, C}));
  }

  // Folds every batch norm into its neighboring conv (or, for the head, into
  // the linear layer). Afterwards only eval-mode forward is allowed.
  void fuse() {
    if (fused_) return;
    embed_.fuse();
    for (auto& stage : stages_)
      for (auto& block : stage) block.fuse();
    for (auto& ss : subsamples_) ss.fuse();
    // The head norm precedes the linear layer, so it folds into the weight
    // columns: y = W(s*x + t) + b  ==>  W' = W diag(s), b' = b + W t.
    std::vector<T> s, t;
    head_bn_.fold_coefficients(s, t);
    auto& w = head_fc_.weight().data();
    auto& b = head_fc_.bias().data();
    const std::size_t out = head_fc_.out_features();
    const std::size_t in = head_fc_.in_features();
    for (std::size_t o = 0; o < out; ++o) {
      T extra = T(0);
      for (std::size_t i = 0; i < in; ++i) {
        extra += w[o * in + i] * t[i];
        w[o * in + i] *= s[i];
      }
      b[o] += extra;
    }
    fused_ = true;
  }

  bool fused() const { return fused_; }

  // All parameters and buffers with stable hierarchical names.
  ParamList<T> parameters() const {
    ParamList<T> out;
    embed_.collect("embed", out);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].collect(block_path(s, b), out);
      if (s < subsamples_.size())
        subsamples_[s].collect("subsample" + std::to_string(s), out);
    }
    if (!fused_) head_bn_.collect("head.bn", out);
    head_fc_.collect("head.fc", out);
    return out;
  }

  void append_costs(std::vector<CostRow>& rows) const {
    std::size_t h = cfg_.image_size, w = cfg_.image_size;
    embed_.append_costs(rows, "embed", h, w);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].append_costs(rows, block_path(s, b), h, w);
      if (s < subsamples_.size())
        subsamples_[s].append_costs(rows, "subsample" + std::to_string(s), h,
                                    w);
    }
    head_bn_.append_costs(rows, "head.bn", h, w);
    head_fc_.append_costs(rows, "head.fc");
  }

  // Pairs up neighboring blocks of identical geometry (greedy, in network
  // order) and makes each pair's two FFNs reuse the first block's tensors.
  SharingReport apply_weight_sharing() {
    SharingReport report;
    std::vector<std::pair<std::string, CViTBlockT<T>*>> blocks;
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        blocks.emplace_back(block_path(s, b), &stages_[s][b]);
    std::vector<bool> paired(blocks.size(), false);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (paired[i]) continue;
      bool found = false;
      for (std::size_t j = i + 1; j < blocks.size() && !found; ++j) {
        if (paired[j]) continue;
        const auto& a = blocks[i].second->ffn_pre().config();
        const auto& b = blocks[j].second->ffn_pre().config();
        const auto& ap = blocks[i].second->ffn_post().config();
        const auto& bp = blocks[j].second->ffn_post().config();
        if (a.channels == b.channels && a.chunks == b.chunks &&
            a.expansion == b.expansion && ap.expansion == bp.expansion) {
          blocks[j].second->ffn_pre().share_storage_with(
              blocks[i].second->ffn_pre());
          blocks[j].second->ffn_post().share_storage_with(
              blocks[i].second->ffn_post());
          report.pairs.emplace_back(blocks[i].first, blocks[j].first);
          paired[i] = paired[j] = true;
          found = true;
        }
      }
      if (!found) report.unpaired.push_back(blocks[i].first);
    }
    return report;
  }

  std::size_t stage_count() const { return stages_.size(); }
  std::vector<CViTBlockT<T>>& stage(std::size_t s) { return stages_[s]; }

 private:
  static std::string block_path(std::size_t s, std::size_t b) {
    return "stage" + std::to_string(s) + ".block" + std::to_string(b);
  }

  ModelConfig cfg_;
  PatchEmbedT<T> embed_;
  std::vector<std::vector<CViTBlockT<T>>> stages_;
  std::vector<SubsampleUnitT<T>> subsamples_;
  BatchNorm2dT<T> head_bn_;
  LinearT<T> head_fc_;
  SharingReport sharing_;
  bool fused_ = false;
};

using CViTModel = CViTModelT<float>;

}  // namespace cvit
