#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cvit/layers.hpp"

namespace cvit {

// Cascaded-chunk feed-forward network. The C input channels are split into
// `chunks` equal groups; each group runs through its own small two-layer FFN
// (1x1 expand -> ReLU -> 1x1 project, batch norm after each conv). With the
// cascade enabled, chunk i's input is its slice plus the previous chunk's
// output, so later chunks refine on top of earlier ones; an optional 1x1
// bridge projection transforms the carried output before the add. Outputs are
// concatenated back to C channels. The surrounding residual connection
// belongs to the caller.
struct CCFFNConfig {
  std::size_t channels = 0;
  std::size_t chunks = 2;
  double expansion = 2.5;
  bool cascade = true;
  bool projection = false;
};

// Chunk width and hidden width implied by a config; validates divisibility.
inline std::size_t ccffn_chunk_width(std::size_t channels, std::size_t chunks) {
  if (chunks < 1) throw ConfigError("chunk count must be >= 1");
  if (channels == 0 || channels % chunks != 0)
    throw DivisibilityError(std::to_string(channels) +
                            " channels not divisible by " +
                            std::to_string(chunks) + " chunks");
  return channels / chunks;
}

inline std::size_t ccffn_hidden_width(std::size_t chunk_width,
                                      double expansion) {
  const auto h =
      static_cast<std::size_t>(std::floor(expansion * double(chunk_width)));
  if (h < 1)
    throw ConfigError("expansion " + std::to_string(expansion) + " on " +
                      std::to_string(chunk_width) +
                      "-channel chunks gives an empty hidden layer");
  return h;
}

inline void ccffn_validate(const CCFFNConfig& cfg) {
  ccffn_hidden_width(ccffn_chunk_width(cfg.channels, cfg.chunks),
                     cfg.expansion);
  if (cfg.projection && !cfg.cascade)
    throw ConfigError("bridge projection requires the cascade to be enabled");
}

// Closed-form learnable parameter count (conv weights plus batch-norm
// scale/shift). Must agree exactly with a walk over the built layer.
inline std::size_t ccffn_param_count(const CCFFNConfig& cfg) {
  ccffn_validate(cfg);
  const std::size_t c = ccffn_chunk_width(cfg.channels, cfg.chunks);
  const std::size_t h = ccffn_hidden_width(c, cfg.expansion);
  const std::size_t per_chunk = c * h + 2 * h + h * c + 2 * c;
  std::size_t total = cfg.chunks * per_chunk;
  if (cfg.cascade && cfg.projection)
    total += (cfg.chunks - 1) * (c * c + 2 * c);
  return total;
}

// Closed-form multiply-accumulate count for one sample at spatial size h x w.
// Batch norm, ReLU, the cascade adds and the concat all count zero.
inline std::size_t ccffn_flop_count(const CCFFNConfig& cfg, std::size_t h,
                                    std::size_t w) {
  ccffn_validate(cfg);
  const std::size_t c = ccffn_chunk_width(cfg.channels, cfg.chunks);
  const std::size_t hid = ccffn_hidden_width(c, cfg.expansion);
  const std::size_t hw = h * w;
  std::size_t total = cfg.chunks * (hw * c * hid + hw * hid * c);
  if (cfg.cascade && cfg.projection)
    total += (cfg.chunks - 1) * hw * c * c;
  return total;
}

template <typename T>
class CCFFNLayerT {
 public:
  CCFFNLayerT() = default;
  CCFFNLayerT(const CCFFNConfig& cfg, RngState& rng) : cfg_(cfg) {
    ccffn_validate(cfg);
    const std::size_t c = ccffn_chunk_width(cfg.channels, cfg.chunks);
    const std::size_t h = ccffn_hidden_width(c, cfg.expansion);
    for (std::size_t i = 0; i < cfg.chunks; ++i) {
      expand_.emplace_back(c, h, 1, 1, 0, 1, rng);
      project_.emplace_back(h, c, 1, 1, 0, 1, rng);
    }
    if (cfg.cascade && cfg.projection)
      for (std::size_t i = 0; i + 1 < cfg.chunks; ++i)
        bridge_.emplace_back(c, c, 1, 1, 0, 1, rng);
  }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    LayerScope scope("ccffn");
    if (x.rank() != 4 || x.dim(1) != cfg_.channels)
      throw DimensionError("ccffn: expected " + std::to_string(cfg_.channels) +
                           " channels, got " + shape_str(x.shape()));
    auto slices = split_channels(x, cfg_.chunks);
    std::vector<TensorT<T>> outs;
    outs.reserve(cfg_.chunks);
    TensorT<T> carried;
    for (std::size_t i = 0; i < cfg_.chunks; ++i) {
      LayerScope chunk_scope("chunk" + std::to_string(i));
      TensorT<T> in = slices[i];
      if (cfg_.cascade && i > 0) {
        TensorT<T> prev = carried;
        if (cfg_.projection) prev = bridge_[i - 1].forward(prev, mode);
        in = add(in, prev);
      }
      auto y = project_[i].forward(relu(expand_[i].forward(in, mode)), mode);
      outs.push_back(y);
      carried = y;
    }
    return concat_channels(outs);
  }

  void fuse() {
    for (auto& l : expand_) l.fuse();
    for (auto& l : project_) l.fuse();
    for (auto& l : bridge_) l.fuse();
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < expand_.size(); ++i) {
      const std::string chunk =
          detail::join_name(prefix, "chunk" + std::to_string(i));
      expand_[i].collect(detail::join_name(chunk, "expand"), out);
      project_[i].collect(detail::join_name(chunk, "project"), out);
    }
    for (std::size_t i = 0; i < bridge_.size(); ++i)
      bridge_[i].collect(
          detail::join_name(prefix, "bridge" + std::to_string(i)), out);
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    for (std::size_t i = 0; i < expand_.size(); ++i) {
      const std::string chunk =
          detail::join_name(prefix, "chunk" + std::to_string(i));
      expand_[i].append_costs(rows, detail::join_name(chunk, "expand"), h, w);
      project_[i].append_costs(rows, detail::join_name(chunk, "project"), h, w);
    }
    for (std::size_t i = 0; i < bridge_.size(); ++i)
      bridge_[i].append_costs(
          rows, detail::join_name(prefix, "bridge" + std::to_string(i)), h, w);
  }

  // Re-points every weight handle at `donor`'s storage; afterwards the two
  // layers train and persist as one set of tensors.
  void share_storage_with(const CCFFNLayerT& donor) {
    if (cfg_.channels != donor.cfg_.channels ||
        cfg_.chunks != donor.cfg_.chunks ||
        cfg_.expansion != donor.cfg_.expansion ||
        bridge_.size() != donor.bridge_.size())
      throw ContractError("weight sharing requires identical ffn geometry");
    expand_ = donor.expand_;
    project_ = donor.project_;
    bridge_ = donor.bridge_;
  }

  const CCFFNConfig& config() const { return cfg_; }

 private:
  CCFFNConfig cfg_;
  std::vector<ConvBNT<T>> expand_, project_, bridge_;
};

}  // namespace cvit
