#pragma once

#include <string>
#include <vector>

#include "cvit/costs.hpp"
#include "cvit/nn_ops.hpp"
#include "cvit/rng.hpp"
#include "cvit/tensor.hpp"

namespace cvit {

enum class Mode { train, eval };

// Classifies a parameter for the optimizer: weight decay applies to `weight`
// only, never to normalization parameters or biases.
enum class ParamKind { weight, bias, bn_scale, bn_shift };

template <typename T>
struct ParamEntry {
  std::string name;
  TensorT<T> tensor;  // aliases the layer's storage
  ParamKind kind = ParamKind::weight;
  bool buffer = false;  // running statistics: persisted but not trained
};

template <typename T>
using ParamList = std::vector<ParamEntry<T>>;

namespace detail {

template <typename T>
void fill_trunc_normal(TensorT<T>& t, RngState& rng, double stddev) {
  for (T& v : t.data())
    v = static_cast<T>(rng.next_trunc_normal(stddev));
}

inline std::string join_name(const std::string& prefix,
                             const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename T>
class Conv2dT {
 public:
  Conv2dT() = default;
  Conv2dT(std::size_t in_ch, std::size_t out_ch, std::size_t k,
          std::size_t stride, std::size_t padding, std::size_t groups,
          bool with_bias, RngState& rng)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride),
        padding_(padding), groups_(groups) {
    if (groups == 0 || in_ch % groups != 0 || out_ch % groups != 0)
      throw DivisibilityError("conv: channels " + std::to_string(in_ch) +
                              "->" + std::to_string(out_ch) +
                              " not divisible by groups " +
                              std::to_string(groups));
    weight_ = TensorT<T>::zeros({out_ch, in_ch / groups, k, k});
    detail::fill_trunc_normal(weight_, rng, 0.02);
    weight_.set_requires_grad(true);
    if (with_bias) {
      bias_ = TensorT<T>::zeros({out_ch});
      bias_.set_requires_grad(true);
    }
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return conv2d(x, weight_, bias_, stride_, padding_, groups_);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({detail::join_name(prefix, "weight"), weight_,
                   ParamKind::weight, false});
    if (bias_.defined())
      out.push_back(
          {detail::join_name(prefix, "bias"), bias_, ParamKind::bias, false});
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    h = conv_out_extent(h, k_, stride_, padding_);
    w = conv_out_extent(w, k_, stride_, padding_);
    rows.push_back({prefix, "conv",
                    conv_param_count(in_ch_, out_ch_, k_, groups_,
                                     bias_.defined()),
                    0, conv_flop_count(h, w, in_ch_, out_ch_, k_, groups_)});
  }

  TensorT<T>& weight() { return weight_; }
  TensorT<T>& bias() { return bias_; }
  const TensorT<T>& weight() const { return weight_; }
  std::size_t out_channels() const { return out_ch_; }
  std::size_t stride() const { return stride_; }

  // Gives the conv a zero bias if it has none (used when folding BN in).
  void ensure_bias() {
    if (!bias_.defined()) {
      bias_ = TensorT<T>::zeros({out_ch_});
      bias_.set_requires_grad(true);
    }
  }

 private:
  TensorT<T> weight_, bias_;
  std::size_t in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, padding_ = 0,
              groups_ = 1;
};

// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm2dT {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2dT() = default;
  explicit BatchNorm2dT(std::size_t channels) : channels_(channels) {
    gamma_ = TensorT<T>::full({channels}, T(1));
    beta_ = TensorT<T>::zeros({channels});
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
    running_mean_ = TensorT<T>::zeros({channels});
    running_var_ = TensorT<T>::full({channels}, T(1));
  }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    if (mode == Mode::train)
      return batchnorm_train(x, gamma_, beta_, running_mean_, running_var_,
                             kEps, kMomentum);
    return batchnorm_eval(x, gamma_, beta_, running_mean_, running_var_, kEps);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({detail::join_name(prefix, "gamma"), gamma_,
                   ParamKind::bn_scale, false});
    out.push_back({detail::join_name(prefix, "beta"), beta_,
                   ParamKind::bn_shift, false});
    out.push_back({detail::join_name(prefix, "running_mean"), running_mean_,
                   ParamKind::bn_shift, true});
    out.push_back({detail::join_name(prefix, "running_var"), running_var_,
                   ParamKind::bn_scale, true});
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t&, std::size_t&) const {
    rows.push_back({prefix, "batchnorm", 2 * channels_, 2 * channels_, 0});
  }

  // Per-channel scale and shift of the frozen (eval) transform.
  void fold_coefficients(std::vector<T>& scale, std::vector<T>& shift) const {
    scale.resize(channels_);
    shift.resize(channels_);
    for (std::size_t c = 0; c < channels_; ++c) {
      const double inv =
          1.0 / std::sqrt(double(running_var_.data()[c]) + kEps);
      scale[c] = static_cast<T>(double(gamma_.data()[c]) * inv);
      shift[c] = static_cast<T>(double(beta_.data()[c]) -
                                double(running_mean_.data()[c]) *
                                    double(gamma_.data()[c]) * inv);
    }
  }

  std::size_t channels() const { return channels_; }

 private:
  TensorT<T> gamma_, beta_, running_mean_, running_var_;
  std::size_t channels_ = 0;
};

// ---------------------------------------------------------------------------

// Convolution followed by batch norm; the standard building unit. fuse()
// folds the frozen BN into the conv weights so eval forward becomes a single
// biased convolution.
template <typename T>
class ConvBNT {
 public:
  ConvBNT() = default;
  ConvBNT(std::size_t in_ch, std::size_t out_ch, std::size_t k,
          std::size_t stride, std::size_t padding, std::size_t groups,
          RngState& rng)
      : conv_(in_ch, out_ch, k, stride, padding, groups, /*bias=*/false, rng),
        bn_(out_ch) {}

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    if (fused_) return conv_.forward(x);
    return bn_.forward(conv_.forward(x), mode);
  }

  void fuse() {
    if (fused_) return;
    std::vector<T> scale, shift;
    bn_.fold_coefficients(scale, shift);
    conv_.ensure_bias();
    auto& w = conv_.weight().data();
    const std::size_t per_out = w.size() / scale.size();
    for (std::size_t oc = 0; oc < scale.size(); ++oc) {
      for (std::size_t i = 0; i < per_out; ++i) w[oc * per_out + i] *= scale[oc];
      conv_.bias().data()[oc] =
          conv_.bias().data()[oc] * scale[oc] + shift[oc];
    }
    fused_ = true;
  }

  bool fused() const { return fused_; }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv_.collect(detail::join_name(prefix, "conv"), out);
    if (!fused_) bn_.collect(detail::join_name(prefix, "bn"), out);
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    conv_.append_costs(rows, detail::join_name(prefix, "conv"), h, w);
    bn_.append_costs(rows, detail::join_name(prefix, "bn"), h, w);
  }

  Conv2dT<T>& conv() { return conv_; }
  BatchNorm2dT<T>& bn() { return bn_; }
  std::size_t out_channels() const { return conv_.out_channels(); }

 private:
  Conv2dT<T> conv_;
  BatchNorm2dT<T> bn_;
  bool fused_ = false;
};

// ---------------------------------------------------------------------------

template <typename T>
class LinearT {
 public:
  LinearT() = default;
  LinearT(std::size_t in, std::size_t out, bool with_bias, RngState& rng)
      : in_(in), out_(out) {
    weight_ = TensorT<T>::zeros({out, in});
    detail::fill_trunc_normal(weight_, rng, 0.02);
    weight_.set_requires_grad(true);
    if (with_bias) {
      bias_ = TensorT<T>::zeros({out});
      bias_.set_requires_grad(true);
    }
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return linear(x, weight_, bias_);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({detail::join_name(prefix, "weight"), weight_,
                   ParamKind::weight, false});
    if (bias_.defined())
      out.push_back(
          {detail::join_name(prefix, "bias"), bias_, ParamKind::bias, false});
  }

  void append_costs(std::vector<CostRow>& rows,
                    const std::string& prefix) const {
    rows.push_back({prefix, "linear",
                    linear_param_count(in_, out_, bias_.defined()), 0,
                    linear_flop_count(in_, out_)});
  }

  TensorT<T>& weight() { return weight_; }
  TensorT<T>& bias() { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  TensorT<T> weight_, bias_;
  std::size_t in_ = 0, out_ = 0;
};

// ---------------------------------------------------------------------------

// Squeeze-and-excitation: global average -> bottleneck MLP -> sigmoid gate
// applied per channel. The two projections carry no bias.
template <typename T>
class SEBlockT {
 public:
  static constexpr std::size_t kReduction = 4;

  SEBlockT() = default;
  SEBlockT(std::size_t channels, RngState& rng)
      : channels_(channels),
        reduce_(channels, std::max<std::size_t>(1, channels / kReduction),
                /*bias=*/false, rng),
        expand_(std::max<std::size_t>(1, channels / kReduction), channels,
                /*bias=*/false, rng) {}

  TensorT<T> forward(const TensorT<T>& x) const {
    LayerScope scope("se");
    auto g = sigmoid(expand_.forward(relu(reduce_.forward(global_avg_pool(x)))));
    return channel_gate(x, g);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    reduce_.collect(detail::join_name(prefix, "reduce"), out);
    expand_.collect(detail::join_name(prefix, "expand"), out);
  }

  void append_costs(std::vector<CostRow>& rows,
                    const std::string& prefix) const {
    reduce_.append_costs(rows, detail::join_name(prefix, "reduce"));
    expand_.append_costs(rows, detail::join_name(prefix, "expand"));
  }

 private:
  std::size_t channels_ = 0;
  LinearT<T> reduce_, expand_;
};

// ---------------------------------------------------------------------------

// Overlapping patch embedding: four 3x3 stride-2 conv+BN+ReLU stages taking
// 3 -> C/8 -> C/4 -> C/2 -> C channels, an overall stride of 16.
template <typename T>
class PatchEmbedT {
 public:
  PatchEmbedT() = default;
  PatchEmbedT(std::size_t out_ch, RngState& rng) : out_ch_(out_ch) {
    if (out_ch % 8 != 0)
      throw DivisibilityError("patch embed: output channels " +
                              std::to_string(out_ch) +
                              " must be divisible by 8");
    const std::size_t cs[5] = {3, out_ch / 8, out_ch / 4, out_ch / 2, out_ch};
    for (int i = 0; i < 4; ++i)
      stages_.emplace_back(cs[i], cs[i + 1], 3, 2, 1, 1, rng);
  }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    LayerScope scope("patch_embed");
    TensorT<T> y = x;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      LayerScope inner("conv" + std::to_string(i));
      y = relu(stages_[i].forward(y, mode));
    }
    return y;
  }

  void fuse() {
    for (auto& s : stages_) s.fuse();
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < stages_.size(); ++i)
      stages_[i].collect(
          detail::join_name(prefix, "conv" + std::to_string(i)), out);
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    for (std::size_t i = 0; i < stages_.size(); ++i)
      stages_[i].append_costs(
          rows, detail::join_name(prefix, "conv" + std::to_string(i)), h, w);
  }

  std::size_t out_channels() const { return out_ch_; }

 private:
  std::size_t out_ch_ = 0;
  std::vector<ConvBNT<T>> stages_;
};

// ---------------------------------------------------------------------------

// Depthwise 3x3 conv + BN wrapped in a residual connection; the local token
// mixer used throughout the network.
template <typename T>
class ResidualDWConvT {
 public:
  ResidualDWConvT() = default;
  ResidualDWConvT(std::size_t channels, RngState& rng)
      : dw_(channels, channels, 3, 1, 1, channels, rng) {}

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    LayerScope scope("dw");
    return add(x, dw_.forward(x, mode));
  }

  void fuse() { dw_.fuse(); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    dw_.collect(prefix, out);
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    dw_.append_costs(rows, prefix, h, w);
  }

 private:
  ConvBNT<T> dw_;
};

// ---------------------------------------------------------------------------

// Strided downsampling unit: 1x1 expansion, 3x3 stride-2 depthwise conv,
// squeeze-excitation, then 1x1 projection to the new width. ReLU after the
// expansion and the depthwise step; the projection output stays linear.
template <typename T>
class InvertedResidualMergeT {
 public:
  static constexpr std::size_t kExpand = 4;

  InvertedResidualMergeT() = default;
  InvertedResidualMergeT(std::size_t in_ch, std::size_t out_ch, RngState& rng)
      : expand_(in_ch, in_ch * kExpand, 1, 1, 0, 1, rng),
        dw_(in_ch * kExpand, in_ch * kExpand, 3, 2, 1, in_ch * kExpand, rng),
        se_(in_ch * kExpand, rng),
        project_(in_ch * kExpand, out_ch, 1, 1, 0, 1, rng) {}

  TensorT<T> forward(const TensorT<T>& x, Mode mode) {
    LayerScope scope("merge");
    if (x.dim(2) < 2 || x.dim(3) < 2)
      throw ContractError("downsample: spatial extent " +
                          std::to_string(x.dim(2)) + "x" +
                          std::to_string(x.dim(3)) + " too small to halve");
    auto y = relu(expand_.forward(x, mode));
    y = relu(dw_.forward(y, mode));
    y = se_.forward(y);
    return project_.forward(y, mode);
  }

  void fuse() {
    expand_.fuse();
    dw_.fuse();
    project_.fuse();
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    expand_.collect(detail::join_name(prefix, "expand"), out);
    dw_.collect(detail::join_name(prefix, "dw"), out);
    se_.collect(detail::join_name(prefix, "se"), out);
    project_.collect(detail::join_name(prefix, "project"), out);
  }

  void append_costs(std::vector<CostRow>& rows, const std::string& prefix,
                    std::size_t& h, std::size_t& w) const {
    expand_.append_costs(rows, detail::join_name(prefix, "expand"), h, w);
    dw_.append_costs(rows, detail::join_name(prefix, "dw"), h, w);
    se_.append_costs(rows, detail::join_name(prefix, "se"));
    project_.append_costs(rows, detail::join_name(prefix, "project"), h, w);
  }

 private:
  ConvBNT<T> expand_, dw_;
  SEBlockT<T> se_;
  ConvBNT<T> project_;
};

}  // namespace cvit
