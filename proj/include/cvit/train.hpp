#pragma once

// Toy-scale supervised training: a decoupled-weight-decay Adam optimizer, a
// single-cycle cosine learning-rate schedule, a synthetic separable dataset,
// and the training loop (plain cross-entropy or distillation against a frozen
// teacher). Everything is deterministic under the provided seeds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cvit/model.hpp"
#include "cvit/nn_ops.hpp"
#include "cvit/rng.hpp"

namespace cvit {

// ---------------------------------------------------------------------------
// Hyperparameter bundles
// ---------------------------------------------------------------------------

struct KDParams {
  double alpha = 0.5;        // weight of the distillation term
  double temperature = 2.0;  // softmax temperature for soft targets

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0)
      throw ConfigError("kd alpha must lie in [0, 1], got " +
                        std::to_string(alpha));
    if (!(temperature > 0.0))
      throw ConfigError("kd temperature must be positive, got " +
                        std::to_string(temperature));
  }
};

struct OptimConfig {
  double max_lr = 1e-3;
  double min_lr = 1e-5;
  double weight_decay = 1.25e-2;  // decoupled; applies to conv/linear weights
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;

  void validate() const {
    if (min_lr > max_lr)
      throw ConfigError("min_lr " + std::to_string(min_lr) +
                        " exceeds max_lr " + std::to_string(max_lr));
    if (weight_decay < 0.0)
      throw ConfigError("weight_decay must be non-negative");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ConfigError("betas must lie in [0, 1)");
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  }
};

// Single-cycle cosine annealing: starts exactly at max_lr, ends exactly at
// min_lr on the final epoch.
inline double cosine_lr(std::size_t epoch, const OptimConfig& cfg) {
  if (epoch >= cfg.epochs)
    throw ContractError("cosine_lr: epoch " + std::to_string(epoch) +
                        " outside schedule of " + std::to_string(cfg.epochs));
  if (cfg.epochs == 1) return cfg.max_lr;
  const double t = double(epoch) / double(cfg.epochs - 1);
  return cfg.min_lr +
         0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + std::cos(t * M_PI));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// Adam with decoupled weight decay. Decay touches only convolution/linear
// weights; biases and batch-norm scale/shift are excluded. Shared storages
// (weight-tied layers) are stepped once per step() even if they appear under
// several parameter names.
class AdamW {
 public:
  AdamW(const ParamList<float>& params, const OptimConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::unordered_set<const void*> seen;
    for (const auto& entry : params) {
      if (entry.buffer) continue;  // running statistics are not trained
      if (!seen.insert(entry.tensor.storage_id()).second) continue;
      slots_.push_back(Slot{entry.tensor, entry.kind,
                            std::vector<double>(entry.tensor.numel(), 0.0),
                            std::vector<double>(entry.tensor.numel(), 0.0)});
    }
  }

  std::size_t slot_count() const { return slots_.size(); }

  void zero_grad() {
    for (auto& s : slots_) s.tensor.zero_grad();
  }

  void step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
    for (auto& s : slots_) {
      if (!s.tensor.has_grad()) continue;
      const std::vector<float>& g = s.tensor.grad();
      std::vector<float>& p = s.tensor.data();
      const bool decayed = s.kind == ParamKind::weight;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        double update = (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + cfg_.eps);
        if (decayed) update += cfg_.weight_decay * double(p[i]);
        p[i] -= float(lr * update);
      }
    }
  }

 private:
  struct Slot {
    TensorT<float> tensor;
    ParamKind kind;
    std::vector<double> m, v;
  };
  OptimConfig cfg_;
  std::vector<Slot> slots_;
  std::uint64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

struct ToyDatasetConfig {
  std::size_t classes = 2;
  std::size_t train_per_class = 64;
  std::size_t val_per_class = 32;
  std::size_t image_size = 64;
  std::size_t template_grid = 8;  // class template resolution, upsampled
  double noise = 0.5;             // per-pixel Gaussian noise around template

  void validate() const {
    if (classes < 2) throw ConfigError("toy dataset needs at least 2 classes");
    if (train_per_class == 0 || val_per_class == 0)
      throw ConfigError("toy dataset split sizes must be positive");
    if (template_grid == 0 || image_size % template_grid != 0)
      throw DivisibilityError("image_size " + std::to_string(image_size) +
                              " not divisible by template_grid " +
                              std::to_string(template_grid));
    if (noise < 0.0) throw ConfigError("noise must be non-negative");
  }
};

// Each class is a fixed low-frequency template image (coarse Gaussian grid,
// nearest-neighbor upsampled); samples are the template plus per-pixel noise.
// Classes stay linearly separable by construction, so a model that trains at
// all reaches high validation accuracy quickly. Every sample is generated
// from its own child RNG stream, so the set is reproducible index by index.
class ToyDataset {
 public:
  ToyDataset(const ToyDatasetConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed) {
    cfg.validate();
    RngState rng(seed);
    const std::size_t g = cfg.template_grid;
    templates_.resize(cfg.classes);
    for (auto& t : templates_) {
      t.resize(3 * g * g);
      for (auto& v : t) v = float(rng.next_normal());
    }
    const std::size_t n_train = cfg.classes * cfg.train_per_class;
    const std::size_t n_val = cfg.classes * cfg.val_per_class;
    train_.reserve(n_train);
    val_.reserve(n_val);
    for (std::size_t i = 0; i < n_train; ++i)
      train_.push_back(make_sample(i % cfg.classes, rng.split()));
    for (std::size_t i = 0; i < n_val; ++i)
      val_.push_back(make_sample(i % cfg.classes, rng.split()));
  }

  const ToyDatasetConfig& config() const { return cfg_; }
  std::size_t train_size() const { return train_.size(); }
  std::size_t val_size() const { return val_.size(); }
  int train_label(std::size_t i) const { return train_[i].label; }
  int val_label(std::size_t i) const { return val_[i].label; }
  const std::vector<float>& train_pixels(std::size_t i) const {
    return train_[i].pixels;
  }
  const std::vector<float>& val_pixels(std::size_t i) const {
    return val_[i].pixels;
  }

  // Deterministic per-epoch shuffle, independent of call order.
  std::vector<std::size_t> shuffled_train_indices(std::size_t epoch) const {
    std::vector<std::size_t> idx(train_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    RngState rng(seed_ ^ (0x9E3779B97F4A7C15ull * (epoch + 1)));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.next_below(i)]);
    return idx;
  }

  std::pair<TensorT<float>, std::vector<int>> train_batch(
      const std::vector<std::size_t>& indices) const {
    return gather(train_, indices);
  }
  std::pair<TensorT<float>, std::vector<int>> val_batch(
      const std::vector<std::size_t>& indices) const {
    return gather(val_, indices);
  }

 private:
  struct Sample {
    std::vector<float> pixels;  // [3, S, S] row-major
    int label;
  };

  Sample make_sample(std::size_t cls, RngState rng) const {
    const std::size_t s = cfg_.image_size;
    const std::size_t g = cfg_.template_grid;
    const std::size_t f = s / g;
    Sample out;
    out.label = int(cls);
    out.pixels.resize(3 * s * s);
    const std::vector<float>& t = templates_[cls];
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          out.pixels[(c * s + y) * s + x] =
              t[(c * g + y / f) * g + x / f] +
              float(cfg_.noise * rng.next_normal());
    return out;
  }

  std::pair<TensorT<float>, std::vector<int>> gather(
      const std::vector<Sample>& pool,
      const std::vector<std::size_t>& indices) const {
    if (indices.empty()) throw ContractError("empty batch requested");
    const std::size_t s = cfg_.image_size;
    std::vector<float> data;
    data.reserve(indices.size() * 3 * s * s);
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (std::size_t i : indices) {
      if (i >= pool.size())
        throw ContractError("sample index " + std::to_string(i) +
                            " out of range");
      data.insert(data.end(), pool[i].pixels.begin(), pool[i].pixels.end());
      labels.push_back(pool[i].label);
    }
    return {TensorT<float>::from_data({indices.size(), 3, s, s},
                                      std::move(data)),
            std::move(labels)};
  }

  ToyDatasetConfig cfg_;
  std::uint64_t seed_;
  std::vector<std::vector<float>> templates_;
  std::vector<Sample> train_, val_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
};

std::string trace_to_csv(const TrainTrace& trace);
std::string trace_to_json(const TrainTrace& trace);

// Top-1 accuracy of the model on the validation split, in eval mode.
inline double evaluate(CViTModel& model, const ToyDataset& data,
                       std::size_t batch_size = 16) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.val_size(); start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, data.val_size());
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < stop; ++i) idx.push_back(i);
    auto [x, labels] = data.val_batch(idx);
    TensorT<float> logits = model.forward(x, Mode::eval);
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const float* row = logits.data().data() + r * classes;
      std::size_t best = 0;
      for (std::size_t k = 1; k < classes; ++k)
        if (row[k] > row[best]) best = k;
      if (int(best) == labels[r]) ++correct;
    }
  }
  return data.val_size() == 0 ? 0.0 : double(correct) / double(data.val_size());
}

// Runs the full schedule. With a teacher the loss is the distillation
// objective against the teacher's (frozen, eval-mode) logits; otherwise plain
// cross-entropy. Numerical failures surface as NumericalError from the op
// that produced them, wrapped with the epoch/step position.
inline TrainTrace train_loop(CViTModel& model, const ToyDataset& data,
                             const OptimConfig& cfg,
                             CViTModel* teacher = nullptr,
                             const KDParams* kd = nullptr) {
  cfg.validate();
  if ((teacher == nullptr) != (kd == nullptr))
    throw ConfigError("distillation needs both a teacher and KD parameters");
  if (kd) kd->validate();
  if (data.train_size() == 0)
    throw ContractError("train_loop: dataset has no training samples");

  auto params = model.parameters();
  AdamW opt(params, cfg);
  TrainTrace trace;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg);
    const auto order = data.shuffled_train_indices(epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0, step = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size, ++step) {
      const std::size_t stop =
          std::min(start + cfg.batch_size, order.size());
      std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(start),
                                   order.begin() + std::ptrdiff_t(stop));
      auto [x, labels] = data.train_batch(idx);
      try {
        TensorT<float> loss;
        if (teacher) {
          TensorT<float> t_logits = teacher->forward(x, Mode::eval);
          // Re-wrap as a constant so no graph hangs off the teacher.
          TensorT<float> t_const = TensorT<float>::from_data(
              t_logits.shape(), std::vector<float>(t_logits.data()));
          TensorT<float> s_logits = model.forward(x, Mode::train);
          loss = kd_loss(s_logits, t_const, labels, kd->alpha,
                         kd->temperature);
        } else {
          TensorT<float> s_logits = model.forward(x, Mode::train);
          loss = cross_entropy(s_logits, labels);
        }
        opt.zero_grad();
        loss.backward();
        opt.step(lr);
        loss_sum += double(loss.data()[0]) * double(labels.size());
        seen += labels.size();
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + ": " + e.what());
      }
    }
    trace.epochs.push_back(EpochRecord{epoch, lr, loss_sum / double(seen),
                                       evaluate(model, data)});
  }
  return trace;
}

}  // namespace cvit
