#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cvit/ccffn.hpp"

namespace cvit {

// Static description of a model: per-stage depths/widths/heads plus the
// chunked-FFN hyperparameters applied in every block. Presets cover the four
// published sizes, matching plain-FFN baselines for them, and four tiny
// configurations for fast CPU experiments.
struct ModelConfig {
  std::string name = "custom";
  std::size_t image_size = 224;
  std::size_t num_classes = 1000;
  std::vector<std::size_t> depths;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> heads;
  std::size_t ffn_chunks = 2;
  double ffn_expansion = 2.5;
  bool ffn_cascade = true;
  bool ffn_projection = false;
  bool weight_sharing = false;
  // When positive, overrides the expansion ratio of the very last block's
  // post-attention FFN (the weight-sharing baseline widens it to 4x).
  double final_ffn_expansion = 0.0;

  // FFN geometry for a given stage width.
  CCFFNConfig ffn_for(std::size_t channels) const {
    return CCFFNConfig{channels, ffn_chunks, ffn_expansion, ffn_cascade,
                       ffn_projection};
  }

  // Post-attention FFN geometry for a specific block, honoring the final-FFN
  // override.
  CCFFNConfig post_ffn_for(std::size_t stage, std::size_t block) const {
    CCFFNConfig c = ffn_for(widths[stage]);
    if (final_ffn_expansion > 0.0 && stage + 1 == stages() &&
        block + 1 == depths[stage])
      c.expansion = final_ffn_expansion;
    return c;
  }

  std::size_t stages() const { return depths.size(); }

  // Throws ConfigError / DivisibilityError when inconsistent.
  void validate() const;

  // JSON round trip. Unknown keys are rejected so typos fail loudly.
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  static ModelConfig from_json_file(const std::string& path);

  static ModelConfig preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

}  // namespace cvit
