#pragma once

// Minimal binary PPM (P6) reader plus the preprocessing used by inference:
// nearest-neighbor resize of the short side to the target extent followed by
// a center crop. No external image dependencies; byte-exact and deterministic.

#include <cstdint>
#include <string>
#include <vector>

#include "cvit/tensor.hpp"

namespace cvit {

struct PpmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major, 3 bytes per pixel
};

// Parses a binary P6 file. Unopenable paths raise Error("cannot open ...");
// malformed headers raise FormatError; missing pixel bytes raise
// TruncatedFileError.
PpmImage read_ppm(const std::string& path);

// Scales so the short side equals `target` (nearest neighbor), center-crops
// to target x target, and converts to a [1, 3, target, target] tensor with
// values in [0, 1].
TensorT<float> image_to_tensor(const PpmImage& image, std::size_t target);

}  // namespace cvit
