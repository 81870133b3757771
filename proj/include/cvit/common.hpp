#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvit {

// Error taxonomy. CLI maps these to exit codes: config/usage -> 2,
// data/format -> 3, numerical -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DivisibilityError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// Raised when a forward op produces NaN/Inf; carries the active layer scope.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// File-format errors (checkpoints, PPM images). Kept distinct so callers can
// tell a corrupt header from a truncated file from a shape mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TensorShapeError : public FormatError {
 public:
  using FormatError::FormatError;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Thread-local stack of layer names, pushed by composite layers during
// forward so a NumericalError can name the layer that produced it.
namespace detail {
inline thread_local std::vector<std::string> layer_scope;
}

class LayerScope {
 public:
  explicit LayerScope(std::string name) {
    detail::layer_scope.push_back(std::move(name));
  }
  ~LayerScope() { detail::layer_scope.pop_back(); }
  LayerScope(const LayerScope&) = delete;
  LayerScope& operator=(const LayerScope&) = delete;
};

inline std::string current_layer_path() {
  std::string out;
  for (const auto& s : detail::layer_scope) {
    if (!out.empty()) out += '.';
    out += s;
  }
  return out.empty() ? std::string("<top>") : out;
}

}  // namespace cvit
