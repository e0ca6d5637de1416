#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "factify/error.hpp"

namespace factify {

enum class Modality { Text, Image };

inline std::string_view to_string(Modality m) { return m == Modality::Text ? "text" : "image"; }

/// Registry entry for one encoder backend.
struct EncoderSpec {
  std::string backend_id;
  int dim = 0;
  Modality modality = Modality::Text;
  std::string kind;     // mock-text, planted-text, precomputed-text, mock-image, pixel-image, onnx-image
  std::string version = "1";
  std::string asset;    // model file or directory, empty for built-in kinds
  std::string recipe;   // image preprocessing recipe id (onnx-image)
  int image_side = 16;  // pixel-image resize side

  /// Version string that enters cache keys; changes whenever outputs could change.
  std::string cache_version() const {
    std::string v = kind + "/" + version;
    if (!recipe.empty()) v += "/" + recipe;
    if (kind == "pixel-image") v += "/side" + std::to_string(image_side);
    return v;
  }
};

struct Embedding {
  std::vector<float> values;
  std::string backend_id;

  std::size_t dim() const { return values.size(); }
  bool operator==(const Embedding&) const = default;
};

/// Decoded 8-bit RGB raster, row-major, interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  bool empty() const { return width <= 0 || height <= 0 || rgb.empty(); }
  bool operator==(const Image&) const = default;
};

inline constexpr double kZeroNormThreshold = 1e-12;

/// dot(a,b)/(|a||b|) clamped to [-1, 1]. Throws ZeroVector when either norm is below 1e-12.
template <typename T>
double cosine(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "cosine dimension mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kZeroNormThreshold || nb < kZeroNormThreshold) throw Error(ErrorKind::ZeroVector, "zero-norm vector");
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return cosine(std::span<const double>(a), std::span<const double>(b));
}

inline double cosine(const Embedding& a, const Embedding& b) {
  return cosine(std::span<const float>(a.values), std::span<const float>(b.values));
}

}  // namespace factify
