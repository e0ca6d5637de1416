#pragma once

// Encoder backends behind a registry of EncoderSpec entries.
//
// Built-in kinds:
//   mock-text / mock-image  hash-seeded Gaussian vectors, no locality.
//   planted-text            vectors with prescribed pairwise cosine, driven by
//                           an inline marker "[[plant:KEY:COS]]".
//   pixel-image             area-resized raw pixels, centred at 127.5.
//   precomputed-text        read-only EMB1 store keyed by sha256 of the text,
//                           filled offline by a pretrained sentence encoder.
//   onnx-image              pretrained CNN/ViT exported to ONNX, run through
//                           OpenCV DNN with the backend's published preprocessing.
//
// Encoder instances are not thread-safe; use one instance per worker.

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "factify/embedding.hpp"
#include "factify/embedding_cache.hpp"
#include "factify/error.hpp"
#include "factify/hashing.hpp"
#include "factify/rng.hpp"

namespace factify {

/// Process-wide count of real encoder invocations (cache hits excluded).
inline std::atomic<std::uint64_t>& encoder_invocations() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

class TextEncoder {
 public:
  explicit TextEncoder(EncoderSpec spec) : spec_(std::move(spec)) {}
  virtual ~TextEncoder() = default;
  const EncoderSpec& spec() const { return spec_; }
  virtual std::vector<float> encode(std::string_view text) = 0;

 private:
  EncoderSpec spec_;
};

class ImageEncoder {
 public:
  explicit ImageEncoder(EncoderSpec spec) : spec_(std::move(spec)) {}
  virtual ~ImageEncoder() = default;
  const EncoderSpec& spec() const { return spec_; }
  virtual std::vector<float> encode(const Image& image) = 0;

 private:
  EncoderSpec spec_;
};

namespace backends {

inline std::vector<double> gaussian_vector(std::uint64_t seed, int dim) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = rng.normal();
  return v;
}

inline void normalize_in_place(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

inline std::vector<float> to_float(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

class MockText final : public TextEncoder {
 public:
  using TextEncoder::TextEncoder;
  std::vector<float> encode(std::string_view text) override {
    const std::uint64_t seed = fnv1a64(text, fnv1a64(spec().backend_id));
    return to_float(gaussian_vector(seed, spec().dim));
  }
};

struct PlantMarker {
  std::string key;
  double cos = 1.0;
};

inline std::optional<PlantMarker> find_plant_marker(std::string_view text) {
  static const std::regex pattern(R"(\[\[plant:([A-Za-z0-9_\-]+):(-?[0-9]*\.?[0-9]+)\]\])");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, pattern)) return std::nullopt;
  PlantMarker marker{m[1].str(), std::stod(m[2].str())};
  marker.cos = std::clamp(marker.cos, -1.0, 1.0);
  return marker;
}

/// Strings tagged with the same KEY get cosine exactly COS to the key's anchor
/// (an anchor-tagged string uses COS = 1). Untagged strings behave like MockText.
class PlantedText final : public TextEncoder {
 public:
  using TextEncoder::TextEncoder;
  std::vector<float> encode(std::string_view text) override {
    const int dim = spec().dim;
    auto noise = gaussian_vector(fnv1a64(text, fnv1a64(spec().backend_id + "/noise")), dim);
    normalize_in_place(noise);
    const auto marker = find_plant_marker(text);
    if (!marker) return to_float(noise);
    auto anchor = gaussian_vector(fnv1a64(marker->key, fnv1a64(spec().backend_id + "/anchor")), dim);
    normalize_in_place(anchor);
    // Orthogonalize the text-specific direction against the anchor.
    double proj = 0.0;
    for (int i = 0; i < dim; ++i) proj += noise[i] * anchor[i];
    for (int i = 0; i < dim; ++i) noise[i] -= proj * anchor[i];
    normalize_in_place(noise);
    const double c = marker->cos;
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) v[i] = c * anchor[i] + s * noise[i];
    return to_float(v);
  }
};

class PrecomputedText final : public TextEncoder {
 public:
  explicit PrecomputedText(EncoderSpec spec) : TextEncoder(std::move(spec)) {
    if (!fs::is_directory(this->spec().asset)) {
      throw Error(ErrorKind::BackendUnavailable,
                  this->spec().backend_id + ": precomputed store not found at " + this->spec().asset);
    }
  }
  std::vector<float> encode(std::string_view text) override {
    const std::string key = sha256_hex(text);
    const fs::path path = fs::path(spec().asset) / key.substr(0, 2) / (key + ".vec");
    auto bytes = io::read_file(path);
    if (!bytes) throw Error(ErrorKind::EncodingFailure, spec().backend_id + ": no precomputed vector for text " + key);
    auto values = cache::decode_vec(*bytes);
    if (!values) throw Error(ErrorKind::EncodingFailure, spec().backend_id + ": corrupt precomputed entry " + key);
    return std::move(*values);
  }
};

inline std::uint64_t image_seed(const Image& image, std::string_view salt) {
  std::uint64_t h = fnv1a64(salt);
  h = fnv1a64(std::to_string(image.width) + "x" + std::to_string(image.height), h);
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size()), h);
}

class MockImage final : public ImageEncoder {
 public:
  using ImageEncoder::ImageEncoder;
  std::vector<float> encode(const Image& image) override {
    return to_float(gaussian_vector(image_seed(image, spec().backend_id), spec().dim));
  }
};

inline cv::Mat to_mat(const Image& image) {
  cv::Mat m(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.rgb.data()));
  return m;
}

class PixelImage final : public ImageEncoder {
 public:
  explicit PixelImage(EncoderSpec spec) : ImageEncoder(std::move(spec)) {
    const int side = this->spec().image_side;
    if (side <= 0 || side * side * 3 != this->spec().dim) {
      throw Error(ErrorKind::ShapeMismatch, this->spec().backend_id + ": pixel-image dim must be 3*side*side");
    }
  }
  std::vector<float> encode(const Image& image) override {
    const int side = spec().image_side;
    cv::Mat resized;
    cv::Mat src = to_mat(image);
    if (image.width == side && image.height == side) {
      resized = src;
    } else {
      cv::resize(src, resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
    }
    std::vector<float> v(static_cast<std::size_t>(side * side * 3));
    std::size_t k = 0;
    for (int y = 0; y < side; ++y) {
      const auto* row = resized.ptr<std::uint8_t>(y);
      for (int x = 0; x < side * 3; ++x) v[k++] = static_cast<float>(row[x]) - 127.5f;
    }
    return v;
  }
};

struct PreprocessRecipe {
  int resize_shorter = 256;
  int crop = 224;
  int interpolation = cv::INTER_LINEAR;
  cv::Scalar mean{0.485, 0.456, 0.406};
  cv::Scalar stddev{0.229, 0.224, 0.225};
};

inline PreprocessRecipe recipe_for(const std::string& id) {
  if (id == "imagenet") return {};
  if (id == "clip") {
    return {224, 224, cv::INTER_CUBIC, cv::Scalar(0.48145466, 0.4578275, 0.40821073),
            cv::Scalar(0.26862954, 0.26130258, 0.27577711)};
  }
  throw Error(ErrorKind::ConfigInvalid, "unknown image preprocessing recipe: " + id);
}

/// Resize shorter side, centre crop, scale to [0,1], channel-normalize, NCHW float blob.
inline cv::Mat preprocess(const Image& image, const PreprocessRecipe& recipe) {
  cv::Mat src = to_mat(image);
  const double scale = static_cast<double>(recipe.resize_shorter) / std::min(image.width, image.height);
  const int w = std::max(recipe.crop, static_cast<int>(std::lround(image.width * scale)));
  const int h = std::max(recipe.crop, static_cast<int>(std::lround(image.height * scale)));
  cv::Mat resized;
  cv::resize(src, resized, cv::Size(w, h), 0, 0, recipe.interpolation);
  const cv::Rect roi((w - recipe.crop) / 2, (h - recipe.crop) / 2, recipe.crop, recipe.crop);
  cv::Mat cropped;
  resized(roi).convertTo(cropped, CV_32FC3, 1.0 / 255.0);
  cropped -= recipe.mean;
  cv::divide(cropped, recipe.stddev, cropped);
  // Raster is already RGB; no channel swap.
  return cv::dnn::blobFromImage(cropped, 1.0, cv::Size(), cv::Scalar(), false, false, CV_32F);
}

class OnnxImage final : public ImageEncoder {
 public:
  explicit OnnxImage(EncoderSpec spec) : ImageEncoder(std::move(spec)), recipe_(recipe_for(this->spec().recipe)) {
    if (!fs::is_regular_file(this->spec().asset)) {
      throw Error(ErrorKind::BackendUnavailable, this->spec().backend_id + ": model not found at " + this->spec().asset);
    }
    try {
      net_ = cv::dnn::readNetFromONNX(this->spec().asset);
    } catch (const cv::Exception& e) {
      throw Error(ErrorKind::BackendUnavailable, this->spec().backend_id + ": cannot load model: " + e.what());
    }
  }
  std::vector<float> encode(const Image& image) override {
    cv::Mat out;
    try {
      net_.setInput(preprocess(image, recipe_));
      out = net_.forward();
    } catch (const cv::Exception& e) {
      throw Error(ErrorKind::EncodingFailure, spec().backend_id + ": " + e.what());
    }
    cv::Mat flat = out.reshape(1, 1);
    if (static_cast<int>(flat.total()) != spec().dim) {
      throw Error(ErrorKind::EncodingFailure, spec().backend_id + ": model produced " + std::to_string(flat.total()) +
                                                  " values, registry declares " + std::to_string(spec().dim));
    }
    std::vector<float> v(flat.total());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = flat.at<float>(0, static_cast<int>(i));
    return v;
  }

 private:
  PreprocessRecipe recipe_;
  cv::dnn::Net net_;
};

}  // namespace backends

inline std::unique_ptr<TextEncoder> make_text_encoder(const EncoderSpec& spec) {
  if (spec.modality != Modality::Text) throw Error(ErrorKind::ConfigInvalid, spec.backend_id + " is not a text backend");
  if (spec.kind == "mock-text") return std::make_unique<backends::MockText>(spec);
  if (spec.kind == "planted-text") return std::make_unique<backends::PlantedText>(spec);
  if (spec.kind == "precomputed-text") return std::make_unique<backends::PrecomputedText>(spec);
  throw Error(ErrorKind::BackendUnavailable, spec.backend_id + ": unknown text backend kind '" + spec.kind + "'");
}

inline std::unique_ptr<ImageEncoder> make_image_encoder(const EncoderSpec& spec) {
  if (spec.modality != Modality::Image) throw Error(ErrorKind::ConfigInvalid, spec.backend_id + " is not an image backend");
  if (spec.kind == "mock-image") return std::make_unique<backends::MockImage>(spec);
  if (spec.kind == "pixel-image") return std::make_unique<backends::PixelImage>(spec);
  if (spec.kind == "onnx-image") return std::make_unique<backends::OnnxImage>(spec);
  throw Error(ErrorKind::BackendUnavailable, spec.backend_id + ": unknown image backend kind '" + spec.kind + "'");
}

namespace detail {

inline Embedding finish(const EncoderSpec& spec, std::vector<float> values) {
  if (static_cast<int>(values.size()) != spec.dim) {
    throw Error(ErrorKind::EncodingFailure, spec.backend_id + ": produced dim " + std::to_string(values.size()) +
                                                ", expected " + std::to_string(spec.dim));
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::EncodingFailure, spec.backend_id + ": non-finite embedding value");
  }
  return Embedding{std::move(values), spec.backend_id};
}

}  // namespace detail

inline Embedding encode_text(TextEncoder& encoder, std::string_view text) {
  encoder_invocations().fetch_add(1);
  return detail::finish(encoder.spec(), encoder.encode(text));
}

inline Embedding encode_image(ImageEncoder& encoder, const Image& image) {
  if (image.empty()) throw Error(ErrorKind::EncodingFailure, encoder.spec().backend_id + ": empty raster");
  encoder_invocations().fetch_add(1);
  return detail::finish(encoder.spec(), encoder.encode(image));
}

/// backend_id -> EncoderSpec. Relative asset paths resolve against models_root.
class BackendRegistry {
 public:
  BackendRegistry() = default;

  static BackendRegistry defaults() {
    BackendRegistry r;
    auto text = [&](std::string id, std::string kind, int dim, std::string asset = {}) {
      r.add({std::move(id), dim, Modality::Text, std::move(kind), "1", std::move(asset), {}, 16});
    };
    auto image = [&](std::string id, std::string kind, int dim, std::string asset = {}, std::string recipe = {},
                     int side = 16) {
      r.add({std::move(id), dim, Modality::Image, std::move(kind), "1", std::move(asset), std::move(recipe), side});
    };
    text("mock-text", "mock-text", 512);
    text("planted-text", "planted-text", 512);
    text("sentence-text", "precomputed-text", 768, "sentence-text");
    text("simcse-text", "precomputed-text", 768, "simcse-text");
    text("roberta-text", "precomputed-text", 768, "roberta-text");
    text("clip-text", "precomputed-text", 512, "clip-text");
    image("mock-image", "mock-image", 512);
    image("planted-image", "pixel-image", 768, {}, {}, 16);
    image("resnet-image", "onnx-image", 2048, "resnet50.onnx", "imagenet");
    image("clip-image", "onnx-image", 512, "clip-image.onnx", "clip");
    return r;
  }

  void add(EncoderSpec spec) {
    if (spec.backend_id.empty()) throw Error(ErrorKind::ConfigInvalid, "backend_id must be non-empty");
    if (spec.dim <= 0) throw Error(ErrorKind::ConfigInvalid, spec.backend_id + ": dim must be positive");
    specs_[spec.backend_id] = std::move(spec);
  }

  bool contains(const std::string& id) const { return specs_.count(id) > 0; }

  const EncoderSpec& at(const std::string& id) const {
    auto it = specs_.find(id);
    if (it == specs_.end()) throw Error(ErrorKind::ConfigInvalid, "unknown backend_id '" + id + "'");
    return it->second;
  }

  /// Spec with the asset path resolved against models_root.
  EncoderSpec resolved(const std::string& id, const fs::path& models_root) const {
    EncoderSpec spec = at(id);
    if (!spec.asset.empty() && fs::path(spec.asset).is_relative()) spec.asset = (models_root / spec.asset).string();
    return spec;
  }

  const std::map<std::string, EncoderSpec>& all() const { return specs_; }

  /// Overlay entries from a JSON object {id: {kind, dim, modality?, version?, asset?, recipe?, image_side?}}.
  void merge_json(const nlohmann::json& section) {
    if (!section.is_object()) throw Error(ErrorKind::ConfigInvalid, "backends section must be an object");
    for (const auto& [id, entry] : section.items()) {
      EncoderSpec spec = contains(id) ? at(id) : EncoderSpec{};
      spec.backend_id = id;
      try {
        if (entry.contains("kind")) spec.kind = entry.at("kind").get<std::string>();
        if (entry.contains("dim")) spec.dim = entry.at("dim").get<int>();
        if (entry.contains("version")) spec.version = entry.at("version").get<std::string>();
        if (entry.contains("asset")) spec.asset = entry.at("asset").get<std::string>();
        if (entry.contains("recipe")) spec.recipe = entry.at("recipe").get<std::string>();
        if (entry.contains("image_side")) spec.image_side = entry.at("image_side").get<int>();
        if (entry.contains("modality")) {
          spec.modality = entry.at("modality").get<std::string>() == "image" ? Modality::Image : Modality::Text;
        } else if (!contains(id)) {
          spec.modality = spec.kind.ends_with("-image") ? Modality::Image : Modality::Text;
        }
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigInvalid, "backend '" + id + "': " + e.what());
      }
      add(std::move(spec));
    }
  }

 private:
  std::map<std::string, EncoderSpec> specs_;
};

inline nlohmann::ordered_json to_json(const EncoderSpec& spec) {
  nlohmann::ordered_json j;
  j["backend_id"] = spec.backend_id;
  j["kind"] = spec.kind;
  j["modality"] = std::string(to_string(spec.modality));
  j["dim"] = spec.dim;
  j["version"] = spec.version;
  j["cache_version"] = spec.cache_version();
  if (!spec.recipe.empty()) j["recipe"] = spec.recipe;
  if (spec.kind == "pixel-image") j["image_side"] = spec.image_side;
  return j;
}

}  // namespace factify
