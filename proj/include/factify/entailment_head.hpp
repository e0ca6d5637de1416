#pragma once

// MLP heads over concatenated claim/document embeddings. Their category
// probabilities become fusion features (or, for the all-embedding five-way
// variant, a standalone classifier).

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "factify/datamodel.hpp"
#include "factify/error.hpp"
#include "factify/mlp.hpp"

namespace factify::head {

enum class HeadVariant {
  TextPair3,          // claim text ⊕ doc text -> 3-way
  ImagePair3,         // claim image ⊕ doc image -> 3-way
  TextAndImagePair3,  // both 3-way heads, features concatenated
  AllConcat5,         // all four embeddings -> 5-way standalone classifier
};

inline constexpr HeadVariant kAllVariants[] = {HeadVariant::TextPair3, HeadVariant::ImagePair3,
                                               HeadVariant::TextAndImagePair3, HeadVariant::AllConcat5};

inline std::string_view to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::TextPair3: return "TextPair3";
    case HeadVariant::ImagePair3: return "ImagePair3";
    case HeadVariant::TextAndImagePair3: return "TextAndImagePair3";
    case HeadVariant::AllConcat5: return "AllConcat5";
  }
  return "?";
}

inline std::optional<HeadVariant> parse_head_variant(std::string_view s) {
  for (HeadVariant v : kAllVariants) {
    if (s == to_string(v)) return v;
  }
  return std::nullopt;
}

enum class HeadInput { TextPair, ImagePair, AllFour };

inline std::string_view to_string(HeadInput in) {
  switch (in) {
    case HeadInput::TextPair: return "text_pair";
    case HeadInput::ImagePair: return "image_pair";
    case HeadInput::AllFour: return "all_four";
  }
  return "?";
}

inline std::optional<HeadInput> parse_head_input(std::string_view s) {
  for (HeadInput in : {HeadInput::TextPair, HeadInput::ImagePair, HeadInput::AllFour}) {
    if (s == to_string(in)) return in;
  }
  return std::nullopt;
}

/// Embeddings of one pair. An empty vector means unavailable (e.g. failed image)
/// and is fed to the head as zeros.
struct PairEmbeddings {
  std::vector<float> claim_text;
  std::vector<float> doc_text;
  std::vector<float> claim_image;
  std::vector<float> doc_image;
};

struct InputDims {
  int text = 0;
  int image = 0;

  int for_input(HeadInput in) const {
    switch (in) {
      case HeadInput::TextPair: return 2 * text;
      case HeadInput::ImagePair: return 2 * image;
      case HeadInput::AllFour: return 2 * text + 2 * image;
    }
    return 0;
  }
};

inline std::vector<HeadInput> inputs_for(HeadVariant v) {
  switch (v) {
    case HeadVariant::TextPair3: return {HeadInput::TextPair};
    case HeadVariant::ImagePair3: return {HeadInput::ImagePair};
    case HeadVariant::TextAndImagePair3: return {HeadInput::TextPair, HeadInput::ImagePair};
    case HeadVariant::AllConcat5: return {HeadInput::AllFour};
  }
  return {};
}

inline int output_dim_for(HeadInput in) { return in == HeadInput::AllFour ? 5 : 3; }

namespace detail {

inline void append(std::vector<double>& out, const std::vector<float>& v, int dim, const char* what) {
  if (v.empty()) {
    out.insert(out.end(), static_cast<std::size_t>(dim), 0.0);
    return;
  }
  if (static_cast<int>(v.size()) != dim) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + " embedding has dim " + std::to_string(v.size()) + ", expected " + std::to_string(dim));
  }
  out.insert(out.end(), v.begin(), v.end());
}

}  // namespace detail

inline std::vector<double> head_input(HeadInput in, const PairEmbeddings& e, const InputDims& dims) {
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(dims.for_input(in)));
  if (in == HeadInput::TextPair || in == HeadInput::AllFour) {
    detail::append(x, e.claim_text, dims.text, "claim text");
    detail::append(x, e.doc_text, dims.text, "doc text");
  }
  if (in == HeadInput::ImagePair || in == HeadInput::AllFour) {
    detail::append(x, e.claim_image, dims.image, "claim image");
    detail::append(x, e.doc_image, dims.image, "doc image");
  }
  return x;
}

/// Training target: collapsed 3-way label for pair heads, the 5-way label for AllFour.
inline int target_for(HeadInput in, Label5 gold) {
  return in == HeadInput::AllFour ? static_cast<int>(index_of(gold)) : static_cast<int>(index_of(collapse_label(gold)));
}

struct TrainedHead {
  HeadInput input = HeadInput::TextPair;
  InputDims dims;
  mlp::MlpConfig config;
  mlp::Params<double> params;
  mlp::TrainingLog log;

  mlp::EntailmentProbs predict(const PairEmbeddings& e) const {
    const auto x = head_input(input, e, dims);
    return mlp::forward(config, params, x);
  }
};

/// Trains one head on labeled pairs. `base` supplies hidden size, optimizer and seed.
inline TrainedHead train_head(const mlp::MlpConfig& base, HeadInput in, const InputDims& dims,
                              const std::vector<PairEmbeddings>& pairs, const std::vector<Label5>& gold) {
  if (pairs.size() != gold.size()) throw Error(ErrorKind::LengthMismatch, "head training pairs/labels differ in length");
  TrainedHead h;
  h.input = in;
  h.dims = dims;
  h.config = base;
  h.config.input_dim = dims.for_input(in);
  h.config.output_dim = output_dim_for(in);
  std::vector<mlp::Example> examples;
  examples.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    examples.push_back({head_input(in, pairs[i], dims), target_for(in, gold[i])});
  }
  auto trained = mlp::train<double>(h.config, examples);
  h.params = std::move(trained.params);
  h.log = std::move(trained.log);
  return h;
}

struct HeadSet {
  std::optional<TrainedHead> text;   // HeadInput::TextPair
  std::optional<TrainedHead> image;  // HeadInput::ImagePair
  std::optional<TrainedHead> all;    // HeadInput::AllFour

  const std::optional<TrainedHead>& for_input(HeadInput in) const {
    switch (in) {
      case HeadInput::TextPair: return text;
      case HeadInput::ImagePair: return image;
      case HeadInput::AllFour: return all;
    }
    return text;
  }
  std::optional<TrainedHead>& for_input(HeadInput in) {
    return const_cast<std::optional<TrainedHead>&>(std::as_const(*this).for_input(in));
  }
};

inline std::vector<std::string> feature_names(HeadVariant v) {
  static const char* kSuffix[] = {"support", "insufficient", "refute"};
  std::vector<std::string> names;
  for (HeadInput in : inputs_for(v)) {
    if (in == HeadInput::AllFour) {
      for (Label5 l : kAllLabel5) names.push_back("head5_p_" + text::lower_ascii(to_string(l)));
      continue;
    }
    const std::string prefix = in == HeadInput::TextPair ? "head_p_" : "head_img_p_";
    for (const char* s : kSuffix) names.push_back(prefix + s);
  }
  return names;
}

inline std::size_t feature_count(HeadVariant v) { return feature_names(v).size(); }

/// Probability vector(s) of the variant's head(s), or one-hot argmax when hard_labels.
inline std::vector<double> head_features(HeadVariant v, const HeadSet& heads, const PairEmbeddings& e,
                                         bool hard_labels = false) {
  std::vector<double> out;
  for (HeadInput in : inputs_for(v)) {
    const auto& h = heads.for_input(in);
    if (!h) throw Error(ErrorKind::ShapeMismatch, std::string("head for ") + std::string(to_string(in)) + " not trained");
    auto p = h->predict(e);
    if (hard_labels) {
      const auto k = p.argmax();
      for (std::size_t i = 0; i < p.probs.size(); ++i) p.probs[i] = i == k ? 1.0 : 0.0;
    }
    out.insert(out.end(), p.probs.begin(), p.probs.end());
  }
  return out;
}

}  // namespace factify::head
