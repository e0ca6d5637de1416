#pragma once

// Per-pair feature assembly under a fixed, named schema, and z-score
// normalization fitted on the training split.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "factify/entailment_head.hpp"
#include "factify/error.hpp"
#include "factify/lexical.hpp"

namespace factify::fusion {

enum class FeatureFamily { Rouge, Length, TextCosine, ImageCosine, Head };

inline constexpr FeatureFamily kAllFamilies[] = {FeatureFamily::Rouge, FeatureFamily::Length, FeatureFamily::TextCosine,
                                                 FeatureFamily::ImageCosine, FeatureFamily::Head};

inline std::string_view to_string(FeatureFamily f) {
  switch (f) {
    case FeatureFamily::Rouge: return "rouge";
    case FeatureFamily::Length: return "length";
    case FeatureFamily::TextCosine: return "text_cosine";
    case FeatureFamily::ImageCosine: return "image_cosine";
    case FeatureFamily::Head: return "head";
  }
  return "?";
}

inline std::optional<FeatureFamily> parse_family(std::string_view s) {
  for (FeatureFamily f : kAllFamilies) {
    if (s == to_string(f)) return f;
  }
  return std::nullopt;
}

using FeatureFlags = std::set<FeatureFamily>;

inline FeatureFlags all_families() { return FeatureFlags(std::begin(kAllFamilies), std::end(kAllFamilies)); }

using Schema = std::vector<std::string>;

/// Feature order: rouge1_f, rouge2_f, rougeL_f, claim_len, doc_len, len_ratio,
/// text_cosine, image_cosine, head probabilities; families absent from `flags`
/// are dropped. The five-way head is never fused.
inline Schema build_schema(const FeatureFlags& flags, std::optional<head::HeadVariant> variant) {
  Schema s;
  if (flags.count(FeatureFamily::Rouge)) s.insert(s.end(), {"rouge1_f", "rouge2_f", "rougeL_f"});
  if (flags.count(FeatureFamily::Length)) s.insert(s.end(), {"claim_len", "doc_len", "len_ratio"});
  if (flags.count(FeatureFamily::TextCosine)) s.push_back("text_cosine");
  if (flags.count(FeatureFamily::ImageCosine)) s.push_back("image_cosine");
  if (flags.count(FeatureFamily::Head) && variant && *variant != head::HeadVariant::AllConcat5) {
    const auto names = head::feature_names(*variant);
    s.insert(s.end(), names.begin(), names.end());
  }
  return s;
}

struct FeatureVector {
  std::vector<double> values;
  std::shared_ptr<const Schema> schema;

  bool operator==(const FeatureVector& o) const {
    return values == o.values && (schema == o.schema || (schema && o.schema && *schema == *o.schema));
  }
};

struct FeatureLayout {
  FeatureFlags flags;
  std::optional<head::HeadVariant> variant;
  std::shared_ptr<const Schema> schema;

  FeatureLayout(FeatureFlags f, std::optional<head::HeadVariant> v)
      : flags(std::move(f)), variant(v), schema(std::make_shared<const Schema>(build_schema(flags, variant))) {}

  bool fuses_head() const {
    return flags.count(FeatureFamily::Head) && variant && *variant != head::HeadVariant::AllConcat5;
  }
  std::size_t head_width() const { return fuses_head() ? head::feature_count(*variant) : 0; }
};

inline FeatureVector assemble_features(const FeatureLayout& layout, const lexical::LexicalFeatures& lex,
                                       double text_sim, double image_sim, std::span<const double> head_sub) {
  if (head_sub.size() != layout.head_width()) {
    throw Error(ErrorKind::SchemaMismatch, "head sub-vector has length " + std::to_string(head_sub.size()) +
                                               ", configuration expects " + std::to_string(layout.head_width()));
  }
  FeatureVector fv;
  fv.schema = layout.schema;
  auto& v = fv.values;
  v.reserve(layout.schema->size());
  const auto& f = layout.flags;
  if (f.count(FeatureFamily::Rouge)) v.insert(v.end(), {lex.rouge1_f, lex.rouge2_f, lex.rougeL_f});
  if (f.count(FeatureFamily::Length)) {
    v.insert(v.end(), {static_cast<double>(lex.claim_len), static_cast<double>(lex.doc_len), lex.len_ratio});
  }
  if (f.count(FeatureFamily::TextCosine)) v.push_back(text_sim);
  if (f.count(FeatureFamily::ImageCosine)) v.push_back(image_sim);
  v.insert(v.end(), head_sub.begin(), head_sub.end());
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorKind::SchemaMismatch, "non-finite feature value");
  }
  return fv;
}

struct NormalizerState {
  Schema schema;
  std::vector<double> mean;
  std::vector<double> stddev;  // population std
  std::string fitted_on;
};

inline void check_schema(const Schema& expected, const FeatureVector& row) {
  if (!row.schema || *row.schema != expected) {
    throw Error(ErrorKind::SchemaMismatch, "row schema differs from the fitted schema");
  }
}

/// Per-feature mean and population standard deviation.
inline NormalizerState fit_normalizer(const std::vector<FeatureVector>& rows, std::string fitted_on = "train") {
  if (rows.size() < 2) throw Error(ErrorKind::DegenerateData, "normalizer needs at least 2 rows");
  NormalizerState s;
  s.schema = *rows.front().schema;
  s.fitted_on = std::move(fitted_on);
  const std::size_t d = s.schema.size();
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (const auto& r : rows) {
    check_schema(s.schema, r);
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r.values[j];
  }
  const double n = static_cast<double>(rows.size());
  for (auto& m : s.mean) m /= n;
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dev = r.values[j] - s.mean[j];
      s.stddev[j] += dev * dev;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    // A constant column keeps std 0 even when the summed mean picks up rounding.
    const double first = rows.front().values[j];
    const bool constant = std::all_of(rows.begin(), rows.end(), [&](const FeatureVector& r) { return r.values[j] == first; });
    s.stddev[j] = constant ? 0.0 : std::sqrt(s.stddev[j] / n);
  }
  return s;
}

/// (x - mean) / std; a zero-std feature maps to 0.
inline FeatureVector apply_normalizer(const NormalizerState& s, const FeatureVector& row) {
  check_schema(s.schema, row);
  FeatureVector out{std::vector<double>(row.values.size()), row.schema};
  for (std::size_t j = 0; j < row.values.size(); ++j) {
    out.values[j] = s.stddev[j] > 0.0 ? (row.values[j] - s.mean[j]) / s.stddev[j] : 0.0;
  }
  return out;
}

inline nlohmann::ordered_json to_json(const NormalizerState& s) {
  nlohmann::ordered_json j;
  j["fitted_on"] = s.fitted_on;
  j["features"] = s.schema;
  j["means"] = s.mean;
  j["stds"] = s.stddev;
  return j;
}

inline NormalizerState normalizer_from_json(const nlohmann::json& j) {
  NormalizerState s;
  try {
    s.fitted_on = j.at("fitted_on").get<std::string>();
    s.schema = j.at("features").get<Schema>();
    s.mean = j.at("means").get<std::vector<double>>();
    s.stddev = j.at("stds").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, std::string("bad normalizer.json: ") + e.what());
  }
  if (s.mean.size() != s.schema.size() || s.stddev.size() != s.schema.size()) {
    throw Error(ErrorKind::SchemaMismatch, "normalizer.json lengths disagree with its feature list");
  }
  return s;
}

}  // namespace factify::fusion
