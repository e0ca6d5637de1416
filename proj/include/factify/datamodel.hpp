#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "factify/error.hpp"
#include "factify/text.hpp"

namespace factify {

/// The five entailment categories. Enumerator order is the fixed tie-break
/// order used by the forest vote.
enum class Label5 : std::uint8_t {
  SupportText = 0,
  SupportMultimodal = 1,
  InsufficientText = 2,
  InsufficientMultimodal = 3,
  Refute = 4,
};

enum class Label3 : std::uint8_t {
  Support = 0,
  Insufficient = 1,
  Refute = 2,
};

inline constexpr std::size_t kNumLabel5 = 5;
inline constexpr std::size_t kNumLabel3 = 3;

inline constexpr std::array<Label5, kNumLabel5> kAllLabel5 = {
    Label5::SupportText, Label5::SupportMultimodal, Label5::InsufficientText, Label5::InsufficientMultimodal,
    Label5::Refute};

inline constexpr std::array<Label3, kNumLabel3> kAllLabel3 = {Label3::Support, Label3::Insufficient,
                                                               Label3::Refute};

inline constexpr std::size_t index_of(Label5 l) { return static_cast<std::size_t>(l); }
inline constexpr std::size_t index_of(Label3 l) { return static_cast<std::size_t>(l); }

inline Label5 label5_from_index(std::size_t i) {
  if (i >= kNumLabel5) throw Error(ErrorKind::ShapeMismatch, "Label5 index out of range: " + std::to_string(i));
  return static_cast<Label5>(i);
}

inline Label3 label3_from_index(std::size_t i) {
  if (i >= kNumLabel3) throw Error(ErrorKind::ShapeMismatch, "Label3 index out of range: " + std::to_string(i));
  return static_cast<Label3>(i);
}

inline std::string_view to_string(Label5 l) {
  switch (l) {
    case Label5::SupportText: return "Support_Text";
    case Label5::SupportMultimodal: return "Support_Multimodal";
    case Label5::InsufficientText: return "Insufficient_Text";
    case Label5::InsufficientMultimodal: return "Insufficient_Multimodal";
    case Label5::Refute: return "Refute";
  }
  return "?";
}

inline std::string_view to_string(Label3 l) {
  switch (l) {
    case Label3::Support: return "Support";
    case Label3::Insufficient: return "Insufficient";
    case Label3::Refute: return "Refute";
  }
  return "?";
}

/// Case-insensitive, whitespace-tolerant parse of the canonical names.
inline std::optional<Label5> parse_label5(std::string_view s) {
  const std::string key = text::lower_ascii(text::trim_ascii(s));
  for (Label5 l : kAllLabel5) {
    if (key == text::lower_ascii(to_string(l))) return l;
  }
  return std::nullopt;
}

/// Drops the text/multimodal axis; the text-only head cannot observe it.
constexpr Label3 collapse_label(Label5 l) {
  switch (l) {
    case Label5::SupportText:
    case Label5::SupportMultimodal:
      return Label3::Support;
    case Label5::InsufficientText:
    case Label5::InsufficientMultimodal:
      return Label3::Insufficient;
    case Label5::Refute:
      return Label3::Refute;
  }
  return Label3::Refute;
}

struct ClaimDocPair {
  std::string id;
  std::string claim_text;
  std::string doc_text;
  std::string claim_image_ref;
  std::string doc_image_ref;
  std::optional<Label5> gold_label;

  bool operator==(const ClaimDocPair&) const = default;
};

}  // namespace factify
