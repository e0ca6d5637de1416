#pragma once

// Literal-overlap and length features: tokenizer, ROUGE-N, ROUGE-L.

#include <unicode/locid.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "factify/datamodel.hpp"
#include "factify/text.hpp"

namespace factify::lexical {

using TokenSeq = std::vector<std::string>;

struct RougeScore {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

struct LexicalFeatures {
  double rouge1_f = 0.0;
  double rouge2_f = 0.0;
  double rougeL_f = 0.0;
  std::size_t claim_len = 0;
  std::size_t doc_len = 0;
  double len_ratio = 1.0;
};

inline bool is_word_char(UChar32 c) {
  if (u_hasBinaryProperty(c, UCHAR_ALPHABETIC)) return true;
  switch (u_charType(c)) {
    case U_DECIMAL_DIGIT_NUMBER:
    case U_NON_SPACING_MARK:
    case U_COMBINING_SPACING_MARK:
      return true;
    default:
      return false;
  }
}

/// Lowercase, then split on maximal runs of non-alphanumeric code points.
inline TokenSeq tokenize(std::string_view utf8) {
  icu::UnicodeString s = text::to_unicode(utf8);
  s.toLower(icu::Locale::getRoot());
  TokenSeq tokens;
  icu::UnicodeString current;
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (is_word_char(c)) {
      current.append(c);
    } else if (!current.isEmpty()) {
      tokens.push_back(text::to_utf8(current));
      current.remove();
    }
  }
  if (!current.isEmpty()) tokens.push_back(text::to_utf8(current));
  return tokens;
}

inline double harmonic_f1(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

inline RougeScore make_score(double overlap, std::size_t candidate_total, std::size_t reference_total) {
  RougeScore s;
  s.recall = reference_total > 0 ? overlap / static_cast<double>(reference_total) : 0.0;
  s.precision = candidate_total > 0 ? overlap / static_cast<double>(candidate_total) : 0.0;
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

namespace detail {

inline std::unordered_map<std::string, std::size_t> ngram_counts(const TokenSeq& tokens, std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

inline std::size_t ngram_total(const TokenSeq& tokens, std::size_t n) {
  return tokens.size() >= n ? tokens.size() - n + 1 : 0;
}

}  // namespace detail

/// Clipped n-gram overlap: sum over distinct n-grams of min(candidate, reference) counts.
inline std::size_t ngram_overlap(const TokenSeq& candidate, const TokenSeq& reference, std::size_t n) {
  const auto cand = detail::ngram_counts(candidate, n);
  const auto ref = detail::ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

inline RougeScore rouge_n(const TokenSeq& candidate, const TokenSeq& reference, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::ShapeMismatch, "rouge_n requires n >= 1");
  const double overlap = static_cast<double>(ngram_overlap(candidate, reference, n));
  return make_score(overlap, detail::ngram_total(candidate, n), detail::ngram_total(reference, n));
}

/// Longest common subsequence length, O(|a|·|b|) time and O(min) memory.
inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  const TokenSeq& outer = a.size() >= b.size() ? a : b;
  const TokenSeq& inner = a.size() >= b.size() ? b : a;
  std::vector<std::size_t> prev(inner.size() + 1, 0);
  std::vector<std::size_t> cur(inner.size() + 1, 0);
  for (const auto& token : outer) {
    for (std::size_t j = 1; j <= inner.size(); ++j) {
      cur[j] = token == inner[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[inner.size()];
}

inline RougeScore rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
  const double l = static_cast<double>(lcs_length(candidate, reference));
  return make_score(l, candidate.size(), reference.size());
}

/// Candidate = claim, reference = document.
inline LexicalFeatures lexical_features(const TokenSeq& claim, const TokenSeq& doc) {
  LexicalFeatures f;
  f.rouge1_f = rouge_n(claim, doc, 1).f1;
  f.rouge2_f = rouge_n(claim, doc, 2).f1;
  f.rougeL_f = rouge_l(claim, doc).f1;
  f.claim_len = claim.size();
  f.doc_len = doc.size();
  f.len_ratio = static_cast<double>(std::max<std::size_t>(f.claim_len, 1)) /
                static_cast<double>(std::max<std::size_t>(f.doc_len, 1));
  return f;
}

inline LexicalFeatures lexical_features(const ClaimDocPair& pair) {
  return lexical_features(tokenize(pair.claim_text), tokenize(pair.doc_text));
}

}  // namespace factify::lexical
