#pragma once

#include <array>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "factify/datamodel.hpp"
#include "factify/error.hpp"

namespace factify::metrics {

/// counts[gold][predicted].
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumLabel5>, kNumLabel5> counts{};

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts) {
      for (auto c : row) t += c;
    }
    return t;
  }
  std::size_t row_sum(std::size_t g) const {
    std::size_t t = 0;
    for (auto c : counts[g]) t += c;
    return t;
  }
  std::size_t col_sum(std::size_t p) const {
    std::size_t t = 0;
    for (const auto& row : counts) t += row[p];
    return t;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct CategoryScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  bool operator==(const CategoryScores&) const = default;
};

struct EvalReport {
  std::array<CategoryScores, kNumLabel5> per_category{};
  double weighted_f1 = 0.0;
  ConfusionMatrix confusion;
  std::size_t n_rows = 0;

  double f1(Label5 l) const { return per_category[index_of(l)].f1; }
  bool operator==(const EvalReport&) const = default;
};

inline void check_lengths(std::span<const Label5> gold, std::span<const Label5> pred) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorKind::LengthMismatch,
                "gold has " + std::to_string(gold.size()) + " labels, pred has " + std::to_string(pred.size()));
  }
  if (gold.empty()) throw Error(ErrorKind::LengthMismatch, "empty label lists");
}

inline ConfusionMatrix confusion(std::span<const Label5> gold, std::span<const Label5> pred) {
  check_lengths(gold, pred);
  ConfusionMatrix m;
  for (std::size_t i = 0; i < gold.size(); ++i) ++m.counts[index_of(gold[i])][index_of(pred[i])];
  return m;
}

/// Per-category P/R/F1 with undefined ratios set to 0; weighted F1 = sum support*F1 / N.
inline EvalReport report_from_confusion(const ConfusionMatrix& m) {
  EvalReport r;
  r.confusion = m;
  r.n_rows = m.total();
  double weighted = 0.0;
  for (std::size_t c = 0; c < kNumLabel5; ++c) {
    const double tp = static_cast<double>(m.counts[c][c]);
    const double predicted = static_cast<double>(m.col_sum(c));
    const double actual = static_cast<double>(m.row_sum(c));
    auto& s = r.per_category[c];
    s.support = m.row_sum(c);
    s.precision = predicted > 0 ? tp / predicted : 0.0;
    s.recall = actual > 0 ? tp / actual : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    weighted += static_cast<double>(s.support) * s.f1;
  }
  r.weighted_f1 = r.n_rows > 0 ? weighted / static_cast<double>(r.n_rows) : 0.0;
  return r;
}

inline EvalReport weighted_f1(std::span<const Label5> gold, std::span<const Label5> pred) {
  return report_from_confusion(confusion(gold, pred));
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n_rows"] = r.n_rows;
  j["weighted_f1"] = r.weighted_f1;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (Label5 l : kAllLabel5) {
    const auto& s = r.per_category[index_of(l)];
    per[std::string(to_string(l))] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  j["per_category"] = per;
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (Label5 l : kAllLabel5) labels.push_back(std::string(to_string(l)));
  j["confusion"] = {{"labels", labels}, {"rows", "gold"}, {"columns", "predicted"}};
  nlohmann::ordered_json counts = nlohmann::ordered_json::array();
  for (const auto& row : r.confusion.counts) counts.push_back(row);
  j["confusion"]["counts"] = counts;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  ConfusionMatrix m;
  try {
    const auto& counts = j.at("confusion").at("counts");
    if (counts.size() != kNumLabel5) throw Error(ErrorKind::Io, "confusion matrix must be 5x5");
    for (std::size_t g = 0; g < kNumLabel5; ++g) {
      if (counts[g].size() != kNumLabel5) throw Error(ErrorKind::Io, "confusion matrix must be 5x5");
      for (std::size_t p = 0; p < kNumLabel5; ++p) m.counts[g][p] = counts[g][p].get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, std::string("bad eval report: ") + e.what());
  }
  return report_from_confusion(m);
}

inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string to_text(const EvalReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %9s %9s %9s %8s\n", "category", "precision", "recall", "f1", "support");
  out << line;
  for (Label5 l : kAllLabel5) {
    const auto& s = r.per_category[index_of(l)];
    std::snprintf(line, sizeof line, "%-24s %9.4f %9.4f %9.4f %8zu\n", std::string(to_string(l)).c_str(), s.precision,
                  s.recall, s.f1, s.support);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-24s %9s %9s %9.4f %8zu\n", "weighted", "", "", r.weighted_f1, r.n_rows);
  out << line << "\nconfusion (rows = gold, columns = predicted)\n";
  static const char* kShort[] = {"S_Text", "S_Multi", "I_Text", "I_Multi", "Refute"};
  std::snprintf(line, sizeof line, "%-10s", "");
  out << line;
  for (const char* s : kShort) {
    std::snprintf(line, sizeof line, "%9s", s);
    out << line;
  }
  out << '\n';
  for (std::size_t g = 0; g < kNumLabel5; ++g) {
    std::snprintf(line, sizeof line, "%-10s", kShort[g]);
    out << line;
    for (auto c : r.confusion.counts[g]) {
      std::snprintf(line, sizeof line, "%9zu", c);
      out << line;
    }
    out << '\n';
  }
  return out.str();
}

/// gold,<five predicted labels> header, one row per gold label.
inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "gold";
  for (Label5 l : kAllLabel5) out << ',' << to_string(l);
  out << '\n';
  for (Label5 g : kAllLabel5) {
    out << to_string(g);
    for (auto c : m.counts[index_of(g)]) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

}  // namespace factify::metrics
