#pragma once

// RFC 4180 CSV: comma-delimited, double-quote quoting with "" escapes,
// CRLF or LF record separators, line breaks allowed inside quoted fields.

#include <string>
#include <string_view>
#include <vector>

#include "factify/error.hpp"

namespace factify::csv {

struct Record {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line where the record starts
};

struct ParseResult {
  std::vector<Record> records;
  std::vector<std::string> errors;  // nonfatal: "line N: reason"
};

inline ParseResult parse(std::string_view data) {
  ParseResult out;
  if (data.size() >= 3 && data.substr(0, 3) == "\xEF\xBB\xBF") data.remove_prefix(3);
  std::size_t i = 0;
  std::size_t line = 1;
  while (i < data.size()) {
    Record rec;
    rec.line = line;
    std::string field;
    bool in_quotes = false;
    bool field_was_quoted = false;
    bool bad = false;
    bool done = false;
    while (!done) {
      if (i >= data.size()) {
        if (in_quotes) {
          out.errors.push_back("line " + std::to_string(rec.line) + ": unterminated quoted field");
          bad = true;
        }
        rec.fields.push_back(std::move(field));
        done = true;
        break;
      }
      const char c = data[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < data.size() && data[i + 1] == '"') {
            field.push_back('"');
            i += 2;
          } else {
            in_quotes = false;
            ++i;
          }
        } else {
          if (c == '\n') ++line;
          field.push_back(c);
          ++i;
        }
        continue;
      }
      switch (c) {
        case '"':
          if (field.empty() && !field_was_quoted) {
            in_quotes = true;
            field_was_quoted = true;
          } else {
            if (!bad) out.errors.push_back("line " + std::to_string(line) + ": stray quote in unquoted field");
            bad = true;
            field.push_back(c);
          }
          ++i;
          break;
        case ',':
          rec.fields.push_back(std::move(field));
          field.clear();
          field_was_quoted = false;
          ++i;
          break;
        case '\r':
          ++i;
          if (i < data.size() && data[i] == '\n') ++i;
          rec.fields.push_back(std::move(field));
          ++line;
          done = true;
          break;
        case '\n':
          ++i;
          rec.fields.push_back(std::move(field));
          ++line;
          done = true;
          break;
        default:
          if (field_was_quoted) {
            if (!bad) out.errors.push_back("line " + std::to_string(line) + ": text after closing quote");
            bad = true;
          }
          field.push_back(c);
          ++i;
      }
    }
    const bool blank = rec.fields.size() == 1 && rec.fields[0].empty();
    if (!bad && !blank) out.records.push_back(std::move(rec));
  }
  return out;
}

inline std::string quote(std::string_view field) {
  const bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string format_row(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line.push_back(',');
    line += quote(fields[i]);
  }
  line += "\r\n";
  return line;
}

}  // namespace factify::csv
