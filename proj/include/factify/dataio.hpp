#pragma once

// Dataset ingestion (CSV splits), image fetching with a local download cache.

#include <curl/curl.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <chrono>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "factify/csv.hpp"
#include "factify/datamodel.hpp"
#include "factify/embedding.hpp"
#include "factify/embedding_cache.hpp"
#include "factify/error.hpp"
#include "factify/hashing.hpp"
#include "factify/text.hpp"

namespace factify::dataio {

namespace fs = std::filesystem;

inline const std::vector<std::string>& canonical_columns() {
  static const std::vector<std::string> cols = {"id", "claim", "claim_image", "document", "document_image", "category"};
  return cols;
}

/// canonical column name -> column name in the source file.
using ColumnMap = std::map<std::string, std::string>;

struct DroppedRow {
  std::size_t line = 0;
  std::string id;
  std::string reason;
};

struct LoadReport {
  std::vector<DroppedRow> dropped;  // empty texts, duplicate ids, bad labels, wrong field counts
  std::vector<std::string> malformed;  // CSV-level syntax errors
};

struct DatasetManifest {
  std::string split_name;
  std::vector<ClaimDocPair> rows;
  fs::path source_path;
  LoadReport report;

  /// True when every row carries a gold label.
  bool labeled() const {
    if (rows.empty()) return false;
    for (const auto& r : rows) {
      if (!r.gold_label) return false;
    }
    return true;
  }
  fs::path base_dir() const { return source_path.has_parent_path() ? source_path.parent_path() : fs::path("."); }
};

/// Loads one split. `category` is required for the train split and optional otherwise.
inline DatasetManifest load_split(const fs::path& csv_path, const std::string& split_name, const ColumnMap& column_map = {}) {
  const auto bytes = io::read_file(csv_path);
  if (!bytes) throw Error(ErrorKind::Io, "cannot read split file " + csv_path.string());
  auto parsed = csv::parse(std::string_view(reinterpret_cast<const char*>(bytes->data()), bytes->size()));
  if (parsed.records.empty()) throw Error(ErrorKind::MissingColumn, "id (no header row in " + csv_path.string() + ")");

  DatasetManifest m;
  m.split_name = split_name;
  m.source_path = csv_path;
  m.report.malformed = std::move(parsed.errors);

  const auto& header = parsed.records.front().fields;
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position[text::trim_ascii(header[i])] = i;
  auto locate = [&](const std::string& canonical) -> std::optional<std::size_t> {
    auto mapped = column_map.find(canonical);
    const std::string& source = mapped != column_map.end() ? mapped->second : canonical;
    auto it = position.find(source);
    if (it == position.end()) return std::nullopt;
    return it->second;
  };
  std::map<std::string, std::size_t> col;
  for (const auto& name : canonical_columns()) {
    auto p = locate(name);
    if (p) {
      col[name] = *p;
    } else if (name != "category" || split_name == "train") {
      throw Error(ErrorKind::MissingColumn, name);
    }
  }
  const bool has_category = col.count("category") > 0;

  std::set<std::string> seen;
  for (std::size_t r = 1; r < parsed.records.size(); ++r) {
    const auto& rec = parsed.records[r];
    auto drop = [&](std::string id, std::string reason) { m.report.dropped.push_back({rec.line, std::move(id), std::move(reason)}); };
    if (rec.fields.size() != header.size()) {
      drop({}, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(rec.fields.size()));
      continue;
    }
    ClaimDocPair p;
    p.id = text::trim_ascii(rec.fields[col["id"]]);
    p.claim_text = text::canonicalize(rec.fields[col["claim"]]);
    p.doc_text = text::canonicalize(rec.fields[col["document"]]);
    p.claim_image_ref = text::trim_ascii(rec.fields[col["claim_image"]]);
    p.doc_image_ref = text::trim_ascii(rec.fields[col["document_image"]]);
    if (p.id.empty()) {
      drop({}, "empty id");
      continue;
    }
    if (p.claim_text.empty()) {
      drop(p.id, "empty claim");
      continue;
    }
    if (p.doc_text.empty()) {
      drop(p.id, "empty document");
      continue;
    }
    if (has_category) {
      const std::string raw = text::trim_ascii(rec.fields[col["category"]]);
      if (!raw.empty()) {
        p.gold_label = parse_label5(raw);
        if (!p.gold_label) {
          drop(p.id, "unknown category '" + raw + "'");
          continue;
        }
      } else if (split_name == "train") {
        drop(p.id, "missing category");
        continue;
      }
    }
    if (!seen.insert(p.id).second) {
      drop(p.id, "duplicate id");
      continue;
    }
    m.rows.push_back(std::move(p));
  }
  return m;
}

/// Canonical-column CSV; the category column is written only when some row is labeled.
inline std::string serialize_split(const DatasetManifest& m) {
  bool any_label = false;
  for (const auto& r : m.rows) any_label = any_label || r.gold_label.has_value();
  std::vector<std::string> header = canonical_columns();
  if (!any_label) header.pop_back();
  std::string out = csv::format_row(header);
  for (const auto& r : m.rows) {
    std::vector<std::string> f = {r.id, r.claim_text, r.claim_image_ref, r.doc_text, r.doc_image_ref};
    if (any_label) f.push_back(r.gold_label ? std::string(to_string(*r.gold_label)) : std::string());
    out += csv::format_row(f);
  }
  return out;
}

inline void write_split(const DatasetManifest& m, const fs::path& path) { io::atomic_write(path, serialize_split(m)); }

inline DatasetManifest without_labels(DatasetManifest m) {
  for (auto& r : m.rows) r.gold_label.reset();
  return m;
}

// ---------------------------------------------------------------------------
// Images

/// Decodes PNG/JPEG/etc. bytes into RGB; grayscale and alpha are converted.
inline Image decode_image(std::span<const unsigned char> bytes) {
  if (bytes.empty()) throw Error(ErrorKind::DecodeFailure, "empty image data");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<unsigned char*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::DecodeFailure, e.what());
  }
  if (decoded.empty()) throw Error(ErrorKind::DecodeFailure, "undecodable image bytes");
  if (decoded.depth() != CV_8U) {
    cv::Mat scaled;
    decoded.convertTo(scaled, CV_8U, decoded.depth() == CV_16U ? 1.0 / 257.0 : 255.0);
    decoded = scaled;
  }
  cv::Mat rgb;
  switch (decoded.channels()) {
    case 1: cv::cvtColor(decoded, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(decoded, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(decoded, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw Error(ErrorKind::DecodeFailure, "unsupported channel count " + std::to_string(decoded.channels()));
  }
  Image img;
  img.width = rgb.cols;
  img.height = rgb.rows;
  img.rgb.resize(static_cast<std::size_t>(rgb.cols) * rgb.rows * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    std::memcpy(img.rgb.data() + static_cast<std::size_t>(y) * rgb.cols * 3, rgb.ptr<std::uint8_t>(y),
                static_cast<std::size_t>(rgb.cols) * 3);
  }
  return img;
}

inline std::vector<unsigned char> encode_png(const Image& img) {
  cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<unsigned char> out;
  // Fixed compression level keeps the encoded bytes reproducible.
  if (!cv::imencode(".png", bgr, out, {cv::IMWRITE_PNG_COMPRESSION, 6})) throw Error(ErrorKind::Io, "png encode failed");
  return out;
}

class Transport {
 public:
  virtual ~Transport() = default;
  /// Throws Error(FetchFailure) on network or HTTP errors.
  virtual std::vector<unsigned char> get(const std::string& uri) = 0;
};

class CurlTransport final : public Transport {
 public:
  explicit CurlTransport(long timeout_seconds = 30) : timeout_(timeout_seconds) {
    static const bool initialized = [] { return curl_global_init(CURL_GLOBAL_DEFAULT) == CURLE_OK; }();
    if (!initialized) throw Error(ErrorKind::FetchFailure, "libcurl initialization failed");
  }

  std::vector<unsigned char> get(const std::string& uri) override {
    std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), &curl_easy_cleanup);
    if (!curl) throw Error(ErrorKind::FetchFailure, "curl_easy_init failed");
    std::vector<unsigned char> body;
    curl_easy_setopt(curl.get(), CURLOPT_URL, uri.c_str());
    curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT, timeout_);
    curl_easy_setopt(curl.get(), CURLOPT_NOSIGNAL, 1L);
    curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, &CurlTransport::write_cb);
    curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &body);
    const CURLcode rc = curl_easy_perform(curl.get());
    if (rc != CURLE_OK) throw Error(ErrorKind::FetchFailure, uri + ": " + curl_easy_strerror(rc));
    return body;
  }

 private:
  static std::size_t write_cb(char* data, std::size_t size, std::size_t n, void* user) {
    auto* out = static_cast<std::vector<unsigned char>*>(user);
    out->insert(out->end(), data, data + size * n);
    return size * n;
  }

  long timeout_;
};

struct FetchPolicy {
  int retries = 3;
  int backoff_ms = 200;  // doubled after every failed attempt
};

inline bool is_remote(std::string_view ref) { return ref.starts_with("http://") || ref.starts_with("https://"); }

inline std::string extension_of(std::string_view uri) {
  auto end = uri.find_first_of("?#");
  std::string_view path = uri.substr(0, end);
  const auto slash = path.rfind('/');
  if (slash != std::string_view::npos) path = path.substr(slash + 1);
  const auto dot = path.rfind('.');
  if (dot == std::string_view::npos || dot + 1 == path.size() || path.size() - dot - 1 > 5) return "bin";
  std::string ext = text::lower_ascii(path.substr(dot + 1));
  for (char c : ext) {
    if (!std::isalnum(static_cast<unsigned char>(c))) return "bin";
  }
  return ext;
}

inline fs::path image_cache_path(const fs::path& cache_root, std::string_view uri) {
  return cache_root / "images" / (sha256_hex(uri) + "." + extension_of(uri));
}

/// Resolves image references to bytes. Remote URIs are downloaded once into
/// <cache_root>/images/ (atomic write); concurrent requests for the same URI
/// share one download.
class ImageFetcher {
 public:
  ImageFetcher(fs::path cache_root, std::shared_ptr<Transport> transport, FetchPolicy policy = {})
      : cache_root_(std::move(cache_root)), transport_(std::move(transport)), policy_(policy) {}

  std::vector<unsigned char> fetch_bytes(const std::string& ref, const fs::path& base_dir = ".") {
    if (ref.empty()) throw Error(ErrorKind::FetchFailure, "empty image reference");
    if (!is_remote(ref)) {
      fs::path p = ref.starts_with("file://") ? fs::path(ref.substr(7)) : fs::path(ref);
      if (p.is_relative()) p = base_dir / p;
      auto bytes = io::read_file(p);
      if (!bytes) throw Error(ErrorKind::FetchFailure, "cannot read image " + p.string());
      return std::move(*bytes);
    }
    const fs::path cached = image_cache_path(cache_root_, ref);
    if (auto bytes = io::read_file(cached)) return std::move(*bytes);

    std::shared_future<std::vector<unsigned char>> pending;
    std::promise<std::vector<unsigned char>> promise;
    bool leader = false;
    {
      std::lock_guard lock(mutex_);
      auto it = in_flight_.find(ref);
      if (it != in_flight_.end()) {
        pending = it->second;
      } else {
        pending = promise.get_future().share();
        in_flight_.emplace(ref, pending);
        leader = true;
      }
    }
    if (leader) {
      try {
        auto bytes = download(ref);
        io::atomic_write(cached, bytes);
        promise.set_value(std::move(bytes));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
      std::lock_guard lock(mutex_);
      in_flight_.erase(ref);
    }
    return pending.get();
  }

  Image fetch(const std::string& ref, const fs::path& base_dir = ".") { return decode_image(fetch_bytes(ref, base_dir)); }

 private:
  std::vector<unsigned char> download(const std::string& uri) {
    int delay = policy_.backoff_ms;
    for (int attempt = 0;; ++attempt) {
      try {
        return transport_->get(uri);
      } catch (const Error& e) {
        if (attempt >= policy_.retries) throw Error(ErrorKind::FetchFailure, e.detail());
      } catch (const std::exception& e) {
        if (attempt >= policy_.retries) throw Error(ErrorKind::FetchFailure, uri + ": " + e.what());
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      delay *= 2;
    }
  }

  fs::path cache_root_;
  std::shared_ptr<Transport> transport_;
  FetchPolicy policy_;
  std::mutex mutex_;
  std::map<std::string, std::shared_future<std::vector<unsigned char>>> in_flight_;
};

inline Image fetch_image(const std::string& ref, const fs::path& cache_root,
                         std::shared_ptr<Transport> transport = std::make_shared<CurlTransport>(),
                         const fs::path& base_dir = ".") {
  ImageFetcher fetcher(cache_root, std::move(transport));
  return fetcher.fetch(ref, base_dir);
}

}  // namespace factify::dataio
