#pragma once

// Persistent content-addressed embedding store.
//
// Layout: <root>/<backend_id>/<first 2 hex of key>/<key>.vec
// Entry:  "EMB1" | u32 dim | dim x f32 | u32 CRC32(values block), little-endian.

#include <unistd.h>

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "factify/embedding.hpp"
#include "factify/error.hpp"
#include "factify/hashing.hpp"

namespace factify {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace io {

inline std::optional<std::vector<unsigned char>> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) return std::nullopt;
  return bytes;
}

inline std::string read_text(const fs::path& path) {
  auto bytes = read_file(path);
  if (!bytes) throw Error(ErrorKind::Io, "cannot read " + path.string());
  return std::string(bytes->begin(), bytes->end());
}

/// Write to a sibling temp file then rename over the target, so readers never see a torn file.
inline void atomic_write(const fs::path& path, std::span<const unsigned char> bytes) {
  static std::atomic<std::uint64_t> counter{0};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(tid % 100000) + "." +
         std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorKind::Io, "write failed " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorKind::Io, "rename failed for " + path.string());
  }
}

inline void atomic_write(const fs::path& path, std::string_view text) {
  atomic_write(path, std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_i32(std::vector<unsigned char>& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

inline void put_f32(std::vector<unsigned char>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_f64(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

/// Bounds-checked little-endian cursor over a byte buffer.
class Reader {
 public:
  explicit Reader(std::span<const unsigned char> data) : data_(data) {}

  bool has(std::size_t n) const { return pos_ + n <= data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::span<const unsigned char> bytes(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (!has(n)) throw Error(ErrorKind::Io, "unexpected end of binary data");
  }

  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

}  // namespace io

namespace cache {

inline constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

inline std::vector<unsigned char> encode_vec(std::span<const float> values) {
  std::vector<unsigned char> out;
  out.reserve(12 + values.size() * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  io::put_u32(out, static_cast<std::uint32_t>(values.size()));
  const std::size_t payload_start = out.size();
  for (float v : values) io::put_f32(out, v);
  const std::uint32_t crc = crc32_of(std::span<const unsigned char>(out).subspan(payload_start));
  io::put_u32(out, crc);
  return out;
}

/// Returns nullopt when the entry is torn, mislabeled, or fails its checksum.
inline std::optional<std::vector<float>> decode_vec(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) return std::nullopt;
  io::Reader r(bytes.subspan(4));
  const std::uint32_t dim = r.u32();
  if (r.remaining() != static_cast<std::size_t>(dim) * 4 + 4) return std::nullopt;
  const auto payload = r.bytes(static_cast<std::size_t>(dim) * 4);
  const std::uint32_t stored = r.u32();
  if (crc32_of(payload) != stored) return std::nullopt;
  io::Reader p(payload);
  std::vector<float> values(dim);
  for (auto& v : values) v = p.f32();
  return values;
}

inline std::string cache_key(const EncoderSpec& spec, std::string_view content_key) {
  std::string material = spec.backend_id;
  material.push_back('\0');
  material += spec.cache_version();
  material.push_back('\0');
  material.append(content_key);
  return sha256_hex(material);
}

inline fs::path entry_path(const fs::path& root, std::string_view backend_id, std::string_view key) {
  return root / std::string(backend_id) / std::string(key.substr(0, 2)) / (std::string(key) + ".vec");
}

struct CacheStats {
  std::atomic<std::uint64_t> hits{0};
  std::atomic<std::uint64_t> misses{0};
  std::atomic<std::uint64_t> corrupt{0};
};

class EmbeddingCache {
 public:
  explicit EmbeddingCache(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  const CacheStats& stats() const { return stats_; }

  std::optional<Embedding> load(const EncoderSpec& spec, std::string_view content_key) {
    const auto path = entry_path(root_, spec.backend_id, cache_key(spec, content_key));
    auto bytes = io::read_file(path);
    if (!bytes) return std::nullopt;
    auto values = decode_vec(*bytes);
    if (!values || static_cast<int>(values->size()) != spec.dim) {
      stats_.corrupt.fetch_add(1);
      return std::nullopt;
    }
    return Embedding{std::move(*values), spec.backend_id};
  }

  void store(const EncoderSpec& spec, std::string_view content_key, const Embedding& embedding) {
    const auto path = entry_path(root_, spec.backend_id, cache_key(spec, content_key));
    io::atomic_write(path, encode_vec(embedding.values));
  }

  /// Hit: stored vector. Miss or corrupt entry: invoke produce, persist, return.
  template <typename Produce>
  Embedding get_or_compute(const EncoderSpec& spec, std::string_view content_key, Produce&& produce) {
    if (auto hit = load(spec, content_key)) {
      stats_.hits.fetch_add(1);
      return std::move(*hit);
    }
    stats_.misses.fetch_add(1);
    Embedding fresh = std::invoke(std::forward<Produce>(produce));
    store(spec, content_key, fresh);
    return fresh;
  }

 private:
  fs::path root_;
  CacheStats stats_;
};

template <typename Produce>
Embedding cached_embed(const fs::path& cache_root, const EncoderSpec& spec, std::string_view content_key,
                       Produce&& produce) {
  EmbeddingCache cache(cache_root);
  return cache.get_or_compute(spec, content_key, std::forward<Produce>(produce));
}

}  // namespace cache
}  // namespace factify
