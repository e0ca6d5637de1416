#pragma once

// Planted-signal synthetic datasets. Each category's structure is inserted by
// construction:
//   Support_*        claim paraphrases the document (moderate unigram overlap),
//                    planted text cosine in [0.72, 0.95].
//   Insufficient_*   claim mostly off-document words, text cosine in [0.05, 0.45].
//   Refute           claim copies a document span and inserts a negation word
//                    (high n-gram overlap), text cosine in [0.45, 0.68].
//   *_Multimodal     claim/document image cosine in [0.6, 0.95].
//   *_Text           image cosine in [-0.1, 0.3]; Refute images are uninformative.
// With image_signal = false every category draws image cosine from [-0.1, 0.95].
// Text cosine is realized by "planted-text" markers, image cosine by pixel
// content read back through the "pixel-image" backend.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "factify/dataio.hpp"
#include "factify/datamodel.hpp"
#include "factify/embedding.hpp"
#include "factify/rng.hpp"

namespace factify::synth {

namespace fs = std::filesystem;

struct SynthSpec {
  int per_category = 100;
  std::uint64_t seed = 42;
  bool image_signal = true;
  int image_side = 16;
};

struct SynthDataset {
  dataio::DatasetManifest train;
  dataio::DatasetManifest val;
  dataio::DatasetManifest test;
  std::map<std::string, Image> images;  // image ref -> raster
};

namespace detail {

inline std::vector<std::string> vocabulary(std::uint64_t seed, std::size_t size) {
  static constexpr std::string_view kConsonants = "bdfghklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  Rng rng(derive_seed(seed, 0x766f636162ULL));
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < size) {
    std::string w;
    const int syllables = rng.between(2, 3);
    for (int s = 0; s < syllables; ++s) {
      w.push_back(kConsonants[rng.index(kConsonants.size())]);
      w.push_back(kVowels[rng.index(kVowels.size())]);
    }
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

// None of these can be produced by the consonant-vowel vocabulary generator.
inline constexpr std::string_view kNegations[] = {"not", "never", "false", "denied", "untrue"};

inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

inline std::string format_cos(double c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", c);
  return buf;
}

inline std::vector<double> unit_gaussian(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

/// Unit vector with cosine `c` to unit vector `u`.
inline std::vector<double> with_cosine(Rng& rng, const std::vector<double>& u, double c) {
  auto w = unit_gaussian(rng, u.size());
  double proj = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) proj += w[i] * u[i];
  double n = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    w[i] -= proj * u[i];
    n += w[i] * w[i];
  }
  n = std::sqrt(n);
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  std::vector<double> v(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) v[i] = c * u[i] + s * w[i] / n;
  return v;
}

/// Pixels centred at 127.5 and linearly scaled, so pixel-space cosine tracks vector cosine.
inline Image to_image(const std::vector<double>& v, int side) {
  double peak = 0.0;
  for (double x : v) peak = std::max(peak, std::abs(x));
  const double k = peak > 0.0 ? 120.0 / peak : 0.0;
  Image img;
  img.width = side;
  img.height = side;
  img.rgb.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    img.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(127.5 + k * v[i]), 0L, 255L));
  }
  return img;
}

}  // namespace detail

inline SynthDataset synth_dataset(const SynthSpec& spec) {
  if (spec.per_category < 1) throw Error(ErrorKind::ConfigInvalid, "per_category must be >= 1");
  if (spec.image_side < 1) throw Error(ErrorKind::ConfigInvalid, "image_side must be >= 1");
  const auto vocab = detail::vocabulary(spec.seed, 1500);
  const std::size_t image_dim = static_cast<std::size_t>(spec.image_side) * spec.image_side * 3;

  SynthDataset out;
  std::vector<std::vector<ClaimDocPair>> by_category(kNumLabel5);
  std::size_t serial = 0;
  for (Label5 label : kAllLabel5) {
    for (int k = 0; k < spec.per_category; ++k, ++serial) {
      Rng rng(derive_seed(spec.seed, 1000003ULL * (index_of(label) + 1) + static_cast<std::uint64_t>(k)));
      char idbuf[32];
      std::snprintf(idbuf, sizeof idbuf, "syn%05zu", serial);
      ClaimDocPair p;
      p.id = idbuf;
      p.gold_label = label;

      std::vector<std::string> doc(static_cast<std::size_t>(rng.between(18, 34)));
      for (auto& w : doc) w = vocab[rng.index(vocab.size())];

      std::vector<std::string> claim;
      double text_cos = 0.0;
      const Label3 stance = collapse_label(label);
      if (stance == Label3::Refute) {
        const auto span = static_cast<std::size_t>(rng.between(8, 12));
        const std::size_t start = rng.index(doc.size() - span + 1);
        claim.assign(doc.begin() + static_cast<std::ptrdiff_t>(start),
                     doc.begin() + static_cast<std::ptrdiff_t>(start + span));
        const int negations = rng.between(1, 2);
        for (int n = 0; n < negations; ++n) {
          const auto pos = rng.index(claim.size() + 1);
          claim.insert(claim.begin() + static_cast<std::ptrdiff_t>(pos),
                       std::string(detail::kNegations[rng.index(std::size(detail::kNegations))]));
        }
        text_cos = rng.uniform(0.45, 0.68);
      } else {
        const double from_doc = stance == Label3::Support ? 0.6 : 0.12;
        claim.resize(static_cast<std::size_t>(rng.between(8, 14)));
        for (auto& w : claim) w = rng.uniform() < from_doc ? doc[rng.index(doc.size())] : vocab[rng.index(vocab.size())];
        text_cos = stance == Label3::Support ? rng.uniform(0.72, 0.95) : rng.uniform(0.05, 0.45);
      }
      const std::string key = "k" + p.id;
      p.claim_text = detail::join(claim) + " [[plant:" + key + ":" + detail::format_cos(text_cos) + "]]";
      p.doc_text = detail::join(doc) + " [[plant:" + key + ":1]]";

      double image_cos = 0.0;
      if (!spec.image_signal || label == Label5::Refute) {
        image_cos = rng.uniform(-0.1, 0.95);
      } else if (label == Label5::SupportMultimodal || label == Label5::InsufficientMultimodal) {
        image_cos = rng.uniform(0.6, 0.95);
      } else {
        image_cos = rng.uniform(-0.1, 0.3);
      }
      const auto doc_vec = detail::unit_gaussian(rng, image_dim);
      const auto claim_vec = detail::with_cosine(rng, doc_vec, image_cos);
      p.claim_image_ref = "images/" + p.id + "_claim.png";
      p.doc_image_ref = "images/" + p.id + "_doc.png";
      out.images[p.claim_image_ref] = detail::to_image(claim_vec, spec.image_side);
      out.images[p.doc_image_ref] = detail::to_image(doc_vec, spec.image_side);

      by_category[index_of(label)].push_back(std::move(p));
    }
  }

  // Stratified 70:15:15 split by seeded shuffle within each category.
  Rng split_rng(derive_seed(spec.seed, 0x73706c6974ULL));
  out.train.split_name = "train";
  out.val.split_name = "val";
  out.test.split_name = "test";
  for (auto& rows : by_category) {
    split_rng.shuffle(rows);
    const auto n = rows.size();
    const auto n_train = static_cast<std::size_t>(std::lround(0.70 * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::lround(0.15 * static_cast<double>(n))));
    for (std::size_t i = 0; i < n; ++i) {
      auto& dest = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
      dest.rows.push_back(rows[i]);
    }
  }
  split_rng.shuffle(out.train.rows);
  split_rng.shuffle(out.val.rows);
  split_rng.shuffle(out.test.rows);
  return out;
}

/// Writes train.csv, val.csv, test.csv and images/*.png under `dir`.
inline void write_synth_dataset(SynthDataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "images");
  for (const auto& [ref, img] : ds.images) io::atomic_write(dir / ref, dataio::encode_png(img));
  for (auto* m : {&ds.train, &ds.val, &ds.test}) {
    m->source_path = dir / (m->split_name + ".csv");
    dataio::write_split(*m, m->source_path);
  }
}

}  // namespace factify::synth
