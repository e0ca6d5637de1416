#pragma once

// End-to-end experiment runner: load splits, fetch and encode with caching,
// train the entailment head(s), fuse features, normalize, fit the forest,
// evaluate and persist a self-contained model bundle.
//
// <output_dir>/run-<hash12>/
//   config.json  run_report.json  [failed]
//   eval_val.json  eval_val.txt  confusion_val.csv  predictions_val.csv   (same for test)
//   bundle/ manifest.json schema.json normalizer.json forest.bin head_<input>.bin

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "factify/config.hpp"
#include "factify/dataio.hpp"
#include "factify/embedding_cache.hpp"
#include "factify/encoders.hpp"
#include "factify/entailment_head.hpp"
#include "factify/forest.hpp"
#include "factify/fusion.hpp"
#include "factify/lexical.hpp"
#include "factify/metrics.hpp"
#include "factify/mlp.hpp"
#include "factify/synth.hpp"

namespace factify::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct RunOptions {
  std::shared_ptr<dataio::Transport> transport;  // null: libcurl
  std::ostream* log = nullptr;
};

/// A per-row problem that did not abort the run.
struct RowIssue {
  std::string split;
  std::string id;
  std::string kind;
  std::string detail;
};

inline json to_json(const RowIssue& r) { return {{"split", r.split}, {"id", r.id}, {"kind", r.kind}, {"detail", r.detail}}; }

/// Calls fn(worker, i) for i in [0, n). The first exception is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const int w = static_cast<int>(std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1)));
  if (w == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first;
  std::mutex m;
  std::vector<std::thread> threads;
  for (int t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = next.fetch_add(1); i < n && !stop.load(); i = next.fetch_add(1)) {
        try {
          fn(t, i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!first) first = std::current_exception();
          stop.store(true);
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  if (first) std::rethrow_exception(first);
}

// ---------------------------------------------------------------------------
// Encoding stage

/// Per-row embeddings keyed by backend id: {claim, doc}. Image vectors are
/// empty for rows whose images failed to fetch or decode.
struct EncodedSplit {
  dataio::DatasetManifest manifest;
  std::vector<std::map<std::string, std::array<std::vector<float>, 2>>> vectors;
  std::vector<bool> image_failed;
};

struct EncodeStats {
  std::uint64_t encoder_calls = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t cache_corrupt = 0;
};

class Encoder {
 public:
  Encoder(fs::path cache_root, std::vector<EncoderSpec> text, std::vector<EncoderSpec> image, int workers,
          std::shared_ptr<dataio::Transport> transport, dataio::FetchPolicy policy)
      : text_(std::move(text)),
        image_(std::move(image)),
        workers_(std::max(workers, 1)),
        cache_(cache_root / "embeddings"),
        fetcher_(cache_root, transport ? std::move(transport) : std::make_shared<dataio::CurlTransport>(), policy),
        text_encoders_(static_cast<std::size_t>(workers_)),
        image_encoders_(static_cast<std::size_t>(workers_)) {}

  EncodedSplit encode(dataio::DatasetManifest manifest, std::vector<RowIssue>& issues) {
    EncodedSplit out;
    const std::size_t n = manifest.rows.size();
    out.vectors.resize(n);
    out.image_failed.assign(n, false);
    std::vector<std::vector<RowIssue>> row_issues(n);
    std::vector<char> failed(n, 0);
    const auto calls_before = encoder_invocations().load();
    parallel_for(n, workers_, [&](int worker, std::size_t i) {
      const auto& row = manifest.rows[i];
      auto& slot = out.vectors[i];
      for (const auto& spec : text_) {
        auto& enc = text_encoder(worker, spec);
        auto embed = [&](const std::string& text) {
          return cache_.get_or_compute(spec, text, [&] { return encode_text(enc, text); }).values;
        };
        slot[spec.backend_id] = {embed(row.claim_text), embed(row.doc_text)};
      }
      if (image_.empty()) return;
      std::array<std::vector<unsigned char>, 2> bytes;
      const std::array<const std::string*, 2> refs = {&row.claim_image_ref, &row.doc_image_ref};
      for (std::size_t s = 0; s < 2; ++s) {
        try {
          bytes[s] = fetcher_.fetch_bytes(*refs[s], manifest.base_dir());
        } catch (const Error& e) {
          row_issues[i].push_back({manifest.split_name, row.id, std::string(to_string(e.kind())), e.detail()});
          failed[i] = 1;
          return;
        }
      }
      std::array<std::optional<Image>, 2> decoded;
      for (const auto& spec : image_) {
        auto& enc = image_encoder(worker, spec);
        std::array<std::vector<float>, 2> pair;
        for (std::size_t s = 0; s < 2; ++s) {
          const std::string key = sha256_hex(std::span<const unsigned char>(bytes[s]));
          try {
            pair[s] = cache_
                          .get_or_compute(spec, key,
                                          [&] {
                                            if (!decoded[s]) decoded[s] = dataio::decode_image(bytes[s]);
                                            return encode_image(enc, *decoded[s]);
                                          })
                          .values;
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::DecodeFailure) throw;
            row_issues[i].push_back({manifest.split_name, row.id, std::string(to_string(e.kind())), e.detail()});
            failed[i] = 1;
            for (const auto& sp : image_) slot.erase(sp.backend_id);
            return;
          }
        }
        slot[spec.backend_id] = std::move(pair);
      }
    });
    calls_ += encoder_invocations().load() - calls_before;
    for (std::size_t i = 0; i < n; ++i) {
      out.image_failed[i] = failed[i] != 0;
      issues.insert(issues.end(), row_issues[i].begin(), row_issues[i].end());
    }
    out.manifest = std::move(manifest);
    return out;
  }

  EncodeStats stats() const {
    return {calls_, cache_.stats().hits.load(), cache_.stats().misses.load(), cache_.stats().corrupt.load()};
  }

 private:
  TextEncoder& text_encoder(int worker, const EncoderSpec& spec) {
    auto& slot = text_encoders_[static_cast<std::size_t>(worker)][spec.backend_id];
    if (!slot) slot = make_text_encoder(spec);
    return *slot;
  }
  ImageEncoder& image_encoder(int worker, const EncoderSpec& spec) {
    auto& slot = image_encoders_[static_cast<std::size_t>(worker)][spec.backend_id];
    if (!slot) slot = make_image_encoder(spec);
    return *slot;
  }

  std::vector<EncoderSpec> text_;
  std::vector<EncoderSpec> image_;
  int workers_;
  cache::EmbeddingCache cache_;
  dataio::ImageFetcher fetcher_;
  std::vector<std::map<std::string, std::unique_ptr<TextEncoder>>> text_encoders_;
  std::vector<std::map<std::string, std::unique_ptr<ImageEncoder>>> image_encoders_;
  std::uint64_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// Trained model

/// Everything needed for inference; persisted as the bundle.
struct Model {
  fusion::FeatureFlags flags;
  std::optional<head::HeadVariant> variant;
  bool hard_labels = false;
  std::optional<EncoderSpec> text_spec;        // text_cosine
  std::optional<EncoderSpec> image_spec;       // image_cosine
  std::optional<EncoderSpec> head_text_spec;   // head text inputs
  std::optional<EncoderSpec> head_image_spec;  // head image inputs
  head::HeadSet heads;
  std::optional<fusion::NormalizerState> normalizer;
  std::optional<forest::RandomForest> forest;

  bool standalone() const { return variant && *variant == head::HeadVariant::AllConcat5; }

  std::vector<EncoderSpec> specs(Modality m) const {
    std::vector<EncoderSpec> out;
    for (const auto* s : {&text_spec, &image_spec, &head_text_spec, &head_image_spec}) {
      if (!*s || (*s)->modality != m) continue;
      const bool dup = std::any_of(out.begin(), out.end(), [&](const EncoderSpec& e) { return e.backend_id == (*s)->backend_id; });
      if (!dup) out.push_back(**s);
    }
    return out;
  }
};

inline head::PairEmbeddings pair_embeddings(const Model& m, const EncodedSplit& split, std::size_t i) {
  head::PairEmbeddings e;
  const auto& v = split.vectors[i];
  if (m.head_text_spec) {
    const auto& p = v.at(m.head_text_spec->backend_id);
    e.claim_text = p[0];
    e.doc_text = p[1];
  }
  if (m.head_image_spec && !split.image_failed[i]) {
    const auto& p = v.at(m.head_image_spec->backend_id);
    e.claim_image = p[0];
    e.doc_image = p[1];
  }
  return e;
}

inline head::InputDims head_dims(const Model& m) {
  return {m.head_text_spec ? m.head_text_spec->dim : 0, m.head_image_spec ? m.head_image_spec->dim : 0};
}

/// Cosine of the {claim, doc} pair, 0 with a logged issue when either vector is zero.
inline double pair_cosine(const std::array<std::vector<float>, 2>& p, const std::string& split, const std::string& id,
                          const std::string& backend, std::vector<RowIssue>& issues) {
  try {
    return cosine(std::span<const float>(p[0]), std::span<const float>(p[1]));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::ZeroVector) throw;
    issues.push_back({split, id, "ZeroVector", backend + ": " + e.detail()});
    return 0.0;
  }
}

inline std::vector<fusion::FeatureVector> extract_features(const Model& m, const EncodedSplit& split,
                                                           std::vector<RowIssue>& issues) {
  const fusion::FeatureLayout layout(m.flags, m.variant);
  std::vector<fusion::FeatureVector> rows;
  rows.reserve(split.manifest.rows.size());
  for (std::size_t i = 0; i < split.manifest.rows.size(); ++i) {
    const auto& row = split.manifest.rows[i];
    const auto lex = lexical::lexical_features(row);
    double text_sim = 0.0;
    double image_sim = 0.0;
    if (m.flags.count(fusion::FeatureFamily::TextCosine)) {
      text_sim = pair_cosine(split.vectors[i].at(m.text_spec->backend_id), split.manifest.split_name, row.id,
                             m.text_spec->backend_id, issues);
    }
    if (m.flags.count(fusion::FeatureFamily::ImageCosine) && !split.image_failed[i]) {
      image_sim = pair_cosine(split.vectors[i].at(m.image_spec->backend_id), split.manifest.split_name, row.id,
                              m.image_spec->backend_id, issues);
    }
    std::vector<double> head_sub;
    if (layout.fuses_head()) head_sub = head::head_features(*m.variant, m.heads, pair_embeddings(m, split, i), m.hard_labels);
    rows.push_back(fusion::assemble_features(layout, lex, text_sim, image_sim, head_sub));
  }
  return rows;
}

inline std::vector<Label5> predict(const Model& m, const EncodedSplit& split, std::vector<RowIssue>& issues) {
  std::vector<Label5> out;
  out.reserve(split.manifest.rows.size());
  if (m.standalone()) {
    for (std::size_t i = 0; i < split.manifest.rows.size(); ++i) {
      out.push_back(label5_from_index(m.heads.all->predict(pair_embeddings(m, split, i)).argmax()));
    }
    return out;
  }
  for (const auto& fv : extract_features(m, split, issues)) {
    const auto z = fusion::apply_normalizer(*m.normalizer, fv);
    out.push_back(label5_from_index(static_cast<std::size_t>(m.forest->predict(z.values))));
  }
  return out;
}

inline std::vector<Label5> gold_labels(const dataio::DatasetManifest& m) {
  std::vector<Label5> gold;
  gold.reserve(m.rows.size());
  for (const auto& r : m.rows) gold.push_back(*r.gold_label);
  return gold;
}

// ---------------------------------------------------------------------------
// Bundle persistence

inline std::string head_file(head::HeadInput in) {
  switch (in) {
    case head::HeadInput::TextPair: return "head_text.bin";
    case head::HeadInput::ImagePair: return "head_image.bin";
    case head::HeadInput::AllFour: return "head_all.bin";
  }
  return "head.bin";
}

inline json spec_json(const EncoderSpec& s) {
  json j = to_json(s);
  j["asset"] = s.asset;
  j["image_side"] = s.image_side;
  return j;
}

inline EncoderSpec spec_from_json(const nlohmann::json& j) {
  EncoderSpec s;
  s.backend_id = j.at("backend_id").get<std::string>();
  s.kind = j.at("kind").get<std::string>();
  s.modality = j.at("modality").get<std::string>() == "image" ? Modality::Image : Modality::Text;
  s.dim = j.at("dim").get<int>();
  s.version = j.at("version").get<std::string>();
  s.asset = j.value("asset", std::string());
  s.recipe = j.value("recipe", std::string());
  s.image_side = j.value("image_side", 16);
  return s;
}

struct TrainSource {
  std::string file_name;
  std::string sha256;
  std::size_t rows = 0;
};

/// Writes the bundle. Contents depend only on model settings and training data.
inline void save_bundle(const Model& m, const ExperimentConfig& c, const TrainSource& train, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "factify-bundle 1";
  manifest["settings"] = model_settings_json(c);
  json backends = json::object();
  auto put = [&](const char* role, const std::optional<EncoderSpec>& s) {
    if (s) backends[role] = spec_json(*s);
  };
  put("text_cosine", m.text_spec);
  put("image_cosine", m.image_spec);
  put("head_text", m.head_text_spec);
  put("head_image", m.head_image_spec);
  manifest["backends"] = backends;
  manifest["train"] = {{"file", train.file_name}, {"sha256", train.sha256}, {"rows", train.rows}};
  manifest["standalone_head"] = m.standalone();
  json files = json::array();

  fusion::Schema schema;
  if (m.standalone()) {
    schema = head::feature_names(head::HeadVariant::AllConcat5);
  } else {
    schema = m.normalizer->schema;
    io::atomic_write(dir / "normalizer.json", fusion::to_json(*m.normalizer).dump(2) + "\n");
    io::atomic_write(dir / "forest.bin", m.forest->serialize());
    files.push_back("normalizer.json");
    files.push_back("forest.bin");
  }
  io::atomic_write(dir / "schema.json", json(schema).dump(2) + "\n");
  files.push_back("schema.json");
  for (auto in : {head::HeadInput::TextPair, head::HeadInput::ImagePair, head::HeadInput::AllFour}) {
    const auto& h = m.heads.for_input(in);
    if (!h) continue;
    const std::map<std::string, std::string> extra = {{"head_input", std::string(head::to_string(in))},
                                                      {"text_dim", std::to_string(h->dims.text)},
                                                      {"image_dim", std::to_string(h->dims.image)}};
    io::atomic_write(dir / head_file(in), mlp::serialize(h->config, h->params, extra));
    files.push_back(head_file(in));
  }
  manifest["files"] = files;
  io::atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(io::read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, p.string() + ": " + e.what());
  }
}

inline std::vector<unsigned char> read_bytes(const fs::path& p) {
  auto b = io::read_file(p);
  if (!b) throw Error(ErrorKind::Io, "cannot read " + p.string());
  return std::move(*b);
}

inline Model load_bundle(const fs::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  Model m;
  try {
    const auto& s = manifest.at("settings");
    for (const auto& f : s.at("feature_flags")) m.flags.insert(*fusion::parse_family(f.get<std::string>()));
    const auto v = s.at("head_variant").get<std::string>();
    if (v != "none") m.variant = head::parse_head_variant(v);
    m.hard_labels = s.at("head_hard_labels").get<bool>();
    const auto& b = manifest.at("backends");
    auto get = [&](const char* role, std::optional<EncoderSpec>& out) {
      if (b.contains(role)) out = spec_from_json(b.at(role));
    };
    get("text_cosine", m.text_spec);
    get("image_cosine", m.image_spec);
    get("head_text", m.head_text_spec);
    get("head_image", m.head_image_spec);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, "bad bundle manifest: " + std::string(e.what()));
  }
  for (const auto& f : manifest.at("files")) {
    const auto name = f.get<std::string>();
    if (!name.starts_with("head_")) continue;
    const auto bytes = read_bytes(dir / name);
    auto loaded = mlp::deserialize<double>(bytes);
    head::TrainedHead h;
    h.input = *head::parse_head_input(loaded.header.at("head_input"));
    h.dims = {std::stoi(loaded.header.at("text_dim")), std::stoi(loaded.header.at("image_dim"))};
    h.config = loaded.config;
    h.params = std::move(loaded.params);
    m.heads.for_input(h.input) = std::move(h);
  }
  if (!m.standalone()) {
    m.normalizer = fusion::normalizer_from_json(read_json(dir / "normalizer.json"));
    m.forest = forest::RandomForest::deserialize(read_bytes(dir / "forest.bin"));
    const auto schema = read_json(dir / "schema.json").get<fusion::Schema>();
    if (schema != fusion::build_schema(m.flags, m.variant) || schema != m.normalizer->schema) {
      throw Error(ErrorKind::SchemaMismatch, "bundle schema disagrees with its feature flags");
    }
    if (m.forest->n_features() != schema.size()) throw Error(ErrorKind::SchemaMismatch, "forest width disagrees with schema");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reports

inline void write_eval(const fs::path& run_dir, const std::string& split, const metrics::EvalReport& r) {
  io::atomic_write(run_dir / ("eval_" + split + ".json"), metrics::to_json(r).dump(2) + "\n");
  io::atomic_write(run_dir / ("eval_" + split + ".txt"), metrics::to_text(r));
  io::atomic_write(run_dir / ("confusion_" + split + ".csv"), metrics::confusion_csv(r.confusion));
}

inline std::string predictions_csv(const dataio::DatasetManifest& m, const std::vector<Label5>& pred) {
  std::string out = "id,predicted\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out += csv::quote(m.rows[i].id) + "," + std::string(to_string(pred[i])) + "\n";
  }
  return out;
}

inline json load_report_json(const dataio::DatasetManifest& m) {
  json dropped = json::array();
  for (const auto& d : m.report.dropped) dropped.push_back({{"line", d.line}, {"id", d.id}, {"reason", d.reason}});
  return {{"source", m.source_path.string()}, {"rows", m.rows.size()}, {"dropped", dropped}, {"malformed", m.report.malformed}};
}

struct RunResult {
  fs::path run_dir;
  std::optional<metrics::EvalReport> val;
  std::optional<metrics::EvalReport> test;
  json run_report;
};

inline fs::path run_dir_for(const ExperimentConfig& c) { return c.output_dir / ("run-" + config_hash(c).substr(0, 12)); }

/// Synthetic dataset files under <cache_root>/synth/<spec-hash>/, written once.
inline fs::path materialize_synth(const synth::SynthSpec& s, const fs::path& cache_root) {
  const json key = {{"per_category", s.per_category}, {"seed", s.seed}, {"image_signal", s.image_signal}, {"image_side", s.image_side}};
  const fs::path dir = cache_root / "synth" / sha256_hex(key.dump()).substr(0, 12);
  if (!fs::exists(dir / "test.csv")) {
    auto ds = synth::synth_dataset(s);
    synth::write_synth_dataset(ds, dir);
  }
  return dir;
}

namespace detail {

inline void say(const RunOptions& o, const std::string& msg) {
  if (o.log) *o.log << msg << '\n';
}

inline std::optional<EncoderSpec> spec_if(bool needed, const ExperimentConfig& c, const std::string& id) {
  if (!needed) return std::nullopt;
  return c.registry.resolved(id, c.models_root);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// run_experiment

inline RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {}) {
  validate(config);
  RunResult result;
  result.run_dir = run_dir_for(config);
  const fs::path& run_dir = result.run_dir;
  fs::create_directories(run_dir);
  std::error_code ec;
  fs::remove(run_dir / "failed", ec);
  io::atomic_write(run_dir / "config.json", to_json(config).dump(2) + "\n");

  json report;
  report["config_hash"] = config_hash(config);
  report["run_dir"] = run_dir.string();
  report["status"] = "running";
  std::vector<RowIssue> image_issues;
  std::vector<RowIssue> zero_issues;
  std::optional<Encoder> encoder;
  std::string stage = "load";

  auto finish_report = [&](const std::string& status) {
    report["status"] = status;
    json imgs = json::array();
    for (const auto& r : image_issues) imgs.push_back(to_json(r));
    json zeros = json::array();
    for (const auto& r : zero_issues) zeros.push_back(to_json(r));
    report["image_failures"] = imgs;
    report["zero_vectors"] = zeros;
    if (encoder) {
      const auto s = encoder->stats();
      report["encoder_invocations"] = s.encoder_calls;
      report["embedding_cache"] = {{"hits", s.cache_hits}, {"misses", s.cache_misses}, {"corrupt", s.cache_corrupt}};
    }
    io::atomic_write(run_dir / "run_report.json", report.dump(2) + "\n");
  };

  try {
    // Load.
    DatasetSource source = config.dataset;
    if (source.synth) {
      const auto dir = materialize_synth(*source.synth, config.cache_root);
      source.train = dir / "train.csv";
      source.val = dir / "val.csv";
      source.test = dir / "test.csv";
    }
    auto train_m = dataio::load_split(source.train, "train", source.column_map);
    std::optional<dataio::DatasetManifest> val_m, test_m;
    if (!source.val.empty()) val_m = dataio::load_split(source.val, "val", source.column_map);
    if (!source.test.empty()) test_m = dataio::load_split(source.test, "test", source.column_map);
    json splits;
    splits["train"] = load_report_json(train_m);
    if (val_m) splits["val"] = load_report_json(*val_m);
    if (test_m) splits["test"] = load_report_json(*test_m);
    report["splits"] = splits;
    if (train_m.rows.size() < 2) throw Error(ErrorKind::DegenerateData, "training split has fewer than 2 usable rows");
    detail::say(options, "loaded train=" + std::to_string(train_m.rows.size()) +
                             (val_m ? " val=" + std::to_string(val_m->rows.size()) : std::string()) +
                             (test_m ? " test=" + std::to_string(test_m->rows.size()) : std::string()));

    TrainSource train_source;
    train_source.file_name = source.train.filename().string();
    train_source.sha256 = sha256_hex(std::span<const unsigned char>(read_bytes(source.train)));
    train_source.rows = train_m.rows.size();

    // Encode.
    stage = "encode";
    Model model;
    model.flags = config.feature_flags;
    model.variant = config.uses_head() ? config.head_variant : std::nullopt;
    model.hard_labels = config.head_hard_labels;
    if (model.standalone()) model.flags.clear();
    model.text_spec = detail::spec_if(model.flags.count(fusion::FeatureFamily::TextCosine) > 0, config, config.text_backend);
    model.image_spec = detail::spec_if(model.flags.count(fusion::FeatureFamily::ImageCosine) > 0, config, config.image_backend);
    model.head_text_spec = detail::spec_if(config.head_needs_text(), config, config.head_text_backend);
    model.head_image_spec = detail::spec_if(config.head_needs_image(), config, config.head_image_backend);

    encoder.emplace(config.cache_root, model.specs(Modality::Text), model.specs(Modality::Image), config.workers,
                    options.transport, config.fetch);
    auto train = encoder->encode(std::move(train_m), image_issues);
    std::optional<EncodedSplit> val, test;
    if (val_m) val = encoder->encode(std::move(*val_m), image_issues);
    if (test_m) test = encoder->encode(std::move(*test_m), image_issues);
    detail::say(options, "encoded; encoder calls=" + std::to_string(encoder->stats().encoder_calls));

    // Heads.
    stage = "head";
    const auto train_gold = gold_labels(train.manifest);
    json head_logs = json::object();
    if (model.variant) {
      std::vector<head::PairEmbeddings> pairs;
      pairs.reserve(train.manifest.rows.size());
      for (std::size_t i = 0; i < train.manifest.rows.size(); ++i) pairs.push_back(pair_embeddings(model, train, i));
      for (auto in : head::inputs_for(*model.variant)) {
        auto h = head::train_head(config.mlp, in, head_dims(model), pairs, train_gold);
        head_logs[std::string(head::to_string(in))] = {{"initial_loss", h.log.initial_loss},
                                                        {"epochs_run", h.log.epoch_losses.size()},
                                                        {"best_epoch", h.log.best_epoch},
                                                        {"train_rows", h.log.train_rows},
                                                        {"holdout_rows", h.log.holdout_rows},
                                                        {"warnings", h.log.warnings}};
        model.heads.for_input(in) = std::move(h);
      }
      detail::say(options, "trained head " + std::string(head::to_string(*model.variant)));
    }
    report["head_training"] = head_logs;

    // Features, normalizer, forest.
    stage = "fusion";
    if (!model.standalone()) {
      const auto train_rows = extract_features(model, train, zero_issues);
      model.normalizer = fusion::fit_normalizer(train_rows, "train");
      std::vector<std::vector<double>> z;
      z.reserve(train_rows.size());
      for (const auto& r : train_rows) z.push_back(fusion::apply_normalizer(*model.normalizer, r).values);
      std::vector<int> labels;
      labels.reserve(train_gold.size());
      for (auto g : train_gold) labels.push_back(static_cast<int>(index_of(g)));
      stage = "forest";
      // Absent categories are allowed but worth surfacing.
      json forest_warnings = json::array();
      std::array<bool, kNumLabel5> seen{};
      for (int l : labels) seen[static_cast<std::size_t>(l)] = true;
      for (std::size_t k = 0; k < kNumLabel5; ++k) {
        if (!seen[k]) forest_warnings.push_back("category " + std::string(to_string(label5_from_index(k))) + " absent from train");
      }
      report["forest_warnings"] = forest_warnings;
      model.forest = forest::RandomForest::fit(config.forest, z, labels, static_cast<int>(kNumLabel5));
      detail::say(options, "fitted forest on " + std::to_string(z.size()) + " rows x " + std::to_string(model.normalizer->schema.size()) +
                               " features");
    }
    report["feature_schema"] = model.standalone() ? head::feature_names(head::HeadVariant::AllConcat5) : model.normalizer->schema;

    stage = "persist";
    save_bundle(model, config, train_source, run_dir / "bundle");

    // Evaluate.
    stage = "evaluate";
    json evals = json::object();
    for (auto* split : {&val, &test}) {
      if (!*split) continue;
      const auto& name = (*split)->manifest.split_name;
      const auto pred = predict(model, **split, zero_issues);
      io::atomic_write(run_dir / ("predictions_" + name + ".csv"), predictions_csv((*split)->manifest, pred));
      if (!(*split)->manifest.labeled()) {
        evals[name] = "unlabeled";
        continue;
      }
      const auto r = metrics::weighted_f1(gold_labels((*split)->manifest), pred);
      write_eval(run_dir, name, r);
      evals[name] = r.weighted_f1;
      (name == "val" ? result.val : result.test) = r;
      detail::say(options, name + " weighted F1 = " + metrics::fixed4(r.weighted_f1));
    }
    report["weighted_f1"] = evals;
    finish_report("ok");
  } catch (const Error& e) {
    report["error"] = {{"stage", stage}, {"kind", std::string(to_string(e.kind()))}, {"detail", e.detail()}};
    io::atomic_write(run_dir / "failed", stage + ": " + std::string(to_string(e.kind())) + ": " + e.detail() + "\n");
    finish_report("failed");
    throw;
  } catch (const std::exception& e) {
    report["error"] = {{"stage", stage}, {"kind", "Runtime"}, {"detail", e.what()}};
    io::atomic_write(run_dir / "failed", stage + ": " + std::string(e.what()) + "\n");
    finish_report("failed");
    throw;
  }
  result.run_report = report;
  return result;
}

// ---------------------------------------------------------------------------
// evaluate_bundle

struct BundleEvaluation {
  dataio::DatasetManifest manifest;
  std::vector<Label5> predictions;
  std::optional<metrics::EvalReport> report;
  std::vector<RowIssue> issues;
};

inline BundleEvaluation evaluate_bundle(const fs::path& bundle_dir, const fs::path& split_path, const fs::path& cache_root,
                                        int workers = 1, const RunOptions& options = {},
                                        const dataio::ColumnMap& column_map = {}) {
  const Model model = load_bundle(bundle_dir);
  BundleEvaluation out;
  Encoder encoder(cache_root, model.specs(Modality::Text), model.specs(Modality::Image), workers, options.transport, {});
  auto split = encoder.encode(dataio::load_split(split_path, "eval", column_map), out.issues);
  out.predictions = predict(model, split, out.issues);
  out.manifest = std::move(split.manifest);
  if (out.manifest.labeled()) out.report = metrics::weighted_f1(gold_labels(out.manifest), out.predictions);
  return out;
}

// ---------------------------------------------------------------------------
// Grids

struct GridVariant {
  std::string name;
  std::function<void(ExperimentConfig&)> apply;
};

inline std::vector<GridVariant> builtin_grid(const std::string& name) {
  using fusion::FeatureFamily;
  std::vector<GridVariant> g;
  if (name == "table2") {
    for (const char* text : {"sentence-text", "simcse-text", "roberta-text", "clip-text"}) {
      for (const char* image : {"resnet-image", "clip-image"}) {
        g.push_back({std::string(text) + "+" + image, [text, image](ExperimentConfig& c) {
                       c.text_backend = text;
                       c.image_backend = image;
                       c.feature_flags.insert(FeatureFamily::TextCosine);
                       c.feature_flags.insert(FeatureFamily::ImageCosine);
                     }});
      }
    }
  } else if (name == "table3") {
    for (auto v : head::kAllVariants) {
      g.push_back({std::string(head::to_string(v)), [v](ExperimentConfig& c) {
                     c.head_variant = v;
                     c.feature_flags.insert(FeatureFamily::Head);
                   }});
    }
  } else if (name == "table4") {
    g.push_back({"full", [](ExperimentConfig& c) { c.feature_flags = fusion::all_families(); }});
    for (auto f : fusion::kAllFamilies) {
      g.push_back({"without_" + std::string(fusion::to_string(f)), [f](ExperimentConfig& c) {
                     c.feature_flags = fusion::all_families();
                     c.feature_flags.erase(f);
                   }});
    }
  } else {
    throw Error(ErrorKind::ConfigInvalid, "unknown grid '" + name + "' (expected table2, table3 or table4)");
  }
  return g;
}

struct GridRow {
  std::string name;
  std::optional<double> val_f1;
  std::string error;
  fs::path run_dir;
};

struct GridResult {
  std::string grid;
  std::vector<GridRow> rows;  // sorted: best first, failures last
};

inline void sort_rows(std::vector<GridRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) {
    if (a.val_f1.has_value() != b.val_f1.has_value()) return a.val_f1.has_value();
    if (a.val_f1 && *a.val_f1 != *b.val_f1) return *a.val_f1 > *b.val_f1;
    return a.name < b.name;
  });
}

inline GridResult run_grid(const ExperimentConfig& base, const std::string& grid_name, const std::vector<GridVariant>& variants,
                           const RunOptions& options = {}) {
  if (variants.empty()) throw Error(ErrorKind::ConfigInvalid, "grid '" + grid_name + "' has no variants");
  GridResult out;
  out.grid = grid_name;
  for (const auto& v : variants) {
    GridRow row;
    row.name = v.name;
    try {
      ExperimentConfig c = base;
      v.apply(c);
      row.run_dir = run_dir_for(c);
      detail::say(options, "[" + grid_name + "] " + v.name);
      auto r = run_experiment(c, options);
      if (r.val) {
        row.val_f1 = r.val->weighted_f1;
      } else {
        row.error = "no labeled validation split";
      }
    } catch (const Error& e) {
      row.error = std::string(to_string(e.kind())) + ": " + e.detail();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    out.rows.push_back(std::move(row));
  }
  sort_rows(out.rows);
  return out;
}

inline GridResult run_grid(const ExperimentConfig& base, const std::string& grid_name, const RunOptions& options = {}) {
  return run_grid(base, grid_name, builtin_grid(grid_name), options);
}

inline json to_json(const GridResult& g) {
  json rows = json::array();
  for (const auto& r : g.rows) {
    json j;
    j["name"] = r.name;
    j["val_weighted_f1"] = r.val_f1 ? json(*r.val_f1) : json(nullptr);
    if (!r.error.empty()) j["error"] = r.error;
    j["run_dir"] = r.run_dir.string();
    rows.push_back(j);
  }
  return {{"grid", g.grid}, {"rows", rows}};
}

inline std::string to_text(const GridResult& g) {
  std::ostringstream out;
  std::size_t width = 7;
  for (const auto& r : g.rows) width = std::max(width, r.name.size());
  out << "grid " << g.grid << "\n";
  out << std::string("variant") << std::string(width - 7 + 2, ' ') << "val weighted F1\n";
  for (const auto& r : g.rows) {
    out << r.name << std::string(width - r.name.size() + 2, ' ');
    out << (r.val_f1 ? metrics::fixed4(*r.val_f1) : "failed (" + r.error + ")") << '\n';
  }
  return out.str();
}

}  // namespace factify::pipeline
