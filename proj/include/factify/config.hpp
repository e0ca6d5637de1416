#pragma once

// Experiment configuration (JSON). Every field is addressable from the file;
// relative paths resolve against the config file's directory.
//
// {
//   "dataset": {"train": "train.csv", "val": "val.csv", "test": "test.csv",
//               "column_map": {"claim": "Claim"}}
//      or      {"synth": {"per_category": 100, "seed": 42, "image_signal": true}},
//   "text_backend": "sentence-text", "image_backend": "resnet-image",
//   "head_variant": "TextPair3" | "none",
//   "head_text_backend": "clip-text", "head_image_backend": "clip-image",
//   "head_hard_labels": false,
//   "feature_flags": ["rouge", "length", "text_cosine", "image_cosine", "head"],
//   "forest": {"n_trees": 100, "max_depth": 40, "min_samples_leaf": 1, "seed": 42},
//   "mlp": {"hidden_dim": 100, "learning_rate": 0.001, "max_epochs": 200, "batch_size": 32,
//           "patience": 10, "holdout_fraction": 0.1, "seed": 42},
//   "seed": 42, "workers": 4,
//   "output_dir": "runs", "cache_root": ".factify-cache", "models_root": "models",
//   "fetch": {"retries": 3, "backoff_ms": 200},
//   "backends": {"my-text": {"kind": "precomputed-text", "dim": 768, "asset": "my-text"}}
// }

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "factify/dataio.hpp"
#include "factify/encoders.hpp"
#include "factify/entailment_head.hpp"
#include "factify/error.hpp"
#include "factify/forest.hpp"
#include "factify/fusion.hpp"
#include "factify/hashing.hpp"
#include "factify/mlp.hpp"
#include "factify/synth.hpp"

namespace factify {

namespace fs = std::filesystem;

struct DatasetSource {
  fs::path train;
  fs::path val;
  fs::path test;
  dataio::ColumnMap column_map;
  std::optional<synth::SynthSpec> synth;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::string text_backend = "sentence-text";
  std::string image_backend = "resnet-image";
  std::optional<head::HeadVariant> head_variant = head::HeadVariant::TextPair3;
  std::string head_text_backend = "clip-text";
  std::string head_image_backend = "clip-image";
  bool head_hard_labels = false;
  fusion::FeatureFlags feature_flags = fusion::all_families();
  forest::ForestConfig forest;
  mlp::MlpConfig mlp;
  std::uint64_t seed = 42;
  int workers = 1;
  fs::path output_dir = "runs";
  fs::path cache_root = ".factify-cache";
  fs::path models_root = "models";
  dataio::FetchPolicy fetch;
  BackendRegistry registry = BackendRegistry::defaults();

  bool uses_head() const {
    return head_variant && (*head_variant == head::HeadVariant::AllConcat5 || feature_flags.count(fusion::FeatureFamily::Head));
  }
  bool standalone_head() const { return head_variant && *head_variant == head::HeadVariant::AllConcat5; }
  bool needs_head_input(head::HeadInput in) const {
    if (!uses_head()) return false;
    for (auto i : head::inputs_for(*head_variant)) {
      if (i == in) return true;
    }
    return false;
  }
  bool head_needs_text() const {
    return needs_head_input(head::HeadInput::TextPair) || needs_head_input(head::HeadInput::AllFour);
  }
  bool head_needs_image() const {
    return needs_head_input(head::HeadInput::ImagePair) || needs_head_input(head::HeadInput::AllFour);
  }
};

inline void validate(const ExperimentConfig& c) {
  if (c.feature_flags.empty() && !c.standalone_head()) {
    throw Error(ErrorKind::ConfigInvalid, "feature_flags must be non-empty");
  }
  if (c.feature_flags.count(fusion::FeatureFamily::Head) && !c.head_variant) {
    throw Error(ErrorKind::ConfigInvalid, "feature flag 'head' requires a head_variant");
  }
  auto require = [&](const std::string& id, Modality m, const char* role) {
    const auto& spec = c.registry.at(id);
    if (spec.modality != m) {
      throw Error(ErrorKind::ConfigInvalid, std::string(role) + " backend '" + id + "' has the wrong modality");
    }
  };
  if (c.feature_flags.count(fusion::FeatureFamily::TextCosine)) require(c.text_backend, Modality::Text, "text");
  if (c.feature_flags.count(fusion::FeatureFamily::ImageCosine)) require(c.image_backend, Modality::Image, "image");
  if (c.head_needs_text()) require(c.head_text_backend, Modality::Text, "head text");
  if (c.head_needs_image()) require(c.head_image_backend, Modality::Image, "head image");
  if (!c.dataset.synth && c.dataset.train.empty()) throw Error(ErrorKind::ConfigInvalid, "dataset.train is required");
  if (c.workers < 1) throw Error(ErrorKind::ConfigInvalid, "workers must be >= 1");
  forest::validate(c.forest);
  mlp::MlpConfig probe = c.mlp;
  probe.input_dim = 1;
  mlp::validate(probe);
}

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir = ".") {
  ExperimentConfig c;
  try {
    if (!j.is_object()) throw Error(ErrorKind::ConfigInvalid, "config must be a JSON object");
    detail::read_opt(j, "seed", c.seed);
    c.forest.seed = c.seed;
    c.mlp.seed = c.seed;
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("train")) c.dataset.train = detail::resolve(base_dir, d.at("train").get<std::string>());
      if (d.contains("val")) c.dataset.val = detail::resolve(base_dir, d.at("val").get<std::string>());
      if (d.contains("test")) c.dataset.test = detail::resolve(base_dir, d.at("test").get<std::string>());
      detail::read_opt(d, "column_map", c.dataset.column_map);
      if (d.contains("synth")) {
        synth::SynthSpec s;
        s.seed = c.seed;
        const auto& sj = d.at("synth");
        detail::read_opt(sj, "per_category", s.per_category);
        detail::read_opt(sj, "seed", s.seed);
        detail::read_opt(sj, "image_signal", s.image_signal);
        detail::read_opt(sj, "image_side", s.image_side);
        c.dataset.synth = s;
      }
    }
    detail::read_opt(j, "text_backend", c.text_backend);
    detail::read_opt(j, "image_backend", c.image_backend);
    if (j.contains("head_variant")) {
      const auto v = j.at("head_variant").is_null() ? std::string("none") : j.at("head_variant").get<std::string>();
      if (v == "none") {
        c.head_variant.reset();
      } else {
        c.head_variant = head::parse_head_variant(v);
        if (!c.head_variant) throw Error(ErrorKind::ConfigInvalid, "unknown head_variant '" + v + "'");
      }
    }
    detail::read_opt(j, "head_text_backend", c.head_text_backend);
    detail::read_opt(j, "head_image_backend", c.head_image_backend);
    detail::read_opt(j, "head_hard_labels", c.head_hard_labels);
    if (j.contains("feature_flags")) {
      c.feature_flags.clear();
      for (const auto& f : j.at("feature_flags")) {
        const auto name = f.get<std::string>();
        auto fam = fusion::parse_family(name);
        if (!fam) throw Error(ErrorKind::ConfigInvalid, "unknown feature flag '" + name + "'");
        c.feature_flags.insert(*fam);
      }
    }
    if (j.contains("forest")) {
      const auto& f = j.at("forest");
      detail::read_opt(f, "n_trees", c.forest.n_trees);
      detail::read_opt(f, "max_depth", c.forest.max_depth);
      detail::read_opt(f, "min_samples_leaf", c.forest.min_samples_leaf);
      detail::read_opt(f, "seed", c.forest.seed);
    }
    if (j.contains("mlp")) {
      const auto& m = j.at("mlp");
      detail::read_opt(m, "hidden_dim", c.mlp.hidden_dim);
      detail::read_opt(m, "learning_rate", c.mlp.learning_rate);
      detail::read_opt(m, "max_epochs", c.mlp.max_epochs);
      detail::read_opt(m, "batch_size", c.mlp.batch_size);
      detail::read_opt(m, "seed", c.mlp.seed);
      detail::read_opt(m, "init_scale", c.mlp.init_scale);
      detail::read_opt(m, "holdout_fraction", c.mlp.holdout_fraction);
      detail::read_opt(m, "patience", c.mlp.patience);
    }
    detail::read_opt(j, "workers", c.workers);
    if (j.contains("output_dir")) c.output_dir = detail::resolve(base_dir, j.at("output_dir").get<std::string>());
    if (j.contains("cache_root")) c.cache_root = detail::resolve(base_dir, j.at("cache_root").get<std::string>());
    if (j.contains("models_root")) c.models_root = detail::resolve(base_dir, j.at("models_root").get<std::string>());
    if (j.contains("fetch")) {
      detail::read_opt(j.at("fetch"), "retries", c.fetch.retries);
      detail::read_opt(j.at("fetch"), "backoff_ms", c.fetch.backoff_ms);
    }
    if (j.contains("backends")) c.registry.merge_json(j.at("backends"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, e.what());
  }
  c.forest.workers = c.workers;
  return c;
}

/// Environment overrides: FACTIFY_CACHE replaces cache_root.
inline void apply_environment(ExperimentConfig& c) {
  if (const char* cache = std::getenv("FACTIFY_CACHE"); cache != nullptr && *cache != '\0') c.cache_root = cache;
}

inline ExperimentConfig load_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigInvalid, e.detail());
  }
  // Absolute base so the run hash does not depend on the working directory.
  auto c = config_from_json(j, fs::absolute(path).parent_path());
  apply_environment(c);
  return c;
}

inline nlohmann::ordered_json flags_json(const fusion::FeatureFlags& flags) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (auto f : fusion::kAllFamilies) {
    if (flags.count(f)) a.push_back(std::string(fusion::to_string(f)));
  }
  return a;
}

/// Settings that determine trained artifacts. Dataset locations, output and
/// cache directories and the worker count are excluded.
inline nlohmann::ordered_json model_settings_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["text_backend"] = c.text_backend;
  j["image_backend"] = c.image_backend;
  j["head_variant"] = c.head_variant ? std::string(head::to_string(*c.head_variant)) : std::string("none");
  j["head_text_backend"] = c.head_text_backend;
  j["head_image_backend"] = c.head_image_backend;
  j["head_hard_labels"] = c.head_hard_labels;
  j["feature_flags"] = flags_json(c.feature_flags);
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"max_depth", c.forest.max_depth},
                 {"min_samples_leaf", c.forest.min_samples_leaf},
                 {"seed", c.forest.seed}};
  j["mlp"] = {{"hidden_dim", c.mlp.hidden_dim},         {"learning_rate", c.mlp.learning_rate},
              {"max_epochs", c.mlp.max_epochs},         {"batch_size", c.mlp.batch_size},
              {"seed", c.mlp.seed},                     {"init_scale", c.mlp.init_scale},
              {"holdout_fraction", c.mlp.holdout_fraction}, {"patience", c.mlp.patience}};
  return j;
}

/// Full echo including dataset locations; the run directory is named by its hash.
inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j = model_settings_json(c);
  nlohmann::ordered_json d;
  if (c.dataset.synth) {
    const auto& s = *c.dataset.synth;
    d["synth"] = {{"per_category", s.per_category}, {"seed", s.seed}, {"image_signal", s.image_signal},
                  {"image_side", s.image_side}};
  } else {
    d["train"] = c.dataset.train.string();
    d["val"] = c.dataset.val.string();
    d["test"] = c.dataset.test.string();
    d["column_map"] = c.dataset.column_map;
  }
  j["dataset"] = d;
  nlohmann::ordered_json backends;
  for (const auto& [id, spec] : c.registry.all()) {
    auto e = to_json(spec);
    if (!spec.asset.empty()) e["asset"] = c.registry.resolved(id, c.models_root).asset;
    backends[id] = e;
  }
  j["backends"] = backends;
  j["fetch"] = {{"retries", c.fetch.retries}, {"backoff_ms", c.fetch.backoff_ms}};
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) { return sha256_hex(to_json(c).dump()); }

}  // namespace factify
