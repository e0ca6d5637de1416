#pragma once

// Random forest of CART trees: bootstrap resampling, sqrt(n_features)
// candidate features per split, Gini impurity, majority vote with ties broken
// toward the lowest class index. Per-tree randomness derives from
// (seed, tree index), so training is deterministic under any worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "factify/embedding_cache.hpp"
#include "factify/error.hpp"
#include "factify/rng.hpp"

namespace factify::forest {

struct ForestConfig {
  int n_trees = 100;
  int max_depth = 40;
  int min_samples_leaf = 1;
  std::uint64_t seed = 42;
  int workers = 1;
};

inline void validate(const ForestConfig& c) {
  if (c.n_trees <= 0 || c.max_depth <= 0 || c.min_samples_leaf <= 0) {
    throw Error(ErrorKind::ConfigInvalid, "forest n_trees, max_depth and min_samples_leaf must be positive");
  }
}

struct Node {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left when x[feature] <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::int32_t label = 0;
};

struct Tree {
  std::vector<Node> nodes;

  int predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
      const Node& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].label;
  }

  int depth() const {
    std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
    int best = 0;
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (nodes[i].feature >= 0) {
        stack.push_back({static_cast<std::size_t>(nodes[i].left), d + 1});
        stack.push_back({static_cast<std::size_t>(nodes[i].right), d + 1});
      }
    }
    return best;
  }
};

namespace detail {

inline int majority(std::span<const std::size_t> counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

class TreeBuilder {
 public:
  TreeBuilder(const ForestConfig& config, const std::vector<std::vector<double>>& rows, std::span<const int> labels,
              int n_classes, std::uint64_t seed)
      : config_(config), rows_(rows), labels_(labels), n_classes_(n_classes), rng_(seed) {
    n_features_ = rows.empty() ? 0 : rows.front().size();
    mtry_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(n_features_))));
  }

  Tree build() {
    const std::size_t n = rows_.size();
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) s = rng_.index(n);
    Tree tree;
    tree.nodes.emplace_back();
    struct Pending {
      std::size_t node;
      std::vector<std::size_t> idx;
      int depth;
    };
    std::vector<Pending> stack;
    stack.push_back({0, std::move(sample), 0});
    while (!stack.empty()) {
      Pending p = std::move(stack.back());
      stack.pop_back();
      std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes_), 0);
      for (auto i : p.idx) ++counts[static_cast<std::size_t>(labels_[i])];
      tree.nodes[p.node].label = majority(counts);
      const bool pure = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) <= 1;
      if (pure || p.depth >= config_.max_depth ||
          p.idx.size() < 2 * static_cast<std::size_t>(config_.min_samples_leaf)) {
        continue;
      }
      const Split split = best_split(p.idx, counts);
      if (split.feature < 0) continue;
      std::vector<std::size_t> left;
      std::vector<std::size_t> right;
      for (auto i : p.idx) {
        (rows_[i][static_cast<std::size_t>(split.feature)] <= split.threshold ? left : right).push_back(i);
      }
      const auto l = tree.nodes.size();
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      Node& node = tree.nodes[p.node];
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.left = static_cast<std::int32_t>(l);
      node.right = static_cast<std::int32_t>(l + 1);
      stack.push_back({l + 1, std::move(right), p.depth + 1});
      stack.push_back({l, std::move(left), p.depth + 1});
    }
    return tree;
  }

 private:
  struct Split {
    std::int32_t feature = -1;
    double threshold = 0.0;
    double score = -1.0;  // sum over children of sum_c count^2 / n_child; larger is purer
  };

  Split best_split(const std::vector<std::size_t>& idx, const std::vector<std::size_t>& parent_counts) {
    std::vector<std::size_t> features(n_features_);
    std::iota(features.begin(), features.end(), 0);
    rng_.shuffle(features);
    Split best;
    std::size_t informative_tried = 0;
    std::vector<std::pair<double, int>> values(idx.size());
    std::vector<std::size_t> left_counts(static_cast<std::size_t>(n_classes_));
    const auto min_leaf = static_cast<std::size_t>(config_.min_samples_leaf);
    for (std::size_t f : features) {
      // Keep drawing past mtry only while no valid split has been found.
      if (informative_tried >= mtry_ && best.feature >= 0) break;
      for (std::size_t k = 0; k < idx.size(); ++k) values[k] = {rows_[idx[k]][f], labels_[idx[k]]};
      std::sort(values.begin(), values.end());
      if (values.front().first == values.back().first) continue;  // constant in this node
      ++informative_tried;
      std::fill(left_counts.begin(), left_counts.end(), 0);
      double left_sq = 0.0;
      double right_sq = 0.0;
      for (auto c : parent_counts) right_sq += static_cast<double>(c) * static_cast<double>(c);
      const std::size_t n = values.size();
      for (std::size_t k = 1; k < n; ++k) {
        const auto cls = static_cast<std::size_t>(values[k - 1].second);
        const double lc = static_cast<double>(left_counts[cls]);
        const double rc = static_cast<double>(parent_counts[cls] - left_counts[cls]);
        left_sq += 2.0 * lc + 1.0;   // (lc+1)^2 - lc^2
        right_sq -= 2.0 * rc - 1.0;  // rc^2 - (rc-1)^2
        ++left_counts[cls];
        if (values[k - 1].first == values[k].first) continue;
        if (k < min_leaf || n - k < min_leaf) continue;
        const double score = left_sq / static_cast<double>(k) + right_sq / static_cast<double>(n - k);
        if (score > best.score) {
          const double lo = values[k - 1].first;
          const double hi = values[k].first;
          double threshold = lo + (hi - lo) / 2.0;
          if (!(threshold >= lo && threshold < hi)) threshold = lo;
          best = {static_cast<std::int32_t>(f), threshold, score};
        }
      }
    }
    return best;
  }

  const ForestConfig& config_;
  const std::vector<std::vector<double>>& rows_;
  std::span<const int> labels_;
  int n_classes_;
  Rng rng_;
  std::size_t n_features_ = 0;
  std::size_t mtry_ = 1;
};

}  // namespace detail

class RandomForest {
 public:
  static RandomForest fit(const ForestConfig& config, const std::vector<std::vector<double>>& rows,
                          std::span<const int> labels, int n_classes) {
    validate(config);
    if (rows.empty()) throw Error(ErrorKind::DegenerateData, "forest training requires at least one row");
    if (rows.size() != labels.size()) throw Error(ErrorKind::LengthMismatch, "forest rows/labels differ in length");
    const std::size_t width = rows.front().size();
    for (const auto& r : rows) {
      if (r.size() != width) throw Error(ErrorKind::SchemaMismatch, "forest rows have inconsistent widths");
    }
    for (int l : labels) {
      if (l < 0 || l >= n_classes) throw Error(ErrorKind::ShapeMismatch, "forest label out of range");
    }
    RandomForest f;
    f.n_features_ = width;
    f.n_classes_ = n_classes;
    f.trees_.resize(static_cast<std::size_t>(config.n_trees));
    const int workers = std::clamp(config.workers, 1, config.n_trees);
    auto grow = [&](int worker) {
      for (int t = worker; t < config.n_trees; t += workers) {
        detail::TreeBuilder builder(config, rows, labels, n_classes, derive_seed(config.seed, static_cast<std::uint64_t>(t)));
        f.trees_[static_cast<std::size_t>(t)] = builder.build();
      }
    };
    if (workers == 1) {
      grow(0);
    } else {
      std::vector<std::thread> threads;
      for (int w = 0; w < workers; ++w) threads.emplace_back(grow, w);
      for (auto& t : threads) t.join();
    }
    return f;
  }

  std::size_t n_features() const { return n_features_; }
  int n_classes() const { return n_classes_; }
  const std::vector<Tree>& trees() const { return trees_; }

  /// Fraction of trees voting for each class; sums to 1.
  std::vector<double> vote_fractions(std::span<const double> x) const {
    check_width(x);
    std::vector<std::size_t> votes(static_cast<std::size_t>(n_classes_), 0);
    for (const auto& t : trees_) ++votes[static_cast<std::size_t>(t.predict(x))];
    std::vector<double> out(votes.size());
    for (std::size_t i = 0; i < votes.size(); ++i) out[i] = static_cast<double>(votes[i]) / static_cast<double>(trees_.size());
    return out;
  }

  int predict(std::span<const double> x) const {
    check_width(x);
    std::vector<std::size_t> votes(static_cast<std::size_t>(n_classes_), 0);
    for (const auto& t : trees_) ++votes[static_cast<std::size_t>(t.predict(x))];
    return detail::majority(votes);
  }

  // forest.bin: "RFB1" | u32 format version | u32 n_features | u32 n_classes | u32 n_trees,
  // then per tree u32 n_nodes and nodes as (i32 feature, f64 threshold, i32 left, i32 right, i32 label).
  std::vector<unsigned char> serialize() const {
    std::vector<unsigned char> out = {'R', 'F', 'B', '1'};
    io::put_u32(out, 1);
    io::put_u32(out, static_cast<std::uint32_t>(n_features_));
    io::put_u32(out, static_cast<std::uint32_t>(n_classes_));
    io::put_u32(out, static_cast<std::uint32_t>(trees_.size()));
    for (const auto& t : trees_) {
      io::put_u32(out, static_cast<std::uint32_t>(t.nodes.size()));
      for (const auto& n : t.nodes) {
        io::put_i32(out, n.feature);
        io::put_f64(out, n.threshold);
        io::put_i32(out, n.left);
        io::put_i32(out, n.right);
        io::put_i32(out, n.label);
      }
    }
    return out;
  }

  static RandomForest deserialize(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "RFB1", 4) != 0) throw Error(ErrorKind::Io, "not a forest file");
    io::Reader r(bytes.subspan(4));
    if (r.u32() != 1) throw Error(ErrorKind::Io, "unsupported forest format version");
    RandomForest f;
    f.n_features_ = r.u32();
    f.n_classes_ = static_cast<int>(r.u32());
    const auto n_trees = r.u32();
    f.trees_.resize(n_trees);
    for (auto& t : f.trees_) {
      const auto n_nodes = r.u32();
      t.nodes.resize(n_nodes);
      for (auto& n : t.nodes) {
        n.feature = r.i32();
        n.threshold = r.f64();
        n.left = r.i32();
        n.right = r.i32();
        n.label = r.i32();
        const bool leaf = n.feature < 0;
        if (!leaf && (n.feature >= static_cast<std::int32_t>(f.n_features_) || n.left <= 0 || n.right <= 0 ||
                      n.left >= static_cast<std::int32_t>(n_nodes) || n.right >= static_cast<std::int32_t>(n_nodes))) {
          throw Error(ErrorKind::Io, "corrupt forest node");
        }
        if (n.label < 0 || n.label >= f.n_classes_) throw Error(ErrorKind::Io, "corrupt forest leaf label");
      }
      if (t.nodes.empty()) throw Error(ErrorKind::Io, "empty tree in forest file");
    }
    if (r.remaining() != 0) throw Error(ErrorKind::Io, "trailing bytes in forest file");
    return f;
  }

 private:
  void check_width(std::span<const double> x) const {
    if (x.size() != n_features_) {
      throw Error(ErrorKind::SchemaMismatch, "row has " + std::to_string(x.size()) + " features, forest expects " +
                                                 std::to_string(n_features_));
    }
  }

  std::size_t n_features_ = 0;
  int n_classes_ = 0;
  std::vector<Tree> trees_;
};

}  // namespace factify::forest
