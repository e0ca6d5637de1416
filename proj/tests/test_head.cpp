#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "factify/entailment_head.hpp"
#include "factify/mlp.hpp"
#include "oracles.hpp"

using namespace factify;
using mlp::Matrix;
using mlp::MlpConfig;
using mlp::Params;

namespace {

MlpConfig tiny(int in, int hidden, int out) {
  MlpConfig c;
  c.input_dim = in;
  c.hidden_dim = hidden;
  c.output_dim = out;
  return c;
}

/// Three well-separated Gaussian blobs in 2-D, `per` points each.
std::vector<mlp::Example> blobs(int per, std::uint64_t seed, double spread = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  const double centres[3][2] = {{3, 0}, {-3, 0}, {0, 3}};
  std::vector<mlp::Example> out;
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < per; ++i) out.push_back({{centres[k][0] + noise(rng), centres[k][1] + noise(rng)}, k});
  }
  return out;
}

double accuracy(const MlpConfig& c, const Params<double>& p, const std::vector<mlp::Example>& ex) {
  int ok = 0;
  for (const auto& e : ex) ok += static_cast<int>(mlp::forward(c, p, e.input).argmax()) == e.target;
  return static_cast<double>(ok) / static_cast<double>(ex.size());
}

}  // namespace

TEST(Mlp, ZeroParamsGiveUniformProbs) {
  const auto c = tiny(5, 4, 3);
  const auto p = Params<double>::zeros(c);
  const auto probs = mlp::forward(c, p, std::vector<double>{1, -2, 3, 0.5, 9}).probs;
  for (double v : probs) EXPECT_DOUBLE_EQ(v, 1.0 / 3);
}

TEST(Mlp, DominantBiasWinsArgmax) {
  const auto c = tiny(4, 3, 5);
  for (int k = 0; k < 5; ++k) {
    auto p = Params<double>::zeros(c);
    p.b2[k] = 10.0;
    EXPECT_EQ(mlp::forward(c, p, std::vector<double>{0.1, 0.2, 0.3, 0.4}).argmax(), static_cast<std::size_t>(k));
  }
}

TEST(Mlp, RandomForwardIsNormalized) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = tiny(6, 5, trial % 2 ? 3 : 5);
    Rng rng(static_cast<std::uint64_t>(trial));
    const auto p = mlp::init_params<double>(c, rng);
    std::vector<double> x(6);
    for (auto& v : x) v = std::normal_distribution<double>(0, 3)(gen);
    const auto probs = mlp::forward(c, p, x).probs;
    EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-6);
    for (double v : probs) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Mlp, ShapeMismatch) {
  const auto c = tiny(4, 3, 3);
  const auto p = Params<double>::zeros(c);
  EXPECT_THROW(mlp::forward(c, p, std::vector<double>{1, 2, 3}), Error);
  const auto other = Params<double>::zeros(tiny(5, 3, 3));
  EXPECT_THROW(mlp::forward(c, other, std::vector<double>{1, 2, 3, 4}), Error);
}

TEST(Mlp, SoftmaxShiftInvariance) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(5);
    for (auto& v : z) v = d(rng);
    auto shifted = z;
    const double k = d(rng) * 100;
    for (auto& v : shifted) v += k;
    const auto a = mlp::softmax(z);
    const auto b = mlp::softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  const auto c = tiny(4, 3, 3);
  std::mt19937_64 gen(17);
  std::normal_distribution<double> d;
  for (int draw = 0; draw < 20; ++draw) {
    Rng rng(static_cast<std::uint64_t>(100 + draw));
    auto p = mlp::init_params<double>(c, rng);
    Matrix<double> x(6, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(gen);
    std::vector<int> y(6);
    for (auto& t : y) t = static_cast<int>(gen() % 3);
    auto analytic = Params<double>::zeros(c);
    mlp::loss_and_gradients<double>(p, x, y, &analytic);
    const auto numeric = oracle::numeric_gradient(p, x, y, 1e-5);
    auto check = [&](const double* a, const double* n, Eigen::Index count) {
      for (Eigen::Index i = 0; i < count; ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(n[i]), 1e-8});
        EXPECT_LT(std::abs(a[i] - n[i]) / denom, 1e-4) << "draw " << draw << " index " << i;
      }
    };
    check(analytic.w1.data(), numeric.w1.data(), analytic.w1.size());
    check(analytic.b1.data(), numeric.b1.data(), analytic.b1.size());
    check(analytic.w2.data(), numeric.w2.data(), analytic.w2.size());
    check(analytic.b2.data(), numeric.b2.data(), analytic.b2.size());
  }
}

TEST(Mlp, InitialLossNearLn3UnderSmallInit) {
  auto c = tiny(2, 100, 3);
  c.init_scale = 1e-3;
  c.max_epochs = 1;
  const auto r = mlp::train<double>(c, blobs(10, 5));
  EXPECT_NEAR(r.log.initial_loss, std::log(3.0), 0.05);
}

TEST(Mlp, OverfitsSeparableBlobs) {
  auto c = tiny(2, 100, 3);
  c.holdout_fraction = 0.0;
  c.batch_size = 8;
  const auto data = blobs(10, 9);
  const auto r = mlp::train<double>(c, data);
  EXPECT_DOUBLE_EQ(accuracy(c, r.params, data), 1.0);
  EXPECT_LE(r.log.epoch_losses.back(), r.log.epoch_losses.front());
  EXPECT_EQ(r.log.epoch_losses.size(), 200u);
}

TEST(Mlp, TrainingIsDeterministic) {
  auto c = tiny(2, 16, 3);
  c.max_epochs = 30;
  const auto data = blobs(12, 2);
  const auto a = mlp::train<double>(c, data);
  const auto b = mlp::train<double>(c, data);
  EXPECT_EQ(a.log.epoch_losses, b.log.epoch_losses);
  EXPECT_TRUE(a.params == b.params);
  c.seed = 43;
  const auto other = mlp::train<double>(c, data);
  EXPECT_FALSE(a.params == other.params);
}

TEST(Mlp, EarlyStoppingUsesTrainingHoldoutOnly) {
  auto c = tiny(2, 16, 3);
  c.patience = 3;
  const auto data = blobs(20, 8);
  const auto r = mlp::train<double>(c, data);
  EXPECT_EQ(r.log.train_rows + r.log.holdout_rows, data.size());
  EXPECT_EQ(r.log.holdout_rows, 6u);
  EXPECT_EQ(r.log.holdout_losses.size(), r.log.epoch_losses.size());
  EXPECT_GE(r.log.best_epoch, 0);
}

TEST(Mlp, MissingCategoryWarnsButTrains) {
  auto c = tiny(2, 8, 3);
  c.max_epochs = 5;
  auto data = blobs(5, 3);
  data.erase(std::remove_if(data.begin(), data.end(), [](const auto& e) { return e.target == 2; }), data.end());
  const auto r = mlp::train<double>(c, data);
  ASSERT_EQ(r.log.warnings.size(), 1u);
  EXPECT_NE(r.log.warnings[0].find("DegenerateData"), std::string::npos);
}

TEST(Mlp, ShuffledLabelsStayNearChance) {
  auto c = tiny(2, 32, 3);
  c.max_epochs = 100;
  auto train = blobs(60, 21, 1.0);
  auto val = blobs(60, 22, 1.0);
  std::mt19937_64 rng(5);
  std::vector<int> targets;
  for (const auto& e : train) targets.push_back(e.target);
  std::shuffle(targets.begin(), targets.end(), rng);
  for (std::size_t i = 0; i < train.size(); ++i) train[i].target = targets[i];
  const auto r = mlp::train<double>(c, train);
  EXPECT_NEAR(accuracy(c, r.params, val), 1.0 / 3, 0.15);
}

TEST(Mlp, SerializationRoundTripsExactly) {
  auto c = tiny(2, 16, 3);
  c.max_epochs = 10;
  const auto r = mlp::train<double>(c, blobs(10, 1));
  const auto bytes = mlp::serialize(c, r.params, {{"note", "x"}});
  const std::string head(bytes.begin(), bytes.begin() + 13);
  EXPECT_EQ(head, "FACTIFY-MLP 1");
  const auto back = mlp::deserialize<double>(bytes);
  EXPECT_TRUE(back.params == r.params);
  EXPECT_EQ(back.config.hidden_dim, 16);
  EXPECT_EQ(back.config.learning_rate, c.learning_rate);
  EXPECT_EQ(back.header.at("note"), "x");
  EXPECT_EQ(mlp::serialize(back.config, back.params, {{"note", "x"}}), bytes);

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(mlp::deserialize<double>(truncated), Error);
}

TEST(Head, FeatureLengthsPerVariant) {
  head::InputDims dims{4, 6};
  std::mt19937_64 gen(3);
  std::normal_distribution<float> d;
  std::vector<head::PairEmbeddings> pairs;
  std::vector<Label5> gold;
  for (int i = 0; i < 25; ++i) {
    head::PairEmbeddings e;
    for (auto* v : {&e.claim_text, &e.doc_text}) {
      v->resize(4);
      for (auto& x : *v) x = d(gen);
    }
    for (auto* v : {&e.claim_image, &e.doc_image}) {
      v->resize(6);
      for (auto& x : *v) x = d(gen);
    }
    pairs.push_back(e);
    gold.push_back(label5_from_index(static_cast<std::size_t>(i % 5)));
  }
  MlpConfig base;
  base.hidden_dim = 8;
  base.max_epochs = 3;
  head::HeadSet heads;
  for (auto in : {head::HeadInput::TextPair, head::HeadInput::ImagePair, head::HeadInput::AllFour}) {
    heads.for_input(in) = head::train_head(base, in, dims, pairs, gold);
  }
  auto sum = [](auto b, auto e) { return std::accumulate(b, e, 0.0); };
  const auto t = head::head_features(head::HeadVariant::TextPair3, heads, pairs[0]);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_NEAR(sum(t.begin(), t.end()), 1.0, 1e-6);
  const auto ti = head::head_features(head::HeadVariant::TextAndImagePair3, heads, pairs[0]);
  ASSERT_EQ(ti.size(), 6u);
  EXPECT_NEAR(sum(ti.begin(), ti.begin() + 3), 1.0, 1e-6);
  EXPECT_NEAR(sum(ti.begin() + 3, ti.end()), 1.0, 1e-6);
  const auto all = head::head_features(head::HeadVariant::AllConcat5, heads, pairs[0]);
  ASSERT_EQ(all.size(), 5u);
  EXPECT_NEAR(sum(all.begin(), all.end()), 1.0, 1e-6);
  const auto hard = head::head_features(head::HeadVariant::TextPair3, heads, pairs[0], true);
  EXPECT_DOUBLE_EQ(sum(hard.begin(), hard.end()), 1.0);
  EXPECT_EQ(std::count(hard.begin(), hard.end(), 1.0), 1);

  EXPECT_EQ(head::feature_names(head::HeadVariant::TextPair3),
            (std::vector<std::string>{"head_p_support", "head_p_insufficient", "head_p_refute"}));
  EXPECT_EQ(dims.for_input(head::HeadInput::AllFour), 20);

  auto bad = pairs[0];
  bad.claim_text.resize(3);
  EXPECT_THROW(head::head_features(head::HeadVariant::TextPair3, heads, bad), Error);
  auto missing = pairs[0];
  missing.claim_image.clear();
  EXPECT_NO_THROW(head::head_features(head::HeadVariant::ImagePair3, heads, missing));
}

TEST(Head, TargetsCollapseForPairHeads) {
  EXPECT_EQ(head::target_for(head::HeadInput::TextPair, Label5::SupportMultimodal), 0);
  EXPECT_EQ(head::target_for(head::HeadInput::TextPair, Label5::InsufficientText), 1);
  EXPECT_EQ(head::target_for(head::HeadInput::TextPair, Label5::Refute), 2);
  EXPECT_EQ(head::target_for(head::HeadInput::AllFour, Label5::InsufficientMultimodal), 3);
}

TEST(Head, VariantNamesRoundTrip) {
  for (auto v : head::kAllVariants) EXPECT_EQ(head::parse_head_variant(head::to_string(v)), v);
  EXPECT_FALSE(head::parse_head_variant("TextPair4"));
}
