#include <gtest/gtest.h>

#include <random>

#include "factify/metrics.hpp"
#include "oracles.hpp"

using namespace factify;
using L = Label5;

namespace {

std::vector<Label5> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::vector<Label5> v(n);
  for (auto& l : v) l = label5_from_index(rng() % 5);
  return v;
}

}  // namespace

TEST(Confusion, Examples) {
  auto m = metrics::confusion(std::vector<L>{L::Refute, L::Refute}, std::vector<L>{L::Refute, L::Refute});
  EXPECT_EQ(m.counts[4][4], 2u);
  EXPECT_EQ(m.total(), 2u);
  m = metrics::confusion(std::vector<L>{L::SupportText}, std::vector<L>{L::Refute});
  EXPECT_EQ(m.counts[0][4], 1u);
  EXPECT_EQ(m.total(), 1u);
  m = metrics::confusion(std::vector<L>{L::SupportText, L::Refute, L::InsufficientText},
                         std::vector<L>{L::Refute, L::Refute, L::SupportText});
  EXPECT_EQ(m.total(), 3u);
}

TEST(Confusion, LengthMismatch) {
  for (auto [g, p] : {std::pair<std::size_t, std::size_t>{1, 2}, {0, 0}}) {
    try {
      metrics::confusion(std::vector<L>(g, L::Refute), std::vector<L>(p, L::Refute));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::LengthMismatch);
    }
  }
}

TEST(WeightedF1, WorkedExampleIsExactlyTwoThirds) {
  const std::vector<L> gold{L::SupportText, L::SupportText, L::Refute};
  const std::vector<L> pred{L::SupportText, L::Refute, L::Refute};
  const auto r = metrics::weighted_f1(gold, pred);
  EXPECT_EQ(r.f1(L::SupportText), 2.0 / 3.0);
  EXPECT_EQ(r.f1(L::Refute), 2.0 / 3.0);
  EXPECT_EQ(r.weighted_f1, 2.0 / 3.0);
}

TEST(WeightedF1, PerfectAndConstantPredictions) {
  std::vector<L> gold;
  for (int k = 0; k < 4; ++k) {
    for (L l : kAllLabel5) gold.push_back(l);
  }
  EXPECT_DOUBLE_EQ(metrics::weighted_f1(gold, gold).weighted_f1, 1.0);
  const std::vector<L> all_refute(gold.size(), L::Refute);
  EXPECT_NEAR(metrics::weighted_f1(gold, all_refute).weighted_f1, 1.0 / 15, 1e-15);
}

TEST(WeightedF1, MatchesBruteForceOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    const auto gold = random_labels(rng, n);
    const auto pred = random_labels(rng, n);
    const auto r = metrics::weighted_f1(gold, pred);
    const auto o = oracle::metrics(gold, pred);
    ASSERT_NEAR(r.weighted_f1, o.weighted, 1e-12);
    for (std::size_t c = 0; c < 5; ++c) {
      ASSERT_NEAR(r.per_category[c].f1, o.f1[c], 1e-12);
      for (std::size_t p = 0; p < 5; ++p) ASSERT_EQ(r.confusion.counts[c][p], o.confusion[c][p]);
    }
  }
}

TEST(WeightedF1, Invariants) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    auto gold = random_labels(rng, n);
    auto pred = random_labels(rng, n);
    const auto r = metrics::weighted_f1(gold, pred);
    EXPECT_GE(r.weighted_f1, 0.0);
    EXPECT_LE(r.weighted_f1, 1.0);

    double weighted = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_EQ(r.confusion.row_sum(c), static_cast<std::size_t>(std::count(gold.begin(), gold.end(), label5_from_index(c))));
      EXPECT_EQ(r.confusion.col_sum(c), static_cast<std::size_t>(std::count(pred.begin(), pred.end(), label5_from_index(c))));
      weighted += static_cast<double>(r.per_category[c].support) * r.per_category[c].f1;
    }
    EXPECT_NEAR(r.weighted_f1, weighted / static_cast<double>(n), 1e-9);

    bool diagonal = true;
    for (std::size_t g = 0; g < 5; ++g) {
      for (std::size_t p = 0; p < 5; ++p) diagonal = diagonal && (g == p || r.confusion.counts[g][p] == 0);
    }
    EXPECT_EQ(r.weighted_f1 == 1.0, diagonal);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<L> g2(n), p2(n);
    for (std::size_t i = 0; i < n; ++i) {
      g2[i] = gold[perm[i]];
      p2[i] = pred[perm[i]];
    }
    EXPECT_EQ(metrics::weighted_f1(g2, p2), r);
  }
}

TEST(Report, JsonRoundTripAndStableKeys) {
  const std::vector<L> gold{L::SupportText, L::SupportMultimodal, L::Refute, L::InsufficientText};
  const std::vector<L> pred{L::SupportText, L::Refute, L::Refute, L::InsufficientMultimodal};
  const auto r = metrics::weighted_f1(gold, pred);
  const auto j = metrics::to_json(r);
  const auto text = j.dump();
  EXPECT_EQ(text.find("\"n_rows\""), 1u);
  EXPECT_LT(text.find("\"weighted_f1\""), text.find("\"per_category\""));
  EXPECT_EQ(metrics::report_from_json(nlohmann::json::parse(text)), r);
  EXPECT_EQ(metrics::to_json(metrics::weighted_f1(gold, pred)).dump(), text);
}

TEST(Report, TextAndCsv) {
  const std::vector<L> gold{L::SupportText, L::Refute};
  const std::vector<L> pred{L::SupportText, L::SupportText};
  const auto r = metrics::weighted_f1(gold, pred);
  const auto txt = metrics::to_text(r);
  EXPECT_NE(txt.find("Support_Text"), std::string::npos);
  EXPECT_NE(txt.find("weighted"), std::string::npos);
  const auto csv = metrics::confusion_csv(r.confusion);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "gold,Support_Text,Support_Multimodal,Insufficient_Text,Insufficient_Multimodal,Refute");
  EXPECT_NE(csv.find("Refute,1,0,0,0,0"), std::string::npos);
}
