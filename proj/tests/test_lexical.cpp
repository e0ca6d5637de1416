#include <gtest/gtest.h>

#include <random>

#include "factify/datamodel.hpp"
#include "factify/lexical.hpp"
#include "factify/text.hpp"
#include "oracles.hpp"

using namespace factify;
using lexical::TokenSeq;

namespace {

TokenSeq random_tokens(std::mt19937_64& rng, std::size_t max_len) {
  static const char* kAlphabet[] = {"a", "b", "c", "d"};
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> sym(0, 3);
  TokenSeq t(len(rng));
  for (auto& s : t) s = kAlphabet[sym(rng)];
  return t;
}

}  // namespace

TEST(Labels, CollapseTable) {
  EXPECT_EQ(collapse_label(Label5::SupportText), Label3::Support);
  EXPECT_EQ(collapse_label(Label5::SupportMultimodal), Label3::Support);
  EXPECT_EQ(collapse_label(Label5::InsufficientText), Label3::Insufficient);
  EXPECT_EQ(collapse_label(Label5::InsufficientMultimodal), Label3::Insufficient);
  EXPECT_EQ(collapse_label(Label5::Refute), Label3::Refute);
}

TEST(Labels, CollapseIsSurjectiveTwoTwoOne) {
  std::array<int, 3> hits{};
  for (Label5 l : kAllLabel5) ++hits[index_of(collapse_label(l))];
  EXPECT_EQ(hits, (std::array<int, 3>{2, 2, 1}));
}

TEST(Labels, ParseFormatRoundTrip) {
  for (Label5 l : kAllLabel5) {
    EXPECT_EQ(parse_label5(to_string(l)), l);
    EXPECT_EQ(parse_label5("  " + text::lower_ascii(to_string(l)) + "\t"), l);
  }
  EXPECT_EQ(parse_label5("SUPPORT_MULTIMODAL"), Label5::SupportMultimodal);
  EXPECT_FALSE(parse_label5("Support"));
  EXPECT_FALSE(parse_label5(""));
}

TEST(Text, CanonicalizeAppliesNfcAndCollapsesWhitespace) {
  // "e" + combining acute composes to U+00E9.
  EXPECT_EQ(text::canonicalize("  caf\x65\xCC\x81 \t\n au   lait "), "caf\xC3\xA9 au lait");
  EXPECT_EQ(text::canonicalize("\xE2\x80\x83x\xC2\xA0y"), "x y");  // em space, no-break space
  EXPECT_EQ(text::canonicalize(""), "");
}

TEST(Tokenize, Examples) {
  EXPECT_EQ(lexical::tokenize("The cat sat."), (TokenSeq{"the", "cat", "sat"}));
  EXPECT_EQ(lexical::tokenize(""), TokenSeq{});
  EXPECT_EQ(lexical::tokenize("COVID-19 spreads"), (TokenSeq{"covid", "19", "spreads"}));
  EXPECT_EQ(lexical::tokenize("!!! ... ---"), TokenSeq{});
}

TEST(Tokenize, UnicodeLowercasingAndLetters) {
  EXPECT_EQ(lexical::tokenize("\xC3\x89T\xC3\x89 \xCE\x91\xCE\x98\xCE\x97\xCE\x9D\xCE\x91"),
            (TokenSeq{"\xC3\xA9t\xC3\xA9", "\xCE\xB1\xCE\xB8\xCE\xB7\xCE\xBD\xCE\xB1"}));
  for (const auto& t : lexical::tokenize("a\tb  c d,e")) {
    EXPECT_FALSE(t.empty());
    EXPECT_EQ(t.find_first_of(" \t\n"), std::string::npos);
  }
}

TEST(Rouge, HandExamples) {
  const TokenSeq a{"the", "cat", "ran"}, b{"the", "cat", "sat"};
  auto r1 = lexical::rouge_n(a, b, 1);
  EXPECT_DOUBLE_EQ(r1.recall, 2.0 / 3);
  EXPECT_DOUBLE_EQ(r1.precision, 2.0 / 3);
  EXPECT_NEAR(r1.f1, 0.6667, 1e-4);
  auto r2 = lexical::rouge_n(a, b, 2);
  EXPECT_DOUBLE_EQ(r2.recall, 0.5);
  EXPECT_DOUBLE_EQ(r2.precision, 0.5);
  EXPECT_DOUBLE_EQ(r2.f1, 0.5);
  auto rl = lexical::rouge_l(a, b);
  EXPECT_EQ(lexical::lcs_length(a, b), 2u);
  EXPECT_NEAR(rl.f1, 0.6667, 1e-4);

  const TokenSeq abc{"a", "b", "c"}, cba{"c", "b", "a"};
  EXPECT_EQ(lexical::lcs_length(abc, cba), 1u);
  EXPECT_DOUBLE_EQ(lexical::rouge_l(abc, cba).f1, 1.0 / 3);
  auto empty = lexical::rouge_l({}, abc);
  EXPECT_EQ(empty.recall, 0.0);
  EXPECT_EQ(empty.precision, 0.0);
  EXPECT_EQ(empty.f1, 0.0);
}

TEST(Rouge, IdentityScoresOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_tokens(rng, 8);
    for (std::size_t n = 1; n <= x.size(); ++n) EXPECT_DOUBLE_EQ(lexical::rouge_n(x, x, n).f1, 1.0);
    if (!x.empty()) {
      EXPECT_DOUBLE_EQ(lexical::rouge_l(x, x).f1, 1.0);
    }
  }
}

TEST(Rouge, ZeroNThrows) { EXPECT_THROW(lexical::rouge_n({"a"}, {"a"}, 0), Error); }

TEST(Rouge, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = random_tokens(rng, 8);
    const auto r = random_tokens(rng, 8);
    for (std::size_t n = 1; n <= 3; ++n) {
      const auto got = lexical::rouge_n(c, r, n);
      const auto want = oracle::rouge_n(c, r, n);
      ASSERT_NEAR(got.recall, want.recall, 1e-12);
      ASSERT_NEAR(got.precision, want.precision, 1e-12);
      ASSERT_NEAR(got.f1, want.f1, 1e-12);
    }
    ASSERT_EQ(lexical::lcs_length(c, r), oracle::lcs_exhaustive(c, r));
    const auto got = lexical::rouge_l(c, r);
    const auto want = oracle::rouge_l(c, r);
    ASSERT_NEAR(got.f1, want.f1, 1e-12);
  }
}

TEST(Rouge, SwapExchangesRecallAndPrecision) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_tokens(rng, 8);
    const auto b = random_tokens(rng, 8);
    for (std::size_t n = 1; n <= 2; ++n) {
      const auto ab = lexical::rouge_n(a, b, n);
      const auto ba = lexical::rouge_n(b, a, n);
      EXPECT_DOUBLE_EQ(ab.recall, ba.precision);
      EXPECT_DOUBLE_EQ(ab.precision, ba.recall);
      EXPECT_DOUBLE_EQ(ab.f1, ba.f1);
    }
    const auto ab = lexical::rouge_l(a, b);
    const auto ba = lexical::rouge_l(b, a);
    EXPECT_DOUBLE_EQ(ab.recall, ba.precision);
    EXPECT_DOUBLE_EQ(ab.f1, ba.f1);
    for (double v : {ab.recall, ab.precision, ab.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Rouge, AppendingReferenceTokenNeverLowersUnigramOverlap) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    auto c = random_tokens(rng, 8);
    const auto r = random_tokens(rng, 8);
    if (r.empty()) continue;
    const auto before = lexical::ngram_overlap(c, r, 1);
    c.push_back(r[rng() % r.size()]);
    EXPECT_GE(lexical::ngram_overlap(c, r, 1), before);
  }
}

TEST(LexicalFeatures, Examples) {
  ClaimDocPair p{"1", "the cat ran", "the cat sat", "", "", std::nullopt};
  auto f = lexical::lexical_features(p);
  EXPECT_NEAR(f.rouge1_f, 0.6667, 1e-4);
  EXPECT_DOUBLE_EQ(f.rouge2_f, 0.5);
  EXPECT_NEAR(f.rougeL_f, 0.6667, 1e-4);
  EXPECT_EQ(f.claim_len, 3u);
  EXPECT_EQ(f.doc_len, 3u);
  EXPECT_DOUBLE_EQ(f.len_ratio, 1.0);

  p.claim_text = p.doc_text = "hello world";
  f = lexical::lexical_features(p);
  EXPECT_DOUBLE_EQ(f.rouge1_f, 1.0);
  EXPECT_DOUBLE_EQ(f.rouge2_f, 1.0);
  EXPECT_DOUBLE_EQ(f.rougeL_f, 1.0);
  EXPECT_EQ(f.claim_len, 2u);

  p.claim_text = "alpha beta";
  p.doc_text = "gamma delta epsilon";
  f = lexical::lexical_features(p);
  EXPECT_EQ(f.rouge1_f, 0.0);
  EXPECT_EQ(f.rouge2_f, 0.0);
  EXPECT_EQ(f.rougeL_f, 0.0);
  EXPECT_EQ(f.claim_len, 2u);
  EXPECT_EQ(f.doc_len, 3u);
  EXPECT_DOUBLE_EQ(f.len_ratio, 2.0 / 3);
}

TEST(LexicalFeatures, EmptySideClampsRatio) {
  auto f = lexical::lexical_features(TokenSeq{}, TokenSeq{"a", "b"});
  EXPECT_EQ(f.claim_len, 0u);
  EXPECT_DOUBLE_EQ(f.len_ratio, 0.5);
  EXPECT_EQ(f.rouge1_f, 0.0);
}
