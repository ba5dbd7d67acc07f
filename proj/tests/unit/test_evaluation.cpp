#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>

#include "representor/data.hpp"
#include "representor/errors.hpp"
#include "representor/evaluation.hpp"

using namespace representor;

namespace {

std::vector<TokenSeq> lines(std::initializer_list<const char*> ls) {
  std::vector<TokenSeq> out;
  for (const char* l : ls) out.push_back(tokenize(l));
  return out;
}

std::vector<TokenSeq> toy_refs() {
  return lines({"the cat sat on the mat", "a dog ran in the park today", "we like green tea very much",
                "it is raining again in the city", "she reads a long book"});
}

}  // namespace

TEST(Bleu, IdenticalIsOneHundred) {
  const auto r = toy_refs();
  const auto s = corpus_bleu(r, r);
  EXPECT_NEAR(s.bleu, 100.0, 1e-9);
  EXPECT_DOUBLE_EQ(s.brevity_penalty, 1.0);
  for (double p : s.precisions) EXPECT_DOUBLE_EQ(p, 1.0);
}

TEST(Bleu, ClippedUnigramPrecision) {
  const auto hyp = lines({"the cat the cat"});
  const auto ref = lines({"the cat sat"});
  const auto s = corpus_bleu(hyp, ref);
  EXPECT_DOUBLE_EQ(s.precisions[0], 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(s.precisions[1], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.bleu, 0.0);
}

TEST(Bleu, HandComputedCorpusFixture) {
  // sentence 1: hyp 7 tokens vs ref 6; matches 1g 6/7, 2g 3/6, 3g 2/5, 4g 1/4
  // sentence 2: hyp 5 tokens vs ref 5; matches 1g 4/5, 2g 3/4, 3g 2/3, 4g 1/2
  const auto hyp = lines({"the cat the cat sat on mat", "a dog ran in park"});
  const auto ref = lines({"the cat sat on the mat", "a dog ran in the"});
  const auto s = corpus_bleu(hyp, ref);
  const double p1 = 10.0 / 12, p2 = 6.0 / 10, p3 = 4.0 / 8, p4 = 2.0 / 6;
  EXPECT_DOUBLE_EQ(s.precisions[0], p1);
  EXPECT_DOUBLE_EQ(s.precisions[1], p2);
  EXPECT_DOUBLE_EQ(s.precisions[2], p3);
  EXPECT_DOUBLE_EQ(s.precisions[3], p4);
  EXPECT_EQ(s.hyp_length, 12u);
  EXPECT_EQ(s.ref_length, 11u);
  const double expected = 100.0 * std::pow(p1 * p2 * p3 * p4, 0.25);
  EXPECT_NEAR(s.bleu, expected, 0.01);
  EXPECT_NEAR(s.bleu, 53.73, 0.01);
}

TEST(Bleu, BrevityPenalty) {
  const auto hyp = lines({"a b c d e f"});
  const auto ref = lines({"a b c d e f g h i"});
  const auto s = corpus_bleu(hyp, ref);
  EXPECT_NEAR(s.brevity_penalty, std::exp(1.0 - 9.0 / 6.0), 1e-12);
  EXPECT_NEAR(s.bleu, 100.0 * std::exp(-0.5), 1e-9);
}

TEST(Bleu, ClosestReferenceLengthShorterWinsTies) {
  const auto hyp = lines({"a b c d e"});
  const std::vector<std::vector<TokenSeq>> refs{{tokenize("a b c d"), tokenize("a b c d e f"), tokenize("x")}};
  EXPECT_EQ(corpus_bleu(hyp, refs).ref_length, 4u);
}

TEST(Bleu, CaseInsensitive) {
  const auto r = toy_refs();
  auto upper = lines({"The CAT sat on the Mat", "A dog ran IN the park", "We like tea very much",
                      "It is raining in the City", "She reads a book"});
  auto lower = upper;
  for (auto& l : lower) {
    for (auto& t : l) std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  }
  const auto a = corpus_bleu(upper, r);
  const auto b = corpus_bleu(lower, r);
  EXPECT_GT(a.bleu, 0.0);
  EXPECT_DOUBLE_EQ(a.bleu, b.bleu);
  EXPECT_DOUBLE_EQ(corpus_bleu(r, upper).bleu, corpus_bleu(r, lower).bleu);
}

TEST(Bleu, PermutationInvariantAndBounded) {
  auto hyp = lines({"the cat sat on a mat", "a dog ran in park today", "we like tea very much",
                    "it is raining in the city", "she reads a long book"});
  auto ref = toy_refs();
  const double base = corpus_bleu(hyp, ref).bleu;
  EXPECT_GT(base, 0.0);
  EXPECT_LT(base, 100.0);
  std::mt19937 rng(3);
  for (int i = 0; i < 5; ++i) {
    std::vector<std::size_t> order(hyp.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<TokenSeq> h, r;
    for (auto k : order) {
      h.push_back(hyp[k]);
      r.push_back(ref[k]);
    }
    EXPECT_DOUBLE_EQ(corpus_bleu(h, r).bleu, base);
  }
  hyp.push_back(tokenize("one more exact line here"));
  ref.push_back(tokenize("one more exact line here"));
  EXPECT_GE(corpus_bleu(hyp, ref).bleu, base);
}

TEST(Bleu, Errors) {
  std::vector<TokenSeq> none;
  EXPECT_THROW(corpus_bleu(none, none), InputError);
  const auto a = lines({"x"});
  const auto b = lines({"x", "y"});
  EXPECT_THROW(corpus_bleu(a, b), InputError);
}

TEST(SentenceBleu, SmoothedAndBounded) {
  EXPECT_NEAR(sentence_bleu(tokenize("a b c d"), tokenize("a b c d")), 100.0, 1e-9);
  const double partial = sentence_bleu(tokenize("a b x d"), tokenize("a b c d"));
  EXPECT_GT(partial, 0.0);
  EXPECT_LT(partial, 100.0);
}

TEST(DirectionRatio, Proportions) {
  const std::vector<std::string> mixed{"l2r\t-1.0\ta b", "r2l\t-2.0\tc", "l2r\t-0.5\td", "l2r\t-0.1\te"};
  const auto r = direction_ratio(mixed);
  EXPECT_DOUBLE_EQ(r.l2r_percent, 75.0);
  EXPECT_DOUBLE_EQ(r.r2l_percent, 25.0);
  EXPECT_NEAR(r.l2r_percent + r.r2l_percent, 100.0, 0.01);
  const std::vector<std::string> all{"l2r\t0\tx", "l2r\t0\ty"};
  EXPECT_DOUBLE_EQ(direction_ratio(all).l2r_percent, 100.0);
  EXPECT_DOUBLE_EQ(direction_ratio(all).r2l_percent, 0.0);
  const std::vector<std::string> bad{"l2r\t0\tx", "just a sentence"};
  EXPECT_THROW(direction_ratio(bad), InputError);
  EXPECT_THROW(direction_ratio({}), InputError);
}

TEST(LengthBuckets, PartitionAndDegenerateCase) {
  const auto ref = toy_refs();
  const auto hyp = lines({"the cat sat on a mat", "a dog ran in park today", "we like tea very much",
                          "it is raining in the city", "she reads a long book"});
  const auto src = lines({"1 2 3", "1 2 3 4 5 6 7 8 9 10 11 12", "1 2 3 4 5", "1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21",
                          "1 2 3 4 5 6 7 8 9 10"});
  const auto b = length_buckets(hyp, ref, src, 10);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].lower, 0u);
  EXPECT_EQ(b[0].upper, 10u);
  EXPECT_EQ(b[0].sentences, 3u);
  EXPECT_EQ(b[1].lower, 10u);
  EXPECT_EQ(b[2].lower, 20u);
  std::size_t total = 0;
  for (const auto& x : b) total += x.sentences;
  EXPECT_EQ(total, hyp.size());

  const auto one = length_buckets(hyp, ref, src, 100);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_DOUBLE_EQ(one[0].score.bleu, corpus_bleu(hyp, ref).bleu);
  EXPECT_THROW(length_buckets(hyp, ref, src, 0), ConfigError);
}

TEST(LengthBuckets, ShortPerfectBeatsLongGarbled) {
  const auto ref = lines({"a b c d", "e f g h", "i j k l m n o p q r s t", "u v w x y z a b c d e f"});
  const auto hyp = lines({"a b c d", "e f g h", "i k j l n m o q p r t s", "u w v x z y a c b d f e"});
  const auto src = lines({"1 2 3 4", "1 2 3 4", "1 2 3 4 5 6 7 8 9 10 11 12", "1 2 3 4 5 6 7 8 9 10 11 12"});
  const auto b = length_buckets(hyp, ref, src, 5);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_GT(b[0].score.bleu, b[1].score.bleu);
}

TEST(EvalReport, TextAndJson) {
  EvalReport rep;
  const auto r = toy_refs();
  rep.bleu = corpus_bleu(r, r);
  rep.ratio = DirectionRatio{60.0, 40.0, 3, 2};
  rep.buckets = length_buckets(r, r, r, 5);
  const auto text = rep.to_text();
  EXPECT_EQ(text.rfind("bleu: 100.00\n", 0), 0u);
  EXPECT_NE(text.find("brevity_penalty:"), std::string::npos);
  EXPECT_NE(text.find("l2r_percent: 60.00"), std::string::npos);
  EXPECT_NE(text.find("length_bucket\tsentences\tbleu"), std::string::npos);
  EXPECT_NE(text.find("[1,5]\t"), std::string::npos);

  const auto j = nlohmann::json::parse(rep.to_json());
  EXPECT_DOUBLE_EQ(j.at("bleu").get<double>(), 100.0);
  EXPECT_EQ(j.at("direction_ratio").at("l2r").get<int>(), 3);
  EXPECT_FALSE(j.at("length_buckets").empty());
}
