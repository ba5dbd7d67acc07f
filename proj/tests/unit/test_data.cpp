#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "representor/data.hpp"
#include "representor/errors.hpp"

using namespace representor;

namespace {

SharedVocabulary vocab() { return SharedVocabulary::build({"a", "b", "c"}, {"x", "y", "z"}); }

SentencePair pair(const char* s, const char* t) { return {tokenize(s), tokenize(t)}; }

}  // namespace

TEST(Directions, ObjectivesCoverExpectedPatterns) {
  EXPECT_EQ(directions_for(Objective::Baseline).size(), 1u);
  EXPECT_EQ(directions_for(Objective::StTs).size(), 2u);
  EXPECT_EQ(directions_for(Objective::LrRl).size(), 2u);
  const auto cfp = directions_for(Objective::Cfp);
  ASSERT_EQ(cfp.size(), 4u);
  std::set<std::size_t> idx;
  for (const auto& d : cfp) idx.insert(d.index());
  EXPECT_EQ(idx.size(), 4u);
  EXPECT_EQ((Direction{Task::T2S, Order::R2L}).name(), "t2s_r2l");
}

TEST(Directions, ParseObjective) {
  EXPECT_EQ(parse_objective("baseline"), Objective::Baseline);
  EXPECT_EQ(parse_objective("st-ts"), Objective::StTs);
  EXPECT_EQ(parse_objective("lr-rl"), Objective::LrRl);
  EXPECT_EQ(parse_objective("cfp"), Objective::Cfp);
  EXPECT_THROW(parse_objective("all"), ConfigError);
}

TEST(Augment, CfpProducesFourLabelledExamples) {
  const auto v = vocab();
  const auto ex = augment(pair("a b c", "x y"), Objective::Cfp, v);
  ASSERT_EQ(ex.size(), 4u);
  for (const auto& e : ex) {
    EXPECT_EQ(e.input_ids[0], task_label(e.task));
    EXPECT_EQ(e.output_ids[0], order_label(e.order));
    EXPECT_EQ(e.output_ids.back(), special::kEos);
  }
}

TEST(Augment, RightToLeftReversesPayloadOnly) {
  const auto v = vocab();
  const auto p = pair("a b c", "x y z");
  const auto l2r = make_example(p, {Task::S2T, Order::L2R}, v);
  const auto r2l = make_example(p, {Task::S2T, Order::R2L}, v);
  EXPECT_EQ(l2r.input_ids, r2l.input_ids);
  EXPECT_EQ(l2r.output_ids, (std::vector<std::int32_t>{special::kL2R, 8, 9, 10, special::kEos}));
  EXPECT_EQ(r2l.output_ids, (std::vector<std::int32_t>{special::kR2L, 10, 9, 8, special::kEos}));
  const auto t2s = make_example(p, {Task::T2S, Order::L2R}, v);
  EXPECT_EQ(t2s.input_ids[0], special::kT2S);
  EXPECT_EQ(v.to_tokens(Side::Source, std::vector<std::int32_t>(t2s.output_ids.begin() + 1, t2s.output_ids.end() - 1)),
            tokenize("a b c"));
}

TEST(Augment, SkipsEmptyAndOverlongPairs) {
  const auto v = vocab();
  AugmentStats stats;
  std::vector<SentencePair> pairs{pair("a", "x"), {{}, tokenize("x")}, pair("a a a a", "x")};
  const auto ex = augment_corpus(pairs, Objective::StTs, v, &stats, 3);
  EXPECT_EQ(ex.size(), 2u);
  EXPECT_EQ(stats.pairs_seen, 3u);
  EXPECT_EQ(stats.skipped_empty, 1u);
  EXPECT_EQ(stats.dropped_too_long, 1u);
}

TEST(Augment, FormatExample) {
  const auto v = vocab();
  const auto ex = make_example(pair("a b", "x"), {Task::T2S, Order::R2L}, v);
  EXPECT_EQ(format_example(ex, v), "t2s\tr2l\t<t2s> x\t<r2l> b a <eos>");
}

TEST(Collate, PadsAndMasks) {
  const auto v = vocab();
  std::vector<DirectedExample> ex{make_example(pair("a b", "x y z"), {Task::S2T, Order::L2R}, v),
                                  make_example(pair("a b c c", "x"), {Task::S2T, Order::L2R}, v)};
  const auto b = collate(ex);
  EXPECT_EQ(b.size(), 2u);
  EXPECT_EQ(b.encoder_ids.cols, 5u);
  EXPECT_EQ(b.encoder_ids.at(0, 3), special::kPad);
  EXPECT_EQ(b.source_mask[3], 0);
  EXPECT_EQ(b.source_mask[2], 1);
  EXPECT_EQ(b.decoder_target_ids.cols, 5u);
  EXPECT_EQ(b.target_mask[5 + 3], 0);
  EXPECT_EQ(b.target_mask[5 + 2], 1);
}

TEST(Collate, TargetIsInputShiftedLeft) {
  const auto v = vocab();
  std::vector<DirectedExample> ex{make_example(pair("a", "x y z"), {Task::S2T, Order::R2L}, v)};
  const auto b = collate(ex);
  EXPECT_EQ(b.decoder_input_ids.at(0, 0), special::kBos);
  for (std::size_t t = 0; t + 1 < b.decoder_target_ids.cols; ++t) {
    EXPECT_EQ(b.decoder_input_ids.at(0, t + 1), b.decoder_target_ids.at(0, t));
  }
  EXPECT_THROW(collate({}), ContractError);
}

TEST(Batches, DeterministicInSeedAndCoverEverything) {
  const auto v = vocab();
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 10; ++i) pairs.push_back(pair(i % 2 ? "a b" : "c", "x"));
  const auto ex = augment_corpus(pairs, Objective::Cfp, v);
  const auto a = make_batches(ex, 7, 5);
  const auto b = make_batches(ex, 7, 5);
  const auto c = make_batches(ex, 7, 6);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a.back().size(), 5u);
  std::size_t total = 0;
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += a[i].size();
    EXPECT_EQ(a[i].encoder_ids.ids, b[i].encoder_ids.ids);
    EXPECT_EQ(a[i].directions, b[i].directions);
    differs = differs || a[i].directions != c[i].directions;
  }
  EXPECT_EQ(total, 40u);
  EXPECT_TRUE(differs);
  EXPECT_THROW(make_batches(ex, 0, 1), ConfigError);
}

TEST(Batches, MixDirectionsWithinStream) {
  const auto v = vocab();
  std::vector<SentencePair> pairs(50, pair("a b", "x y"));
  const auto batches = make_batches(augment_corpus(pairs, Objective::Cfp, v), 16, 1);
  std::set<std::size_t> first_batch;
  for (const auto& d : batches[0].directions) first_batch.insert(d.index());
  EXPECT_GT(first_batch.size(), 1u);
}

TEST(Corpus, LoadParallelSkipsBlankAndChecksCounts) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto s = dir / "representor_data_test.src", t = dir / "representor_data_test.tgt";
  std::ofstream(s) << "a b\r\n\nc\n";
  std::ofstream(t) << "x\ny\n  \n";
  const auto c = load_parallel(s, t);
  ASSERT_EQ(c.pairs.size(), 1u);
  EXPECT_EQ(c.pairs[0].source, tokenize("a b"));
  EXPECT_EQ(c.skipped_blank, 2u);
  std::ofstream(t) << "x\n";
  EXPECT_THROW(load_parallel(s, t), InputError);
  EXPECT_THROW(load_parallel(dir / "representor_missing.src", t), InputError);
  std::filesystem::remove(s);
  std::filesystem::remove(t);
}
