#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "representor/vocab.hpp"

namespace representor {

struct BleuScore {
  double bleu = 0.0;                  // 0..100
  std::array<double, 4> precisions{};  // clipped n-gram precisions, 0..1
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

// Corpus BLEU-4 without smoothing, lowercased before counting. Each
// hypothesis may have several references; the effective reference length is
// the closest one (shorter wins ties). Throws InputError on an empty corpus
// or mismatched counts.
BleuScore corpus_bleu(std::span<const TokenSeq> hypotheses, std::span<const std::vector<TokenSeq>> references);
BleuScore corpus_bleu(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references);

// Add-one smoothed sentence BLEU; for debugging individual outputs.
double sentence_bleu(const TokenSeq& hypothesis, const TokenSeq& reference);

struct DirectionRatio {
  double l2r_percent = 0.0;
  double r2l_percent = 0.0;
  std::size_t l2r = 0;
  std::size_t r2l = 0;
};

// Reads verbose translate lines (direction \t score \t payload). Throws
// InputError when a line has no l2r/r2l direction field.
DirectionRatio direction_ratio(std::span<const std::string> verbose_lines);

struct LengthBucket {
  std::size_t lower = 0;  // exclusive, except the first bucket which starts at 1
  std::size_t upper = 0;  // inclusive
  std::size_t sentences = 0;
  BleuScore score;
};

// Groups sentences by source length into [1, w], (w, 2w], ... and scores
// each non-empty bucket.
std::vector<LengthBucket> length_buckets(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references,
                                         std::span<const TokenSeq> sources, std::size_t bucket_width = 10);

struct EvalReport {
  BleuScore bleu;
  std::optional<DirectionRatio> ratio;
  std::vector<LengthBucket> buckets;

  // key: value lines, then the bucket table.
  std::string to_text() const;
  // One JSON object.
  std::string to_json() const;
};

}  // namespace representor
