#pragma once

// Beam search over the representor in four modes.
//
// L2R / R2L   the order label is forced as the first emission (it carries
//             log-probability 0) and decoding proceeds from <bos>.
// Mixed       decoding starts from the all-zero <pad> embedding; the first
//             emission is restricted to {<l2r>, <r2l>} and renormalized over
//             those two, so both orders can compete in one beam.
// Joint       runs L2R and R2L beams, then reranks the deduplicated union by
//             the sum of both length-normalized teacher-forced scores.
//
// A hypothesis' length is the number of tokens emitted after the order
// label, <eos> included.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "representor/data.hpp"
#include "representor/model.hpp"

namespace representor {

enum class DecodeMode { L2R, R2L, Mixed, Joint };

std::string_view mode_name(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view text);

// How the decoder input starts.
enum class Bootstrap { Bos, Pad };

struct DecodeRequest {
  std::vector<std::int32_t> source_ids;  // task label, payload
  DecodeMode mode = DecodeMode::Joint;
  std::size_t beam = 4;
  double alpha = 0.6;
  std::size_t max_len = 0;  // 0: 2 * payload + 10, capped by the model's max_len
  int joint_terms = 2;      // 2: L2R + R2L; 4: adds both reconstruction terms
  bool normalize_joint = true;

  void validate() const;
};

struct Hypothesis {
  std::vector<std::int32_t> ids;  // order label, tokens..., <eos> once finished
  double logp = 0.0;
  bool finished = false;
  double score = 0.0;

  Order order() const;
  std::size_t length() const { return ids.empty() ? 0 : ids.size() - 1; }
  // Tokens between the label and <eos>, in generation order.
  std::vector<std::int32_t> payload() const;
  // Payload in reading order (reversed for R2L hypotheses).
  std::vector<std::int32_t> natural_payload() const;
};

// ((5 + length) / 6)^alpha.
double length_penalty(std::size_t length, double alpha);

// k-best list for mode L2R or R2L, best first. When nothing finishes within
// max_len the best unfinished hypotheses are returned with finished=false.
std::vector<Hypothesis> beam_search(const ParamStore& params, const DecodeRequest& request);

// Full final beam of a mixed-mode search, best first.
std::vector<Hypothesis> mixed_beam(const ParamStore& params, const DecodeRequest& request);
Hypothesis mixed_decode(const ParamStore& params, const DecodeRequest& request);

struct JointCandidate {
  std::vector<std::int32_t> payload;  // reading order
  double l2r_logp = 0.0;
  double r2l_logp = 0.0;
  double reconstruction = 0.0;  // only with joint_terms == 4
  double score = 0.0;
  bool from_l2r = false;
  bool from_r2l = false;
};

struct JointResult {
  Hypothesis best;  // L2R-form hypothesis of the winning payload
  double joint_score = 0.0;
  JointCandidate winner;
  std::vector<JointCandidate> candidates;  // the union, ordered by payload
};

JointResult joint_decode(const ParamStore& params, const DecodeRequest& request);

// Second stage of joint decoding: dedupe by reading-order payload and
// rerank. The result does not depend on the order of the two lists.
JointResult rerank_union(const ParamStore& params, const DecodeRequest& request,
                         std::span<const Hypothesis> first, std::span<const Hypothesis> second);

// Teacher-forced log-probability of target_ids (order label first). Under
// Bos the label is forced and contributes 0; under Pad it is scored against
// the other order label only. A trailing <eos> is scored like any token.
double rescore(const ParamStore& params, std::span<const std::int32_t> source_ids,
               std::span<const std::int32_t> target_ids, Bootstrap bootstrap = Bootstrap::Bos);

// Batched argmax decoding with a forced order label; independent of the
// beam implementation.
std::vector<Hypothesis> greedy_decode(const ParamStore& params, std::span<const std::vector<std::int32_t>> sources,
                                      Order order, std::size_t max_len = 0);

struct Translation {
  std::vector<std::int32_t> payload;  // reading order
  std::string direction;              // l2r, r2l, or both (joint, found by both beams)
  double score = 0.0;                 // joint score in joint mode, else length-penalized score
  bool finished = true;
};

Translation translate(const ParamStore& params, const DecodeRequest& request);

}  // namespace representor
