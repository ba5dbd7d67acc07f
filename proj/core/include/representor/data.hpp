#pragma once

// Parallel-corpus loading, direction tagging and batching.
//
// Every sentence pair is expanded into one DirectedExample per generation
// pattern of the chosen objective. The encoder input starts with a task
// label (<s2t>/<t2s>); the decoder output starts with an order label
// (<l2r>/<r2l>) and ends with <eos>. Right-to-left examples reverse only
// the payload between the label and <eos>.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "representor/vocab.hpp"

namespace representor {

enum class Task { S2T, T2S };
enum class Order { L2R, R2L };
enum class Objective { Baseline, StTs, LrRl, Cfp };

struct Direction {
  Task task = Task::S2T;
  Order order = Order::L2R;

  // Dense index in [0, 4): s2t_l2r, s2t_r2l, t2s_l2r, t2s_r2l.
  std::size_t index() const { return (task == Task::S2T ? 0 : 2) + (order == Order::L2R ? 0 : 1); }
  std::string name() const;
  bool operator==(const Direction&) const = default;
};

inline constexpr std::array<Direction, 4> kAllDirections = {
    Direction{Task::S2T, Order::L2R}, Direction{Task::S2T, Order::R2L},
    Direction{Task::T2S, Order::L2R}, Direction{Task::T2S, Order::R2L}};

std::string_view task_name(Task task);
std::string_view order_name(Order order);
std::string_view objective_name(Objective objective);
// Accepts baseline, st-ts, lr-rl, cfp.
Objective parse_objective(std::string_view text);

std::int32_t task_label(Task task);
std::int32_t order_label(Order order);
Side input_side(Task task);
Side output_side(Task task);

// Directions covered by each objective, in canonical order.
std::vector<Direction> directions_for(Objective objective);

struct SentencePair {
  TokenSeq source;
  TokenSeq target;
};

struct DirectedExample {
  std::vector<std::int32_t> input_ids;   // task label, payload
  std::vector<std::int32_t> output_ids;  // order label, payload, <eos>
  Task task = Task::S2T;
  Order order = Order::L2R;

  Direction direction() const { return {task, order}; }
};

struct AugmentStats {
  std::size_t pairs_seen = 0;
  std::size_t skipped_empty = 0;
  std::size_t dropped_too_long = 0;
};

inline constexpr std::size_t kDefaultMaxLength = 256;

// Expands one pair into its directed examples. Pairs with an empty side or a
// side longer than max_length are skipped and counted in stats.
std::vector<DirectedExample> augment(const SentencePair& pair, Objective objective, const SharedVocabulary& vocab,
                                     AugmentStats* stats = nullptr, std::size_t max_length = kDefaultMaxLength);

std::vector<DirectedExample> augment_corpus(std::span<const SentencePair> pairs, Objective objective,
                                            const SharedVocabulary& vocab, AugmentStats* stats = nullptr,
                                            std::size_t max_length = kDefaultMaxLength);

// Builds the example for one explicit direction.
DirectedExample make_example(const SentencePair& pair, Direction direction, const SharedVocabulary& vocab);

// Tab-separated dump line: task, order, input tokens, output tokens.
std::string format_example(const DirectedExample& example, const SharedVocabulary& vocab);

// Row-major id matrix padded with <pad>.
struct IdMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> ids;

  std::int32_t at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  std::span<const std::int32_t> row(std::size_t r) const { return {ids.data() + r * cols, cols}; }
  // Pads ragged rows on the right.
  static IdMatrix from_rows(std::span<const std::vector<std::int32_t>> rows);
};

struct Batch {
  IdMatrix encoder_ids;
  IdMatrix decoder_input_ids;   // <bos>, label, payload...
  IdMatrix decoder_target_ids;  // label, payload..., <eos>
  std::vector<std::uint8_t> source_mask;  // 1 on non-pad encoder positions
  std::vector<std::uint8_t> target_mask;  // 1 on non-pad target positions
  std::vector<Direction> directions;      // one per row

  std::size_t size() const { return encoder_ids.rows; }
};

Batch collate(std::span<const DirectedExample> examples);

// Shuffles with the given seed, then slices into batches of batch_size (the
// last one may be short).
std::vector<Batch> make_batches(std::vector<DirectedExample> examples, std::size_t batch_size, std::uint64_t seed);

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::size_t skipped_blank = 0;
};

std::vector<std::string> tokenize(std::string_view line);

// Line-aligned whitespace-tokenized pairs; CR before LF is dropped.
ParallelCorpus load_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path);

// Reads one sentence per line, CRLF-normalized.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace representor
