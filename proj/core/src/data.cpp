#include "representor/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "representor/errors.hpp"

namespace representor {

std::string Direction::name() const { return fmt::format("{}_{}", task_name(task), order_name(order)); }

std::string_view task_name(Task task) { return task == Task::S2T ? "s2t" : "t2s"; }

std::string_view order_name(Order order) { return order == Order::L2R ? "l2r" : "r2l"; }

std::string_view objective_name(Objective objective) {
  switch (objective) {
    case Objective::Baseline: return "baseline";
    case Objective::StTs: return "st-ts";
    case Objective::LrRl: return "lr-rl";
    case Objective::Cfp: return "cfp";
  }
  return "?";
}

Objective parse_objective(std::string_view text) {
  if (text == "baseline") return Objective::Baseline;
  if (text == "st-ts") return Objective::StTs;
  if (text == "lr-rl") return Objective::LrRl;
  if (text == "cfp") return Objective::Cfp;
  throw ConfigError(fmt::format("unknown objective '{}' (expected baseline|st-ts|lr-rl|cfp)", text));
}

std::int32_t task_label(Task task) { return task == Task::S2T ? special::kS2T : special::kT2S; }

std::int32_t order_label(Order order) { return order == Order::L2R ? special::kL2R : special::kR2L; }

Side input_side(Task task) { return task == Task::S2T ? Side::Source : Side::Target; }

Side output_side(Task task) { return task == Task::S2T ? Side::Target : Side::Source; }

std::vector<Direction> directions_for(Objective objective) {
  switch (objective) {
    case Objective::Baseline: return {{Task::S2T, Order::L2R}};
    case Objective::StTs: return {{Task::S2T, Order::L2R}, {Task::T2S, Order::L2R}};
    case Objective::LrRl: return {{Task::S2T, Order::L2R}, {Task::S2T, Order::R2L}};
    case Objective::Cfp: return {kAllDirections.begin(), kAllDirections.end()};
  }
  return {};
}

DirectedExample make_example(const SentencePair& pair, Direction direction, const SharedVocabulary& vocab) {
  const TokenSeq& in_tokens = direction.task == Task::S2T ? pair.source : pair.target;
  const TokenSeq& out_tokens = direction.task == Task::S2T ? pair.target : pair.source;
  DirectedExample ex;
  ex.task = direction.task;
  ex.order = direction.order;
  ex.input_ids.reserve(in_tokens.size() + 1);
  ex.input_ids.push_back(task_label(direction.task));
  for (const auto& t : in_tokens) ex.input_ids.push_back(vocab.id(input_side(direction.task), t));

  std::vector<std::int32_t> payload = vocab.to_ids(output_side(direction.task), out_tokens);
  if (direction.order == Order::R2L) std::reverse(payload.begin(), payload.end());
  ex.output_ids.reserve(payload.size() + 2);
  ex.output_ids.push_back(order_label(direction.order));
  ex.output_ids.insert(ex.output_ids.end(), payload.begin(), payload.end());
  ex.output_ids.push_back(special::kEos);
  return ex;
}

std::vector<DirectedExample> augment(const SentencePair& pair, Objective objective, const SharedVocabulary& vocab,
                                     AugmentStats* stats, std::size_t max_length) {
  if (stats) ++stats->pairs_seen;
  if (pair.source.empty() || pair.target.empty()) {
    if (stats) ++stats->skipped_empty;
    return {};
  }
  if (pair.source.size() > max_length || pair.target.size() > max_length) {
    if (stats) ++stats->dropped_too_long;
    return {};
  }
  std::vector<DirectedExample> out;
  for (Direction d : directions_for(objective)) out.push_back(make_example(pair, d, vocab));
  return out;
}

std::vector<DirectedExample> augment_corpus(std::span<const SentencePair> pairs, Objective objective,
                                            const SharedVocabulary& vocab, AugmentStats* stats,
                                            std::size_t max_length) {
  std::vector<DirectedExample> out;
  out.reserve(pairs.size() * directions_for(objective).size());
  for (const auto& p : pairs) {
    auto ex = augment(p, objective, vocab, stats, max_length);
    std::move(ex.begin(), ex.end(), std::back_inserter(out));
  }
  return out;
}

std::string format_example(const DirectedExample& example, const SharedVocabulary& vocab) {
  const auto in = vocab.to_tokens(input_side(example.task), example.input_ids);
  const auto out = vocab.to_tokens(output_side(example.task), example.output_ids);
  return fmt::format("{}\t{}\t{}\t{}", task_name(example.task), order_name(example.order), fmt::join(in, " "),
                     fmt::join(out, " "));
}

IdMatrix IdMatrix::from_rows(std::span<const std::vector<std::int32_t>> rows) {
  IdMatrix m;
  m.rows = rows.size();
  for (const auto& r : rows) m.cols = std::max(m.cols, r.size());
  m.ids.assign(m.rows * m.cols, special::kPad);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.ids.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
  return m;
}

Batch collate(std::span<const DirectedExample> examples) {
  if (examples.empty()) throw ContractError("cannot collate an empty batch");
  std::vector<std::vector<std::int32_t>> enc, dec_in, dec_out;
  Batch batch;
  for (const auto& ex : examples) {
    enc.push_back(ex.input_ids);
    std::vector<std::int32_t> shifted;
    shifted.reserve(ex.output_ids.size());
    shifted.push_back(special::kBos);
    shifted.insert(shifted.end(), ex.output_ids.begin(), ex.output_ids.end() - 1);
    dec_in.push_back(std::move(shifted));
    dec_out.push_back(ex.output_ids);
    batch.directions.push_back(ex.direction());
  }
  batch.encoder_ids = IdMatrix::from_rows(enc);
  batch.decoder_input_ids = IdMatrix::from_rows(dec_in);
  batch.decoder_target_ids = IdMatrix::from_rows(dec_out);
  batch.source_mask.resize(batch.encoder_ids.ids.size());
  for (std::size_t i = 0; i < batch.source_mask.size(); ++i) {
    batch.source_mask[i] = batch.encoder_ids.ids[i] != special::kPad;
  }
  batch.target_mask.resize(batch.decoder_target_ids.ids.size());
  for (std::size_t i = 0; i < batch.target_mask.size(); ++i) {
    batch.target_mask[i] = batch.decoder_target_ids.ids[i] != special::kPad;
  }
  return batch;
}

std::vector<Batch> make_batches(std::vector<DirectedExample> examples, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::mt19937_64 rng(seed);
  std::shuffle(examples.begin(), examples.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, examples.size() - start);
    batches.push_back(collate(std::span(examples).subspan(start, len)));
  }
  return batches;
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  for (std::string tok; in >> tok;) out.push_back(std::move(tok));
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

ParallelCorpus load_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path) {
  const auto src = read_lines(src_path);
  const auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size()) {
    throw InputError(fmt::format("line count mismatch: {} has {} lines, {} has {}", src_path.string(), src.size(),
                                 tgt_path.string(), tgt.size()));
  }
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < src.size(); ++i) {
    SentencePair p{tokenize(src[i]), tokenize(tgt[i])};
    if (p.source.empty() || p.target.empty()) {
      ++corpus.skipped_blank;
      continue;
    }
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

}  // namespace representor
