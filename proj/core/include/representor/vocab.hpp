#pragma once

// Frequency-ranked bilingual vocabulary with rank-aligned embedding rows.
//
// Both languages share one id space: the eight reserved symbols occupy ids
// 0-7 and the rank-r token of either language maps to id 8 + r, so the
// source and target words with equal frequency rank read the same embedding
// row. The table needs max(|src|, |tgt|) + 8 rows.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace representor {

using TokenSeq = std::vector<std::string>;

namespace special {
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kEos = 2;
inline constexpr std::int32_t kUnk = 3;
inline constexpr std::int32_t kS2T = 4;
inline constexpr std::int32_t kT2S = 5;
inline constexpr std::int32_t kL2R = 6;
inline constexpr std::int32_t kR2L = 7;
inline constexpr std::size_t kCount = 8;
inline constexpr std::array<std::string_view, kCount> kTokens = {"<pad>", "<bos>", "<eos>", "<unk>",
                                                                 "<s2t>", "<t2s>", "<l2r>", "<r2l>"};
bool is_reserved(std::string_view token);
}  // namespace special

enum class Side { Source, Target };

std::string_view side_name(Side side);

// Returns the `size` most frequent tokens, descending by count with ties
// broken lexicographically. Reserved symbols are never ranked.
std::vector<std::string> build_frequency_vocab(std::span<const TokenSeq> corpus, std::size_t size);

// Where an embedding row's users come from.
enum class RowOwner { Special, Shared, SourceOnly, TargetOnly };

class SharedVocabulary {
 public:
  SharedVocabulary() = default;

  // Fails with InputError on a duplicate or reserved token within a list.
  static SharedVocabulary build(std::vector<std::string> src_tokens, std::vector<std::string> tgt_tokens);

  std::size_t src_size() const { return src_.size(); }
  std::size_t tgt_size() const { return tgt_.size(); }
  std::size_t shared_rows() const { return std::max(src_.size(), tgt_.size()) + special::kCount; }

  std::span<const std::string> tokens(Side side) const { return side == Side::Source ? src_ : tgt_; }

  // Unknown tokens map to <unk>.
  std::int32_t id(Side side, std::string_view token) const;
  // Ids that are reserved resolve to their symbol; ids with no token on
  // this side resolve to "<unk>".
  std::string_view token(Side side, std::int32_t id) const;
  RowOwner owner(std::int32_t id) const;

  std::vector<std::int32_t> to_ids(Side side, std::span<const std::string> tokens) const;
  std::vector<std::string> to_tokens(Side side, std::span<const std::int32_t> ids) const;

  std::string serialize() const;
  static SharedVocabulary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static SharedVocabulary load(const std::filesystem::path& path);

  // FNV-1a over the serialized form; recorded in checkpoints.
  std::uint64_t fingerprint() const;

  bool operator==(const SharedVocabulary& other) const { return src_ == other.src_ && tgt_ == other.tgt_; }

 private:
  std::vector<std::string> src_, tgt_;
  std::unordered_map<std::string, std::int32_t> src_index_, tgt_index_;
};

}  // namespace representor
