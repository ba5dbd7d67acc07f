#include "representor/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "representor/errors.hpp"

namespace representor {

namespace {

constexpr std::string_view kHeaderTag = "representor-vocab";
constexpr std::string_view kHeaderVersion = "v1";

std::unordered_map<std::string, std::int32_t> index_tokens(const std::vector<std::string>& tokens, Side side) {
  std::unordered_map<std::string, std::int32_t> index;
  index.reserve(tokens.size());
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    const std::string& tok = tokens[r];
    if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos) {
      throw InputError(fmt::format("{} vocabulary: invalid token at rank {}", side_name(side), r));
    }
    if (special::is_reserved(tok)) {
      throw InputError(fmt::format("{} vocabulary: token '{}' is reserved", side_name(side), tok));
    }
    const auto id = static_cast<std::int32_t>(special::kCount + r);
    if (!index.emplace(tok, id).second) {
      throw InputError(fmt::format("{} vocabulary: duplicate token '{}'", side_name(side), tok));
    }
  }
  return index;
}

}  // namespace

bool special::is_reserved(std::string_view token) {
  return std::find(kTokens.begin(), kTokens.end(), token) != kTokens.end();
}

std::string_view side_name(Side side) { return side == Side::Source ? "source" : "target"; }

std::vector<std::string> build_frequency_vocab(std::span<const TokenSeq> corpus, std::size_t size) {
  if (size == 0) throw InputError("vocabulary size must be at least 1");
  std::unordered_map<std::string_view, std::size_t> counts;
  for (const TokenSeq& seq : corpus) {
    for (const std::string& tok : seq) {
      if (!special::is_reserved(tok)) ++counts[tok];
    }
  }
  if (counts.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string_view, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  ranked.resize(std::min(size, ranked.size()));
  std::vector<std::string> out;
  out.reserve(ranked.size());
  for (const auto& [tok, _] : ranked) out.emplace_back(tok);
  return out;
}

SharedVocabulary SharedVocabulary::build(std::vector<std::string> src_tokens, std::vector<std::string> tgt_tokens) {
  SharedVocabulary v;
  v.src_index_ = index_tokens(src_tokens, Side::Source);
  v.tgt_index_ = index_tokens(tgt_tokens, Side::Target);
  v.src_ = std::move(src_tokens);
  v.tgt_ = std::move(tgt_tokens);
  return v;
}

std::int32_t SharedVocabulary::id(Side side, std::string_view token) const {
  for (std::size_t i = 0; i < special::kCount; ++i) {
    if (special::kTokens[i] == token) return static_cast<std::int32_t>(i);
  }
  const auto& index = side == Side::Source ? src_index_ : tgt_index_;
  const auto it = index.find(std::string(token));
  return it == index.end() ? special::kUnk : it->second;
}

std::string_view SharedVocabulary::token(Side side, std::int32_t id) const {
  if (id >= 0 && static_cast<std::size_t>(id) < special::kCount) return special::kTokens[static_cast<std::size_t>(id)];
  const auto& list = tokens(side);
  const auto rank = static_cast<std::size_t>(id) - special::kCount;
  if (id < 0 || rank >= list.size()) return special::kTokens[special::kUnk];
  return list[rank];
}

RowOwner SharedVocabulary::owner(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= shared_rows()) {
    throw IndexError(fmt::format("row {} outside [0, {})", id, shared_rows()));
  }
  if (static_cast<std::size_t>(id) < special::kCount) return RowOwner::Special;
  const auto rank = static_cast<std::size_t>(id) - special::kCount;
  const bool in_src = rank < src_.size();
  const bool in_tgt = rank < tgt_.size();
  if (in_src && in_tgt) return RowOwner::Shared;
  return in_src ? RowOwner::SourceOnly : RowOwner::TargetOnly;
}

std::vector<std::int32_t> SharedVocabulary::to_ids(Side side, std::span<const std::string> tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(side, t));
  return ids;
}

std::vector<std::string> SharedVocabulary::to_tokens(Side side, std::span<const std::int32_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (std::int32_t i : ids) out.emplace_back(token(side, i));
  return out;
}

std::string SharedVocabulary::serialize() const {
  std::string out = fmt::format("{} {} {} {}\n", kHeaderTag, kHeaderVersion, src_.size(), tgt_.size());
  for (std::string_view s : special::kTokens) {
    out += s;
    out += '\n';
  }
  for (const auto& t : src_) {
    out += t;
    out += '\n';
  }
  for (const auto& t : tgt_) {
    out += t;
    out += '\n';
  }
  return out;
}

SharedVocabulary SharedVocabulary::parse(std::string_view text) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (lines.empty()) throw InputError("vocabulary file is empty");
  std::istringstream header(lines[0]);
  std::string tag, version;
  std::size_t src_size = 0, tgt_size = 0;
  if (!(header >> tag >> version >> src_size >> tgt_size) || tag != kHeaderTag || version != kHeaderVersion) {
    throw InputError("malformed vocabulary header: '" + lines[0] + "'");
  }
  const std::size_t expected = 1 + special::kCount + src_size + tgt_size;
  if (lines.size() != expected) {
    throw InputError(fmt::format("vocabulary file has {} lines, header implies {}", lines.size(), expected));
  }
  for (std::size_t i = 0; i < special::kCount; ++i) {
    if (lines[1 + i] != special::kTokens[i]) {
      throw InputError(fmt::format("vocabulary special line {} is '{}', expected '{}'", i, lines[1 + i],
                                   special::kTokens[i]));
    }
  }
  const auto src_begin = lines.begin() + static_cast<std::ptrdiff_t>(1 + special::kCount);
  const auto tgt_begin = src_begin + static_cast<std::ptrdiff_t>(src_size);
  return build(std::vector<std::string>(src_begin, tgt_begin), std::vector<std::string>(tgt_begin, lines.end()));
}

void SharedVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary to " + path.string());
  out << serialize();
  if (!out) throw InputError("failed writing vocabulary to " + path.string());
}

SharedVocabulary SharedVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read vocabulary " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::uint64_t SharedVocabulary::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace representor
