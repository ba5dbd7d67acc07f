#include "representor/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "representor/errors.hpp"

namespace representor {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

TokenSeq lowercase(const TokenSeq& seq) {
  TokenSeq out = seq;
  for (auto& t : out) {
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  }
  return out;
}

NgramCounts count_ngrams(const TokenSeq& seq, std::size_t n) {
  NgramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[{seq.begin() + static_cast<std::ptrdiff_t>(i), seq.begin() + static_cast<std::ptrdiff_t>(i + n)}];
  return counts;
}

struct Stats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  void add(const TokenSeq& hyp_raw, const std::vector<TokenSeq>& refs_raw) {
    const TokenSeq hyp = lowercase(hyp_raw);
    std::vector<TokenSeq> refs;
    for (const auto& r : refs_raw) refs.push_back(lowercase(r));
    if (refs.empty()) throw InputError("hypothesis without reference");
    hyp_len += hyp.size();
    std::size_t closest = refs.front().size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) { return len > hyp.size() ? len - hyp.size() : hyp.size() - len; };
      if (diff(r.size()) < diff(closest) || (diff(r.size()) == diff(closest) && r.size() < closest)) closest = r.size();
    }
    ref_len += closest;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = count_ngrams(hyp, n);
      NgramCounts max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : h) {
        const auto it = max_ref.find(g);
        matches[n - 1] += std::min(c, it == max_ref.end() ? std::size_t{0} : it->second);
        totals[n - 1] += c;
      }
    }
  }

  BleuScore score() const {
    BleuScore s;
    s.hyp_length = hyp_len;
    s.ref_length = ref_len;
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 0; n < 4; ++n) {
      s.precisions[n] = totals[n] == 0 ? 0.0 : static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
      if (matches[n] == 0) {
        zero = true;
      } else {
        log_sum += std::log(s.precisions[n]);
      }
    }
    s.brevity_penalty =
        hyp_len == 0 ? 0.0
                     : std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
    s.bleu = zero ? 0.0 : 100.0 * s.brevity_penalty * std::exp(log_sum / 4.0);
    return s;
  }
};

nlohmann::json bleu_json(const BleuScore& s) {
  return {{"bleu", s.bleu},
          {"precisions", s.precisions},
          {"brevity_penalty", s.brevity_penalty},
          {"hyp_length", s.hyp_length},
          {"ref_length", s.ref_length}};
}

std::string bucket_label(const LengthBucket& b) {
  return b.lower == 0 ? fmt::format("[1,{}]", b.upper) : fmt::format("({},{}]", b.lower, b.upper);
}

}  // namespace

BleuScore corpus_bleu(std::span<const TokenSeq> hypotheses, std::span<const std::vector<TokenSeq>> references) {
  if (hypotheses.empty()) throw InputError("BLEU over an empty corpus");
  if (hypotheses.size() != references.size()) {
    throw InputError(fmt::format("BLEU needs one reference set per hypothesis: {} vs {}", hypotheses.size(),
                                 references.size()));
  }
  Stats st;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) st.add(hypotheses[i], references[i]);
  return st.score();
}

BleuScore corpus_bleu(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references) {
  std::vector<std::vector<TokenSeq>> wrapped;
  wrapped.reserve(references.size());
  for (const auto& r : references) wrapped.push_back({r});
  return corpus_bleu(hypotheses, wrapped);
}

double sentence_bleu(const TokenSeq& hypothesis, const TokenSeq& reference) {
  Stats st;
  st.add(hypothesis, {reference});
  if (st.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    log_sum += std::log((static_cast<double>(st.matches[n]) + 1.0) / (static_cast<double>(st.totals[n]) + 1.0));
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len)));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

DirectionRatio direction_ratio(std::span<const std::string> verbose_lines) {
  DirectionRatio r;
  for (std::size_t i = 0; i < verbose_lines.size(); ++i) {
    const std::string& line = verbose_lines[i];
    const std::string field = line.substr(0, line.find('\t'));
    if (field == "l2r") {
      ++r.l2r;
    } else if (field == "r2l") {
      ++r.r2l;
    } else {
      throw InputError(fmt::format("line {}: missing l2r/r2l direction field", i + 1));
    }
  }
  const std::size_t total = r.l2r + r.r2l;
  if (total == 0) throw InputError("no decode outputs to compute direction proportions from");
  r.l2r_percent = 100.0 * static_cast<double>(r.l2r) / static_cast<double>(total);
  r.r2l_percent = 100.0 - r.l2r_percent;
  return r;
}

std::vector<LengthBucket> length_buckets(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references,
                                         std::span<const TokenSeq> sources, std::size_t bucket_width) {
  if (bucket_width == 0) throw ConfigError("bucket width must be positive");
  if (hypotheses.size() != references.size() || hypotheses.size() != sources.size()) {
    throw InputError("length buckets need aligned hypotheses, references and sources");
  }
  std::map<std::size_t, std::pair<std::vector<TokenSeq>, std::vector<TokenSeq>>> groups;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const std::size_t len = std::max<std::size_t>(sources[i].size(), 1);
    auto& g = groups[(len - 1) / bucket_width];
    g.first.push_back(hypotheses[i]);
    g.second.push_back(references[i]);
  }
  std::vector<LengthBucket> out;
  for (const auto& [index, g] : groups) {
    LengthBucket b;
    b.lower = index * bucket_width;
    b.upper = (index + 1) * bucket_width;
    b.sentences = g.first.size();
    b.score = corpus_bleu(g.first, g.second);
    out.push_back(std::move(b));
  }
  return out;
}

std::string EvalReport::to_text() const {
  std::string out = fmt::format("bleu: {:.2f}\n", bleu.bleu);
  for (std::size_t n = 0; n < 4; ++n) out += fmt::format("p{}: {:.4f}\n", n + 1, bleu.precisions[n]);
  out += fmt::format("brevity_penalty: {:.4f}\nhyp_length: {}\nref_length: {}\n", bleu.brevity_penalty,
                     bleu.hyp_length, bleu.ref_length);
  if (ratio) {
    out += fmt::format("l2r_percent: {:.2f}\nr2l_percent: {:.2f}\n", ratio->l2r_percent, ratio->r2l_percent);
  }
  if (!buckets.empty()) {
    out += "length_bucket\tsentences\tbleu\n";
    for (const auto& b : buckets) out += fmt::format("{}\t{}\t{:.2f}\n", bucket_label(b), b.sentences, b.score.bleu);
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j = bleu_json(bleu);
  if (ratio) {
    j["direction_ratio"] = {{"l2r_percent", ratio->l2r_percent}, {"r2l_percent", ratio->r2l_percent},
                            {"l2r", ratio->l2r},                 {"r2l", ratio->r2l}};
  }
  auto rows = nlohmann::json::array();
  for (const auto& b : buckets) {
    rows.push_back({{"bucket", bucket_label(b)}, {"sentences", b.sentences}, {"score", bleu_json(b.score)}});
  }
  if (!buckets.empty()) j["length_buckets"] = rows;
  return j.dump();
}

}  // namespace representor
