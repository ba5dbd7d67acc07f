#include "representor/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "representor/errors.hpp"

namespace representor {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t effective_max_len(const ParamStore& params, const DecodeRequest& request) {
  const std::size_t payload = request.source_ids.empty() ? 0 : request.source_ids.size() - 1;
  const std::size_t wanted = request.max_len > 0 ? request.max_len : 2 * payload + 10;
  return std::min(wanted, params.hyper().max_len + 1);
}

void check_source(const ParamStore& params, std::span<const std::int32_t> source) {
  if (source.empty()) throw ContractError("decode request without source ids");
  for (std::int32_t id : source) {
    if (id < 0 || static_cast<std::size_t>(id) >= params.hyper().vocab_size) {
      throw IndexError(fmt::format("source id {} outside vocabulary of {} rows", id, params.hyper().vocab_size));
    }
  }
}

IdMatrix single_row(std::span<const std::int32_t> ids) {
  return IdMatrix{1, ids.size(), std::vector<std::int32_t>(ids.begin(), ids.end())};
}

// Repeats a [1, S, d] memory n times along the batch axis.
ad::Tensor tile_memory(const ad::Tensor& memory, std::size_t n) {
  const auto v = memory.values();
  std::vector<double> out;
  out.reserve(v.size() * n);
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), v.begin(), v.end());
  return ad::Tensor::from_values({n, memory.dim(1), memory.dim(2)}, std::move(out));
}

IdMatrix tile_source(std::span<const std::int32_t> source, std::size_t n) {
  IdMatrix m{n, source.size(), {}};
  for (std::size_t i = 0; i < n; ++i) m.ids.insert(m.ids.end(), source.begin(), source.end());
  return m;
}

// Log-softmax of one logits row.
void log_normalize(std::span<const double> logits, std::vector<double>& out) {
  out.resize(logits.size());
  double mx = kNegInf;
  for (double v : logits) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : logits) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

double label_logp(const std::vector<double>& logp, std::int32_t label) {
  const double a = logp[special::kL2R], b = logp[special::kR2L];
  const double mx = std::max(a, b);
  return logp[static_cast<std::size_t>(label)] - (mx + std::log(std::exp(a - mx) + std::exp(b - mx)));
}

std::int32_t bootstrap_id(Bootstrap b) { return b == Bootstrap::Bos ? special::kBos : special::kPad; }

// Log-probabilities of the next token after each prefix; every prefix has
// the same length.
std::vector<std::vector<double>> next_token_logp(const ParamStore& params, const ad::Tensor& memory,
                                                 std::span<const std::int32_t> source,
                                                 const std::vector<std::vector<std::int32_t>>& prefixes) {
  const std::size_t n = prefixes.size();
  const IdMatrix input = IdMatrix::from_rows(prefixes);
  const auto logits = decode(params, tile_memory(memory, n), tile_source(source, n), input);
  const std::size_t t = input.cols, v = params.hyper().vocab_size;
  std::vector<std::vector<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_normalize(logits.values().subspan((i * t + t - 1) * v, v), out[i]);
  }
  return out;
}

struct Candidate {
  double logp;
  std::size_t parent;
  std::int32_t token;
};

// Shared beam loop. `alive` holds hypotheses whose ids begin with an order
// label; the decoder input is the bootstrap token followed by those ids.
std::vector<Hypothesis> run_beam(const ParamStore& params, const ad::Tensor& memory,
                                 std::span<const std::int32_t> source, std::vector<Hypothesis> alive,
                                 Bootstrap bootstrap, std::size_t k, double alpha, std::size_t max_len) {
  const std::size_t v = params.hyper().vocab_size;
  std::vector<Hypothesis> finished;
  // Finished hypotheses keep their beam slot, so the live beam shrinks.
  while (!alive.empty() && alive.front().length() < max_len) {
    std::vector<std::vector<std::int32_t>> prefixes;
    for (const auto& h : alive) {
      std::vector<std::int32_t> p{bootstrap_id(bootstrap)};
      p.insert(p.end(), h.ids.begin(), h.ids.end());
      prefixes.push_back(std::move(p));
    }
    const auto logp = next_token_logp(params, memory, source, prefixes);

    std::vector<Candidate> cands;
    cands.reserve(alive.size() * v);
    for (std::size_t i = 0; i < alive.size(); ++i) {
      for (std::size_t tok = 0; tok < v; ++tok) {
        const double lp = logp[i][tok];
        if (lp == kNegInf) continue;
        cands.push_back({alive[i].logp + lp, i, static_cast<std::int32_t>(tok)});
      }
    }
    const std::size_t keep = std::min(cands.size(), k - finished.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t rank = 0; rank < keep; ++rank) {
      const Candidate& c = cands[rank];
      Hypothesis h;
      h.ids = alive[c.parent].ids;
      h.ids.push_back(c.token);
      h.logp = c.logp;
      h.score = h.logp / length_penalty(h.length(), alpha);
      if (c.token == special::kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }

  auto by_score = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.ids < b.ids;
  };
  if (finished.empty()) {
    std::sort(alive.begin(), alive.end(), by_score);
    if (alive.size() > k) alive.resize(k);
    return alive;
  }
  std::sort(finished.begin(), finished.end(), by_score);
  if (finished.size() > k) finished.resize(k);
  return finished;
}

ad::Tensor encode_one(const ParamStore& params, std::span<const std::int32_t> source) {
  return encode(params, single_row(source));
}

std::vector<std::int32_t> with_label(std::int32_t label, std::span<const std::int32_t> payload, bool eos) {
  std::vector<std::int32_t> out{label};
  out.insert(out.end(), payload.begin(), payload.end());
  if (eos) out.push_back(special::kEos);
  return out;
}

}  // namespace

std::string_view mode_name(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::L2R: return "l2r";
    case DecodeMode::R2L: return "r2l";
    case DecodeMode::Mixed: return "mixed";
    case DecodeMode::Joint: return "joint";
  }
  return "?";
}

DecodeMode parse_decode_mode(std::string_view text) {
  if (text == "l2r") return DecodeMode::L2R;
  if (text == "r2l") return DecodeMode::R2L;
  if (text == "mixed") return DecodeMode::Mixed;
  if (text == "joint") return DecodeMode::Joint;
  throw ConfigError(fmt::format("unknown decoding mode '{}' (expected l2r|r2l|mixed|joint)", text));
}

void DecodeRequest::validate() const {
  if (beam < 1) throw ConfigError("beam size must be at least 1");
  if (!(alpha >= 0.0)) throw ConfigError("length-penalty alpha must be non-negative");
  if (joint_terms != 2 && joint_terms != 4) throw ConfigError("joint_terms must be 2 or 4");
  if (source_ids.empty() || (source_ids[0] != special::kS2T && source_ids[0] != special::kT2S)) {
    throw ContractError("decode source must begin with <s2t> or <t2s>");
  }
}

Order Hypothesis::order() const {
  if (ids.empty() || (ids[0] != special::kL2R && ids[0] != special::kR2L)) {
    throw ContractError("hypothesis does not start with an order label");
  }
  return ids[0] == special::kL2R ? Order::L2R : Order::R2L;
}

std::vector<std::int32_t> Hypothesis::payload() const {
  if (ids.empty()) return {};
  auto end = ids.end();
  if (finished && ids.back() == special::kEos) --end;
  return {ids.begin() + 1, end};
}

std::vector<std::int32_t> Hypothesis::natural_payload() const {
  auto p = payload();
  if (order() == Order::R2L) std::reverse(p.begin(), p.end());
  return p;
}

double length_penalty(std::size_t length, double alpha) {
  if (length < 1) throw ContractError("length penalty needs length >= 1");
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

std::vector<Hypothesis> beam_search(const ParamStore& params, const DecodeRequest& request) {
  request.validate();
  if (request.mode != DecodeMode::L2R && request.mode != DecodeMode::R2L) {
    throw ContractError("beam_search handles the l2r and r2l modes only");
  }
  check_source(params, request.source_ids);
  ad::NoGradGuard no_grad;
  const auto memory = encode_one(params, request.source_ids);
  Hypothesis start;
  start.ids = {request.mode == DecodeMode::L2R ? special::kL2R : special::kR2L};
  return run_beam(params, memory, request.source_ids, {start}, Bootstrap::Bos, request.beam, request.alpha,
                  effective_max_len(params, request));
}

std::vector<Hypothesis> mixed_beam(const ParamStore& params, const DecodeRequest& request) {
  request.validate();
  check_source(params, request.source_ids);
  ad::NoGradGuard no_grad;
  const auto memory = encode_one(params, request.source_ids);
  const auto first = next_token_logp(params, memory, request.source_ids, {{special::kPad}});

  std::vector<Hypothesis> alive;
  for (std::int32_t label : {special::kL2R, special::kR2L}) {
    Hypothesis h;
    h.ids = {label};
    h.logp = label_logp(first[0], label);
    alive.push_back(std::move(h));
  }
  std::stable_sort(alive.begin(), alive.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.logp > b.logp; });
  if (alive.size() > request.beam) alive.resize(request.beam);
  return run_beam(params, memory, request.source_ids, std::move(alive), Bootstrap::Pad, request.beam, request.alpha,
                  effective_max_len(params, request));
}

Hypothesis mixed_decode(const ParamStore& params, const DecodeRequest& request) {
  return mixed_beam(params, request).front();
}

JointResult rerank_union(const ParamStore& params, const DecodeRequest& request, std::span<const Hypothesis> first,
                         std::span<const Hypothesis> second) {
  request.validate();
  std::map<std::vector<std::int32_t>, JointCandidate> pool;
  for (auto list : {first, second}) {
    for (const auto& h : list) {
      auto payload = h.natural_payload();
      auto& c = pool[payload];
      c.payload = std::move(payload);
      (h.order() == Order::L2R ? c.from_l2r : c.from_r2l) = true;
    }
  }
  if (pool.empty()) throw ContractError("joint reranking over two empty k-best lists");

  const std::span<const std::int32_t> source = request.source_ids;
  const std::vector<std::int32_t> source_payload(source.begin() + 1, source.end());
  const std::int32_t flipped = source[0] == special::kS2T ? special::kT2S : special::kS2T;

  JointResult result;
  bool have_best = false;
  for (auto& [payload, c] : pool) {
    const std::size_t len = payload.size() + 1;
    const double lp = request.normalize_joint ? length_penalty(len, request.alpha) : 1.0;
    c.l2r_logp = rescore(params, source, with_label(special::kL2R, payload, true));
    std::vector<std::int32_t> reversed(payload.rbegin(), payload.rend());
    c.r2l_logp = rescore(params, source, with_label(special::kR2L, reversed, true));
    c.score = c.l2r_logp / lp + c.r2l_logp / lp;
    if (request.joint_terms == 4) {
      const auto back_source = with_label(flipped, payload, false);
      const std::size_t src_len = source_payload.size() + 1;
      const double lp_src = request.normalize_joint ? length_penalty(src_len, request.alpha) : 1.0;
      std::vector<std::int32_t> src_rev(source_payload.rbegin(), source_payload.rend());
      if (back_source.size() > 1) {
        c.reconstruction = rescore(params, back_source, with_label(special::kL2R, source_payload, true)) / lp_src +
                           rescore(params, back_source, with_label(special::kR2L, src_rev, true)) / lp_src;
      } else {
        c.reconstruction = kNegInf;
      }
      c.score += c.reconstruction;
    }
    // Map iteration is in payload order, so ties resolve to the smallest
    // payload regardless of list order.
    if (!have_best || c.score > result.winner.score) {
      result.winner = c;
      have_best = true;
    }
  }
  for (auto& [_, c] : pool) result.candidates.push_back(c);
  result.joint_score = result.winner.score;
  result.best.ids = with_label(special::kL2R, result.winner.payload, true);
  result.best.logp = result.winner.l2r_logp;
  result.best.finished = true;
  result.best.score = result.winner.score;
  return result;
}

JointResult joint_decode(const ParamStore& params, const DecodeRequest& request) {
  DecodeRequest l2r = request;
  l2r.mode = DecodeMode::L2R;
  DecodeRequest r2l = request;
  r2l.mode = DecodeMode::R2L;
  const auto forward_list = beam_search(params, l2r);
  const auto backward_list = beam_search(params, r2l);
  return rerank_union(params, request, forward_list, backward_list);
}

double rescore(const ParamStore& params, std::span<const std::int32_t> source_ids,
               std::span<const std::int32_t> target_ids, Bootstrap bootstrap) {
  check_source(params, source_ids);
  if (target_ids.empty() || (target_ids[0] != special::kL2R && target_ids[0] != special::kR2L)) {
    throw ContractError("rescore target must begin with an order label");
  }
  for (std::int32_t id : target_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= params.hyper().vocab_size) {
      throw IndexError(fmt::format("target id {} outside vocabulary of {} rows", id, params.hyper().vocab_size));
    }
  }
  ad::NoGradGuard no_grad;
  const auto memory = encode_one(params, source_ids);
  std::vector<std::int32_t> input{bootstrap_id(bootstrap)};
  input.insert(input.end(), target_ids.begin(), target_ids.end() - 1);
  const auto logits = decode(params, memory, single_row(source_ids), single_row(input));
  const std::size_t v = params.hyper().vocab_size;
  std::vector<double> row;
  double total = 0.0;
  for (std::size_t t = 0; t < target_ids.size(); ++t) {
    log_normalize(logits.values().subspan(t * v, v), row);
    if (t == 0) {
      if (bootstrap == Bootstrap::Pad) total += label_logp(row, target_ids[0]);
      continue;
    }
    total += row[static_cast<std::size_t>(target_ids[t])];
  }
  return total;
}

std::vector<Hypothesis> greedy_decode(const ParamStore& params, std::span<const std::vector<std::int32_t>> sources,
                                      Order order, std::size_t max_len) {
  if (sources.empty()) return {};
  ad::NoGradGuard no_grad;
  const IdMatrix source = IdMatrix::from_rows(sources);
  for (const auto& s : sources) check_source(params, s);
  const auto memory = encode(params, source);
  const std::size_t n = sources.size(), v = params.hyper().vocab_size;
  std::size_t limit = max_len;
  if (limit == 0) {
    std::size_t longest = 0;
    for (const auto& s : sources) longest = std::max(longest, s.size() - 1);
    limit = 2 * longest + 10;
  }
  limit = std::min(limit, params.hyper().max_len + 1);

  std::vector<Hypothesis> hyps(n);
  std::vector<std::vector<std::int32_t>> inputs(n);
  for (std::size_t i = 0; i < n; ++i) {
    hyps[i].ids = {order_label(order)};
    inputs[i] = {special::kBos, order_label(order)};
  }
  std::vector<double> row;
  for (std::size_t step = 0; step < limit; ++step) {
    const bool all_done = std::all_of(hyps.begin(), hyps.end(), [](const Hypothesis& h) { return h.finished; });
    if (all_done) break;
    const IdMatrix input = IdMatrix::from_rows(inputs);
    const auto logits = decode(params, memory, source, input);
    const std::size_t t = input.cols;
    for (std::size_t i = 0; i < n; ++i) {
      if (hyps[i].finished) {
        inputs[i].push_back(special::kPad);
        continue;
      }
      log_normalize(logits.values().subspan((i * t + t - 1) * v, v), row);
      const auto best = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      hyps[i].ids.push_back(best);
      hyps[i].logp += row[static_cast<std::size_t>(best)];
      hyps[i].finished = best == special::kEos;
      inputs[i].push_back(best);
    }
  }
  for (auto& h : hyps) h.score = h.logp;
  return hyps;
}

Translation translate(const ParamStore& params, const DecodeRequest& request) {
  Translation out;
  switch (request.mode) {
    case DecodeMode::L2R:
    case DecodeMode::R2L: {
      const auto best = beam_search(params, request).front();
      out.payload = best.natural_payload();
      out.direction = std::string(order_name(best.order()));
      out.score = best.score;
      out.finished = best.finished;
      break;
    }
    case DecodeMode::Mixed: {
      const auto best = mixed_decode(params, request);
      out.payload = best.natural_payload();
      out.direction = std::string(order_name(best.order()));
      out.score = best.score;
      out.finished = best.finished;
      break;
    }
    case DecodeMode::Joint: {
      const auto joint = joint_decode(params, request);
      out.payload = joint.winner.payload;
      out.direction = joint.winner.from_l2r && joint.winner.from_r2l ? "both" : joint.winner.from_l2r ? "l2r" : "r2l";
      out.score = joint.joint_score;
      break;
    }
  }
  return out;
}

}  // namespace representor
