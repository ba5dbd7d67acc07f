#include "representor/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "representor/errors.hpp"

namespace representor {

namespace {

constexpr std::string_view kAttentionLeaves[] = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"};

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

void add_attention(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  for (std::string_view leaf : kAttentionLeaves) {
    const bool weight = leaf[0] == 'w';
    out.push_back({fmt::format("{}.{}", prefix, leaf), weight ? ad::Shape{d, d} : ad::Shape{d}});
  }
}

void add_ffn(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d, std::size_t f) {
  out.push_back({prefix + ".w1", {d, f}});
  out.push_back({prefix + ".b1", {f}});
  out.push_back({prefix + ".w2", {f, d}});
  out.push_back({prefix + ".b2", {d}});
}

void add_ln(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".gain", {d}});
  out.push_back({prefix + ".bias", {d}});
}

std::string_view leaf_of(std::string_view name) { return name.substr(name.rfind('.') + 1); }

// ---------------------------------------------------------------------------
// Forward building blocks

ad::Mask key_padding_mask(const IdMatrix& ids) {
  ad::Mask m;
  m.shape = {ids.rows, 1, 1, ids.cols};
  m.keep.resize(ids.ids.size());
  for (std::size_t i = 0; i < ids.ids.size(); ++i) m.keep[i] = ids.ids[i] != special::kPad;
  return m;
}

ad::Mask causal_mask(std::size_t t) {
  ad::Mask m;
  m.shape = {1, 1, t, t};
  m.keep.resize(t * t);
  for (std::size_t q = 0; q < t; ++q)
    for (std::size_t k = 0; k < t; ++k) m.keep[q * t + k] = k <= q;
  return m;
}

class Forwarder {
 public:
  Forwarder(const ParamStore& params, const ForwardOptions& options)
      : p_(params), h_(params.hyper()), opt_(options) {
    if (opt_.dropout > 0.0 && opt_.rng == nullptr) throw ConfigError("dropout requires an rng");
  }

  ad::Tensor embed(std::string_view table, const IdMatrix& ids) const {
    for (std::int32_t id : ids.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= h_.vocab_size) {
        throw IndexError(fmt::format("token id {} outside vocabulary of {} rows", id, h_.vocab_size));
      }
    }
    if (ids.cols > h_.max_len + 2) {
      throw ContractError(fmt::format("sequence of {} positions exceeds max_len {}", ids.cols, h_.max_len));
    }
    const std::size_t d = h_.model_dim;
    auto x = ad::embedding_lookup(p_[table], ids.ids);
    x = ad::reshape(x, {ids.rows, ids.cols, d});
    x = ad::scale(x, std::sqrt(static_cast<double>(d)));
    const auto pe = ad::Tensor::from_values({ids.cols, d}, positional_encoding(ids.cols, d));
    return drop(ad::add(x, pe));
  }

  ad::Tensor linear(const ad::Tensor& x, const std::string& w, const std::string& b) const {
    return ad::add(ad::matmul(x, p_[w]), p_[b]);
  }

  ad::Tensor split_heads(const ad::Tensor& x) const {
    const std::size_t b = x.dim(0), t = x.dim(1);
    return ad::permute(ad::reshape(x, {b, t, h_.num_heads, h_.head_dim()}), {0, 2, 1, 3});
  }

  ad::Tensor attention(const std::string& prefix, const ad::Tensor& query, const ad::Tensor& memory,
                       const ad::Mask& mask) const {
    const std::size_t b = query.dim(0), tq = query.dim(1);
    auto q = split_heads(linear(query, prefix + ".wq", prefix + ".bq"));
    auto k = split_heads(linear(memory, prefix + ".wk", prefix + ".bk"));
    auto v = split_heads(linear(memory, prefix + ".wv", prefix + ".bv"));
    auto scores = ad::scale(ad::matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(h_.head_dim())));
    scores = ad::masked_fill(scores, mask, -std::numeric_limits<double>::infinity());
    auto ctx = ad::matmul(ad::softmax(scores, -1), v);
    ctx = ad::reshape(ad::permute(ctx, {0, 2, 1, 3}), {b, tq, h_.model_dim});
    return linear(ctx, prefix + ".wo", prefix + ".bo");
  }

  ad::Tensor ffn(const std::string& prefix, const ad::Tensor& x) const {
    return linear(ad::relu(linear(x, prefix + ".w1", prefix + ".b1")), prefix + ".w2", prefix + ".b2");
  }

  ad::Tensor residual_norm(const ad::Tensor& x, const ad::Tensor& sub, const std::string& ln) const {
    return ad::layer_norm(ad::add(x, drop(sub)), p_[ln + ".gain"], p_[ln + ".bias"]);
  }

  ad::Tensor encode(const IdMatrix& source) const {
    const auto mask = key_padding_mask(source);
    auto x = embed("embed.encoder", source);
    for (std::size_t i = 0; i < h_.num_layers; ++i) {
      const std::string layer = fmt::format("encoder.{}", i);
      x = residual_norm(x, attention(layer + ".self_attn", x, x, mask), layer + ".ln_attn");
      x = residual_norm(x, ffn(layer + ".ffn", x), layer + ".ln_ffn");
    }
    return x;
  }

  ad::Tensor decode(const ad::Tensor& memory, const IdMatrix& source, const IdMatrix& input) const {
    if (memory.rank() != 3 || memory.dim(0) != input.rows || memory.dim(1) != source.cols ||
        source.rows != input.rows) {
      throw DimensionError(fmt::format("decoder memory {} incompatible with source [{}x{}] / input [{}x{}]",
                                       ad::shape_string(memory.shape()), source.rows, source.cols, input.rows,
                                       input.cols));
    }
    const auto cross_mask = key_padding_mask(source);
    const auto self_mask = causal_mask(input.cols);
    auto x = embed("embed.decoder", input);
    for (std::size_t i = 0; i < h_.num_layers; ++i) {
      const std::string layer = fmt::format("decoder.{}", i);
      x = residual_norm(x, attention(layer + ".self_attn", x, x, self_mask), layer + ".ln_self");
      x = residual_norm(x, attention(layer + ".cross_attn", x, memory, cross_mask), layer + ".ln_cross");
      x = residual_norm(x, ffn(layer + ".ffn", x), layer + ".ln_ffn");
    }
    auto logits = ad::matmul(x, p_["embed.output"], true);
    ad::Mask no_pad{{1, 1, h_.vocab_size}, std::vector<std::uint8_t>(h_.vocab_size, 1)};
    no_pad.keep[special::kPad] = 0;
    return ad::masked_fill(logits, no_pad, -std::numeric_limits<double>::infinity());
  }

 private:
  ad::Tensor drop(const ad::Tensor& x) const {
    return opt_.dropout > 0.0 ? ad::dropout(x, opt_.dropout, *opt_.rng) : x;
  }

  const ParamStore& p_;
  const HyperParams& h_;
  ForwardOptions opt_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string SharingConfig::name() const {
  std::string out = "Transformer";
  if (embedding_sharing) out += " + ES";
  if (encoder_decoder_sharing) out += " + EDS";
  if (layer_sharing) out += " + LS";
  return out;
}

std::string SharingConfig::key() const {
  std::vector<std::string_view> parts;
  if (embedding_sharing) parts.push_back("es");
  if (encoder_decoder_sharing) parts.push_back("eds");
  if (layer_sharing) parts.push_back("ls");
  return parts.empty() ? std::string("none") : fmt::format("{}", fmt::join(parts, "+"));
}

SharingConfig SharingConfig::parse(std::string_view text) {
  SharingConfig c;
  if (text == "none" || text.empty()) return c;
  if (text == "representor") return representor();
  for (const auto& raw : split(text, text.find(',') != std::string_view::npos ? ',' : '+')) {
    std::string part = raw;
    std::transform(part.begin(), part.end(), part.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (part == "es") {
      c.embedding_sharing = true;
    } else if (part == "eds") {
      c.encoder_decoder_sharing = true;
    } else if (part == "ls") {
      c.layer_sharing = true;
    } else {
      throw ConfigError(fmt::format("unknown sharing flag '{}' in '{}'", part, text));
    }
  }
  return c;
}

std::vector<SharingConfig> SharingConfig::all() {
  std::vector<SharingConfig> out;
  for (int bits = 0; bits < 8; ++bits) out.push_back({(bits & 4) != 0, (bits & 2) != 0, (bits & 1) != 0});
  return out;
}

void HyperParams::validate() const {
  if (num_layers == 0) throw ConfigError("num_layers must be positive");
  if (model_dim == 0 || num_heads == 0 || ffn_dim == 0) throw ConfigError("dimensions must be positive");
  if (model_dim % num_heads != 0) {
    throw ConfigError(fmt::format("model_dim {} is not divisible by num_heads {}", model_dim, num_heads));
  }
  if (vocab_size <= special::kCount) {
    throw ConfigError(fmt::format("vocab_size {} leaves no room beyond the {} reserved rows", vocab_size,
                                  special::kCount));
  }
  if (max_len == 0) throw ConfigError("max_len must be positive");
}

HyperParams HyperParams::big() { return {6, 1024, 16, 4096, 30000, 256}; }

// ---------------------------------------------------------------------------
// Parameter layout

std::vector<ParamSpec> logical_parameters(const HyperParams& hyper) {
  const std::size_t d = hyper.model_dim, f = hyper.ffn_dim, v = hyper.vocab_size;
  std::vector<ParamSpec> out;
  out.push_back({"embed.encoder", {v, d}});
  for (std::size_t i = 0; i < hyper.num_layers; ++i) {
    const std::string layer = fmt::format("encoder.{}", i);
    add_attention(out, layer + ".self_attn", d);
    add_ln(out, layer + ".ln_attn", d);
    add_ffn(out, layer + ".ffn", d, f);
    add_ln(out, layer + ".ln_ffn", d);
  }
  out.push_back({"embed.decoder", {v, d}});
  for (std::size_t i = 0; i < hyper.num_layers; ++i) {
    const std::string layer = fmt::format("decoder.{}", i);
    add_attention(out, layer + ".self_attn", d);
    add_ln(out, layer + ".ln_self", d);
    add_attention(out, layer + ".cross_attn", d);
    add_ln(out, layer + ".ln_cross", d);
    add_ffn(out, layer + ".ffn", d, f);
    add_ln(out, layer + ".ln_ffn", d);
  }
  out.push_back({"embed.output", {v, d}});
  return out;
}

std::string physical_name_for(std::string_view logical, const SharingConfig& sharing) {
  if (logical.starts_with("embed.")) return sharing.embedding_sharing ? "embed.encoder" : std::string(logical);
  auto parts = split(logical, '.');
  if (parts.size() != 4) throw ContractError(fmt::format("malformed parameter name '{}'", logical));
  auto& stack = parts[0];
  auto& layer = parts[1];
  auto& block = parts[2];
  const auto& leaf = parts[3];
  if (sharing.layer_sharing) layer = "0";
  if (sharing.encoder_decoder_sharing && stack == "decoder") {
    stack = "encoder";
    if (block == "cross_attn") {
      block = "self_attn";
    } else if (block == "ln_self" || block == "ln_cross") {
      block = "ln_attn";
    }
  }
  return fmt::format("{}.{}.{}.{}", stack, layer, block, leaf);
}

ParamStore::ParamStore(const SharingConfig& sharing, const HyperParams& hyper) : sharing_(sharing), hyper_(hyper) {
  hyper_.validate();
  for (auto& p : logical_parameters(hyper_)) {
    std::string phys = physical_name_for(p.name, sharing_);
    if (!physical_.contains(phys)) physical_.emplace(phys, ad::Tensor::zeros(p.shape, true));
    tying_.emplace(p.name, std::move(phys));
    logical_order_.push_back(std::move(p.name));
  }
}

const std::string& ParamStore::physical_name(std::string_view logical) const {
  const auto it = tying_.find(std::string(logical));
  if (it == tying_.end()) throw ContractError(fmt::format("unknown parameter '{}'", logical));
  return it->second;
}

const ad::Tensor& ParamStore::operator[](std::string_view logical) const {
  return physical_.at(physical_name(logical));
}

std::vector<std::string> ParamStore::use_sites(const std::string& physical) const {
  std::vector<std::string> out;
  for (const auto& name : logical_order_) {
    if (tying_.at(name) == physical) out.push_back(name);
  }
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : physical_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : physical_) t.zero_grad();
}

void ParamStore::clear_grad() {
  for (auto& [_, t] : physical_) t.clear_grad();
}

ParamStore ParamStore::untied_clone() const {
  ParamStore clone(SharingConfig{}, hyper_);
  for (const auto& name : logical_order_) {
    const auto src = (*this)[name].values();
    auto dst = clone.physical_.at(name).mutable_values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return clone;
}

ParamStore init_params(const SharingConfig& sharing, const HyperParams& hyper, std::uint64_t seed) {
  ParamStore store(sharing, hyper);
  std::mt19937_64 rng(seed);
  std::set<std::string> done;
  for (const auto& logical : store.logical_names()) {
    const std::string& phys = store.physical_name(logical);
    if (!done.insert(phys).second) continue;
    ad::Tensor& t = store.physical().at(phys);
    auto values = t.mutable_values();
    const std::string_view leaf = leaf_of(phys);
    if (phys.starts_with("embed.")) {
      const double bound = std::sqrt(3.0 / static_cast<double>(hyper.model_dim));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : values) v = dist(rng);
      std::fill_n(values.begin(), hyper.model_dim, 0.0);  // <pad> row
    } else if (leaf[0] == 'w') {
      const double bound = std::sqrt(3.0 / static_cast<double>(t.dim(0)));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : values) v = dist(rng);
    } else if (leaf == "gain") {
      std::fill(values.begin(), values.end(), 1.0);
    } else {
      std::fill(values.begin(), values.end(), 0.0);
    }
  }
  return store;
}

// ---------------------------------------------------------------------------
// Forward

std::vector<double> positional_encoding(std::size_t length, std::size_t model_dim) {
  std::vector<double> pe(length * model_dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < model_dim; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(model_dim));
      pe[pos * model_dim + i] = std::sin(angle);
      if (i + 1 < model_dim) pe[pos * model_dim + i + 1] = std::cos(angle);
    }
  }
  return pe;
}

ad::Tensor encode(const ParamStore& params, const IdMatrix& source, const ForwardOptions& options) {
  return Forwarder(params, options).encode(source);
}

ad::Tensor decode(const ParamStore& params, const ad::Tensor& memory, const IdMatrix& source,
                  const IdMatrix& decoder_input, const ForwardOptions& options) {
  return Forwarder(params, options).decode(memory, source, decoder_input);
}

ad::Tensor forward(const ParamStore& params, const Batch& batch, ForwardMode mode, const ForwardOptions& options) {
  Forwarder f(params, options);
  auto memory = f.encode(batch.encoder_ids);
  if (mode == ForwardMode::Encode) return memory;
  auto logits = f.decode(memory, batch.encoder_ids, batch.decoder_input_ids);
  if (mode == ForwardMode::Train) return logits;
  return ad::slice(logits, 1, batch.decoder_input_ids.cols - 1, 1);
}

// ---------------------------------------------------------------------------
// Tying verification

TiedGradientReport tied_gradient_accumulation_check(ParamStore& params,
                                                    const std::function<ad::Tensor(const ParamStore&)>& loss_fn,
                                                    double tolerance) {
  params.clear_grad();
  ad::backward(loss_fn(params));
  ParamStore clone = params.untied_clone();
  ad::backward(loss_fn(clone));

  TiedGradientReport report;
  std::vector<std::string> failures;
  for (const auto& [phys, tensor] : params.physical()) {
    TiedGradientEntry entry;
    entry.physical = phys;
    entry.use_sites = params.use_sites(phys);
    std::vector<double> expected(tensor.size(), 0.0);
    for (const auto& site : entry.use_sites) {
      const auto& t = clone.physical().at(site);
      if (!t.has_grad()) continue;
      const auto g = t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) expected[i] += g[i];
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const double actual = tensor.has_grad() ? tensor.grad()[i] : 0.0;
      entry.max_abs_diff = std::max(entry.max_abs_diff, std::abs(actual - expected[i]));
    }
    report.max_abs_diff = std::max(report.max_abs_diff, entry.max_abs_diff);
    if (!(entry.max_abs_diff <= tolerance)) failures.push_back(fmt::format("{} ({:.3e})", phys, entry.max_abs_diff));
    report.entries.push_back(std::move(entry));
  }
  if (!failures.empty()) {
    throw InvariantError(fmt::format("tied gradients differ from summed use-site gradients: {}",
                                     fmt::join(failures, ", ")));
  }
  return report;
}

}  // namespace representor
