#include "representor/param_count.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include "representor/errors.hpp"

namespace representor {

std::size_t CountBreakdown::sum_of_parts() const {
  return embedding + encoder_attn + encoder_ffn + encoder_ln + decoder_self_attn + decoder_cross_attn + decoder_ffn +
         decoder_ln + output_projection;
}

namespace {

CountBreakdown raw_count(const SharingConfig& c, const HyperParams& h) {
  h.validate();
  const std::size_t d = h.model_dim, f = h.ffn_dim, v = h.vocab_size;
  const std::size_t attn = 4 * d * d + 4 * d;
  const std::size_t ffn = 2 * d * f + f + d;
  const std::size_t ln = 2 * d;
  const std::size_t layers = c.layer_sharing ? 1 : h.num_layers;

  CountBreakdown b;
  b.config = c;
  b.embedding = c.embedding_sharing ? v * d : 2 * v * d;
  b.output_projection = c.embedding_sharing ? 0 : v * d;
  b.encoder_attn = layers * attn;
  b.encoder_ffn = layers * ffn;
  b.encoder_ln = layers * 2 * ln;
  if (!c.encoder_decoder_sharing) {
    b.decoder_self_attn = layers * attn;
    b.decoder_cross_attn = layers * attn;
    b.decoder_ffn = layers * ffn;
    b.decoder_ln = layers * 3 * ln;
  }
  b.total = b.sum_of_parts();
  return b;
}

}  // namespace

CountBreakdown count(const SharingConfig& config, const HyperParams& hyper) {
  auto b = raw_count(config, hyper);
  const auto base = raw_count(SharingConfig{}, hyper);
  b.percent = 100.0 * static_cast<double>(b.total) / static_cast<double>(base.total);
  return b;
}

std::vector<SharingConfig> comparison_configs() {
  return {SharingConfig{}, {true, false, false}, {false, true, false}, {true, true, false}, {true, true, true}};
}

std::vector<CountRow> table_rows(std::span<const SharingConfig> configs, const HyperParams& hyper) {
  if (configs.empty()) throw ConfigError("parameter table needs at least one configuration");
  std::vector<CountRow> rows;
  for (const auto& c : configs) {
    const auto b = count(c, hyper);
    rows.push_back({c.name(), b.total, b.percent});
  }
  return rows;
}

std::string format_table(std::span<const CountRow> rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::string out = fmt::format("{:<{}}  {:>9}  {:>8}\n", "Model", width, "Params", "Percent");
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}  {:>8.1f}M  {:>7.1f}%\n", r.name, width, static_cast<double>(r.params) / 1e6,
                       r.percent);
  }
  return out;
}

std::string format_records(std::span<const SharingConfig> configs, const HyperParams& hyper) {
  std::string out;
  for (const auto& c : configs) {
    const auto b = count(c, hyper);
    nlohmann::json j = {{"name", c.name()},
                        {"key", c.key()},
                        {"params", b.total},
                        {"params_m", static_cast<double>(b.total) / 1e6},
                        {"percent", b.percent},
                        {"embedding", b.embedding},
                        {"encoder_attn", b.encoder_attn},
                        {"encoder_ffn", b.encoder_ffn},
                        {"encoder_ln", b.encoder_ln},
                        {"decoder_self_attn", b.decoder_self_attn},
                        {"decoder_cross_attn", b.decoder_cross_attn},
                        {"decoder_ffn", b.decoder_ffn},
                        {"decoder_ln", b.decoder_ln},
                        {"output_projection", b.output_projection}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace representor
