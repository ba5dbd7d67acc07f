#pragma once

// Closed-form parameter counts per sharing configuration. Nothing is
// allocated, so full-size configurations count instantly.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "representor/model.hpp"

namespace representor {

struct CountBreakdown {
  SharingConfig config;
  std::size_t embedding = 0;  // input embeddings; the one shared table under ES
  std::size_t encoder_attn = 0;
  std::size_t encoder_ffn = 0;
  std::size_t encoder_ln = 0;
  std::size_t decoder_self_attn = 0;
  std::size_t decoder_cross_attn = 0;
  std::size_t decoder_ffn = 0;
  std::size_t decoder_ln = 0;
  std::size_t output_projection = 0;  // 0 under ES
  std::size_t total = 0;
  double percent = 100.0;  // of the unshared baseline

  std::size_t sum_of_parts() const;
};

CountBreakdown count(const SharingConfig& config, const HyperParams& hyper);

struct CountRow {
  std::string name;
  std::size_t params = 0;
  double percent = 0.0;
};

std::vector<CountRow> table_rows(std::span<const SharingConfig> configs, const HyperParams& hyper);

// Aligned text table with params in millions to one decimal.
std::string format_table(std::span<const CountRow> rows);
// One JSON object per line: name, key, params, params_m, percent.
std::string format_records(std::span<const SharingConfig> configs, const HyperParams& hyper);

// Baseline plus the four sharing rows of the usual comparison.
std::vector<SharingConfig> comparison_configs();

}  // namespace representor
