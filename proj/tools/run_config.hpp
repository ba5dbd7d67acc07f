#pragma once

// Everything one CLI invocation needs, loadable from an INI-style file:
//
//   [model]
//   sharing = es+eds
//   layers = 2
//   [train]
//   objective = cfp
//   steps = 3500
//
// Command-line flags override file values. Keys are addressed as
// "section.key" in both places.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "representor/data.hpp"
#include "representor/decoding.hpp"
#include "representor/model.hpp"
#include "representor/training.hpp"

namespace representor::cli {

struct RunConfig {
  std::filesystem::path src;
  std::filesystem::path tgt;
  std::filesystem::path vocab;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;  // empty: <checkpoint>.metrics.tsv

  SharingConfig sharing = SharingConfig::representor();
  HyperParams hyper;
  TrainConfig train;

  DecodeMode decode_mode = DecodeMode::Joint;
  std::size_t beam = 4;
  double alpha = 0.6;
  std::size_t decode_max_len = 0;
  int joint_terms = 2;

  // Throws ConfigError on an unknown key or an unparsable value.
  void set(std::string_view key, const std::string& value);
  void load(const std::filesystem::path& path);
  std::string to_ini() const;
  void validate() const;

  static const std::vector<std::string>& keys();
};

}  // namespace representor::cli
