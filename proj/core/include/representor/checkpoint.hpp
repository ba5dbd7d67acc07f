#pragma once

// Binary checkpoint container.
//
//   magic    "RPRSNTR\0"
//   u32      format version (1)
//   string   header: newline-separated key=value pairs (sharing flags,
//            hyperparameters, vocabulary fingerprint, optimizer step)
//   u32      tying entries, then (string logical, string physical) pairs
//   u32      tensors, then (string name, u32 rank, u64 dims..., f64 values)
//   u8       1 when Adam moments follow, as tensors named m/<physical>
//            and v/<physical>
//
// Integers and doubles are little-endian; strings are u32 length + bytes.

#include <cstdint>
#include <filesystem>
#include <optional>

#include "representor/model.hpp"
#include "representor/training.hpp"

namespace representor {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore params;
  std::uint64_t vocab_fingerprint = 0;
  std::optional<OptimizerState> optimizer;
};

// Writes to a temporary sibling and renames it over path.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, std::uint64_t vocab_fingerprint,
                     const OptimizerState* optimizer = nullptr);

// Throws InputError on a malformed file or a tying map that disagrees with
// the recorded sharing configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace representor
