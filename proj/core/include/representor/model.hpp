#pragma once

// The weight-shared Transformer ("representor").
//
// Parameters are addressed by logical name (one per use site in a standard
// post-norm encoder-decoder) and stored once per physical tensor. The tying
// map from logical to physical names is derived from a SharingConfig:
//
//   ES   embed.encoder, embed.decoder and embed.output are one V x d table;
//        the output projection multiplies by its transpose.
//   EDS  decoder layer i reuses encoder layer i: both decoder attention
//        blocks read the encoder self-attention weights, the decoder ffn
//        reads the encoder ffn, ln_self and ln_cross read ln_attn, and
//        ln_ffn reads the encoder ln_ffn.
//   LS   every layer of a stack reads layer 0.
//
// Because each logical lookup returns the same Tensor handle, backward
// accumulates gradients from all use sites into the physical tensor.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "representor/data.hpp"
#include "representor/tensor.hpp"

namespace representor {

struct SharingConfig {
  bool embedding_sharing = false;
  bool encoder_decoder_sharing = false;
  bool layer_sharing = false;

  // "Transformer", "Transformer + ES", ... as used in comparison tables.
  std::string name() const;
  // Compact form: none | es | eds | ls joined with '+', e.g. "es+eds".
  std::string key() const;
  static SharingConfig parse(std::string_view text);
  // All eight combinations, ordered by their bit pattern (ES, EDS, LS).
  static std::vector<SharingConfig> all();
  static SharingConfig representor() { return {true, true, false}; }

  bool operator==(const SharingConfig&) const = default;
};

struct HyperParams {
  std::size_t num_layers = 6;
  std::size_t model_dim = 1024;
  std::size_t num_heads = 16;
  std::size_t ffn_dim = 4096;
  std::size_t vocab_size = 30000;  // embedding rows (shared_rows under ES)
  std::size_t max_len = 256;

  // Throws ConfigError.
  void validate() const;
  std::size_t head_dim() const { return model_dim / num_heads; }

  // 6 layers, d=1024, 16 heads, ffn 4096, 30000 rows.
  static HyperParams big();

  bool operator==(const HyperParams&) const = default;
};

class ParamStore {
 public:
  ParamStore() = default;

  // Lays out logical and physical names; tensors are zero-filled.
  ParamStore(const SharingConfig& sharing, const HyperParams& hyper);

  const SharingConfig& sharing() const { return sharing_; }
  const HyperParams& hyper() const { return hyper_; }

  // Resolves a logical name through the tying map.
  const ad::Tensor& operator[](std::string_view logical) const;
  const std::string& physical_name(std::string_view logical) const;

  const std::vector<std::string>& logical_names() const { return logical_order_; }
  const std::map<std::string, std::string>& tying_map() const { return tying_; }
  const std::map<std::string, ad::Tensor>& physical() const { return physical_; }
  std::map<std::string, ad::Tensor>& physical() { return physical_; }
  std::vector<std::string> use_sites(const std::string& physical) const;

  std::size_t scalar_count() const;
  void zero_grad();
  void clear_grad();

  // Same weights laid out with no sharing at all: every logical name gets
  // its own copy of its physical tensor.
  ParamStore untied_clone() const;

 private:
  SharingConfig sharing_;
  HyperParams hyper_;
  std::vector<std::string> logical_order_;
  std::map<std::string, std::string> tying_;
  std::map<std::string, ad::Tensor> physical_;
};

// Physical name of a logical parameter under a sharing configuration.
std::string physical_name_for(std::string_view logical, const SharingConfig& sharing);

// Logical names with shapes, in canonical order: encoder embedding,
// encoder layers, decoder embedding, decoder layers, output projection.
struct ParamSpec {
  std::string name;
  ad::Shape shape;
};
std::vector<ParamSpec> logical_parameters(const HyperParams& hyper);

// Uniform initialization with variance 1/fan_in for weight matrices and
// 1/d for embeddings; zero biases, unit gains; the <pad> embedding row is
// zero. Deterministic in seed.
ParamStore init_params(const SharingConfig& sharing, const HyperParams& hyper, std::uint64_t seed);

struct ForwardOptions {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // required when dropout > 0
};

enum class ForwardMode { Train, Encode, DecodeStep };

// Encoder over [B, S] ids; returns memory z of shape [B, S, d].
ad::Tensor encode(const ParamStore& params, const IdMatrix& source, const ForwardOptions& options = {});

// Decoder logits [B, T, V] for the given decoder inputs. The decoder uses a
// causal mask only; source <pad> positions are masked in cross-attention.
// The <pad> logit is fixed at -inf.
ad::Tensor decode(const ParamStore& params, const ad::Tensor& memory, const IdMatrix& source,
                  const IdMatrix& decoder_input, const ForwardOptions& options = {});

// Train: teacher-forced logits [B, T, V].
// Encode: memory [B, S, d].
// DecodeStep: logits of the final decoder column, [B, 1, V]; rows are
// expected to be unpadded prefixes of equal length.
ad::Tensor forward(const ParamStore& params, const Batch& batch, ForwardMode mode,
                   const ForwardOptions& options = {});

// Sinusoidal position table [length, d], shared by encoder and decoder.
std::vector<double> positional_encoding(std::size_t length, std::size_t model_dim);

struct TiedGradientEntry {
  std::string physical;
  std::vector<std::string> use_sites;
  double max_abs_diff = 0.0;
};

struct TiedGradientReport {
  std::vector<TiedGradientEntry> entries;
  double max_abs_diff = 0.0;
};

// Runs loss_fn on the tied store and on its untied clone, backpropagates
// both, and checks that each physical gradient equals the sum of its use
// sites' clone gradients. Throws InvariantError naming the offending
// tensors when any difference exceeds tolerance. Leaves gradients on the
// tied store populated.
TiedGradientReport tied_gradient_accumulation_check(ParamStore& params,
                                                    const std::function<ad::Tensor(const ParamStore&)>& loss_fn,
                                                    double tolerance = 1e-8);

}  // namespace representor
