#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "representor/data.hpp"
#include "representor/model.hpp"
#include "representor/vocab.hpp"

namespace representor {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct TrainConfig {
  Objective objective = Objective::Cfp;
  std::size_t warmup_steps = 4000;
  AdamConfig adam;
  double label_smoothing = 0.1;
  double lr_scale = 1.0;  // multiplies the warmup/decay schedule
  std::size_t batch_size = 64;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t log_every = 1;
  double dropout = 0.0;
  double clip_norm = 0.0;  // 0: no clipping

  void validate() const;
};

// Mean over unmasked positions of
//   (1 - eps) * -log p(target) + eps * mean_{c != <pad>} -log p(c).
// Throws ContractError when the mask selects nothing.
ad::Tensor label_smoothed_loss(const ad::Tensor& logits, const IdMatrix& targets,
                               std::span<const std::uint8_t> mask, double label_smoothing);

struct ObjectiveLoss {
  ad::Tensor total;  // sum over directions of their per-token mean loss
  std::array<std::optional<double>, 4> per_direction;  // indexed by Direction::index()
};

// Loss of one batch under an objective: every row's direction must belong
// to the objective (ContractError otherwise). Directions are averaged per
// token separately and then summed, one term per generation pattern.
ObjectiveLoss objective_loss(const ParamStore& params, const Batch& batch, Objective objective,
                             double label_smoothing, const ForwardOptions& options = {});

// Warmup-then-inverse-sqrt schedule:
//   d^-0.5 * min(step^-0.5, step * warmup^-1.5).
double learning_rate(std::size_t step, std::size_t model_dim, std::size_t warmup_steps);

// One first/second moment pair per physical tensor.
struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

// Bias-corrected Adam on every physical tensor, then zeroes gradients.
// Throws NumericError naming the tensor on a non-finite gradient.
void adam_step(ParamStore& params, OptimizerState& state, double lr, const AdamConfig& config = {});

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_gradients(ParamStore& params, double max_norm);

struct MetricsRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  std::array<std::optional<double>, 4> per_direction;
};

std::string metrics_header();
std::string format_metrics(const MetricsRecord& record);

struct TrainOutputs {
  std::filesystem::path checkpoint;  // empty: no files written
  std::ostream* metrics = nullptr;
  std::function<void(const MetricsRecord&)> on_step;
};

struct TrainResult {
  ParamStore params;
  OptimizerState optimizer;
  std::vector<MetricsRecord> metrics;
  AugmentStats augment_stats;
};

struct ResumeState {
  ParamStore params;
  OptimizerState optimizer;
};

// augment -> batch -> forward -> loss -> backward -> Adam, until
// config.max_steps optimizer steps have been taken. hyper.vocab_size is set
// from the vocabulary. Batch order depends only on (seed, epoch), so a
// resumed run replays the same stream from the saved step.
TrainResult train(const TrainConfig& config, const SharingConfig& sharing, HyperParams hyper,
                  std::span<const SentencePair> corpus, const SharedVocabulary& vocab,
                  const TrainOutputs& outputs = {}, std::optional<ResumeState> resume = std::nullopt);

}  // namespace representor
