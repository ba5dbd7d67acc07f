#include "representor/training.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "representor/checkpoint.hpp"
#include "representor/errors.hpp"

namespace representor {

namespace {

// Weights w such that -sum(w * log_probs) / count is the smoothed loss over
// positions where `select` holds.
ad::Tensor smoothed_term(const ad::Tensor& log_probs, const IdMatrix& targets, std::span<const std::uint8_t> mask,
                         double label_smoothing, const std::function<bool(std::size_t row)>& select) {
  const std::size_t v = log_probs.dim(-1);
  const std::size_t positions = targets.rows * targets.cols;
  if (log_probs.size() != positions * v || mask.size() != positions) {
    throw DimensionError(fmt::format("loss: logits {} do not match targets [{}x{}] / mask {}",
                                     ad::shape_string(log_probs.shape()), targets.rows, targets.cols, mask.size()));
  }
  std::vector<double> weights(log_probs.size(), 0.0);
  const double spread = label_smoothing / static_cast<double>(v - 1);
  std::size_t count = 0;
  for (std::size_t p = 0; p < positions; ++p) {
    if (!mask[p] || !select(p / targets.cols)) continue;
    const std::int32_t tgt = targets.ids[p];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= v) {
      throw IndexError(fmt::format("target id {} outside [0, {})", tgt, v));
    }
    ++count;
    double* w = weights.data() + p * v;
    if (label_smoothing > 0.0) {
      for (std::size_t c = 0; c < v; ++c) {
        if (c != static_cast<std::size_t>(special::kPad)) w[c] = spread;
      }
    }
    w[static_cast<std::size_t>(tgt)] += 1.0 - label_smoothing;
  }
  if (count == 0) throw ContractError("loss over a batch with every position masked");
  return ad::scale(ad::weighted_sum(log_probs, weights), -1.0 / static_cast<double>(count));
}

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
  return seed * 0x9E3779B97F4A7C15ULL + epoch * 0xBF58476D1CE4E5B9ULL + 1;
}

std::string format_optional(const std::optional<double>& v) { return v ? fmt::format("{:.9g}", *v) : "nan"; }

}  // namespace

void TrainConfig::validate() const {
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be at least 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError(fmt::format("label_smoothing {} outside [0, 1)", label_smoothing));
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr_scale > 0.0)) throw ConfigError("lr_scale must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError(fmt::format("dropout {} outside [0, 1)", dropout));
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw ConfigError("Adam needs beta1, beta2 in [0, 1) and eps > 0");
  }
  if (log_every < 1) throw ConfigError("log_every must be at least 1");
}

ad::Tensor label_smoothed_loss(const ad::Tensor& logits, const IdMatrix& targets, std::span<const std::uint8_t> mask,
                               double label_smoothing) {
  return smoothed_term(ad::log_softmax(logits, -1), targets, mask, label_smoothing,
                       [](std::size_t) { return true; });
}

ObjectiveLoss objective_loss(const ParamStore& params, const Batch& batch, Objective objective,
                             double label_smoothing, const ForwardOptions& options) {
  const auto allowed = directions_for(objective);
  std::array<bool, 4> present{};
  for (const Direction& d : batch.directions) {
    if (std::find(allowed.begin(), allowed.end(), d) == allowed.end()) {
      throw ContractError(
          fmt::format("batch holds a {} example, which objective {} does not train", d.name(), objective_name(objective)));
    }
    present[d.index()] = true;
  }
  const auto log_probs = ad::log_softmax(forward(params, batch, ForwardMode::Train, options), -1);
  ObjectiveLoss out;
  for (const Direction& d : kAllDirections) {
    if (!present[d.index()]) continue;
    auto term = smoothed_term(log_probs, batch.decoder_target_ids, batch.target_mask, label_smoothing,
                              [&](std::size_t row) { return batch.directions[row] == d; });
    out.per_direction[d.index()] = term.item();
    out.total = out.total.defined() ? ad::add(out.total, term) : term;
  }
  return out;
}

double learning_rate(std::size_t step, std::size_t model_dim, std::size_t warmup_steps) {
  if (step < 1) throw ContractError("learning-rate schedule starts at step 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return std::pow(static_cast<double>(model_dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

double clip_gradients(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, t] : params.physical()) {
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [_, t] : params.physical()) {
      if (!t.has_grad()) continue;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void adam_step(ParamStore& params, OptimizerState& state, double lr, const AdamConfig& config) {
  for (const auto& [name, t] : params.physical()) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + name);
    }
  }
  ++state.step;
  const double t_step = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t_step);
  const double c2 = 1.0 - std::pow(config.beta2, t_step);
  for (auto& [name, tensor] : params.physical()) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() != tensor.size()) m.assign(tensor.size(), 0.0);
    if (v.size() != tensor.size()) v.assign(tensor.size(), 0.0);
    auto values = tensor.mutable_values();
    const auto grad = tensor.grad();
    const bool has_grad = !grad.empty();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
    tensor.zero_grad();
  }
}

std::string metrics_header() {
  return "step\tlr\tloss_total\tloss_s2t_l2r\tloss_s2t_r2l\tloss_t2s_l2r\tloss_t2s_r2l";
}

std::string format_metrics(const MetricsRecord& r) {
  return fmt::format("{}\t{:.9g}\t{:.9g}\t{}\t{}\t{}\t{}", r.step, r.lr, r.loss_total, format_optional(r.per_direction[0]),
                     format_optional(r.per_direction[1]), format_optional(r.per_direction[2]),
                     format_optional(r.per_direction[3]));
}

TrainResult train(const TrainConfig& config, const SharingConfig& sharing, HyperParams hyper,
                  std::span<const SentencePair> corpus, const SharedVocabulary& vocab, const TrainOutputs& outputs,
                  std::optional<ResumeState> resume) {
  config.validate();
  hyper.vocab_size = vocab.shared_rows();
  hyper.validate();

  TrainResult result;
  if (resume) {
    if (!(resume->params.sharing() == sharing) || !(resume->params.hyper() == hyper)) {
      throw ConfigError("resume checkpoint disagrees with the requested sharing or hyperparameters");
    }
    result.params = std::move(resume->params);
    result.optimizer = std::move(resume->optimizer);
  } else {
    result.params = init_params(sharing, hyper, config.seed);
  }

  const auto examples = augment_corpus(corpus, config.objective, vocab, &result.augment_stats, hyper.max_len);
  if (examples.empty()) throw InputError("no trainable examples after augmentation");
  const std::size_t batches_per_epoch = (examples.size() + config.batch_size - 1) / config.batch_size;

  std::mt19937_64 dropout_rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  ForwardOptions fwd{config.dropout, &dropout_rng};

  if (outputs.metrics) *outputs.metrics << metrics_header() << '\n';

  std::uint64_t step = result.optimizer.step;
  auto write_checkpoint = [&]() {
    if (!outputs.checkpoint.empty()) {
      save_checkpoint(outputs.checkpoint, result.params, vocab.fingerprint(), &result.optimizer);
    }
  };

  while (step < config.max_steps) {
    const std::uint64_t epoch = step / batches_per_epoch;
    const auto batches = make_batches(examples, config.batch_size, epoch_seed(config.seed, epoch));
    for (std::size_t b = step % batches_per_epoch; b < batches.size() && step < config.max_steps; ++b) {
      const double lr = config.lr_scale * learning_rate(step + 1, hyper.model_dim, config.warmup_steps);
      auto loss = objective_loss(result.params, batches[b], config.objective, config.label_smoothing, fwd);
      const double value = loss.total.item();
      if (!std::isfinite(value)) throw NumericError(fmt::format("non-finite loss {} at step {}", value, step + 1));
      ad::backward(loss.total);
      if (config.clip_norm > 0.0) clip_gradients(result.params, config.clip_norm);
      adam_step(result.params, result.optimizer, lr, config.adam);
      step = result.optimizer.step;

      MetricsRecord rec{step, lr, value, loss.per_direction};
      if (step % config.log_every == 0 || step == config.max_steps) {
        if (outputs.metrics) *outputs.metrics << format_metrics(rec) << '\n';
        result.metrics.push_back(rec);
      }
      if (outputs.on_step) outputs.on_step(rec);
      if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) write_checkpoint();
    }
  }
  if (outputs.metrics) outputs.metrics->flush();
  write_checkpoint();
  return result;
}

}  // namespace representor
