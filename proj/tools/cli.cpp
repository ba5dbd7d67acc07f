#include "cli.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "representor/checkpoint.hpp"
#include "representor/data.hpp"
#include "representor/decoding.hpp"
#include "representor/errors.hpp"
#include "representor/evaluation.hpp"
#include "representor/param_count.hpp"
#include "representor/training.hpp"
#include "representor/vocab.hpp"
#include "run_config.hpp"

namespace representor::cli {

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

void bind_key(CLI::App* sub, Overrides& overrides, const std::string& flag, const std::string& key,
              const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); }, help)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

RunConfig resolve(const std::string& config_file, const Overrides& overrides) {
  RunConfig cfg;
  if (!config_file.empty()) cfg.load(config_file);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

std::vector<TokenSeq> read_token_lines(const std::filesystem::path& path) {
  std::vector<TokenSeq> out;
  for (const auto& line : read_lines(path)) out.push_back(tokenize(line));
  return out;
}

std::string join(const TokenSeq& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InputError("cannot write " + path.string());
  return f;
}

void require(const std::filesystem::path& p, std::string_view what) {
  if (p.empty()) throw ConfigError(fmt::format("{} is required", what));
}

// build-vocab -------------------------------------------------------------

struct VocabArgs {
  std::string src, tgt, out;
  std::size_t src_size = 30000, tgt_size = 30000;
};

int cmd_build_vocab(const VocabArgs& a, std::ostream&, std::ostream& err) {
  const auto corpus = load_parallel(a.src, a.tgt);
  std::vector<TokenSeq> src, tgt;
  for (const auto& p : corpus.pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  const auto vocab =
      SharedVocabulary::build(build_frequency_vocab(src, a.src_size), build_frequency_vocab(tgt, a.tgt_size));
  vocab.save(a.out);
  fmt::print(err, "vocabulary: {} source, {} target, {} shared rows -> {}\n", vocab.src_size(), vocab.tgt_size(),
             vocab.shared_rows(), a.out);
  return kExitOk;
}

// prepare -----------------------------------------------------------------

struct PrepareArgs {
  std::string src, tgt, vocab, objective = "cfp", out;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  const auto objective = parse_objective(a.objective);
  const auto vocab = SharedVocabulary::load(a.vocab);
  const auto corpus = load_parallel(a.src, a.tgt);
  AugmentStats stats;
  const auto examples = augment_corpus(corpus.pairs, objective, vocab, &stats);
  std::optional<std::ofstream> file;
  if (!a.out.empty()) file = open_output(a.out);
  std::ostream& sink = file ? *file : out;
  for (const auto& ex : examples) sink << format_example(ex, vocab) << '\n';
  fmt::print(err, "pairs {} -> examples {} (skipped empty {}, too long {}, blank lines {})\n", stats.pairs_seen,
             examples.size(), stats.skipped_empty, stats.dropped_too_long, corpus.skipped_blank);
  return kExitOk;
}

// train -------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  Overrides overrides;
  bool resume = false;
};

int cmd_train(const TrainArgs& a, std::ostream&, std::ostream& err) {
  const RunConfig cfg = resolve(a.config, a.overrides);
  require(cfg.src, "paths.src (--src)");
  require(cfg.tgt, "paths.tgt (--tgt)");
  require(cfg.vocab, "paths.vocab (--vocab)");
  require(cfg.checkpoint, "paths.checkpoint (--checkpoint)");

  const std::string effective = cfg.to_ini();
  fmt::print(err, "effective config:\n{}\n", effective);

  const auto vocab = SharedVocabulary::load(cfg.vocab);
  const auto corpus = load_parallel(cfg.src, cfg.tgt);

  std::optional<ResumeState> resume;
  if (a.resume) {
    auto ck = load_checkpoint(cfg.checkpoint);
    if (ck.vocab_fingerprint != vocab.fingerprint()) throw ConfigError("checkpoint was trained with another vocabulary");
    if (!ck.optimizer) throw ConfigError("checkpoint has no optimizer state to resume from");
    resume = ResumeState{std::move(ck.params), std::move(*ck.optimizer)};
  }

  auto ini_path = cfg.checkpoint;
  ini_path += ".ini";
  open_output(ini_path) << effective;

  auto metrics_path = cfg.metrics;
  if (metrics_path.empty()) {
    metrics_path = cfg.checkpoint;
    metrics_path += ".metrics.tsv";
  }
  auto metrics = open_output(metrics_path);

  TrainOutputs outputs;
  outputs.checkpoint = cfg.checkpoint;
  outputs.metrics = &metrics;
  const auto start = std::chrono::steady_clock::now();
  outputs.on_step = [&](const MetricsRecord& r) {
    if (r.step % 100 == 0 || r.step == cfg.train.max_steps) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      fmt::print(err, "step {} lr {:.3e} loss {:.4f} ({:.0f}s)\n", r.step, r.lr, r.loss_total, secs);
    }
  };
  const auto result = train(cfg.train, cfg.sharing, cfg.hyper, corpus.pairs, vocab, outputs, std::move(resume));
  fmt::print(err, "trained {} steps on {} pairs; checkpoint {}\n", result.optimizer.step,
             result.augment_stats.pairs_seen, cfg.checkpoint.string());
  return kExitOk;
}

// translate ---------------------------------------------------------------

struct TranslateArgs {
  std::string config, input, output, task = "s2t";
  Overrides overrides;
  bool verbose = false;
};

int cmd_translate(const TranslateArgs& a, std::ostream& out, std::ostream&) {
  const RunConfig cfg = resolve(a.config, a.overrides);
  require(cfg.checkpoint, "paths.checkpoint (--checkpoint)");
  require(cfg.vocab, "paths.vocab (--vocab)");
  if (a.task != "s2t" && a.task != "t2s") throw ConfigError("--task must be s2t or t2s");
  const Task task = a.task == "s2t" ? Task::S2T : Task::T2S;

  const auto vocab = SharedVocabulary::load(cfg.vocab);
  const auto ck = load_checkpoint(cfg.checkpoint);
  if (ck.vocab_fingerprint != vocab.fingerprint() || ck.params.hyper().vocab_size != vocab.shared_rows()) {
    throw ConfigError(fmt::format("vocabulary {} does not match checkpoint {}", cfg.vocab.string(),
                                  cfg.checkpoint.string()));
  }

  std::optional<std::ofstream> file;
  if (!a.output.empty()) file = open_output(a.output);
  std::ostream& sink = file ? *file : out;

  const std::size_t payload_limit = ck.params.hyper().max_len - 1;
  for (const auto& tokens : read_token_lines(a.input)) {
    DecodeRequest req;
    req.source_ids.push_back(task_label(task));
    const auto ids = vocab.to_ids(input_side(task), tokens);
    req.source_ids.insert(req.source_ids.end(), ids.begin(),
                          ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), payload_limit)));
    req.mode = cfg.decode_mode;
    req.beam = cfg.beam;
    req.alpha = cfg.alpha;
    req.max_len = cfg.decode_max_len;
    req.joint_terms = cfg.joint_terms;
    const auto t = translate(ck.params, req);
    const auto words = join(vocab.to_tokens(output_side(task), t.payload));
    if (a.verbose) {
      sink << t.direction << '\t' << fmt::format("{:.6f}", t.score) << '\t' << words << '\n';
    } else {
      sink << words << '\n';
    }
  }
  return kExitOk;
}

// bleu / report -----------------------------------------------------------

struct BleuArgs {
  std::string hyp;
  std::vector<std::string> refs;
  bool json = false;
};

std::vector<std::vector<TokenSeq>> load_references(const std::vector<std::string>& files, std::size_t expected) {
  std::vector<std::vector<TokenSeq>> refs(expected);
  for (const auto& f : files) {
    const auto lines = read_token_lines(f);
    if (lines.size() != expected) {
      throw InputError(fmt::format("{} has {} lines, hypotheses have {}", f, lines.size(), expected));
    }
    for (std::size_t i = 0; i < expected; ++i) refs[i].push_back(lines[i]);
  }
  return refs;
}

int cmd_bleu(const BleuArgs& a, std::ostream& out, std::ostream&) {
  const auto hyps = read_token_lines(a.hyp);
  const auto refs = load_references(a.refs, hyps.size());
  EvalReport report;
  report.bleu = corpus_bleu(hyps, refs);
  out << (a.json ? report.to_json() + "\n" : report.to_text());
  return kExitOk;
}

struct ReportArgs {
  std::string hyp, src, directions;
  std::vector<std::string> refs;
  std::size_t bucket_width = 0;
  bool json = false;
};

int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream&) {
  const auto hyps = read_token_lines(a.hyp);
  const auto refs = load_references(a.refs, hyps.size());
  EvalReport report;
  report.bleu = corpus_bleu(hyps, refs);
  if (a.bucket_width > 0) {
    if (a.src.empty()) throw ConfigError("--length-buckets needs --src");
    const auto sources = read_token_lines(a.src);
    std::vector<TokenSeq> first_refs;
    for (const auto& r : refs) first_refs.push_back(r.front());
    report.buckets = length_buckets(hyps, first_refs, sources, a.bucket_width);
  }
  if (!a.directions.empty()) {
    const auto lines = read_lines(a.directions);
    report.ratio = direction_ratio(lines);
  }
  out << (a.json ? report.to_json() + "\n" : report.to_text());
  return kExitOk;
}

// params ------------------------------------------------------------------

struct ParamsArgs {
  std::string preset = "big", emit = "table";
  std::vector<std::string> sharing;
  bool all = false;
  std::optional<std::size_t> layers, dim, heads, ffn, vocab_size;
};

int cmd_params(const ParamsArgs& a, std::ostream& out, std::ostream&) {
  if (a.preset != "big") throw ConfigError("unknown preset '" + a.preset + "'");
  HyperParams h = HyperParams::big();
  if (a.layers) h.num_layers = *a.layers;
  if (a.dim) h.model_dim = *a.dim;
  if (a.heads) h.num_heads = *a.heads;
  if (a.ffn) h.ffn_dim = *a.ffn;
  if (a.vocab_size) h.vocab_size = *a.vocab_size;
  h.validate();

  std::vector<SharingConfig> configs;
  if (a.all) {
    configs = SharingConfig::all();
  } else if (!a.sharing.empty()) {
    for (const auto& s : a.sharing) configs.push_back(SharingConfig::parse(s));
  } else {
    configs = comparison_configs();
  }
  if (a.emit == "records") {
    out << format_records(configs, h);
  } else if (a.emit == "table") {
    out << format_table(table_rows(configs, h));
  } else {
    throw ConfigError("--emit must be table or records");
  }
  return kExitOk;
}

void add_model_flags(CLI::App* sub, Overrides& o) {
  bind_key(sub, o, "--sharing", "model.sharing", "none | representor | es,eds,ls combination");
  bind_key(sub, o, "--layers", "model.layers", "layers per stack");
  bind_key(sub, o, "--dim", "model.dim", "model dimension");
  bind_key(sub, o, "--heads", "model.heads", "attention heads");
  bind_key(sub, o, "--ffn", "model.ffn", "feed-forward inner dimension");
  bind_key(sub, o, "--max-len", "model.max_len", "longest sequence incl. labels");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weight-shared bidirectional Transformer translation toolkit", "representor"};
  app.require_subcommand(1);

  VocabArgs vocab_args;
  auto* vocab_cmd = app.add_subcommand("build-vocab", "frequency-ranked shared vocabulary");
  vocab_cmd->add_option("--src", vocab_args.src, "source corpus")->required();
  vocab_cmd->add_option("--tgt", vocab_args.tgt, "target corpus")->required();
  vocab_cmd->add_option("--src-size", vocab_args.src_size, "source vocabulary budget")->capture_default_str();
  vocab_cmd->add_option("--tgt-size", vocab_args.tgt_size, "target vocabulary budget")->capture_default_str();
  vocab_cmd->add_option("--out", vocab_args.out, "vocabulary file")->required();

  PrepareArgs prep_args;
  auto* prep_cmd = app.add_subcommand("prepare", "write the augmented directed examples as TSV");
  prep_cmd->add_option("--src", prep_args.src, "source corpus")->required();
  prep_cmd->add_option("--tgt", prep_args.tgt, "target corpus")->required();
  prep_cmd->add_option("--vocab", prep_args.vocab, "vocabulary file")->required();
  prep_cmd->add_option("--objective", prep_args.objective, "baseline | st-ts | lr-rl | cfp")->capture_default_str();
  prep_cmd->add_option("--out", prep_args.out, "output file (default stdout)");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", train_args.config, "INI config file");
  train_cmd->add_flag("--resume", train_args.resume, "continue from the checkpoint's optimizer state");
  {
    auto& o = train_args.overrides;
    bind_key(train_cmd, o, "--src", "paths.src", "source corpus");
    bind_key(train_cmd, o, "--tgt", "paths.tgt", "target corpus");
    bind_key(train_cmd, o, "--vocab", "paths.vocab", "vocabulary file");
    bind_key(train_cmd, o, "--checkpoint", "paths.checkpoint", "checkpoint to write");
    bind_key(train_cmd, o, "--metrics", "paths.metrics", "metrics TSV (default <checkpoint>.metrics.tsv)");
    bind_key(train_cmd, o, "--objective", "train.objective", "baseline | st-ts | lr-rl | cfp");
    bind_key(train_cmd, o, "--seed", "train.seed", "random seed");
    bind_key(train_cmd, o, "--steps", "train.steps", "optimizer steps");
    bind_key(train_cmd, o, "--warmup", "train.warmup", "warmup steps");
    bind_key(train_cmd, o, "--lr-scale", "train.lr_scale", "learning-rate multiplier");
    bind_key(train_cmd, o, "--batch-size", "train.batch_size", "examples per batch");
    bind_key(train_cmd, o, "--label-smoothing", "train.label_smoothing", "label smoothing");
    bind_key(train_cmd, o, "--dropout", "train.dropout", "dropout rate");
    bind_key(train_cmd, o, "--clip-norm", "train.clip_norm", "gradient norm limit (0: off)");
    bind_key(train_cmd, o, "--checkpoint-every", "train.checkpoint_every", "steps between checkpoints");
    bind_key(train_cmd, o, "--log-every", "train.log_every", "steps between metric rows");
    add_model_flags(train_cmd, o);
  }

  TranslateArgs tr_args;
  auto* tr_cmd = app.add_subcommand("translate", "decode one sentence per input line");
  tr_cmd->add_option("--config", tr_args.config, "INI config file");
  tr_cmd->add_option("--input", tr_args.input, "tokenized input")->required();
  tr_cmd->add_option("--output", tr_args.output, "output file (default stdout)");
  tr_cmd->add_option("--task", tr_args.task, "s2t | t2s")->capture_default_str();
  tr_cmd->add_flag("--verbose", tr_args.verbose, "prefix direction and score columns");
  {
    auto& o = tr_args.overrides;
    bind_key(tr_cmd, o, "--checkpoint", "paths.checkpoint", "model checkpoint");
    bind_key(tr_cmd, o, "--vocab", "paths.vocab", "vocabulary file");
    bind_key(tr_cmd, o, "--mode", "decode.mode", "l2r | r2l | mixed | joint");
    bind_key(tr_cmd, o, "--beam", "decode.beam", "beam size");
    bind_key(tr_cmd, o, "--alpha", "decode.alpha", "length-penalty exponent");
    bind_key(tr_cmd, o, "--decode-max-len", "decode.max_len", "decoding step limit (0: automatic)");
    bind_key(tr_cmd, o, "--joint-terms", "decode.joint_terms", "2 or 4 rerank terms");
  }

  BleuArgs bleu_args;
  auto* bleu_cmd = app.add_subcommand("bleu", "corpus BLEU");
  bleu_cmd->add_option("--hyp", bleu_args.hyp, "hypotheses")->required();
  bleu_cmd->add_option("--ref", bleu_args.refs, "reference file(s)")->required();
  bleu_cmd->add_flag("--json", bleu_args.json, "emit JSON");

  ReportArgs rep_args;
  auto* rep_cmd = app.add_subcommand("report", "BLEU with direction shares and length buckets");
  rep_cmd->add_option("--hyp", rep_args.hyp, "hypotheses")->required();
  rep_cmd->add_option("--ref", rep_args.refs, "reference file(s)")->required();
  rep_cmd->add_option("--src", rep_args.src, "sources, for length buckets");
  rep_cmd->add_option("--length-buckets", rep_args.bucket_width, "bucket width in source tokens");
  rep_cmd->add_option("--directions", rep_args.directions, "verbose translate output");
  rep_cmd->add_flag("--json", rep_args.json, "emit JSON");

  ParamsArgs par_args;
  auto* par_cmd = app.add_subcommand("params", "analytic parameter counts per sharing configuration");
  par_cmd->add_option("--preset", par_args.preset, "hyperparameter preset")->capture_default_str();
  par_cmd->add_option("--sharing", par_args.sharing, "configurations to list (repeatable)");
  par_cmd->add_flag("--all", par_args.all, "all eight configurations");
  par_cmd->add_option("--emit", par_args.emit, "table | records")->capture_default_str();
  par_cmd->add_option("--layers", par_args.layers, "override layers");
  par_cmd->add_option("--dim", par_args.dim, "override model dimension");
  par_cmd->add_option("--heads", par_args.heads, "override heads");
  par_cmd->add_option("--ffn", par_args.ffn, "override ffn dimension");
  par_cmd->add_option("--vocab-size", par_args.vocab_size, "override embedding rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*vocab_cmd) return cmd_build_vocab(vocab_args, out, err);
    if (*prep_cmd) return cmd_prepare(prep_args, out, err);
    if (*train_cmd) return cmd_train(train_args, out, err);
    if (*tr_cmd) return cmd_translate(tr_args, out, err);
    if (*bleu_cmd) return cmd_bleu(bleu_args, out, err);
    if (*rep_cmd) return cmd_report(rep_args, out, err);
    if (*par_cmd) return cmd_params(par_args, out, err);
  } catch (const NumericError& e) {
    fmt::print(err, "numeric error: {}\n", e.what());
    return kExitNumeric;
  } catch (const InvariantError& e) {
    fmt::print(err, "internal error: {}\n", e.what());
    return kExitInternal;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace representor::cli
