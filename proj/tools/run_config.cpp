#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "representor/errors.hpp"

namespace representor::cli {

namespace {

template <typename T>
T parse_number(std::string_view key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, value));
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <typename T>
Field number(T RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view k, const std::string& v) { c.*member = parse_number<T>(k, v); },
          [member](const RunConfig& c) { return fmt::format("{}", c.*member); }};
}

template <typename T, typename S>
Field nested(S RunConfig::*outer, T S::*inner) {
  return {[=](RunConfig& c, std::string_view k, const std::string& v) { (c.*outer).*inner = parse_number<T>(k, v); },
          [=](const RunConfig& c) { return fmt::format("{}", (c.*outer).*inner); }};
}

Field path(std::filesystem::path RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return (c.*member).string(); }};
}

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = {
      {"paths.src", path(&RunConfig::src)},
      {"paths.tgt", path(&RunConfig::tgt)},
      {"paths.vocab", path(&RunConfig::vocab)},
      {"paths.checkpoint", path(&RunConfig::checkpoint)},
      {"paths.metrics", path(&RunConfig::metrics)},
      {"model.sharing",
       {[](RunConfig& c, std::string_view, const std::string& v) { c.sharing = SharingConfig::parse(v); },
        [](const RunConfig& c) { return c.sharing.key(); }}},
      {"model.layers", nested(&RunConfig::hyper, &HyperParams::num_layers)},
      {"model.dim", nested(&RunConfig::hyper, &HyperParams::model_dim)},
      {"model.heads", nested(&RunConfig::hyper, &HyperParams::num_heads)},
      {"model.ffn", nested(&RunConfig::hyper, &HyperParams::ffn_dim)},
      {"model.max_len", nested(&RunConfig::hyper, &HyperParams::max_len)},
      {"train.objective",
       {[](RunConfig& c, std::string_view, const std::string& v) { c.train.objective = parse_objective(v); },
        [](const RunConfig& c) { return std::string(objective_name(c.train.objective)); }}},
      {"train.warmup", nested(&RunConfig::train, &TrainConfig::warmup_steps)},
      {"train.lr_scale", nested(&RunConfig::train, &TrainConfig::lr_scale)},
      {"train.label_smoothing", nested(&RunConfig::train, &TrainConfig::label_smoothing)},
      {"train.batch_size", nested(&RunConfig::train, &TrainConfig::batch_size)},
      {"train.steps", nested(&RunConfig::train, &TrainConfig::max_steps)},
      {"train.seed", nested(&RunConfig::train, &TrainConfig::seed)},
      {"train.checkpoint_every", nested(&RunConfig::train, &TrainConfig::checkpoint_every)},
      {"train.log_every", nested(&RunConfig::train, &TrainConfig::log_every)},
      {"train.dropout", nested(&RunConfig::train, &TrainConfig::dropout)},
      {"train.clip_norm", nested(&RunConfig::train, &TrainConfig::clip_norm)},
      {"train.adam_beta1",
       {[](RunConfig& c, std::string_view k, const std::string& v) { c.train.adam.beta1 = parse_number<double>(k, v); },
        [](const RunConfig& c) { return fmt::format("{}", c.train.adam.beta1); }}},
      {"train.adam_beta2",
       {[](RunConfig& c, std::string_view k, const std::string& v) { c.train.adam.beta2 = parse_number<double>(k, v); },
        [](const RunConfig& c) { return fmt::format("{}", c.train.adam.beta2); }}},
      {"train.adam_eps",
       {[](RunConfig& c, std::string_view k, const std::string& v) { c.train.adam.eps = parse_number<double>(k, v); },
        [](const RunConfig& c) { return fmt::format("{}", c.train.adam.eps); }}},
      {"decode.mode",
       {[](RunConfig& c, std::string_view, const std::string& v) { c.decode_mode = parse_decode_mode(v); },
        [](const RunConfig& c) { return std::string(mode_name(c.decode_mode)); }}},
      {"decode.beam", number(&RunConfig::beam)},
      {"decode.alpha", number(&RunConfig::alpha)},
      {"decode.max_len", number(&RunConfig::decode_max_len)},
      {"decode.joint_terms", number(&RunConfig::joint_terms)},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return out;
}

void RunConfig::set(std::string_view key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
  it->second.set(*this, key, value);
}

void RunConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}: {}", file.string(), e.message()));
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(fmt::format("{}: key '{}' outside any section", file.string(), section));
    for (const auto& [key, value] : body) set(section + "." + key, value.get_value<std::string>());
  }
}

std::string RunConfig::to_ini() const {
  std::string out;
  std::string current;
  for (const auto& [name, f] : fields()) {
    const auto dot = name.find('.');
    const auto section = name.substr(0, dot);
    if (section != current) {
      out += fmt::format("{}[{}]\n", out.empty() ? "" : "\n", section);
      current = section;
    }
    out += fmt::format("{} = {}\n", name.substr(dot + 1), f.get(*this));
  }
  return out;
}

void RunConfig::validate() const {
  train.validate();
  HyperParams probe = hyper;
  probe.vocab_size = std::max<std::size_t>(probe.vocab_size, special::kCount + 1);
  probe.validate();
  if (beam < 1) throw ConfigError("beam size must be at least 1");
  if (!(alpha >= 0.0)) throw ConfigError("length-penalty alpha must be non-negative");
  if (joint_terms != 2 && joint_terms != 4) throw ConfigError("joint_terms must be 2 or 4");
}

}  // namespace representor::cli
