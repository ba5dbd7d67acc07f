#include "representor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "representor/errors.hpp"

namespace representor {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'P', 'R', 'S', 'N', 'T', 'R', '\0'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(std::string_view s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(std::string_view name, const ad::Shape& shape, std::span<const double> values) {
    str(name);
    pod(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) pod(static_cast<std::uint64_t>(d));
    out_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) fail("truncated file");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 24)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) fail("truncated string");
    return s;
  }
  std::pair<ad::Shape, std::vector<double>> tensor(std::string& name) {
    name = str();
    const auto rank = pod<std::uint32_t>();
    if (rank == 0 || rank > 8) fail("implausible tensor rank for " + name);
    ad::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(pod<std::uint64_t>());
    std::vector<double> values(ad::numel(shape));
    in_.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in_) fail("truncated tensor " + name);
    return {std::move(shape), std::move(values)};
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw InputError(fmt::format("checkpoint {}: {}", source_, what));
  }

 private:
  std::istream& in_;
  std::string source_;
};

std::string header_text(const ParamStore& params, std::uint64_t fingerprint, std::uint64_t step) {
  const auto& s = params.sharing();
  const auto& h = params.hyper();
  return fmt::format(
      "embedding_sharing={}\nencoder_decoder_sharing={}\nlayer_sharing={}\n"
      "num_layers={}\nmodel_dim={}\nnum_heads={}\nffn_dim={}\nvocab_size={}\nmax_len={}\n"
      "vocab_fingerprint={:016x}\nstep={}\n",
      int(s.embedding_sharing), int(s.encoder_decoder_sharing), int(s.layer_sharing), h.num_layers, h.model_dim,
      h.num_heads, h.ffn_dim, h.vocab_size, h.max_len, fingerprint, step);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, std::uint64_t vocab_fingerprint,
                     const OptimizerState* optimizer) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint " + tmp.string());
    Writer w(out);
    out.write(kMagic, sizeof kMagic);
    w.pod(kCheckpointVersion);
    w.str(header_text(params, vocab_fingerprint, optimizer ? optimizer->step : 0));
    w.pod(static_cast<std::uint32_t>(params.logical_names().size()));
    for (const auto& name : params.logical_names()) {
      w.str(name);
      w.str(params.physical_name(name));
    }
    w.pod(static_cast<std::uint32_t>(params.physical().size()));
    for (const auto& [name, t] : params.physical()) w.tensor(name, t.shape(), t.values());
    w.pod(static_cast<std::uint8_t>(optimizer != nullptr));
    if (optimizer) {
      for (const auto& [name, t] : params.physical()) {
        const auto m = optimizer->first_moment.find(name);
        const auto v = optimizer->second_moment.find(name);
        const std::vector<double> zeros(t.size(), 0.0);
        w.tensor("m/" + name, t.shape(), m != optimizer->first_moment.end() ? m->second : zeros);
        w.tensor("v/" + name, t.shape(), v != optimizer->second_moment.end() ? v->second : zeros);
      }
    }
    out.flush();
    if (!out) throw InputError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a representor checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail(fmt::format("unsupported format version {}", version));

  std::map<std::string, std::string> header;
  {
    std::istringstream hs(r.str());
    for (std::string line; std::getline(hs, line);) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) r.fail("malformed header line '" + line + "'");
      header[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto field = [&](const std::string& key) -> const std::string& {
    const auto it = header.find(key);
    if (it == header.end()) r.fail("header lacks " + key);
    return it->second;
  };
  auto number = [&](const std::string& key, int base = 10) {
    try {
      return static_cast<std::uint64_t>(std::stoull(field(key), nullptr, base));
    } catch (const std::exception&) {
      r.fail("bad header value for " + key);
    }
  };

  SharingConfig sharing{number("embedding_sharing") != 0, number("encoder_decoder_sharing") != 0,
                        number("layer_sharing") != 0};
  HyperParams hyper{number("num_layers"), number("model_dim"), number("num_heads"),
                    number("ffn_dim"),    number("vocab_size"), number("max_len")};
  Checkpoint ck;
  try {
    ck.params = ParamStore(sharing, hyper);
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  ck.vocab_fingerprint = number("vocab_fingerprint", 16);

  const auto n_tying = r.pod<std::uint32_t>();
  if (n_tying != ck.params.logical_names().size()) r.fail("tying map size disagrees with hyperparameters");
  for (std::uint32_t i = 0; i < n_tying; ++i) {
    const auto logical = r.str();
    const auto phys = r.str();
    if (ck.params.physical_name(logical) != phys) {
      r.fail(fmt::format("tying entry {} -> {} disagrees with sharing {}", logical, phys, sharing.key()));
    }
  }

  auto fill = [&](std::map<std::string, ad::Tensor>& dst, const std::string& name, const ad::Shape& shape,
                  std::vector<double> values) {
    const auto it = dst.find(name);
    if (it == dst.end()) r.fail("unexpected tensor " + name);
    if (it->second.shape() != shape) r.fail("shape mismatch for " + name);
    std::copy(values.begin(), values.end(), it->second.mutable_values().begin());
  };

  const auto n_tensors = r.pod<std::uint32_t>();
  if (n_tensors != ck.params.physical().size()) r.fail("tensor count disagrees with tying map");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name;
    auto [shape, values] = r.tensor(name);
    fill(ck.params.physical(), name, shape, std::move(values));
  }

  if (r.pod<std::uint8_t>() != 0) {
    OptimizerState state;
    state.step = number("step");
    for (std::size_t i = 0; i < 2 * ck.params.physical().size(); ++i) {
      std::string name;
      auto [shape, values] = r.tensor(name);
      if (name.size() < 3 || name[1] != '/') r.fail("malformed moment name " + name);
      const std::string phys = name.substr(2);
      const auto it = ck.params.physical().find(phys);
      if (it == ck.params.physical().end() || it->second.shape() != shape) r.fail("moment mismatch for " + name);
      (name[0] == 'm' ? state.first_moment : state.second_moment)[phys] = std::move(values);
    }
    ck.optimizer = std::move(state);
  }
  r.expect_end();
  return ck;
}

}  // namespace representor
