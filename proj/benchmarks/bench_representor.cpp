#include <random>

#include <benchmark/benchmark.h>

#include "representor/decoding.hpp"
#include "representor/param_count.hpp"
#include "representor/training.hpp"

using namespace representor;

namespace {

ad::Tensor random_tensor(const ad::Shape& shape, unsigned seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return ad::Tensor::from_values(shape, std::move(v), grad);
}

HyperParams bench_hyper(std::size_t rows) {
  HyperParams h;
  h.num_layers = 2;
  h.model_dim = 64;
  h.num_heads = 4;
  h.ffn_dim = 256;
  h.vocab_size = rows;
  h.max_len = 64;
  return h;
}

SharedVocabulary bench_vocab() {
  std::vector<std::string> src, tgt;
  for (int i = 0; i < 50; ++i) {
    src.push_back("s" + std::to_string(i));
    tgt.push_back("t" + std::to_string(i));
  }
  return SharedVocabulary::build(src, tgt);
}

std::vector<SentencePair> bench_pairs(std::size_t n) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> sym(0, 49), len(3, 12);
  std::vector<SentencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    SentencePair p;
    for (int k = len(rng); k > 0; --k) {
      const int s = sym(rng);
      p.source.push_back("s" + std::to_string(s));
      p.target.push_back("t" + std::to_string((s * 7) % 50));
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

static void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1, true);
  auto b = random_tensor({n, n}, 2, true);
  for (auto _ : state) {
    auto y = ad::sum(ad::matmul(a, b));
    ad::backward(y);
    benchmark::DoNotOptimize(a.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(64)->Arg(128)->Arg(256);

static void BM_TrainStep(benchmark::State& state) {
  const auto vocab = bench_vocab();
  const auto examples = augment_corpus(bench_pairs(16), Objective::Cfp, vocab);
  const auto batch = collate(examples);
  auto params = init_params(SharingConfig::representor(), bench_hyper(vocab.shared_rows()), 1);
  OptimizerState opt;
  for (auto _ : state) {
    auto loss = objective_loss(params, batch, Objective::Cfp, 0.1);
    ad::backward(loss.total);
    adam_step(params, opt, 1e-4);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_BeamSearch(benchmark::State& state) {
  const auto vocab = bench_vocab();
  const auto params = init_params(SharingConfig::representor(), bench_hyper(vocab.shared_rows()), 2);
  const auto pair = bench_pairs(1).front();
  DecodeRequest r;
  r.source_ids = {special::kS2T};
  for (auto id : vocab.to_ids(Side::Source, pair.source)) r.source_ids.push_back(id);
  r.mode = static_cast<DecodeMode>(state.range(0));
  r.beam = static_cast<std::size_t>(state.range(1));
  r.max_len = 16;
  for (auto _ : state) benchmark::DoNotOptimize(translate(params, r));
}
BENCHMARK(BM_BeamSearch)
    ->Args({static_cast<int>(DecodeMode::L2R), 1})
    ->Args({static_cast<int>(DecodeMode::L2R), 4})
    ->Args({static_cast<int>(DecodeMode::Mixed), 4})
    ->Args({static_cast<int>(DecodeMode::Joint), 4})
    ->Unit(benchmark::kMillisecond);

static void BM_ParamCountBig(benchmark::State& state) {
  const auto h = HyperParams::big();
  const auto configs = SharingConfig::all();
  for (auto _ : state) benchmark::DoNotOptimize(table_rows(configs, h));
}
BENCHMARK(BM_ParamCountBig);

BENCHMARK_MAIN();
