#include <benchmark/benchmark.h>

#include <random>

#include "rotatek/decode.hpp"

using namespace rotatek;

namespace {

struct Fixture {
  CompressedCache cache;
  Vector query;
};

Fixture make(std::size_t n_visual, std::size_t rank) {
  const SequenceLayout lay{n_visual, 64, 128, 1, 1};
  std::mt19937_64 gen(9);
  std::normal_distribution<float> normal;
  auto fill = [&](std::size_t rows) {
    MatrixF m(rows, 128);
    for (auto& x : m.data()) x = normal(gen);
    return m;
  };
  PrefillInputs<float> in;
  in.visual_keys.push_back(fill(n_visual));
  in.visual_values.push_back(fill(n_visual));
  in.text_keys.push_back(fill(64));
  in.text_values.push_back(fill(64));
  in.query_windows.push_back(fill(32));
  SubspaceConfig cfg;
  cfg.rank_k = rank;
  Fixture f{prefill_compress(in, keep_all(n_visual), cfg, lay), Vector(128)};
  for (auto& x : f.query) x = normal(gen);
  return f;
}

void run(benchmark::State& state, DecodePath path) {
  const auto f = make(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  DecodeConfig cfg;
  cfg.path = path;
  for (auto _ : state) benchmark::DoNotOptimize(attention_output(f.query, f.cache, 0, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_DecodeMonolithic(benchmark::State& state) { run(state, DecodePath::monolithic); }
void BM_DecodeSplitK(benchmark::State& state) { run(state, DecodePath::split_k); }

}  // namespace

BENCHMARK(BM_DecodeMonolithic)->Args({576, 32})->Args({2304, 32})->Args({2304, 128})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DecodeSplitK)->Args({576, 32})->Args({2304, 32})->Args({2304, 128})->Unit(benchmark::kMicrosecond);
