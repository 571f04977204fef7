#include <benchmark/benchmark.h>

#include <random>

#include "rotatek/rotation.hpp"

using namespace rotatek;

namespace {

Matrix covariance(std::size_t d) {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> normal;
  Matrix keys(4 * d, d);
  for (std::size_t r = 0; r < keys.rows(); ++r)
    for (std::size_t j = 0; j < d; ++j) keys(r, j) = normal(gen) / (1.0 + static_cast<double>(j));
  return centered_covariance(keys).covariance;
}

void BM_SubspaceIteration(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  const Matrix c = covariance(d);
  SubspaceConfig cfg;
  cfg.rank_k = d / 4;
  for (auto _ : state) benchmark::DoNotOptimize(subspace_iterate(c, cfg));
}

void BM_FullEigh(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  const Matrix c = covariance(d);
  for (auto _ : state) benchmark::DoNotOptimize(eigh_full(c));
}

void BM_BuildRotation(benchmark::State& state) {
  const std::size_t d = 128;
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 gen(8);
  std::normal_distribution<double> normal;
  Matrix keys(n, d), window(32, d);
  for (auto& x : keys.data()) x = normal(gen);
  for (auto& x : window.data()) x = normal(gen);
  SubspaceConfig cfg;
  cfg.rank_k = 32;
  for (auto _ : state) benchmark::DoNotOptimize(build_rotation(keys, window, cfg));
}

}  // namespace

BENCHMARK(BM_SubspaceIteration)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_FullEigh)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_BuildRotation)->Arg(576)->Arg(2304)->Unit(benchmark::kMicrosecond);
