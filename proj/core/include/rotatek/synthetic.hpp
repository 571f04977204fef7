#pragma once

// Synthetic key/query/value generator reproducing the structures that make
// key-channel importance token dependent: a planted low-rank subspace under a
// random orthogonal mixing, RoPE-like rotating channel pairs, and a few
// high-magnitude outlier channels.
//
// Channel layout of a head of width d:
//   [0, 2p)           p rotating pairs, pair i turns by θ_n = n·ω_i,
//                     ω_i = rope_base_frequency^(−i/p)
//   [2p, 2p+o)        outlier channels scaled by outlier_gain
//   [2p+o, d)         rank-r planted subspace mixed by a random orthonormal map
// plus isotropic N(0, noise_sigma²) noise on every channel.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rotatek/linalg.hpp"

namespace rotatek {

struct SyntheticSpec {
  std::size_t n_tokens = 640;
  std::size_t head_dim = 64;
  std::size_t planted_rank = 8;
  std::size_t outlier_channels = 2;
  double outlier_gain = 8.0;
  std::size_t rope_pairs = 4;
  double rope_base_frequency = 10000.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  // Throws ConfigError when planted_rank + 2·rope_pairs + outlier_channels > head_dim.
  void validate() const;
};

struct SyntheticHead {
  Matrix keys;     // n_tokens×d
  Matrix queries;  // n_tokens×d
  Matrix values;   // n_tokens×d
};

SyntheticHead gen_synthetic(const SyntheticSpec& spec);

// Query matrices for `count` query heads that share the keys' planted
// structure. Entry 0 equals gen_synthetic(spec).queries.
std::vector<Matrix> gen_synthetic_queries(const SyntheticSpec& spec, std::size_t count);

}  // namespace rotatek
