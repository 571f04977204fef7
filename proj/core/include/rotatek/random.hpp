#pragma once

#include <cstdint>
#include <random>

#include "rotatek/linalg.hpp"

namespace rotatek {

// Counter-based seed derivation: a stable 64-bit hash of (seed, a, b) so that
// every (layer, head) stream is independent of evaluation order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept;

// Portable Gaussian and uniform draws. std::normal_distribution is
// implementation-defined, so the transforms live here.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 bits of mantissa.
  double uniform();
  double normal();
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix standard_normal_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed);

}  // namespace rotatek
