#pragma once

// Single-step decode against a compressed cache. Two evaluation paths are
// provided: a monolithic softmax over all scores and a split-K reference that
// mirrors the two-phase kernel (sparse visual partials, then the dense text
// segment folded together with an online-softmax merge).

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "rotatek/cache.hpp"
#include "rotatek/linalg.hpp"

namespace rotatek {

enum class DecodePath { monolithic, split_k };

std::string_view to_string(DecodePath path) noexcept;
DecodePath parse_decode_path(std::string_view text);

struct DecodeConfig {
  std::size_t block_n = 64;
  std::size_t max_splits = 64;
  DecodePath path = DecodePath::split_k;

  void validate() const;
};

// Normalization guard in acc / (ℓ + ε): zero for the double-precision
// reference so normalization bugs are not masked.
template <typename T>
inline constexpr double division_epsilon = 0.0;
template <>
inline constexpr double division_epsilon<float> = 1e-20;

// Running (m, ℓ, acc) state of an online softmax. An empty partial has
// ℓ = 0, acc = 0 and carries the lowest finite score as its maximum.
struct SoftmaxPartial {
  double m = std::numeric_limits<double>::lowest();
  double l = 0.0;
  Vector acc;
  bool empty = true;

  static SoftmaxPartial empty_of(std::size_t dim) {
    SoftmaxPartial p;
    p.acc.assign(dim, 0.0);
    return p;
  }

  // Folds one (score, value row) pair into the running state.
  template <typename T>
  void push(double score, std::span<const T> value);
};

template <typename T>
void SoftmaxPartial::push(double score, std::span<const T> value) {
  if (empty) {
    m = score;
    l = 1.0;
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] = static_cast<double>(value[j]);
    empty = false;
    return;
  }
  if (score > m) {
    const double scale = std::exp(m - score);
    l = l * scale + 1.0;
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] = acc[j] * scale + static_cast<double>(value[j]);
    m = score;
  } else {
    const double w = std::exp(score - m);
    l += w;
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * static_cast<double>(value[j]);
  }
}

// m' = max mᵢ, ℓ' = Σ ℓᵢ·e^{mᵢ−m'}, acc' = Σ accᵢ·e^{mᵢ−m'}. Empty partials are
// neutral. Throws EmptyInputError for an empty list.
SoftmaxPartial merge_partials(std::span<const SoftmaxPartial> parts);

// acc / (ℓ + ε).
Vector finalize(const SoftmaxPartial& p, double eps);

// N_s = max(1, min(⌈S_v / block_n⌉, max_splits)).
std::size_t split_factor(std::size_t s_v, const DecodeConfig& cfg);

// Contiguous [begin, end) token ranges for the visual splits. Blocks of
// block_n tokens (last one ragged); when the split cap binds, each split
// takes ⌈S_v / N_s⌉ tokens instead.
std::vector<std::pair<std::size_t, std::size_t>> split_ranges(std::size_t s_v, const DecodeConfig& cfg);

// Max-subtracted softmax.
Vector softmax(std::span<const double> scores);

// Visual scores (q̃·K̃ᵀ + qᵀδμ)/√d followed by text scores q·K_ptᵀ/√d.
template <typename T>
Vector decode_scores(std::span<const double> q, const BasicCompressedCache<T>& cache, std::size_t q_head);

// Phase 1: one partial per visual split. The rotated query and the bias are
// recomputed inside every split, as the fused kernel does.
template <typename T>
std::vector<SoftmaxPartial> sparse_partials(std::span<const double> q, const BasicCompressedCache<T>& cache,
                                            std::size_t q_head, const DecodeConfig& cfg);

// Phase 2 input: full-channel partial over the prompt/text segment.
template <typename T>
SoftmaxPartial dense_partial(std::span<const double> q, const BasicCompressedCache<T>& cache,
                             std::size_t q_head);

template <typename T>
Vector attention_output(std::span<const double> q, const BasicCompressedCache<T>& cache, std::size_t q_head,
                        const DecodeConfig& cfg);

// One query per query head; returns one output per query head.
template <typename T>
std::vector<Vector> decode_batch(const std::vector<Vector>& queries, const BasicCompressedCache<T>& cache,
                                 const DecodeConfig& cfg);

}  // namespace rotatek
