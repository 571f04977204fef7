#pragma once

// Comparator channel-pruning strategies. These are stand-ins written for
// comparison ("ThinK-style" head-wise selection, "SparK-style" token-wise
// selection); they are not reimplementations of those methods' published
// scoring functions.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rotatek/linalg.hpp"
#include "rotatek/rotation.hpp"

namespace rotatek {

enum class MaskKind { head_wise, token_wise };

struct ChannelMask {
  MaskKind kind = MaskKind::head_wise;
  std::size_t head_dim = 0;
  std::size_t keep_count = 0;
  std::vector<std::uint8_t> head_wise_keep;    // length d (head_wise)
  BasicMatrix<std::uint8_t> token_wise_keep;   // N×d (token_wise)

  // Mask storage per head: d bits head-wise, N·d bits token-wise.
  std::size_t mask_bits() const noexcept;
  // Kept channel indices in ascending order (head_wise only).
  std::vector<std::size_t> kept_channels() const;
};

// ThinK-style: saliency_j = σ_j·‖K_{:,j}‖₂, keep the top k, ties to the lower
// channel index.
ChannelMask headwise_select(const Matrix& keys, const QueryWeights& weights, std::size_t k);

struct TokenwiseSelection {
  ChannelMask mask;
  Matrix reconstructed;  // pruned entries zeroed or replaced by the channel mean
};

// SparK-style: per token keep the k largest-magnitude channels.
TokenwiseSelection tokenwise_select(const Matrix& keys, std::size_t k, bool interpolate_mean);

struct SubsetSearch {
  std::vector<std::size_t> channels;  // best coordinate subset, ascending
  double error = 0.0;                 // ‖K_c − K_c Π_S‖_F²
};

// Exhaustive search over all C(d, k) coordinate subsets of the centered keys.
// Guarded to d ≤ 16.
SubsetSearch exhaustive_subset_error(const Matrix& keys, std::size_t k);

// Scores q·K_Sᵀ/√d using only the channels a head-wise mask keeps.
Vector headwise_scores(std::span<const double> q, const Matrix& keys, const ChannelMask& mask);

}  // namespace rotatek
