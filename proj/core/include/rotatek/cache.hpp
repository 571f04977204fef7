#pragma once

// Compressed KV-cache data model and the prefill pipeline.
//
// Visual keys are stored rotated and truncated to k channels; visual values
// and the prompt/text segment keep the full head dimension. Rotation math is
// done in double precision and the single downcast to the storage type
// happens after K·R_k.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rotatek/linalg.hpp"
#include "rotatek/rotation.hpp"

namespace rotatek {

struct SequenceLayout {
  std::size_t n_visual = 0;  // visual tokens before token pruning
  std::size_t n_text = 0;    // prompt + text tokens, never compressed
  std::size_t head_dim = 1;
  std::size_t heads_q = 1;
  std::size_t heads_kv = 1;

  void validate() const;
  std::size_t group_size() const noexcept { return heads_q / heads_kv; }
  // GQA mapping h_kv = ⌊h / (H_q / H_kv)⌋.
  std::size_t kv_head_for(std::size_t q_head) const;
};

template <typename T>
struct HeadCache {
  BasicMatrix<T> visual_keys_rot;  // N×k
  BasicMatrix<T> visual_values;    // N×d
  BasicMatrix<T> text_keys;        // S_full×d
  BasicMatrix<T> text_values;      // S_full×d
  RotationState rotation;
  bool rank_exceeds_tokens = false;
};

template <typename T>
struct BasicCompressedCache {
  SequenceLayout layout;
  std::size_t layer = 0;
  std::size_t n_kept = 0;  // surviving visual tokens
  std::vector<HeadCache<T>> heads;  // one per kv head

  std::size_t rank() const noexcept { return heads.empty() ? 0 : heads.front().rotation.rank(); }
};

using CompressedCache = BasicCompressedCache<float>;
using CompressedCacheF64 = BasicCompressedCache<double>;

// Prefill activations for one layer.
template <typename T>
struct PrefillInputs {
  std::vector<BasicMatrix<T>> visual_keys;    // per kv head, n_visual×d
  std::vector<BasicMatrix<T>> visual_values;  // per kv head, n_visual×d
  std::vector<BasicMatrix<T>> text_keys;      // per kv head, n_text×d
  std::vector<BasicMatrix<T>> text_values;    // per kv head, n_text×d
  // Per query head, W×d. Windows of the query heads sharing a kv head are
  // pooled (stacked) before computing channel weights.
  std::vector<BasicMatrix<T>> query_windows;
};

// Mask keeping every one of `n` visual tokens.
std::vector<std::uint8_t> keep_all(std::size_t n);

template <typename T>
BasicCompressedCache<T> prefill_compress(const PrefillInputs<T>& inputs,
                                         std::span<const std::uint8_t> token_mask,
                                         const SubspaceConfig& cfg, const SequenceLayout& layout,
                                         std::size_t layer = 0);

struct BudgetReport {
  double token_keep = 1.0;
  double channel_keep = 1.0;
  double visual_cache_multiplier = 1.0;  // token_keep · (1 + channel_keep) / 2

  // Multiplier rounded half-up to two decimals, for display only.
  double display_multiplier() const noexcept;
  std::string display() const;
};

BudgetReport budget(double token_keep, double channel_keep);

struct CacheBytes {
  std::size_t visual_keys = 0;
  std::size_t visual_values = 0;
  std::size_t text_keys = 0;
  std::size_t text_values = 0;
  std::size_t rotation = 0;  // R_k, μ, δμ in double precision; not part of `total`
  std::size_t total = 0;     // the four KV segments
  // Same tokens, no channel pruning.
  std::size_t uncompressed = 0;
  // No token and no channel pruning.
  std::size_t baseline = 0;
};

template <typename T>
CacheBytes cache_bytes(const BasicCompressedCache<T>& cache);

}  // namespace rotatek
