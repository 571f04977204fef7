#include "rotatek/cache.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <type_traits>

namespace rotatek {
namespace {

template <typename T>
Matrix to_double(const BasicMatrix<T>& m) {
  if constexpr (std::is_same_v<T, double>) {
    return m;
  } else {
    return matrix_cast<double>(m);
  }
}

template <typename T>
BasicMatrix<T> from_double(const Matrix& m) {
  if constexpr (std::is_same_v<T, double>) {
    return m;
  } else {
    return matrix_cast<T>(m);
  }
}

template <typename T>
BasicMatrix<T> select_rows(const BasicMatrix<T>& m, std::span<const std::uint8_t> mask,
                           std::size_t kept) {
  BasicMatrix<T> out(kept, m.cols());
  std::size_t r = 0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (!mask[i]) continue;
    auto src = m.row(i);
    std::copy(src.begin(), src.end(), out.row(r++).begin());
  }
  return out;
}

template <typename T>
void check_shape(const BasicMatrix<T>& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError("cache", what + " is " + std::to_string(m.rows()) + "x" +
                                      std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                                      "x" + std::to_string(cols));
  }
}

}  // namespace

void SequenceLayout::validate() const {
  if (head_dim < 1) throw ConfigError("cache", "head_dim must be >= 1");
  if (heads_kv < 1 || heads_q < 1) throw ConfigError("cache", "head counts must be >= 1");
  if (heads_q % heads_kv != 0) {
    throw ConfigError("cache", "heads_q (" + std::to_string(heads_q) +
                                   ") is not a multiple of heads_kv (" + std::to_string(heads_kv) + ")");
  }
}

std::size_t SequenceLayout::kv_head_for(std::size_t q_head) const {
  if (q_head >= heads_q) {
    throw DimensionError("cache", "query head " + std::to_string(q_head) + " out of range [0, " +
                                      std::to_string(heads_q) + ")");
  }
  return q_head / group_size();
}

std::vector<std::uint8_t> keep_all(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

template <typename T>
BasicCompressedCache<T> prefill_compress(const PrefillInputs<T>& inputs,
                                         std::span<const std::uint8_t> token_mask,
                                         const SubspaceConfig& cfg, const SequenceLayout& layout,
                                         std::size_t layer) {
  layout.validate();
  const std::size_t d = layout.head_dim;
  cfg.validate(d);
  const std::size_t hkv = layout.heads_kv;
  if (inputs.visual_keys.size() != hkv || inputs.visual_values.size() != hkv ||
      inputs.text_keys.size() != hkv || inputs.text_values.size() != hkv) {
    throw DimensionError("cache", "expected per-kv-head tensors for " + std::to_string(hkv) + " heads");
  }
  if (cfg.weighting == Weighting::query_aware && inputs.query_windows.size() != layout.heads_q) {
    throw DimensionError("cache", "expected " + std::to_string(layout.heads_q) +
                                      " query windows, got " + std::to_string(inputs.query_windows.size()));
  }
  if (token_mask.size() != layout.n_visual) {
    throw DimensionError("cache", "token mask has " + std::to_string(token_mask.size()) +
                                      " entries, layout has " + std::to_string(layout.n_visual) +
                                      " visual tokens");
  }
  std::size_t kept = 0;
  for (auto m : token_mask) kept += m ? 1 : 0;
  if (kept == 0) throw EmptyInputError("cache", "token mask removes every visual token");

  BasicCompressedCache<T> cache;
  cache.layout = layout;
  cache.layer = layer;
  cache.n_kept = kept;
  cache.heads.resize(hkv);

  const std::size_t group = layout.group_size();
  for (std::size_t h = 0; h < hkv; ++h) {
    check_shape(inputs.visual_keys[h], layout.n_visual, d, "visual keys");
    check_shape(inputs.visual_values[h], layout.n_visual, d, "visual values");
    check_shape(inputs.text_keys[h], layout.n_text, d, "text keys");
    check_shape(inputs.text_values[h], layout.n_text, d, "text values");

    const Matrix keys = to_double(select_rows(inputs.visual_keys[h], token_mask, kept));

    Matrix window;
    if (cfg.weighting == Weighting::query_aware) {
      std::size_t rows = 0;
      for (std::size_t g = 0; g < group; ++g) {
        const auto& w = inputs.query_windows[h * group + g];
        if (w.cols() != d) throw DimensionError("cache", "query window channel count differs from head_dim");
        rows += w.rows();
      }
      window = Matrix(rows, d);
      std::size_t r = 0;
      for (std::size_t g = 0; g < group; ++g) {
        const auto& w = inputs.query_windows[h * group + g];
        for (std::size_t i = 0; i < w.rows(); ++i, ++r)
          for (std::size_t j = 0; j < d; ++j) window(r, j) = static_cast<double>(w(i, j));
      }
    }

    RotationBuild build = build_rotation(keys, window, cfg, HeadId{layer, h});
    auto& head = cache.heads[h];
    head.visual_keys_rot = from_double<T>(matmul(keys, build.state.basis));
    head.visual_values = select_rows(inputs.visual_values[h], token_mask, kept);
    head.text_keys = inputs.text_keys[h];
    head.text_values = inputs.text_values[h];
    head.rotation = std::move(build.state);
    head.rank_exceeds_tokens = build.rank_exceeds_tokens;
  }
  return cache;
}

double BudgetReport::display_multiplier() const noexcept {
  return std::floor(visual_cache_multiplier * 100.0 + 0.5) / 100.0;
}

std::string BudgetReport::display() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2fx", display_multiplier());
  return buf;
}

BudgetReport budget(double token_keep, double channel_keep) {
  auto in_range = [](double r) { return r > 0.0 && r <= 1.0; };
  if (!in_range(token_keep) || !in_range(channel_keep)) {
    throw ConfigError("cache", "keep ratios must lie in (0, 1], got token " + std::to_string(token_keep) +
                                   ", channel " + std::to_string(channel_keep));
  }
  BudgetReport b;
  b.token_keep = token_keep;
  b.channel_keep = channel_keep;
  b.visual_cache_multiplier = token_keep * (1.0 + channel_keep) / 2.0;
  return b;
}

template <typename T>
CacheBytes cache_bytes(const BasicCompressedCache<T>& cache) {
  constexpr std::size_t width = sizeof(T);
  const std::size_t d = cache.layout.head_dim;
  CacheBytes b;
  for (const auto& h : cache.heads) {
    b.visual_keys += h.visual_keys_rot.size() * width;
    b.visual_values += h.visual_values.size() * width;
    b.text_keys += h.text_keys.size() * width;
    b.text_values += h.text_values.size() * width;
    b.rotation += (h.rotation.basis.size() + h.rotation.mean.size() + h.rotation.mean_residual.size()) *
                  sizeof(double);
  }
  b.total = b.visual_keys + b.visual_values + b.text_keys + b.text_values;
  const std::size_t heads = cache.heads.size();
  const std::size_t text = 2 * heads * cache.layout.n_text * d * width;
  b.uncompressed = 2 * heads * cache.n_kept * d * width + text;
  b.baseline = 2 * heads * cache.layout.n_visual * d * width + text;
  return b;
}

template BasicCompressedCache<float> prefill_compress(const PrefillInputs<float>&,
                                                      std::span<const std::uint8_t>,
                                                      const SubspaceConfig&, const SequenceLayout&,
                                                      std::size_t);
template BasicCompressedCache<double> prefill_compress(const PrefillInputs<double>&,
                                                       std::span<const std::uint8_t>,
                                                       const SubspaceConfig&, const SequenceLayout&,
                                                       std::size_t);
template CacheBytes cache_bytes(const BasicCompressedCache<float>&);
template CacheBytes cache_bytes(const BasicCompressedCache<double>&);

}  // namespace rotatek
