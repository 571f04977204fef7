#include "rotatek/decode.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rotatek {
namespace {

template <typename T>
const HeadCache<T>& resolve_head(std::span<const double> q, const BasicCompressedCache<T>& cache,
                                 std::size_t q_head) {
  const std::size_t kv = cache.layout.kv_head_for(q_head);
  if (kv >= cache.heads.size()) {
    throw DimensionError("decode", "kv head " + std::to_string(kv) + " missing from cache");
  }
  if (q.size() != cache.layout.head_dim) {
    throw DimensionError("decode", "query has " + std::to_string(q.size()) + " channels, head_dim is " +
                                       std::to_string(cache.layout.head_dim));
  }
  return cache.heads[kv];
}

template <typename T>
double row_dot(std::span<const double> q, std::span<const T> row) {
  double s = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) s += q[j] * static_cast<double>(row[j]);
  return s;
}

struct RotatedQuery {
  Vector q_rot;
  double bias;
};

RotatedQuery rotate_query(std::span<const double> q, const RotationState& r) {
  return {row_times(q, r.basis), dot(q, r.mean_residual)};
}

}  // namespace

std::string_view to_string(DecodePath path) noexcept {
  return path == DecodePath::monolithic ? "monolithic" : "split_k";
}

DecodePath parse_decode_path(std::string_view text) {
  if (text == "monolithic") return DecodePath::monolithic;
  if (text == "split_k") return DecodePath::split_k;
  throw ConfigError("decode", "unknown decode path '" + std::string(text) + "'");
}

void DecodeConfig::validate() const {
  if (block_n < 1) throw ConfigError("decode", "block_n must be >= 1");
  if (max_splits < 1) throw ConfigError("decode", "max_splits must be >= 1");
}

SoftmaxPartial merge_partials(std::span<const SoftmaxPartial> parts) {
  if (parts.empty()) throw EmptyInputError("decode", "no partials to merge");
  const std::size_t dim = parts.front().acc.size();
  SoftmaxPartial out = SoftmaxPartial::empty_of(dim);
  for (const auto& p : parts) {
    if (p.acc.size() != dim) throw DimensionError("decode", "partials disagree on value width");
    if (!p.empty) out.m = out.empty ? p.m : std::max(out.m, p.m);
    out.empty = out.empty && p.empty;
  }
  if (out.empty) return out;
  for (const auto& p : parts) {
    if (p.empty) continue;
    const double scale = std::exp(p.m - out.m);
    out.l += p.l * scale;
    for (std::size_t j = 0; j < dim; ++j) out.acc[j] += p.acc[j] * scale;
  }
  return out;
}

Vector finalize(const SoftmaxPartial& p, double eps) {
  Vector out(p.acc.size(), 0.0);
  if (p.empty) return out;
  const double denom = p.l + eps;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = p.acc[j] / denom;
  return out;
}

std::size_t split_factor(std::size_t s_v, const DecodeConfig& cfg) {
  cfg.validate();
  const std::size_t blocks = (s_v + cfg.block_n - 1) / cfg.block_n;
  return std::max<std::size_t>(1, std::min(blocks, cfg.max_splits));
}

std::vector<std::pair<std::size_t, std::size_t>> split_ranges(std::size_t s_v, const DecodeConfig& cfg) {
  const std::size_t ns = split_factor(s_v, cfg);
  const std::size_t chunk = std::max(cfg.block_n, (s_v + ns - 1) / ns);
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  if (s_v == 0) {
    ranges.emplace_back(0, 0);
    return ranges;
  }
  for (std::size_t begin = 0; begin < s_v; begin += chunk) ranges.emplace_back(begin, std::min(s_v, begin + chunk));
  return ranges;
}

Vector softmax(std::span<const double> scores) {
  Vector w(scores.size());
  if (scores.empty()) return w;
  const double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) sum += (w[i] = std::exp(scores[i] - m));
  for (auto& x : w) x /= sum;
  return w;
}

template <typename T>
Vector decode_scores(std::span<const double> q, const BasicCompressedCache<T>& cache, std::size_t q_head) {
  const auto& head = resolve_head(q, cache, q_head);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cache.layout.head_dim));
  const auto rq = rotate_query(q, head.rotation);

  const std::size_t n = head.visual_keys_rot.rows();
  const std::size_t m = head.text_keys.rows();
  Vector scores(n + m);
  for (std::size_t i = 0; i < n; ++i)
    scores[i] = (row_dot<T>(rq.q_rot, head.visual_keys_rot.row(i)) + rq.bias) * inv_sqrt_d;
  for (std::size_t i = 0; i < m; ++i) scores[n + i] = row_dot<T>(q, head.text_keys.row(i)) * inv_sqrt_d;
  return scores;
}

template <typename T>
std::vector<SoftmaxPartial> sparse_partials(std::span<const double> q, const BasicCompressedCache<T>& cache,
                                            std::size_t q_head, const DecodeConfig& cfg) {
  const auto& head = resolve_head(q, cache, q_head);
  const std::size_t d = cache.layout.head_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<SoftmaxPartial> parts;
  for (auto [begin, end] : split_ranges(head.visual_keys_rot.rows(), cfg)) {
    const auto rq = rotate_query(q, head.rotation);
    SoftmaxPartial p = SoftmaxPartial::empty_of(d);
    for (std::size_t i = begin; i < end; ++i) {
      const double s = (row_dot<T>(rq.q_rot, head.visual_keys_rot.row(i)) + rq.bias) * inv_sqrt_d;
      p.push<T>(s, head.visual_values.row(i));
    }
    parts.push_back(std::move(p));
  }
  return parts;
}

template <typename T>
SoftmaxPartial dense_partial(std::span<const double> q, const BasicCompressedCache<T>& cache,
                             std::size_t q_head) {
  const auto& head = resolve_head(q, cache, q_head);
  const std::size_t d = cache.layout.head_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  SoftmaxPartial p = SoftmaxPartial::empty_of(d);
  for (std::size_t i = 0; i < head.text_keys.rows(); ++i)
    p.push<T>(row_dot<T>(q, head.text_keys.row(i)) * inv_sqrt_d, head.text_values.row(i));
  return p;
}

template <typename T>
Vector attention_output(std::span<const double> q, const BasicCompressedCache<T>& cache, std::size_t q_head,
                        const DecodeConfig& cfg) {
  cfg.validate();
  const auto& head = resolve_head(q, cache, q_head);
  const std::size_t n = head.visual_values.rows();
  const std::size_t m = head.text_values.rows();
  if (n + m == 0) throw EmptyInputError("decode", "cache holds no tokens");
  const std::size_t d = cache.layout.head_dim;
  constexpr double eps = division_epsilon<T>;

  if (cfg.path == DecodePath::split_k) {
    std::vector<SoftmaxPartial> parts = sparse_partials(q, cache, q_head, cfg);
    parts.push_back(dense_partial(q, cache, q_head));
    return finalize(merge_partials(parts), eps);
  }

  const Vector scores = decode_scores(q, cache, q_head);
  const double mx = *std::max_element(scores.begin(), scores.end());
  Vector acc(d, 0.0);
  double l = 0.0;
  for (std::size_t i = 0; i < n + m; ++i) {
    const double w = std::exp(scores[i] - mx);
    l += w;
    auto v = i < n ? head.visual_values.row(i) : head.text_values.row(i - n);
    for (std::size_t j = 0; j < d; ++j) acc[j] += w * static_cast<double>(v[j]);
  }
  for (auto& a : acc) a /= (l + eps);
  return acc;
}

template <typename T>
std::vector<Vector> decode_batch(const std::vector<Vector>& queries, const BasicCompressedCache<T>& cache,
                                 const DecodeConfig& cfg) {
  if (queries.size() != cache.layout.heads_q) {
    throw DimensionError("decode", "got " + std::to_string(queries.size()) + " queries for " +
                                       std::to_string(cache.layout.heads_q) + " query heads");
  }
  std::vector<Vector> out;
  out.reserve(queries.size());
  for (std::size_t h = 0; h < queries.size(); ++h) out.push_back(attention_output(queries[h], cache, h, cfg));
  return out;
}

#define ROTATEK_INSTANTIATE_DECODE(T)                                                                      \
  template Vector decode_scores(std::span<const double>, const BasicCompressedCache<T>&, std::size_t);    \
  template std::vector<SoftmaxPartial> sparse_partials(std::span<const double>,                          \
                                                       const BasicCompressedCache<T>&, std::size_t,       \
                                                       const DecodeConfig&);                               \
  template SoftmaxPartial dense_partial(std::span<const double>, const BasicCompressedCache<T>&,          \
                                        std::size_t);                                                     \
  template Vector attention_output(std::span<const double>, const BasicCompressedCache<T>&, std::size_t, \
                                   const DecodeConfig&);                                                  \
  template std::vector<Vector> decode_batch(const std::vector<Vector>&, const BasicCompressedCache<T>&,  \
                                            const DecodeConfig&);

ROTATEK_INSTANTIATE_DECODE(float)
ROTATEK_INSTANTIATE_DECODE(double)

#undef ROTATEK_INSTANTIATE_DECODE

}  // namespace rotatek
