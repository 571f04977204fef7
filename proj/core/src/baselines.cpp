#include "rotatek/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace rotatek {
namespace {

constexpr std::size_t kMaxExhaustiveDim = 16;

void check_keep(std::size_t k, std::size_t d) {
  if (k < 1 || k > d) {
    throw ConfigError("baselines", "keep count " + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
  }
}

// Indices of the k largest scores; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::size_t ChannelMask::mask_bits() const noexcept {
  return kind == MaskKind::head_wise ? head_dim : token_wise_keep.rows() * head_dim;
}

std::vector<std::size_t> ChannelMask::kept_channels() const {
  if (kind != MaskKind::head_wise) throw ConfigError("baselines", "kept_channels() needs a head-wise mask");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < head_wise_keep.size(); ++j)
    if (head_wise_keep[j]) out.push_back(j);
  return out;
}

ChannelMask headwise_select(const Matrix& keys, const QueryWeights& weights, std::size_t k) {
  const std::size_t d = keys.cols();
  check_keep(k, d);
  if (weights.sigma.size() != d) throw DimensionError("baselines", "query weights length differs from head_dim");

  Vector saliency(d, 0.0);
  for (std::size_t r = 0; r < keys.rows(); ++r)
    for (std::size_t j = 0; j < d; ++j) saliency[j] += keys(r, j) * keys(r, j);
  for (std::size_t j = 0; j < d; ++j) saliency[j] = weights.sigma[j] * std::sqrt(saliency[j]);

  ChannelMask mask;
  mask.kind = MaskKind::head_wise;
  mask.head_dim = d;
  mask.keep_count = k;
  mask.head_wise_keep.assign(d, 0);
  for (auto j : top_k(saliency, k)) mask.head_wise_keep[j] = 1;
  return mask;
}

TokenwiseSelection tokenwise_select(const Matrix& keys, std::size_t k, bool interpolate_mean) {
  const std::size_t n = keys.rows();
  const std::size_t d = keys.cols();
  check_keep(k, d);

  Vector mean(d, 0.0);
  if (interpolate_mean && n > 0) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) mean[j] += keys(r, j);
    for (auto& m : mean) m /= static_cast<double>(n);
  }

  TokenwiseSelection out;
  out.mask.kind = MaskKind::token_wise;
  out.mask.head_dim = d;
  out.mask.keep_count = k;
  out.mask.token_wise_keep = BasicMatrix<std::uint8_t>(n, d, 0);
  out.reconstructed = Matrix(n, d);
  Vector magnitude(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) magnitude[j] = std::abs(keys(r, j));
    for (auto j : top_k(magnitude, k)) out.mask.token_wise_keep(r, j) = 1;
    for (std::size_t j = 0; j < d; ++j)
      out.reconstructed(r, j) = out.mask.token_wise_keep(r, j) ? keys(r, j) : mean[j];
  }
  return out;
}

SubsetSearch exhaustive_subset_error(const Matrix& keys, std::size_t k) {
  const std::size_t n = keys.rows();
  const std::size_t d = keys.cols();
  if (d > kMaxExhaustiveDim) {
    throw ConfigError("baselines", "exhaustive subset search limited to d <= " +
                                       std::to_string(kMaxExhaustiveDim) + ", got d = " + std::to_string(d));
  }
  check_keep(k, d);
  const CenteredCovariance cov = centered_covariance(keys);
  Matrix centered(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) centered(r, j) = keys(r, j) - cov.mean[j];

  SubsetSearch best;
  best.error = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> subset(k);
  std::iota(subset.begin(), subset.end(), std::size_t{0});
  std::vector<std::uint8_t> in_subset(d);
  while (true) {
    std::fill(in_subset.begin(), in_subset.end(), 0);
    for (auto j : subset) in_subset[j] = 1;
    // ‖K_c − K_c Π_S‖_F² evaluated entrywise.
    double err = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        const double residual = centered(r, j) - (in_subset[j] ? centered(r, j) : 0.0);
        err += residual * residual;
      }
    if (err < best.error) {
      best.error = err;
      best.channels = subset;
    }

    // Next combination in lexicographic order.
    std::size_t i = k;
    while (i > 0 && subset[i - 1] == d - k + (i - 1)) --i;
    if (i == 0) break;
    ++subset[i - 1];
    for (std::size_t j = i; j < k; ++j) subset[j] = subset[j - 1] + 1;
  }
  return best;
}

Vector headwise_scores(std::span<const double> q, const Matrix& keys, const ChannelMask& mask) {
  if (mask.kind != MaskKind::head_wise) throw ConfigError("baselines", "headwise_scores needs a head-wise mask");
  const std::size_t d = keys.cols();
  if (q.size() != d || mask.head_wise_keep.size() != d) {
    throw DimensionError("baselines", "query / mask / key widths disagree");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Vector out(keys.rows());
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      if (mask.head_wise_keep[j]) s += q[j] * keys(r, j);
    out[r] = s * inv_sqrt_d;
  }
  return out;
}

}  // namespace rotatek
