#pragma once

// Per-head rotation construction: centered key covariance, query channel
// weights, the query-weighted covariance and its top-k basis.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>

#include "rotatek/linalg.hpp"

namespace rotatek {

enum class SolverMode { cholesky_iteration, full_eigh };
enum class Weighting { query_aware, query_agnostic };

std::string_view to_string(SolverMode mode) noexcept;
std::string_view to_string(Weighting weighting) noexcept;
SolverMode parse_solver_mode(std::string_view text);
Weighting parse_weighting(std::string_view text);

// Per-channel ℓ2 norms of the recent-query window.
struct QueryWeights {
  Vector sigma;
};

struct CenteredCovariance {
  Matrix covariance;  // (K − 1μᵀ)ᵀ(K − 1μᵀ)
  Vector mean;        // μ
};

struct SubspaceConfig {
  std::size_t rank_k = 1;
  std::size_t iterations = 5;
  double ridge_epsilon = 1e-6;
  std::uint64_t seed = 0;
  SolverMode mode = SolverMode::cholesky_iteration;
  Weighting weighting = Weighting::query_aware;

  // Throws ConfigError unless 1 ≤ rank_k ≤ head_dim, iterations ≥ 1 and
  // ridge_epsilon > 0.
  void validate(std::size_t head_dim) const;
};

// Identifies the (layer, kv head) a rotation belongs to; seeds the random
// starting basis.
struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;
};

struct RotationState {
  Matrix basis;         // R_k, d×k with orthonormal columns
  Vector mean;          // μ
  Vector mean_residual; // δμ = μ − R_k R_kᵀ μ

  std::size_t head_dim() const noexcept { return basis.rows(); }
  std::size_t rank() const noexcept { return basis.cols(); }
};

// Everything produced while building a rotation, for diagnostics.
struct RotationBuild {
  RotationState state;
  CenteredCovariance centered;
  Matrix weighted;  // C_q
  QueryWeights weights;
  bool rank_exceeds_tokens = false;  // k > N: the cache stores more channels than tokens
};

QueryWeights query_channel_norms(const Matrix& q_window);

CenteredCovariance centered_covariance(const Matrix& keys);

// (σσᵀ) ⊙ C, the rank-one Hadamard form of diag(σ)·C·diag(σ).
Matrix weighted_covariance(const Matrix& covariance, const QueryWeights& weights);

// Called after every orthonormalization step with the current basis.
using IterationObserver = std::function<void(std::size_t iteration, const Matrix& basis)>;

// Top-k basis of a symmetric PSD matrix by subspace iteration with a
// trace-scaled ridge Cholesky-QR. The returned basis has orthonormal columns.
Matrix subspace_iterate(const Matrix& weighted_cov, const SubspaceConfig& cfg, HeadId id = {},
                        const IterationObserver& observer = {});

// Orthonormal basis for the column span of `v` via Cholesky-QR; columns that
// are numerically dependent are completed from the standard basis.
Matrix orthonormalize(const Matrix& v);

RotationState rotation_from_basis(Matrix basis, Vector mean);

RotationBuild build_rotation(const Matrix& keys, const Matrix& q_window, const SubspaceConfig& cfg,
                             HeadId id = {});

inline RotationState build_rotation_state(const Matrix& keys, const Matrix& q_window,
                                          const SubspaceConfig& cfg, HeadId id = {}) {
  return build_rotation(keys, q_window, cfg, id).state;
}

// trace(Vᵀ C V) / trace(C); 1 when trace(C) is zero.
double captured_variance_ratio(const Matrix& basis, const Matrix& covariance);

}  // namespace rotatek
