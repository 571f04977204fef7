#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "rotatek/linalg.hpp"
#include "rotatek/rotation.hpp"

namespace rotatek {

struct ErrorSummary {
  double score_mse = 0.0;
  double score_max_abs = 0.0;
  double weight_kl = 0.0;  // KL(exact ‖ approx), nats
  double output_l2 = 0.0;
  double captured_variance_ratio = 1.0;
  double eckart_young_tail = 0.0;
};

// q·Kᵀ/√d
Vector exact_scores(std::span<const double> q, const Matrix& keys);

// ((q·R_k)(K·R_k)ᵀ + q·δμ)/√d in double precision.
Vector rotated_scores(std::span<const double> q, const Matrix& keys, const RotationState& state);

// exact − rotated, by direct difference.
Vector score_residual(std::span<const double> q, const Matrix& keys, const RotationState& state);

// q·(I − P_k)·(K − 1μᵀ)ᵀ/√d, the closed form of the same residual.
Vector score_residual_projector(std::span<const double> q, const Matrix& keys, const RotationState& state);

// KL(softmax(exact) ‖ softmax(approx)) with log-sum-exp stabilization.
double softmax_kl(std::span<const double> exact, std::span<const double> approx);

// Σ_{j>k} λ_j of a symmetric PSD matrix, from the full eigendecomposition.
double eckart_young_tail(const Matrix& covariance, std::size_t k);

// Running averages of per-probe errors.
class ErrorAccumulator {
 public:
  // Scores cover every token; only the first `scored_tokens` enter the score
  // error statistics. Attention weights and outputs use all of them.
  void add(std::span<const double> exact, std::span<const double> approx, const Matrix& values,
           std::size_t scored_tokens);
  void add(std::span<const double> exact, std::span<const double> approx, const Matrix& values) {
    add(exact, approx, values, exact.size());
  }

  std::size_t probes() const noexcept { return probes_; }
  ErrorSummary summary() const;

 private:
  std::size_t probes_ = 0;
  std::size_t scored_ = 0;
  double sq_sum_ = 0.0;
  double max_abs_ = 0.0;
  double kl_sum_ = 0.0;
  double out_sum_ = 0.0;
};

using ScoreFn = std::function<Vector(std::span<const double> q)>;

// Error statistics of an arbitrary approximate scorer over a probe set,
// against exact full-channel attention on `keys`/`values`.
ErrorSummary summarize_scores(const Matrix& probes, const Matrix& keys, const Matrix& values,
                              const ScoreFn& approx);

// Rotation error summary: score statistics plus captured variance of C_q and
// its Eckart–Young tail at rank k.
ErrorSummary summarize(const Matrix& probes, const Matrix& keys, const Matrix& values,
                       const RotationState& state, const Matrix& weighted_cov);

}  // namespace rotatek
