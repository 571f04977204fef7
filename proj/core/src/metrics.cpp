#include "rotatek/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rotatek/decode.hpp"

namespace rotatek {
namespace {

double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void check_probe(std::span<const double> q, const Matrix& keys) {
  if (q.size() != keys.cols()) {
    throw DimensionError("metrics", "query has " + std::to_string(q.size()) + " channels, keys have " +
                                        std::to_string(keys.cols()));
  }
}

Vector attend(std::span<const double> scores, const Matrix& values) {
  const Vector w = softmax(scores);
  return row_times(w, values);
}

}  // namespace

Vector exact_scores(std::span<const double> q, const Matrix& keys) {
  check_probe(q, keys);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  Vector s = times_col(keys, q);
  for (auto& x : s) x *= inv_sqrt_d;
  return s;
}

Vector rotated_scores(std::span<const double> q, const Matrix& keys, const RotationState& state) {
  check_probe(q, keys);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  const Vector q_rot = row_times(q, state.basis);
  const Matrix k_rot = matmul(keys, state.basis);
  const double bias = dot(q, state.mean_residual);
  Vector s = times_col(k_rot, q_rot);
  for (auto& x : s) x = (x + bias) * inv_sqrt_d;
  return s;
}

Vector score_residual(std::span<const double> q, const Matrix& keys, const RotationState& state) {
  Vector exact = exact_scores(q, keys);
  const Vector approx = rotated_scores(q, keys, state);
  for (std::size_t i = 0; i < exact.size(); ++i) exact[i] -= approx[i];
  return exact;
}

Vector score_residual_projector(std::span<const double> q, const Matrix& keys, const RotationState& state) {
  check_probe(q, keys);
  const std::size_t d = keys.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  // q·(I − P_k) = q − (q·R_k)·R_kᵀ
  const Vector coeffs = row_times(q, state.basis);
  const Vector in_span = times_col(state.basis, coeffs);
  Vector q_perp(d);
  for (std::size_t j = 0; j < d; ++j) q_perp[j] = q[j] - in_span[j];

  Vector out(keys.rows());
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += q_perp[j] * (keys(r, j) - state.mean[j]);
    out[r] = s * inv_sqrt_d;
  }
  return out;
}

double softmax_kl(std::span<const double> exact, std::span<const double> approx) {
  if (exact.size() != approx.size()) throw DimensionError("metrics", "score vectors differ in length");
  if (exact.empty()) return 0.0;
  const double lse_p = log_sum_exp(exact);
  const double lse_q = log_sum_exp(approx);
  double kl = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double log_p = exact[i] - lse_p;
    const double log_q = approx[i] - lse_q;
    kl += std::exp(log_p) * (log_p - log_q);
  }
  return std::max(kl, 0.0);
}

double eckart_young_tail(const Matrix& covariance, std::size_t k) {
  const SymmetricEigen eig = eigh_full(covariance);
  double tail = 0.0;
  for (std::size_t j = k; j < eig.values.size(); ++j) tail += eig.values[j];
  return std::max(tail, 0.0);
}

void ErrorAccumulator::add(std::span<const double> exact, std::span<const double> approx, const Matrix& values,
                           std::size_t scored_tokens) {
  if (exact.size() != approx.size() || exact.size() != values.rows()) {
    throw DimensionError("metrics", "scores and values disagree on token count");
  }
  scored_tokens = std::min(scored_tokens, exact.size());
  for (std::size_t i = 0; i < scored_tokens; ++i) {
    const double e = exact[i] - approx[i];
    sq_sum_ += e * e;
    max_abs_ = std::max(max_abs_, std::abs(e));
  }
  scored_ += scored_tokens;
  if (!exact.empty()) {
    kl_sum_ += softmax_kl(exact, approx);
    const Vector a = attend(exact, values);
    const Vector b = attend(approx, values);
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    out_sum_ += std::sqrt(s);
  }
  ++probes_;
}

ErrorSummary ErrorAccumulator::summary() const {
  ErrorSummary s;
  if (probes_ == 0) return s;
  s.score_mse = scored_ == 0 ? 0.0 : sq_sum_ / static_cast<double>(scored_);
  s.score_max_abs = max_abs_;
  s.weight_kl = kl_sum_ / static_cast<double>(probes_);
  s.output_l2 = out_sum_ / static_cast<double>(probes_);
  return s;
}

ErrorSummary summarize_scores(const Matrix& probes, const Matrix& keys, const Matrix& values,
                              const ScoreFn& approx) {
  if (probes.rows() == 0) throw EmptyInputError("metrics", "no probe queries");
  ErrorAccumulator acc;
  for (std::size_t p = 0; p < probes.rows(); ++p) {
    const Vector e = exact_scores(probes.row(p), keys);
    const Vector a = approx(probes.row(p));
    acc.add(e, a, values);
  }
  return acc.summary();
}

ErrorSummary summarize(const Matrix& probes, const Matrix& keys, const Matrix& values,
                       const RotationState& state, const Matrix& weighted_cov) {
  ErrorSummary s = summarize_scores(probes, keys, values, [&](std::span<const double> q) {
    return rotated_scores(q, keys, state);
  });
  s.captured_variance_ratio = captured_variance_ratio(state.basis, weighted_cov);
  s.eckart_young_tail = eckart_young_tail(weighted_cov, state.rank());
  return s;
}

}  // namespace rotatek
