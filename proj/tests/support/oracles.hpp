#pragma once

// Independent reference computations used as test oracles. Nothing here
// calls into the library under test; everything is written as plainly as
// possible (scalar loops, explicit materialization).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "rotatek/linalg.hpp"

namespace oracle {

using rotatek::Matrix;
using rotatek::Vector;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double normal() { return normal_(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

inline Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix diag(const Vector& d) {
  Matrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - b(i, j)));
  return m;
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double fro(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

inline double fro_diff(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  return std::sqrt(s);
}

inline Vector column_means(const Matrix& k) {
  Vector mu(k.cols(), 0.0);
  for (std::size_t r = 0; r < k.rows(); ++r)
    for (std::size_t j = 0; j < k.cols(); ++j) mu[j] += k(r, j);
  for (auto& m : mu) m /= static_cast<double>(k.rows());
  return mu;
}

inline Matrix centered(const Matrix& k) {
  const Vector mu = column_means(k);
  Matrix c = k;
  for (std::size_t r = 0; r < k.rows(); ++r)
    for (std::size_t j = 0; j < k.cols(); ++j) c(r, j) -= mu[j];
  return c;
}

// Center first, then form the Gram matrix with explicit loops.
inline Matrix two_pass_covariance(const Matrix& k) {
  const Matrix kc = centered(k);
  return naive_matmul(naive_transpose(kc), kc);
}

// diag(σ)·C·diag(σ) through two full matrix products.
inline Matrix explicit_weighted(const Matrix& c, const Vector& sigma) {
  return naive_matmul(naive_matmul(diag(sigma), c), diag(sigma));
}

inline Vector column_norms(const Matrix& q) {
  Vector out(q.cols(), 0.0);
  for (std::size_t j = 0; j < q.cols(); ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < q.rows(); ++r) s += q(r, j) * q(r, j);
    out[j] = std::sqrt(s);
  }
  return out;
}

// Modified Gram-Schmidt orthonormalization of the columns (assumes full rank).
inline Matrix gram_schmidt(Matrix v) {
  for (std::size_t c = 0; c < v.cols(); ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double d = 0.0;
      for (std::size_t r = 0; r < v.rows(); ++r) d += v(r, p) * v(r, c);
      for (std::size_t r = 0; r < v.rows(); ++r) v(r, c) -= d * v(r, p);
    }
    double n = 0.0;
    for (std::size_t r = 0; r < v.rows(); ++r) n += v(r, c) * v(r, c);
    n = std::sqrt(n);
    for (std::size_t r = 0; r < v.rows(); ++r) v(r, c) /= n;
  }
  return v;
}

inline Matrix random_orthogonal(std::size_t d, Rng& rng) { return gram_schmidt(random_matrix(d, d, rng)); }

// U·diag(λ)·Uᵀ with a random orthogonal U. Returns the matrix and U.
struct Planted {
  Matrix matrix;
  Matrix basis;  // columns ordered like `spectrum`
};

inline Planted planted_spectrum(const Vector& spectrum, Rng& rng) {
  const std::size_t d = spectrum.size();
  const Matrix u = random_orthogonal(d, rng);
  Matrix m = naive_matmul(naive_matmul(u, diag(spectrum)), naive_transpose(u));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) m(i, j) = m(j, i) = 0.5 * (m(i, j) + m(j, i));
  return {m, u};
}

inline Matrix outer_projector(const Matrix& v) { return naive_matmul(v, naive_transpose(v)); }

inline Matrix first_columns(const Matrix& a, std::size_t k) {
  Matrix out(a.rows(), k);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < k; ++c) out(r, c) = a(r, c);
  return out;
}

// Exact scores q·Kᵀ/√d with scalar loops.
inline Vector scores(const Vector& q, const Matrix& keys) {
  const double s = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  Vector out(keys.rows());
  for (std::size_t n = 0; n < keys.rows(); ++n) {
    double v = 0.0;
    for (std::size_t j = 0; j < keys.cols(); ++j) v += q[j] * keys(n, j);
    out[n] = v * s;
  }
  return out;
}

// (q·P·Kᵀ + qᵀ(I − P)μ)/√d with P = V·Vᵀ materialized.
inline Vector projector_scores(const Vector& q, const Matrix& keys, const Matrix& v, const Vector& mu) {
  const std::size_t d = keys.cols();
  const Matrix p = outer_projector(v);
  Vector qp(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i) qp[j] += q[i] * p(i, j);
  double bias = 0.0;
  for (std::size_t j = 0; j < d; ++j) bias += (q[j] - qp[j]) * mu[j];
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  Vector out(keys.rows());
  for (std::size_t n = 0; n < keys.rows(); ++n) {
    double v2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) v2 += qp[j] * keys(n, j);
    out[n] = (v2 + bias) * s;
  }
  return out;
}

// Σ softmax(scores)_n · values[n, :] with a two-pass max-subtracted softmax.
inline Vector softmax_weighted(const Vector& scores, const Matrix& values) {
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m);
  Vector out(values.cols(), 0.0);
  for (std::size_t n = 0; n < scores.size(); ++n) {
    const double w = std::exp(scores[n] - m) / z;
    for (std::size_t j = 0; j < values.cols(); ++j) out[j] += w * values(n, j);
  }
  return out;
}

// Best coordinate subset error by bitmask enumeration: keeping a coordinate
// set S loses exactly the squared norms of the dropped centered columns.
inline double best_subset_error(const Matrix& keys, std::size_t k) {
  const Matrix kc = centered(keys);
  const std::size_t d = keys.cols();
  Vector col(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t r = 0; r < kc.rows(); ++r) col[j] += kc(r, j) * kc(r, j);
  double best = INFINITY;
  for (std::uint32_t mask = 0; mask < (1u << d); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    double err = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      if (!(mask & (1u << j))) err += col[j];
    best = std::min(best, err);
  }
  return best;
}

// ‖K_c − K_c·V·Vᵀ‖_F² with everything materialized.
inline double reconstruction_error(const Matrix& keys, const Matrix& v) {
  const Matrix kc = centered(keys);
  return std::pow(fro_diff(kc, naive_matmul(kc, outer_projector(v))), 2);
}

}  // namespace oracle
