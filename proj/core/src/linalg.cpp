#include "rotatek/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rotatek {
namespace {

constexpr double kSymmetryTolerance = 1e-9;
constexpr double kJacobiTolerance = 1e-12;
constexpr int kJacobiMaxSweeps = 100;

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

}  // namespace

LowerTriangular LowerTriangular::from_dense(Matrix dense) {
  if (dense.rows() != dense.cols()) {
    throw DimensionError("linalg", "triangular factor must be square, got " + shape(dense));
  }
  for (std::size_t i = 0; i < dense.rows(); ++i)
    for (std::size_t j = i + 1; j < dense.cols(); ++j)
      if (dense(i, j) != 0.0) {
        throw DimensionError("linalg", "lower-triangular factor has a non-zero upper entry at (" +
                                           std::to_string(i) + "," + std::to_string(j) + ")");
      }
  return LowerTriangular(std::move(dense));
}

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("linalg", "matmul " + shape(a) + " x " + shape(b));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      auto brow = b.row(p);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aip * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("linalg", "matmul_nt " + shape(a) + " x " + shape(b) + "^T");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

Matrix gram(const Matrix& a) {
  const std::size_t n = a.cols();
  Matrix g(n, n);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const double ai = row[i];
      if (ai == 0.0) continue;
      for (std::size_t j = i; j < n; ++j) g(i, j) += ai * row[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

Vector row_times(std::span<const double> x, const Matrix& a) {
  if (x.size() != a.rows()) {
    throw DimensionError("linalg", "row vector of length " + std::to_string(x.size()) + " times " +
                                       shape(a));
  }
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (x[i] == 0.0) continue;
    auto row = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += x[i] * row[j];
  }
  return out;
}

Vector times_col(const Matrix& a, std::span<const double> x) {
  if (x.size() != a.cols()) {
    throw DimensionError("linalg", shape(a) + " times column of length " + std::to_string(x.size()));
  }
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), x);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("linalg", "dot of lengths " + std::to_string(a.size()) + " and " +
                                       std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double frobenius_norm(const Matrix& a) { return norm2(a.data()); }

double frobenius_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("linalg", "distance between " + shape(a) + " and " + shape(b));
  }
  double s = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

double trace(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) s += a(i, i);
  return s;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double relative_asymmetry(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("linalg", "expected square matrix, got " + shape(a));
  const double norm = frobenius_norm(a);
  if (norm == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double diff = a(i, j) - a(j, i);
      s += diff * diff;
    }
  return std::sqrt(s) / norm;
}

Matrix symmetrized(const Matrix& a) {
  const double asym = relative_asymmetry(a);
  if (!(asym <= kSymmetryTolerance)) throw SymmetryError("linalg", asym);
  Matrix s(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

LowerTriangular cholesky(const Matrix& g) {
  const Matrix a = symmetrized(g);
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t p = 0; p < j; ++p) diag -= l(j, p) * l(j, p);
    if (!(diag > 0.0) || !std::isfinite(diag)) throw NotPositiveDefinite("linalg", j, diag);
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }
  return LowerTriangular(std::move(l));
}

Matrix solve_triangular_right(const Matrix& v, const LowerTriangular& l) {
  const std::size_t n = l.dim();
  if (v.cols() != n) {
    throw DimensionError("linalg", "solve_triangular_right: V is " + shape(v) + ", L is " +
                                       std::to_string(n) + "x" + std::to_string(n));
  }
  for (std::size_t j = 0; j < n; ++j)
    if (l(j, j) == 0.0) throw SingularTriangle("linalg", j);

  // Row-wise forward substitution: x·Lᵀ = v  <=>  L·xᵀ = vᵀ.
  Matrix x(v.rows(), n);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto vin = v.row(r);
    auto out = x.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      double s = vin[j];
      for (std::size_t p = 0; p < j; ++p) s -= l(j, p) * out[p];
      out[j] = s / l(j, j);
    }
  }
  return x;
}

SymmetricEigen eigh_full(const Matrix& c) {
  Matrix a = symmetrized(c);
  if (!all_finite(a.data())) throw Error(ErrorKind::numerical, "linalg", "eigh_full: non-finite input");
  const std::size_t n = a.rows();
  Matrix v = identity(n);

  const double scale = frobenius_norm(a);
  const double target = kJacobiTolerance * scale;
  for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
    if (off_diagonal_norm(a) <= target) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;

        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = a(p, k) = cs * akp - sn * akq;
          a(k, q) = a(q, k) = sn * akp + cs * akq;
        }
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;

        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = cs * vkp - sn * vkq;
          v(k, q) = sn * vkp + cs * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    const std::size_t src = order[col];
    out.values[col] = a(src, src);
    std::size_t argmax = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v(k, src)) > std::abs(v(argmax, src))) argmax = k;
    const double sign = v(argmax, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, col) = sign * v(k, src);
  }
  return out;
}

Matrix projector(const Matrix& basis) { return matmul_nt(basis, basis); }

Matrix leading_columns(const Matrix& a, std::size_t k) {
  if (k > a.cols()) {
    throw DimensionError("linalg", "requested " + std::to_string(k) + " columns of " + shape(a));
  }
  Matrix out(a.rows(), k);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) out(i, j) = a(i, j);
  return out;
}

}  // namespace rotatek
