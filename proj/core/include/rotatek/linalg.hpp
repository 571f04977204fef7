#pragma once

// Small dense linear algebra for head-dimension sized problems (d up to a few
// hundred). Everything here is row-major and double precision unless the
// float alias is used explicitly for cached storage.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "rotatek/error.hpp"

namespace rotatek {

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("linalg", "matrix storage holds " + std::to_string(data_.size()) +
                                         " entries, expected " + std::to_string(rows_ * cols_));
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("linalg", "ragged initializer rows");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;
using Vector = std::vector<double>;

template <typename To, typename From>
BasicMatrix<To> matrix_cast(const BasicMatrix<From>& m) {
  std::vector<To> out(m.size());
  auto src = m.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
  return BasicMatrix<To>(m.rows(), m.cols(), std::move(out));
}

// Lower-triangular factor. Strictly-upper entries are always zero.
class LowerTriangular {
 public:
  // Throws DimensionError when `dense` is not square or has non-zero entries
  // above the diagonal. Diagonal positivity is checked at solve time.
  static LowerTriangular from_dense(Matrix dense);

  std::size_t dim() const noexcept { return factor_.rows(); }
  double operator()(std::size_t r, std::size_t c) const noexcept { return factor_(r, c); }
  const Matrix& dense() const noexcept { return factor_; }

 private:
  explicit LowerTriangular(Matrix factor) : factor_(std::move(factor)) {}
  friend LowerTriangular cholesky(const Matrix& g);

  Matrix factor_;
};

struct SymmetricEigen {
  Vector values;   // descending
  Matrix vectors;  // eigenvectors as columns, largest-magnitude entry positive
};

Matrix identity(std::size_t n);
Matrix transpose(const Matrix& a);

Matrix matmul(const Matrix& a, const Matrix& b);
// a · bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// aᵀ · a
Matrix gram(const Matrix& a);

// xᵀ·A for a row vector x (length a.rows()).
Vector row_times(std::span<const double> x, const Matrix& a);
// A·x for a column vector x (length a.cols()).
Vector times_col(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double frobenius_norm(const Matrix& a);
double frobenius_distance(const Matrix& a, const Matrix& b);
double trace(const Matrix& a);
bool all_finite(std::span<const double> values);

// ‖a − aᵀ‖_F / ‖a‖_F (0 for the zero matrix).
double relative_asymmetry(const Matrix& a);

// Returns (a + aᵀ)/2 when the relative asymmetry is within 1e-9, otherwise
// throws SymmetryError.
Matrix symmetrized(const Matrix& a);

// g = L·Lᵀ. Throws NotPositiveDefinite carrying the failing pivot index.
LowerTriangular cholesky(const Matrix& g);

// X with X·Lᵀ = V, i.e. V·L^{-ᵀ}.
Matrix solve_triangular_right(const Matrix& v, const LowerTriangular& l);

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Sweeps until the
// off-diagonal Frobenius norm drops below 1e-12·‖c‖_F or 100 sweeps elapse.
SymmetricEigen eigh_full(const Matrix& c);

// Projector V·Vᵀ for a basis with orthonormal columns.
Matrix projector(const Matrix& basis);

// Leading `k` columns of `a`.
Matrix leading_columns(const Matrix& a, std::size_t k);

}  // namespace rotatek
