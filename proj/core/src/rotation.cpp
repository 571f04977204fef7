#include "rotatek/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rotatek/random.hpp"

namespace rotatek {
namespace {

constexpr double kOrthonormalTolerance = 1e-12;
constexpr double kDependentColumn = 1e-10;

double orthonormality_defect(const Matrix& v) {
  return frobenius_distance(gram(v), identity(v.cols()));
}

// Modified Gram-Schmidt, two passes per column. Columns whose residual falls
// below kDependentColumn of the largest input column are replaced by the
// first standard basis vector that is not yet in the span.
Matrix gram_schmidt_complete(const Matrix& v) {
  const std::size_t d = v.rows();
  const std::size_t k = v.cols();
  double scale = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += v(i, j) * v(i, j);
    scale = std::max(scale, std::sqrt(s));
  }

  Matrix q(d, k);
  Vector w(d);
  auto orthogonalize = [&](std::size_t upto) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t c = 0; c < upto; ++c) {
        double proj = 0.0;
        for (std::size_t i = 0; i < d; ++i) proj += q(i, c) * w[i];
        for (std::size_t i = 0; i < d; ++i) w[i] -= proj * q(i, c);
      }
    return norm2(w);
  };

  std::size_t next_unit = 0;
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d; ++i) w[i] = v(i, j);
    double n = orthogonalize(j);
    if (!(n > kDependentColumn * scale)) {
      for (; next_unit < d; ++next_unit) {
        std::fill(w.begin(), w.end(), 0.0);
        w[next_unit] = 1.0;
        n = orthogonalize(j);
        if (n > 0.5) break;
      }
      ++next_unit;
    }
    for (std::size_t i = 0; i < d; ++i) q(i, j) = w[i] / n;
  }
  return q;
}

}  // namespace

std::string_view to_string(SolverMode mode) noexcept {
  return mode == SolverMode::cholesky_iteration ? "cholesky" : "eigh";
}

std::string_view to_string(Weighting weighting) noexcept {
  return weighting == Weighting::query_aware ? "q_aware" : "q_agnostic";
}

SolverMode parse_solver_mode(std::string_view text) {
  if (text == "cholesky" || text == "cholesky_iteration") return SolverMode::cholesky_iteration;
  if (text == "eigh" || text == "full_eigh") return SolverMode::full_eigh;
  throw ConfigError("rotation", "unknown solver mode '" + std::string(text) + "'");
}

Weighting parse_weighting(std::string_view text) {
  if (text == "q_aware" || text == "query_aware") return Weighting::query_aware;
  if (text == "q_agnostic" || text == "query_agnostic") return Weighting::query_agnostic;
  throw ConfigError("rotation", "unknown weighting '" + std::string(text) + "'");
}

void SubspaceConfig::validate(std::size_t head_dim) const {
  if (rank_k < 1 || rank_k > head_dim) {
    throw ConfigError("rotation", "rank_k = " + std::to_string(rank_k) + " outside [1, " +
                                      std::to_string(head_dim) + "]");
  }
  if (iterations < 1) throw ConfigError("rotation", "iterations must be >= 1");
  if (!(ridge_epsilon > 0.0)) throw ConfigError("rotation", "ridge_epsilon must be > 0");
}

QueryWeights query_channel_norms(const Matrix& q_window) {
  if (q_window.rows() == 0) throw EmptyInputError("rotation", "query window has no rows");
  QueryWeights w;
  w.sigma.assign(q_window.cols(), 0.0);
  for (std::size_t r = 0; r < q_window.rows(); ++r) {
    auto row = q_window.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) w.sigma[j] += row[j] * row[j];
  }
  for (auto& s : w.sigma) s = std::sqrt(s);
  return w;
}

CenteredCovariance centered_covariance(const Matrix& keys) {
  if (keys.rows() == 0) throw EmptyInputError("rotation", "no keys to build a covariance from");
  const std::size_t n = keys.rows();
  const std::size_t d = keys.cols();
  CenteredCovariance out;
  out.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = keys.row(r);
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += row[j];
  }
  for (auto& m : out.mean) m /= static_cast<double>(n);

  Matrix centered(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) centered(r, j) = keys(r, j) - out.mean[j];
  out.covariance = gram(centered);
  return out;
}

Matrix weighted_covariance(const Matrix& covariance, const QueryWeights& weights) {
  const std::size_t d = covariance.rows();
  if (covariance.cols() != d || weights.sigma.size() != d) {
    throw DimensionError("rotation", "covariance is " + std::to_string(covariance.rows()) + "x" +
                                         std::to_string(covariance.cols()) + ", sigma has " +
                                         std::to_string(weights.sigma.size()) + " entries");
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (!(weights.sigma[j] >= 0.0)) {
      throw Error(ErrorKind::data, "rotation",
                  "query weight " + std::to_string(j) + " is negative or NaN");
    }
  }
  Matrix out(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out(i, j) = weights.sigma[i] * weights.sigma[j] * covariance(i, j);
  return out;
}

Matrix orthonormalize(const Matrix& v) {
  Matrix q = v;
  try {
    // CholeskyQR2 with one extra pass for moderately conditioned inputs.
    for (int pass = 0; pass < 3; ++pass) {
      q = solve_triangular_right(q, cholesky(gram(q)));
      if (orthonormality_defect(q) <= kOrthonormalTolerance) return q;
    }
  } catch (const NotPositiveDefinite&) {
  } catch (const SingularTriangle&) {
  }
  return gram_schmidt_complete(v);
}

Matrix subspace_iterate(const Matrix& weighted_cov, const SubspaceConfig& cfg, HeadId id,
                        const IterationObserver& observer) {
  const std::size_t d = weighted_cov.rows();
  if (weighted_cov.cols() != d) throw DimensionError("rotation", "covariance must be square");
  cfg.validate(d);
  const Matrix c = symmetrized(weighted_cov);
  if (!all_finite(c.data())) throw NumericalBreakdown("rotation", 0, "non-finite covariance");

  const std::size_t k = cfg.rank_k;
  // Orthonormalizing the random start does not change the iterated span.
  Matrix v = orthonormalize(standard_normal_matrix(d, k, derive_seed(cfg.seed, id.layer, id.head)));

  for (std::size_t t = 1; t <= cfg.iterations; ++t) {
    Matrix w = matmul(c, v);
    Matrix g = gram(w);
    const double tr = trace(g);
    if (!std::isfinite(tr)) throw NumericalBreakdown("rotation", t, "non-finite Gram trace");
    if (tr == 0.0) {
      // The covariance annihilates the current basis: it already spans a
      // zero-eigenvalue subspace and further steps cannot move it.
      if (observer) observer(t, v);
      continue;
    }
    const double rho = cfg.ridge_epsilon * tr / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) g(i, i) += rho;

    LowerTriangular l = [&] {
      try {
        return cholesky(g);
      } catch (const NotPositiveDefinite& e) {
        throw NumericalBreakdown("rotation", t, std::string("shifted Gram factorization failed: ") + e.what());
      }
    }();
    // The ridge leaves the columns slightly non-orthonormal; a second
    // unshifted Cholesky-QR pass restores orthonormality on the same span.
    v = orthonormalize(solve_triangular_right(w, l));
    if (!all_finite(v.data())) throw NumericalBreakdown("rotation", t, "non-finite basis");
    if (observer) observer(t, v);
  }
  return v;
}

RotationState rotation_from_basis(Matrix basis, Vector mean) {
  if (basis.rows() != mean.size()) {
    throw DimensionError("rotation", "basis has " + std::to_string(basis.rows()) +
                                         " rows, mean has " + std::to_string(mean.size()));
  }
  RotationState s;
  const Vector coeffs = row_times(mean, basis);  // R_kᵀ μ
  const Vector in_span = times_col(basis, coeffs);
  s.mean_residual.resize(mean.size());
  for (std::size_t j = 0; j < mean.size(); ++j) s.mean_residual[j] = mean[j] - in_span[j];
  s.basis = std::move(basis);
  s.mean = std::move(mean);
  return s;
}

RotationBuild build_rotation(const Matrix& keys, const Matrix& q_window, const SubspaceConfig& cfg,
                             HeadId id) {
  const std::size_t d = keys.cols();
  cfg.validate(d);
  if (keys.rows() == 0) throw EmptyInputError("rotation", "no surviving keys");

  RotationBuild out;
  out.centered = centered_covariance(keys);
  if (cfg.weighting == Weighting::query_aware) {
    if (q_window.cols() != d) {
      throw DimensionError("rotation", "query window has " + std::to_string(q_window.cols()) +
                                           " channels, keys have " + std::to_string(d));
    }
    out.weights = query_channel_norms(q_window);
  } else {
    out.weights.sigma.assign(d, 1.0);
  }
  out.weighted = weighted_covariance(out.centered.covariance, out.weights);

  Matrix basis;
  if (cfg.mode == SolverMode::full_eigh) {
    basis = leading_columns(eigh_full(out.weighted).vectors, cfg.rank_k);
  } else {
    basis = subspace_iterate(out.weighted, cfg, id);
  }
  out.rank_exceeds_tokens = cfg.rank_k > keys.rows();
  out.state = rotation_from_basis(std::move(basis), out.centered.mean);
  return out;
}

double captured_variance_ratio(const Matrix& basis, const Matrix& covariance) {
  const double total = trace(covariance);
  if (total == 0.0) return 1.0;
  const Matrix cv = matmul(covariance, basis);
  double captured = 0.0;
  for (std::size_t i = 0; i < basis.rows(); ++i)
    for (std::size_t j = 0; j < basis.cols(); ++j) captured += basis(i, j) * cv(i, j);
  return captured / total;
}

}  // namespace rotatek
