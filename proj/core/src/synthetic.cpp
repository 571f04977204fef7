#include "rotatek/synthetic.hpp"

#include <cmath>
#include <string>

#include "rotatek/random.hpp"
#include "rotatek/rotation.hpp"

namespace rotatek {
namespace {

enum Stream : std::uint64_t { kStructure = 1, kKeys = 2, kValues = 3, kQueries = 4 };

struct Structure {
  std::size_t rope_begin = 0;
  std::size_t outlier_begin = 0;
  std::size_t planted_begin = 0;
  Matrix mixing;          // (d − planted_begin)×r, orthonormal columns
  Vector latent_scale;    // key latent standard deviations
  Vector query_scale;     // query latent standard deviations
  Vector rope_frequency;  // ω_i
  Vector rope_key_amplitude;
  Vector rope_query_amplitude;
};

Structure make_structure(const SyntheticSpec& spec) {
  const std::size_t d = spec.head_dim;
  const std::size_t p = spec.rope_pairs;
  const std::size_t r = spec.planted_rank;
  Structure s;
  s.outlier_begin = 2 * p;
  s.planted_begin = 2 * p + spec.outlier_channels;

  RandomStream rng(derive_seed(spec.seed, kStructure));
  const std::size_t width = d - s.planted_begin;
  if (r > 0) {
    Matrix g(width, r);
    for (auto& x : g.data()) x = rng.normal();
    s.mixing = orthonormalize(g);
  }
  s.latent_scale.resize(r);
  s.query_scale.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    // Keys put most energy in the leading latent directions; queries lean
    // on the trailing ones so query weighting changes the optimal subspace.
    s.latent_scale[i] = 2.0 / std::sqrt(static_cast<double>(i + 1));
    s.query_scale[i] = 0.5 + 1.5 * static_cast<double>(i + 1) / static_cast<double>(r);
  }
  s.rope_frequency.resize(p);
  s.rope_key_amplitude.resize(p);
  s.rope_query_amplitude.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    s.rope_frequency[i] = std::pow(spec.rope_base_frequency, -static_cast<double>(i) / static_cast<double>(p));
    s.rope_key_amplitude[i] = 3.0 * (0.75 + 0.5 * rng.uniform());
    s.rope_query_amplitude[i] = 1.5 * (0.75 + 0.5 * rng.uniform());
  }
  return s;
}

// One row of keys or queries at position n.
void fill_row(std::span<double> row, std::size_t n, const SyntheticSpec& spec, const Structure& s,
              RandomStream& rng, bool is_query) {
  const std::size_t r = spec.planted_rank;
  std::fill(row.begin(), row.end(), 0.0);

  for (std::size_t i = 0; i < spec.rope_pairs; ++i) {
    const double amp = is_query ? s.rope_query_amplitude[i] : s.rope_key_amplitude[i];
    const double theta = static_cast<double>(n) * s.rope_frequency[i];
    row[s.rope_begin + 2 * i] = amp * std::cos(theta);
    row[s.rope_begin + 2 * i + 1] = amp * std::sin(theta);
  }
  for (std::size_t j = 0; j < spec.outlier_channels; ++j) {
    const double base = is_query ? 0.1 * rng.normal() : spec.outlier_gain * (1.0 + 0.25 * rng.normal());
    row[s.outlier_begin + j] = base;
  }
  if (r > 0) {
    Vector z(r);
    for (std::size_t i = 0; i < r; ++i) z[i] = (is_query ? s.query_scale[i] : s.latent_scale[i]) * rng.normal();
    for (std::size_t c = 0; c < s.mixing.rows(); ++c) {
      double v = 0.0;
      for (std::size_t i = 0; i < r; ++i) v += s.mixing(c, i) * z[i];
      row[s.planted_begin + c] = v;
    }
  }
  if (spec.noise_sigma > 0.0)
    for (auto& x : row) x += spec.noise_sigma * rng.normal();
}

Matrix gen_rows(const SyntheticSpec& spec, const Structure& s, std::uint64_t seed, bool is_query) {
  RandomStream rng(seed);
  Matrix m(spec.n_tokens, spec.head_dim);
  for (std::size_t n = 0; n < spec.n_tokens; ++n) fill_row(m.row(n), n, spec, s, rng, is_query);
  return m;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (head_dim < 1) throw ConfigError("synthetic", "head_dim must be >= 1");
  if (planted_rank + 2 * rope_pairs + outlier_channels > head_dim) {
    throw ConfigError("synthetic", "planted_rank + 2*rope_pairs + outlier_channels = " +
                                       std::to_string(planted_rank + 2 * rope_pairs + outlier_channels) +
                                       " exceeds head_dim " + std::to_string(head_dim));
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic", "noise_sigma must be >= 0");
  if (!(rope_base_frequency > 0.0)) throw ConfigError("synthetic", "rope_base_frequency must be > 0");
  if (!std::isfinite(outlier_gain)) throw ConfigError("synthetic", "outlier_gain must be finite");
}

SyntheticHead gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Structure s = make_structure(spec);
  SyntheticHead out;
  out.keys = gen_rows(spec, s, derive_seed(spec.seed, kKeys), false);
  out.queries = gen_rows(spec, s, derive_seed(spec.seed, kQueries, 0), true);
  RandomStream rng(derive_seed(spec.seed, kValues));
  out.values = Matrix(spec.n_tokens, spec.head_dim);
  for (auto& x : out.values.data()) x = rng.normal();
  return out;
}

std::vector<Matrix> gen_synthetic_queries(const SyntheticSpec& spec, std::size_t count) {
  spec.validate();
  const Structure s = make_structure(spec);
  std::vector<Matrix> out;
  out.reserve(count);
  for (std::size_t g = 0; g < count; ++g) out.push_back(gen_rows(spec, s, derive_seed(spec.seed, kQueries, g), true));
  return out;
}

}  // namespace rotatek
