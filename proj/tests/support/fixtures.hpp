#pragma once

#include "oracles.hpp"
#include "rotatek/cache.hpp"

namespace fixture {

template <typename T>
rotatek::PrefillInputs<T> random_inputs(const rotatek::SequenceLayout& lay, oracle::Rng& rng, std::size_t window = 8,
                                        double key_scale = 1.0) {
  using rotatek::matrix_cast;
  rotatek::PrefillInputs<T> in;
  for (std::size_t h = 0; h < lay.heads_kv; ++h) {
    in.visual_keys.push_back(matrix_cast<T>(oracle::random_matrix(lay.n_visual, lay.head_dim, rng, key_scale)));
    in.visual_values.push_back(matrix_cast<T>(oracle::random_matrix(lay.n_visual, lay.head_dim, rng)));
    in.text_keys.push_back(matrix_cast<T>(oracle::random_matrix(lay.n_text, lay.head_dim, rng, key_scale)));
    in.text_values.push_back(matrix_cast<T>(oracle::random_matrix(lay.n_text, lay.head_dim, rng)));
  }
  for (std::size_t q = 0; q < lay.heads_q; ++q)
    in.query_windows.push_back(matrix_cast<T>(oracle::random_matrix(window, lay.head_dim, rng)));
  return in;
}

inline rotatek::SubspaceConfig rank(std::size_t k) {
  rotatek::SubspaceConfig c;
  c.rank_k = k;
  return c;
}

// Visual rows picked by a mask, stacked above the text rows, in double.
template <typename T>
rotatek::Matrix full_keys(const rotatek::BasicMatrix<T>& visual, const rotatek::BasicMatrix<T>& text,
                          const std::vector<std::uint8_t>& mask) {
  std::size_t kept = 0;
  for (auto m : mask) kept += m ? 1 : 0;
  rotatek::Matrix out(kept + text.rows(), visual.cols());
  std::size_t r = 0;
  for (std::size_t i = 0; i < visual.rows(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < visual.cols(); ++j) out(r, j) = static_cast<double>(visual(i, j));
    ++r;
  }
  for (std::size_t i = 0; i < text.rows(); ++i, ++r)
    for (std::size_t j = 0; j < text.cols(); ++j) out(r, j) = static_cast<double>(text(i, j));
  return out;
}

}  // namespace fixture
