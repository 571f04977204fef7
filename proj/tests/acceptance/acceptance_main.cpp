// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 1 when
// any criterion fails, except those named with --known-failure N; a known
// failure that starts passing is also reported as a non-zero exit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "cli.hpp"
#include "fixtures.hpp"
#include "rotatek/baselines.hpp"
#include "rotatek/decode.hpp"
#include "rotatek/experiment.hpp"
#include "rotatek/metrics.hpp"
#include "rotatek/trace.hpp"

using namespace rotatek;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

SubspaceConfig subspace(std::size_t k, SolverMode mode = SolverMode::cholesky_iteration,
                        Weighting w = Weighting::query_aware) {
  SubspaceConfig c;
  c.rank_k = k;
  c.mode = mode;
  c.weighting = w;
  return c;
}

// 1. Scores are preserved exactly when every channel is kept.
Outcome lossless_full_rank() {
  oracle::Rng rng(1001);
  const std::size_t dims[] = {32, 64, 128};
  double worst_double = 0.0, worst_single = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = dims[i % 3];
    const std::size_t n = 1 + rng.index(512);
    const Matrix keys = oracle::random_matrix(n, d, rng, 2.0);
    const Matrix window = oracle::random_matrix(8, d, rng);
    const Vector q = oracle::random_vector(d, rng);
    const auto state = build_rotation_state(keys, window, subspace(d));
    worst_double = std::max(worst_double, oracle::max_abs_diff(rotated_scores(q, keys, state), oracle::scores(q, keys)));

    const std::size_t n_text = rng.index(16);
    const SequenceLayout lay{n, n_text, d, 2, 1};
    const auto in = fixture::random_inputs<float>(lay, rng, 8, 2.0);
    const auto cache = prefill_compress(in, keep_all(n), subspace(d), lay);
    const Matrix full = fixture::full_keys(in.visual_keys[0], in.text_keys[0], keep_all(n));
    worst_single = std::max(worst_single, oracle::max_abs_diff(decode_scores(q, cache, 1), oracle::scores(q, full)));
  }
  return {worst_double <= 1e-10 && worst_single <= 1e-4,
          fmt("max |err| double %.3e (tol 1e-10), float cache %.3e (tol 1e-4)", worst_double, worst_single)};
}

// 2. Direct and projector forms of the score residual agree.
Outcome residual_identity() {
  oracle::Rng rng(1002);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = 8 * (1 + rng.index(16));
    const std::size_t n = 16 + rng.index(300);
    Matrix keys = oracle::random_matrix(n, d, rng);
    for (std::size_t r = 0; r < n; ++r) keys(r, rng.index(d)) += 4.0;
    const std::size_t k = d * (1 + static_cast<std::size_t>(i % 3)) / 4;
    const auto state = build_rotation_state(keys, oracle::random_matrix(8, d, rng), subspace(k));
    const Vector q = oracle::random_vector(d, rng);
    worst = std::max(worst, oracle::max_abs_diff(score_residual(q, keys, state), score_residual_projector(q, keys, state)));
  }
  return {worst <= 1e-6, fmt("max dual-path disagreement %.3e (tol 1e-6)", worst)};
}

// 3. (σσᵀ)⊙C equals the covariance of explicitly rescaled keys.
Outcome hadamard_identity() {
  oracle::Rng rng(1003);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t d = 4 + rng.index(60);
    const std::size_t n = 10 + rng.index(200);
    const Matrix keys = oracle::random_matrix(n, d, rng, 3.0);
    const auto w = query_channel_norms(oracle::random_matrix(1 + rng.index(32), d, rng));
    const Matrix fast = weighted_covariance(centered_covariance(keys).covariance, w);
    Matrix scaled = keys;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) scaled(r, j) *= w.sigma[j];
    const Matrix slow = oracle::two_pass_covariance(scaled);
    worst = std::max(worst, oracle::fro_diff(fast, slow) / oracle::fro(slow));
  }
  return {worst <= 1e-10, fmt("max relative difference %.3e (tol 1e-10)", worst)};
}

// 4. Five subspace iterations match the full eigendecomposition.
Vector decaying(std::size_t d, oracle::Rng& rng) {
  Vector s(d);
  double v = 100.0;
  for (std::size_t j = 0; j < d; ++j) {
    s[j] = v;
    v *= rng.uniform(0.8, 1.0);
  }
  return s;
}

Outcome subspace_parity() {
  oracle::Rng rng(1004);
  const double gaps[] = {5.0, 10.0, 100.0};
  double worst_proj[3] = {0.0, 0.0, 0.0};
  double worst_capture[4] = {INFINITY, INFINITY, INFINITY, INFINITY};  // per gap, then near-degenerate
  int spectra = 0;
  auto run = [&](const Vector& spectrum, std::size_t k, int gap_slot) {
    const std::size_t d = spectrum.size();
    const auto planted = oracle::planted_spectrum(spectrum, rng);
    auto cfg = subspace(k);
    cfg.seed = static_cast<std::uint64_t>(spectra++);
    const Matrix v = subspace_iterate(planted.matrix, cfg);
    double top = 0.0, total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      total += spectrum[j];
      if (j < k) top += spectrum[j];
    }
    const int slot = gap_slot >= 0 ? gap_slot : 3;
    worst_capture[slot] = std::min(worst_capture[slot], captured_variance_ratio(v, planted.matrix) * total / top);
    if (gap_slot >= 0) {
      const Matrix u = leading_columns(eigh_full(planted.matrix).vectors, k);
      worst_proj[gap_slot] =
          std::max(worst_proj[gap_slot], oracle::fro_diff(oracle::outer_projector(v), oracle::outer_projector(u)));
    }
  };
  for (int i = 0; i < 45; ++i) {
    const std::size_t d = (i % 2 == 0) ? 64 : 128;
    const std::size_t k = 1 + rng.index(d / 2);
    Vector spectrum = decaying(d, rng);
    // λ_k/λ_{k+1} equals the gap exactly; the tail keeps its own slow decay.
    const double cut = spectrum[k] / (spectrum[k - 1] / gaps[i % 3]);
    for (std::size_t j = k; j < d; ++j) spectrum[j] /= cut;
    run(spectrum, k, i % 3);
  }
  for (int i = 0; i < 15; ++i) {
    // A plateau of near-equal eigenvalues straddling the cut.
    const std::size_t d = (i % 2 == 0) ? 64 : 128;
    const std::size_t k = 4 + rng.index(d / 2);
    Vector spectrum = decaying(d, rng);
    const double level = spectrum[k - 1];
    for (std::size_t j = k - 3; j < std::min(d, k + 3); ++j) spectrum[j] = level * (1.0 + 1e-4 * rng.uniform(0, 1));
    std::sort(spectrum.begin(), spectrum.end(), std::greater<>());
    run(spectrum, k, -1);
  }
  const double proj = std::max({worst_proj[0], worst_proj[1], worst_proj[2]});
  const double capture = std::min({worst_capture[0], worst_capture[1], worst_capture[2], worst_capture[3]});
  return {proj <= 1e-3 && capture >= 0.999,
          fmt("max projector distance at gap 5: %.3e, gap 10: %.3e, gap 100: %.3e (tol 1e-3); ", worst_proj[0],
              worst_proj[1], worst_proj[2]) +
              fmt("min capture/oracle at gap 5: %.6f, gap 10: %.6f, gap 100: %.6f, ", worst_capture[0],
                  worst_capture[1], worst_capture[2]) +
              fmt("near-degenerate: %.6f (tol 0.999, %.0f spectra)", worst_capture[3], spectra)};
}

// 5. No coordinate subset beats the PCA rotation at reconstruction.
Outcome eckart_young_dominance() {
  oracle::Rng rng(1005);
  int violations = 0, checked = 0, iterated_violations = 0;
  double tightest = INFINITY;
  for (int i = 0; i < 50; ++i) {
    const std::size_t d = 2 + rng.index(11);
    const std::size_t n = 5 + rng.index(60);
    Matrix keys = oracle::random_matrix(n, d, rng);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) keys(r, j) *= 1.0 + static_cast<double>(rng.index(4));
    if (i % 2) keys = oracle::naive_matmul(keys, oracle::random_orthogonal(d, rng));
    for (std::size_t k = 1; k <= d; ++k) {
      const double subset = oracle::best_subset_error(keys, k);
      const double lib_subset = exhaustive_subset_error(keys, k).error;
      const double slack = 1e-9 * std::max(1.0, subset);
      const auto pca = build_rotation_state(keys, Matrix(0, d),
                                            subspace(k, SolverMode::full_eigh, Weighting::query_agnostic));
      const double rot = oracle::reconstruction_error(keys, pca.basis);
      if (rot > subset + slack || std::abs(lib_subset - subset) > slack) ++violations;
      tightest = std::min(tightest, subset - rot);
      const auto iterated = build_rotation_state(
          keys, Matrix(0, d), subspace(k, SolverMode::cholesky_iteration, Weighting::query_agnostic));
      if (oracle::reconstruction_error(keys, iterated.basis) > subset + slack) ++iterated_violations;
      ++checked;
    }
  }
  return {violations == 0,
          fmt("%.0f (instance, k) pairs, %.0f violations, min margin %.3e; ", checked, violations, tightest) +
              fmt("informational: T=5 iterated basis exceeds the best subset on %.0f pairs", iterated_violations)};
}

// 6. Split-K with an online-softmax merge equals the single-pass decode.
Outcome split_k_equivalence() {
  oracle::Rng rng(1006);
  double worst_double = 0.0, worst_single = 0.0, worst_perm = 0.0;
  DecodeConfig split, mono;
  mono.path = DecodePath::monolithic;
  for (std::size_t n : {1u, 63u, 64u, 65u, 130u, 5000u}) {
    const SequenceLayout lay{n, 9, 64, 2, 1};
    const auto in_d = fixture::random_inputs<double>(lay, rng, 8, 2.0);
    const auto cache_d = prefill_compress(in_d, keep_all(n), subspace(16), lay);
    const auto in_f = fixture::random_inputs<float>(lay, rng, 8, 2.0);
    const auto cache_f = prefill_compress(in_f, keep_all(n), subspace(16), lay);
    for (int t = 0; t < 4; ++t) {
      const Vector q = oracle::random_vector(64, rng, 2.0);
      const Vector ref_d = attention_output(q, cache_d, 0, mono);
      worst_double = std::max(worst_double, oracle::max_abs_diff(attention_output(q, cache_d, 0, split), ref_d));
      worst_single = std::max(worst_single, oracle::max_abs_diff(attention_output(q, cache_f, 1, split),
                                                                 attention_output(q, cache_f, 1, mono)));
      auto parts = sparse_partials(q, cache_d, 0, split);
      parts.push_back(dense_partial(q, cache_d, 0));
      for (int p = 0; p < 10; ++p) {
        std::shuffle(parts.begin(), parts.end(), rng.engine());
        worst_perm = std::max(worst_perm, oracle::max_abs_diff(finalize(merge_partials(parts), 0.0), ref_d));
      }
    }
  }
  return {worst_double <= 1e-6 && worst_perm <= 1e-6 && worst_single <= 1e-5,
          fmt("double %.3e, permuted partials %.3e (tol 1e-6); single %.3e (tol 1e-5)", worst_double, worst_perm,
              worst_single)};
}

// 7. Budget arithmetic at displayed precision.
Outcome budget_arithmetic() {
  const struct {
    double token, channel;
    const char* want;
  } rows[] = {{0.40, 0.25, "0.25x"}, {0.45, 0.25, "0.28x"}, {0.30, 0.25, "0.19x"}};
  Outcome o;
  for (const auto& r : rows) {
    const std::string got = budget(r.token, r.channel).display();
    o.pass = o.pass && got == r.want;
    o.detail += fmt("(%.2f, %.2f)", r.token, r.channel) + " -> " + got + " want " + r.want + "; ";
  }
  return o;
}

// 8. Rotation beats head-wise channel selection and the gap widens as the keep ratio drops.
Outcome robustness_ordering() {
  const std::vector<double> keeps = {0.5, 0.375, 0.25};
  const int seeds = 20;
  std::vector<double> mean_rot(3, 0.0), mean_head(3, 0.0);
  int widening = 0;
  for (int s = 0; s < seeds; ++s) {
    ExperimentConfig cfg;
    cfg.channel_keeps = keeps;
    cfg.baselines = {true, false, false};
    cfg.synthetic.seed = static_cast<std::uint64_t>(s);
    cfg.subspace.seed = static_cast<std::uint64_t>(s);
    cfg.threads = 0;
    const auto report = run_experiment(cfg);
    std::vector<double> gap(3);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& c = report.cells[i];
      mean_rot[i] += c.rotatek.score_mse / seeds;
      mean_head[i] += c.headwise->score_mse / seeds;
      gap[i] = c.headwise->score_mse - c.rotatek.score_mse;
    }
    if (gap[2] > gap[0]) ++widening;
  }
  const bool means_widen = mean_head[1] - mean_rot[1] >= mean_head[0] - mean_rot[0] &&
                           mean_head[2] - mean_rot[2] >= mean_head[1] - mean_rot[1];
  return {mean_rot[2] <= mean_head[2] && widening >= 16 && means_widen,
          fmt("keep 0.25 mean MSE rotation %.3e vs head-wise %.3e; gap widened on %.0f/20 seeds (need 16)",
              mean_rot[2], mean_head[2], widening) +
              (means_widen ? "; mean gap monotone" : "; mean gap NOT monotone")};
}

// 9. Sweep reports are byte-identical across reruns and thread counts.
Outcome sweep_determinism() {
  auto sweep = [](const std::string& threads) {
    std::ostringstream out, err;
    const int code = cli::run({"rotatek", "sweep", "--format", "csv", "--seed", "11", "--layers", "2", "--variant",
                               "cholesky/q_aware", "--variant", "eigh/q_aware", "--variant", "cholesky/q_agnostic",
                               "--threads", threads},
                              out, err);
    return code == 0 ? out.str() : "exit " + std::to_string(code) + ": " + err.str();
  };
  const std::string a = sweep("1");
  const std::string b = sweep("1");
  const std::string c = sweep("4");
  const std::string d = sweep("0");
  const bool ok = a.rfind("variant,", 0) == 0 && a == b && a == c && a == d;
  auto same = [&](const std::string& x) { return std::string(x == a ? "identical" : "DIFFERS"); };
  return {ok, fmt("%.0f CSV bytes; ", static_cast<double>(a.size())) + "rerun " + same(b) + ", 4 threads " +
                  same(c) + ", all cores " + same(d)};
}

// 10. Trace container: fuzzing never crashes and round trips are exact.
Outcome trace_container() {
  oracle::Rng rng(1010);
  ExperimentConfig cfg;
  cfg.layout = {40, 8, 32, 4, 2};
  cfg.layers = 2;
  TraceData t = make_synthetic_trace(cfg);
  for (std::size_t i = 0; i < t.layout.n_visual; ++i) t.token_mask.push_back(i % 4 != 0);
  const auto good = encode_trace(t);
  const TraceData back = decode_trace(good);
  bool exact = encode_trace(back) == good;
  for (std::size_t i = 0; i < t.keys.size(); ++i)
    exact = exact && std::equal(t.keys[i].data().begin(), t.keys[i].data().end(), back.keys[i].data().begin(),
                                [](float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; });

  const std::uint32_t hlen = static_cast<std::uint32_t>(good[8]) | static_cast<std::uint32_t>(good[9]) << 8 |
                             static_cast<std::uint32_t>(good[10]) << 16 | static_cast<std::uint32_t>(good[11]) << 24;
  int rejected = 0, accepted = 0, bad = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    std::vector<std::byte> bytes = good;
    if (iter % 3 == 0) {
      bytes.resize(rng.index(bytes.size()));
    } else {
      const std::size_t span = iter % 3 == 1 ? 12 + hlen : bytes.size();
      const std::size_t flips = 1 + rng.index(6);
      for (std::size_t f = 0; f < flips; ++f) bytes[rng.index(span)] = std::byte(rng.index(256));
    }
    try {
      decode_trace(bytes).validate();
      ++accepted;
    } catch (const TraceError& e) {
      ++rejected;
      if (std::string(e.what()).empty() || e.origin() != "trace") ++bad;
    } catch (...) {
      ++bad;
    }
  }
  return {exact && bad == 0, std::string(exact ? "round trip bit-exact" : "round trip MISMATCH") +
                                 fmt("; 1000 mutations: %.0f rejected with diagnostics, %.0f accepted, %.0f bad",
                                     rejected, accepted, bad)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> known;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--known-failure" && i + 1 < argc) {
      known.insert(std::stoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--known-failure N]...\n", argv[0]);
      return 2;
    }
  }
  const struct {
    int id;
    const char* name;
    double budget_seconds;
    Outcome (*fn)();
  } criteria[] = {
      {1, "lossless at full rank", 10, lossless_full_rank},
      {2, "residual identity", 10, residual_identity},
      {3, "hadamard reweighting identity", 5, hadamard_identity},
      {4, "subspace iteration parity", 30, subspace_parity},
      {5, "eckart-young dominance", 60, eckart_young_dominance},
      {6, "split-k merge equivalence", 20, split_k_equivalence},
      {7, "budget arithmetic", 1, budget_arithmetic},
      {8, "robustness ordering", 120, robustness_ordering},
      {9, "sweep determinism", 60, sweep_determinism},
      {10, "trace container", 30, trace_container},
  };
  int failed = 0, unexpected = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    const bool expected_fail = known.count(c.id) > 0;
    failed += pass ? 0 : 1;
    unexpected += pass == expected_fail ? 1 : 0;
    std::printf("criterion %2d %-30s %s  %.2fs/%.0fs  %s%s%s\n", c.id, c.name, pass ? "PASS" : "FAIL", secs,
                c.budget_seconds, o.detail.c_str(), in_time ? "" : " (over time budget)",
                expected_fail ? (pass ? " [listed as known failure but passed]" : " [known failure]") : "");
    std::fflush(stdout);
  }
  std::printf("%d of 10 criteria passed, %d known failure(s), %d unexpected result(s)\n", 10 - failed,
              static_cast<int>(known.size()), unexpected);
  return unexpected == 0 ? 0 : 1;
}
