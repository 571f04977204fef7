#include "rotatek/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "rotatek/random.hpp"

namespace rotatek {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix to_double(const MatrixF& m) { return matrix_cast<double>(m); }

Matrix row_block(const MatrixF& m, std::size_t begin, std::size_t end) {
  Matrix out(end - begin, m.cols());
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t j = 0; j < m.cols(); ++j) out(r - begin, j) = static_cast<double>(m(r, j));
  return out;
}

Matrix select_rows(const Matrix& m, std::span<const std::uint8_t> mask) {
  std::size_t kept = 0;
  for (auto b : mask) kept += b ? 1 : 0;
  Matrix out(kept, m.cols());
  std::size_t r = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < m.cols(); ++j) out(r, j) = m(i, j);
    ++r;
  }
  return out;
}

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(top.data().size()));
  return out;
}

Vector concat(Vector a, const Vector& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Rows of the σ_W window and of the held-out probes. Probes are the last W
// queries; the window is the W queries before them when the sequence is long
// enough, otherwise both use the same rows.
struct QueryRanges {
  std::size_t window_begin = 0, window_end = 0;
  std::size_t probe_begin = 0, probe_end = 0;
  bool reuse = false;
};

QueryRanges query_ranges(std::size_t seq_len, std::size_t w) {
  QueryRanges q;
  q.probe_end = seq_len;
  if (seq_len >= 2 * w) {
    q.probe_begin = seq_len - w;
    q.window_begin = seq_len - 2 * w;
    q.window_end = seq_len - w;
  } else {
    const std::size_t n = std::min(w, seq_len);
    q.probe_begin = seq_len - n;
    q.window_begin = q.probe_begin;
    q.window_end = seq_len;
    q.reuse = true;
  }
  return q;
}

std::size_t kept_count(double token_keep, std::size_t n_visual) {
  const auto m = static_cast<std::size_t>(std::floor(token_keep * static_cast<double>(n_visual) + 0.5));
  return std::clamp<std::size_t>(m, 1, n_visual);
}

// FastV-style pruning: keep the visual tokens receiving the most attention
// from the σ_W window, summed over query heads.
std::vector<std::uint8_t> attention_mask(const TraceData& data, std::size_t layer, const QueryRanges& qr,
                                         std::size_t keep) {
  const auto& lay = data.layout;
  Vector mass(lay.n_visual, 0.0);
  for (std::size_t qh = 0; qh < lay.heads_q; ++qh) {
    const Matrix keys = row_block(data.key(layer, lay.kv_head_for(qh)), 0, lay.n_visual);
    const Matrix window = row_block(data.query(layer, qh), qr.window_begin, qr.window_end);
    for (std::size_t r = 0; r < window.rows(); ++r) {
      const Vector w = softmax(exact_scores(window.row(r), keys));
      for (std::size_t n = 0; n < w.size(); ++n) mass[n] += w[n];
    }
  }
  std::vector<std::size_t> order(lay.n_visual);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });
  std::vector<std::uint8_t> mask(lay.n_visual, 0);
  for (std::size_t i = 0; i < keep; ++i) mask[order[i]] = 1;
  return mask;
}

std::vector<std::uint8_t> random_mask(std::size_t n_visual, std::size_t keep, std::uint64_t seed, std::size_t layer) {
  std::vector<std::size_t> order(n_visual);
  std::iota(order.begin(), order.end(), 0);
  RandomStream rng(derive_seed(seed, layer, 0x6d61736bULL));
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t span = n_visual - i;
    const std::size_t j = i + std::min(span - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(span)));
    std::swap(order[i], order[j]);
  }
  std::vector<std::uint8_t> mask(n_visual, 0);
  for (std::size_t i = 0; i < keep; ++i) mask[order[i]] = 1;
  return mask;
}

std::vector<std::uint8_t> layer_mask(const ExperimentConfig& cfg, const TraceData& data, std::size_t layer,
                                     const QueryRanges& qr) {
  const std::size_t n = data.layout.n_visual;
  if (!data.token_mask.empty()) return data.token_mask;
  if (cfg.token_keep >= 1.0) return keep_all(n);
  const std::size_t keep = kept_count(cfg.token_keep, n);
  if (cfg.mask_policy == MaskPolicy::random) return random_mask(n, keep, cfg.subspace.seed, layer);
  return attention_mask(data, layer, qr, keep);
}

struct LayerTask {
  std::size_t cell = 0;
  std::size_t layer = 0;
};

struct LayerOutcome {
  std::vector<HeadResult> heads;
  CacheBytes bytes;
  double prefill_seconds = 0.0;
  double evaluate_seconds = 0.0;
};

struct Cell {
  Variant variant;
  double channel_keep = 1.0;
  std::size_t rank = 1;
};

PrefillInputs<float> layer_inputs(const TraceData& data, std::size_t layer, const QueryRanges& qr) {
  const auto& lay = data.layout;
  PrefillInputs<float> inputs;
  for (std::size_t h = 0; h < lay.heads_kv; ++h) {
    const MatrixF& k = data.key(layer, h);
    const MatrixF& v = data.value(layer, h);
    inputs.visual_keys.push_back(matrix_cast<float>(row_block(k, 0, lay.n_visual)));
    inputs.visual_values.push_back(matrix_cast<float>(row_block(v, 0, lay.n_visual)));
    inputs.text_keys.push_back(matrix_cast<float>(row_block(k, lay.n_visual, data.seq_len())));
    inputs.text_values.push_back(matrix_cast<float>(row_block(v, lay.n_visual, data.seq_len())));
  }
  for (std::size_t qh = 0; qh < lay.heads_q; ++qh) {
    inputs.query_windows.push_back(
        matrix_cast<float>(row_block(data.query(layer, qh), qr.window_begin, qr.window_end)));
  }
  return inputs;
}

SubspaceConfig cell_subspace(const ExperimentConfig& cfg, const Variant& variant, std::size_t rank) {
  SubspaceConfig sub = cfg.subspace;
  sub.rank_k = rank;
  sub.mode = variant.mode;
  sub.weighting = variant.weighting;
  return sub;
}

LayerOutcome run_layer(const ExperimentConfig& cfg, const TraceData& data, const Cell& cell, std::size_t layer,
                       std::span<const std::uint8_t> mask, const QueryRanges& qr) {
  const auto& lay = data.layout;
  const std::size_t d = lay.head_dim;
  const std::size_t group = lay.group_size();

  const SubspaceConfig sub = cell_subspace(cfg, cell.variant, cell.rank);

  LayerOutcome out;
  auto t0 = Clock::now();
  const PrefillInputs<float> inputs = layer_inputs(data, layer, qr);
  const CompressedCache cache = prefill_compress(inputs, mask, sub, lay, layer);
  out.prefill_seconds = seconds_since(t0);
  out.bytes = cache_bytes(cache);

  t0 = Clock::now();
  for (std::size_t h = 0; h < lay.heads_kv; ++h) {
    const Matrix visual_keys = select_rows(to_double(inputs.visual_keys[h]), mask);
    const Matrix text_keys = to_double(inputs.text_keys[h]);
    const Matrix values = stack(select_rows(to_double(inputs.visual_values[h]), mask), to_double(inputs.text_values[h]));
    const std::size_t n_kept = visual_keys.rows();

    Matrix window(0, d);
    for (std::size_t g = 0; g < group; ++g) window = stack(window, to_double(inputs.query_windows[h * group + g]));
    const QueryWeights sigma = query_channel_norms(window);

    const CenteredCovariance centered = centered_covariance(visual_keys);
    const Matrix objective = cell.variant.weighting == Weighting::query_aware
                                 ? weighted_covariance(centered.covariance, sigma)
                                 : centered.covariance;
    const RotationState& state = cache.heads[h].rotation;

    std::optional<ChannelMask> head_mask;
    std::optional<Matrix> zero_fill;
    std::optional<Matrix> mean_fill;
    if (cfg.baselines.headwise) head_mask = headwise_select(visual_keys, sigma, cell.rank);
    if (cfg.baselines.tokenwise) zero_fill = tokenwise_select(visual_keys, cell.rank, false).reconstructed;
    if (cfg.baselines.tokenwise_mean) mean_fill = tokenwise_select(visual_keys, cell.rank, true).reconstructed;

    ErrorAccumulator acc_rot;
    ErrorAccumulator acc_head;
    ErrorAccumulator acc_zero;
    ErrorAccumulator acc_mean;
    for (std::size_t g = 0; g < group; ++g) {
      const std::size_t qh = h * group + g;
      const Matrix probes = row_block(data.query(layer, qh), qr.probe_begin, qr.probe_end);
      for (std::size_t p = 0; p < probes.rows(); ++p) {
        const auto q = probes.row(p);
        const Vector text = exact_scores(q, text_keys);
        const Vector exact = concat(exact_scores(q, visual_keys), text);
        acc_rot.add(exact, decode_scores(q, cache, qh), values, n_kept);
        if (head_mask) acc_head.add(exact, concat(headwise_scores(q, visual_keys, *head_mask), text), values, n_kept);
        if (zero_fill) acc_zero.add(exact, concat(exact_scores(q, *zero_fill), text), values, n_kept);
        if (mean_fill) acc_mean.add(exact, concat(exact_scores(q, *mean_fill), text), values, n_kept);
      }
    }

    HeadResult r;
    r.layer = layer;
    r.kv_head = h;
    r.rank_exceeds_tokens = cache.heads[h].rank_exceeds_tokens;
    r.rotatek = acc_rot.summary();
    r.rotatek.captured_variance_ratio = captured_variance_ratio(state.basis, objective);
    r.rotatek.eckart_young_tail = eckart_young_tail(objective, cell.rank);
    if (head_mask) r.headwise = acc_head.summary();
    if (zero_fill) r.tokenwise = acc_zero.summary();
    if (mean_fill) r.tokenwise_mean = acc_mean.summary();
    out.heads.push_back(std::move(r));
  }
  out.evaluate_seconds = seconds_since(t0);
  return out;
}

ErrorSummary mean_summary(const std::vector<const ErrorSummary*>& items) {
  ErrorSummary m;
  if (items.empty()) return m;
  m.captured_variance_ratio = 0.0;
  for (const auto* s : items) {
    m.score_mse += s->score_mse;
    m.score_max_abs = std::max(m.score_max_abs, s->score_max_abs);
    m.weight_kl += s->weight_kl;
    m.output_l2 += s->output_l2;
    m.captured_variance_ratio += s->captured_variance_ratio;
    m.eckart_young_tail += s->eckart_young_tail;
  }
  const auto n = static_cast<double>(items.size());
  m.score_mse /= n;
  m.weight_kl /= n;
  m.output_l2 /= n;
  m.captured_variance_ratio /= n;
  m.eckart_young_tail /= n;
  return m;
}

std::optional<ErrorSummary> mean_optional(const std::vector<HeadResult>& heads,
                                          std::optional<ErrorSummary> HeadResult::*field) {
  std::vector<const ErrorSummary*> items;
  for (const auto& h : heads)
    if (h.*field) items.push_back(&*(h.*field));
  if (items.empty()) return std::nullopt;
  return mean_summary(items);
}

void add_bytes(CacheBytes& into, const CacheBytes& b) {
  into.visual_keys += b.visual_keys;
  into.visual_values += b.visual_values;
  into.text_keys += b.text_keys;
  into.text_values += b.text_values;
  into.rotation += b.rotation;
  into.total += b.total;
  into.uncompressed += b.uncompressed;
  into.baseline += b.baseline;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::string Variant::name() const {
  return std::string(to_string(mode)) + "/" + std::string(to_string(weighting));
}

std::vector<Variant> ablation_variants() {
  return {{SolverMode::cholesky_iteration, Weighting::query_aware},
          {SolverMode::full_eigh, Weighting::query_aware},
          {SolverMode::cholesky_iteration, Weighting::query_agnostic}};
}

std::size_t rank_for_keep(double channel_keep, std::size_t head_dim) {
  if (!(channel_keep > 0.0 && channel_keep <= 1.0)) {
    throw ConfigError("harness", "channel keep ratio " + std::to_string(channel_keep) + " outside (0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::floor(channel_keep * static_cast<double>(head_dim) + 0.5));
  return std::clamp<std::size_t>(k, 1, head_dim);
}

void ExperimentConfig::validate() const {
  if (!trace_path) layout.validate();
  if (layers < 1) throw ConfigError("harness", "layers must be >= 1");
  if (channel_keeps.empty()) throw ConfigError("harness", "channel_keeps is empty");
  if (variants.empty()) throw ConfigError("harness", "variants is empty");
  if (!(token_keep > 0.0 && token_keep <= 1.0)) {
    throw ConfigError("harness", "token_keep " + std::to_string(token_keep) + " outside (0, 1]");
  }
  if (window < 1) throw ConfigError("harness", "window must be >= 1");
  for (double keep : channel_keeps) {
    SubspaceConfig s = subspace;
    s.rank_k = rank_for_keep(keep, layout.head_dim);
    s.validate(layout.head_dim);
  }
  decode.validate();
  if (!trace_path) {
    SyntheticSpec spec = synthetic;
    spec.head_dim = layout.head_dim;
    spec.n_tokens = layout.n_visual + layout.n_text;
    spec.validate();
  }
}

TraceData make_synthetic_trace(const ExperimentConfig& cfg) {
  const auto& lay = cfg.layout;
  lay.validate();
  TraceData t;
  t.layout = lay;
  t.layers = cfg.layers;
  t.queries.resize(cfg.layers * lay.heads_q);
  t.keys.resize(cfg.layers * lay.heads_kv);
  t.values.resize(cfg.layers * lay.heads_kv);
  const std::size_t group = lay.group_size();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (std::size_t h = 0; h < lay.heads_kv; ++h) {
      SyntheticSpec spec = cfg.synthetic;
      spec.n_tokens = lay.n_visual + lay.n_text;
      spec.head_dim = lay.head_dim;
      spec.seed = derive_seed(cfg.synthetic.seed, l, h);
      const SyntheticHead head = gen_synthetic(spec);
      t.keys[l * lay.heads_kv + h] = matrix_cast<float>(head.keys);
      t.values[l * lay.heads_kv + h] = matrix_cast<float>(head.values);
      const auto queries = gen_synthetic_queries(spec, group);
      for (std::size_t g = 0; g < group; ++g)
        t.queries[l * lay.heads_q + h * group + g] = matrix_cast<float>(queries[g]);
    }
  }
  return t;
}

TraceData load_data(const ExperimentConfig& cfg) {
  return cfg.trace_path ? trace_read(*cfg.trace_path) : make_synthetic_trace(cfg);
}

CompressedCache compress_layer(const ExperimentConfig& cfg, const TraceData& data, std::size_t layer,
                               const Variant& variant, double channel_keep) {
  data.validate();
  if (layer >= data.layers) throw ConfigError("harness", "layer " + std::to_string(layer) + " out of range");
  const QueryRanges qr = query_ranges(data.seq_len(), cfg.window);
  const auto mask = layer_mask(cfg, data, layer, qr);
  const SubspaceConfig sub = cell_subspace(cfg, variant, rank_for_keep(channel_keep, data.layout.head_dim));
  return prefill_compress(layer_inputs(data, layer, qr), mask, sub, data.layout, layer);
}

std::vector<DecodeCheck> decode_check(const ExperimentConfig& cfg, const TraceData& data, const Variant& variant,
                                      double channel_keep) {
  const auto& lay = data.layout;
  DecodeConfig mono = cfg.decode;
  mono.path = DecodePath::monolithic;
  DecodeConfig split = cfg.decode;
  split.path = DecodePath::split_k;

  std::vector<DecodeCheck> out;
  for (std::size_t l = 0; l < data.layers; ++l) {
    const CompressedCache cache = compress_layer(cfg, data, l, variant, channel_keep);
    const QueryRanges qr = query_ranges(data.seq_len(), cfg.window);
    const auto mask = layer_mask(cfg, data, l, qr);
    for (std::size_t qh = 0; qh < lay.heads_q; ++qh) {
      const std::size_t h = lay.kv_head_for(qh);
      const Matrix keys = stack(select_rows(row_block(data.key(l, h), 0, lay.n_visual), mask),
                                row_block(data.key(l, h), lay.n_visual, data.seq_len()));
      const Matrix values = stack(select_rows(row_block(data.value(l, h), 0, lay.n_visual), mask),
                                  row_block(data.value(l, h), lay.n_visual, data.seq_len()));
      const Matrix q = row_block(data.query(l, qh), data.seq_len() - 1, data.seq_len());

      const Vector exact = exact_scores(q.row(0), keys);
      const Vector approx = decode_scores(q.row(0), cache, qh);
      DecodeCheck c;
      c.layer = l;
      c.q_head = qh;
      c.splits = split_factor(cache.n_kept, cfg.decode);
      for (std::size_t i = 0; i < exact.size(); ++i) {
        const double e = exact[i] - approx[i];
        c.score_max_abs = std::max(c.score_max_abs, std::abs(e));
        c.score_mse += e * e;
      }
      c.score_mse /= static_cast<double>(exact.size());

      const Vector exact_out = row_times(softmax(exact), values);
      const Vector out_mono = attention_output(q.row(0), cache, qh, mono);
      const Vector out_split = attention_output(q.row(0), cache, qh, split);
      const Vector& configured = cfg.decode.path == DecodePath::split_k ? out_split : out_mono;
      for (std::size_t j = 0; j < exact_out.size(); ++j) {
        const double e = configured[j] - exact_out[j];
        c.output_l2 += e * e;
        c.split_vs_monolithic = std::max(c.split_vs_monolithic, std::abs(out_split[j] - out_mono[j]));
      }
      c.output_l2 = std::sqrt(c.output_l2);
      out.push_back(c);
    }
  }
  return out;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  const TraceData data = load_data(cfg);
  const double load = seconds_since(t0);
  ExperimentReport report = run_experiment(cfg, data);
  report.load_seconds = load;
  report.total_seconds += load;
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg_in, const TraceData& data) {
  const auto t0 = Clock::now();
  data.validate();
  ExperimentConfig cfg = cfg_in;
  cfg.layout = data.layout;
  cfg.layers = data.layers;
  cfg.validate();

  const auto& lay = data.layout;
  if (data.seq_len() == 0) throw EmptyInputError("harness", "trace has no tokens");

  ExperimentReport report;
  const QueryRanges qr = query_ranges(data.seq_len(), cfg.window);
  report.probes_reuse_window = qr.reuse;

  std::vector<std::vector<std::uint8_t>> masks(data.layers);
  for (std::size_t l = 0; l < data.layers; ++l) {
    masks[l] = layer_mask(cfg, data, l, qr);
    std::size_t kept = 0;
    for (auto b : masks[l]) kept += b ? 1 : 0;
    report.n_kept.push_back(kept);
  }
  double token_keep = cfg.token_keep;
  if (!data.token_mask.empty() && lay.n_visual > 0) {
    token_keep = static_cast<double>(report.n_kept.front()) / static_cast<double>(lay.n_visual);
  }

  std::vector<Cell> cells;
  for (const auto& v : cfg.variants)
    for (double keep : cfg.channel_keeps) cells.push_back({v, keep, rank_for_keep(keep, lay.head_dim)});

  std::vector<LayerTask> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t l = 0; l < data.layers; ++l) tasks.push_back({c, l});

  std::vector<LayerOutcome> outcomes(tasks.size());
  const std::size_t threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    const auto& t = tasks[i];
    outcomes[i] = run_layer(cfg, data, cells[t.cell], t.layer, masks[t.layer], qr);
  });

  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellResult r;
    r.variant = cells[c].variant;
    r.channel_keep = cells[c].channel_keep;
    r.rank_k = cells[c].rank;
    r.budget = budget(token_keep, cells[c].channel_keep);
    for (std::size_t l = 0; l < data.layers; ++l) {
      auto& o = outcomes[c * data.layers + l];
      add_bytes(r.bytes, o.bytes);
      r.prefill_seconds += o.prefill_seconds;
      r.evaluate_seconds += o.evaluate_seconds;
      for (auto& h : o.heads) r.heads.push_back(std::move(h));
    }
    std::vector<const ErrorSummary*> rot;
    for (const auto& h : r.heads) rot.push_back(&h.rotatek);
    r.rotatek = mean_summary(rot);
    r.headwise = mean_optional(r.heads, &HeadResult::headwise);
    r.tokenwise = mean_optional(r.heads, &HeadResult::tokenwise);
    r.tokenwise_mean = mean_optional(r.heads, &HeadResult::tokenwise_mean);
    report.cells.push_back(std::move(r));
  }
  report.config = std::move(cfg);
  report.total_seconds = seconds_since(t0);
  return report;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("harness", "cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace rotatek
