#pragma once

// Experiment orchestration: builds compressed caches for a grid of
// (solver variant × channel keep ratio) cells over synthetic or traced
// activations and measures decode-time score error against exact attention,
// next to head-wise and token-wise channel selection baselines.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rotatek/baselines.hpp"
#include "rotatek/cache.hpp"
#include "rotatek/decode.hpp"
#include "rotatek/metrics.hpp"
#include "rotatek/rotation.hpp"
#include "rotatek/synthetic.hpp"
#include "rotatek/trace.hpp"

namespace rotatek {

inline constexpr const char* kReportSchemaVersion = "rotatek.report/1";

enum class MaskPolicy { attention, random };

struct Variant {
  SolverMode mode = SolverMode::cholesky_iteration;
  Weighting weighting = Weighting::query_aware;

  std::string name() const;  // e.g. "cholesky/q_aware"
  bool operator==(const Variant&) const = default;
};

// The three ablation variants: cholesky/q_aware, eigh/q_aware, cholesky/q_agnostic.
std::vector<Variant> ablation_variants();

struct BaselineFlags {
  bool headwise = true;        // ThinK-style
  bool tokenwise = true;       // SparK-style, zero fill
  bool tokenwise_mean = true;  // SparK-style, mean fill
};

struct ExperimentConfig {
  SequenceLayout layout{512, 64, 64, 4, 2};
  std::size_t layers = 1;
  SubspaceConfig subspace;  // rank_k is derived per cell from channel_keeps
  DecodeConfig decode;
  double token_keep = 1.0;
  MaskPolicy mask_policy = MaskPolicy::attention;
  std::vector<double> channel_keeps = {0.5, 0.375, 0.25};
  std::vector<Variant> variants = {Variant{}};
  std::optional<std::filesystem::path> trace_path;  // synthetic data when empty
  SyntheticSpec synthetic;  // n_tokens / head_dim follow the layout
  BaselineFlags baselines;
  std::size_t window = 32;  // W, recent-query window for σ_W
  std::size_t threads = 1;

  void validate() const;
};

// Rank kept for a channel keep ratio: max(1, round(keep·d)).
std::size_t rank_for_keep(double channel_keep, std::size_t head_dim);

// Synthetic activations for every (layer, kv head) of the layout.
TraceData make_synthetic_trace(const ExperimentConfig& cfg);

struct HeadResult {
  std::size_t layer = 0;
  std::size_t kv_head = 0;
  ErrorSummary rotatek;
  std::optional<ErrorSummary> headwise;
  std::optional<ErrorSummary> tokenwise;
  std::optional<ErrorSummary> tokenwise_mean;
  bool rank_exceeds_tokens = false;
};

struct CellResult {
  Variant variant;
  double channel_keep = 1.0;
  std::size_t rank_k = 0;
  BudgetReport budget;
  CacheBytes bytes;  // summed over layers
  ErrorSummary rotatek;  // mean over (layer, kv head); score_max_abs is the max
  std::optional<ErrorSummary> headwise;
  std::optional<ErrorSummary> tokenwise;
  std::optional<ErrorSummary> tokenwise_mean;
  std::vector<HeadResult> heads;
  double prefill_seconds = 0.0;
  double evaluate_seconds = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<std::size_t> n_kept;  // surviving visual tokens per layer
  bool probes_reuse_window = false;  // sequence too short for disjoint probes
  std::vector<CellResult> cells;
  double load_seconds = 0.0;
  double total_seconds = 0.0;
};

// Activations of the configured data source (trace file or synthetic).
TraceData load_data(const ExperimentConfig& cfg);

// One layer compressed the way run_experiment does it, with the configured
// token pruning applied.
CompressedCache compress_layer(const ExperimentConfig& cfg, const TraceData& data, std::size_t layer,
                               const Variant& variant, double channel_keep);

// Single-step decode of the last query of every query head against a
// compressed layer, compared with exact full-channel attention.
struct DecodeCheck {
  std::size_t layer = 0;
  std::size_t q_head = 0;
  std::size_t splits = 0;
  double score_max_abs = 0.0;
  double score_mse = 0.0;
  double output_l2 = 0.0;            // configured path vs exact attention
  double split_vs_monolithic = 0.0;  // max |split-K − monolithic| over output channels
};

std::vector<DecodeCheck> decode_check(const ExperimentConfig& cfg, const TraceData& data, const Variant& variant,
                                      double channel_keep);

ExperimentReport run_experiment(const ExperimentConfig& cfg);
ExperimentReport run_experiment(const ExperimentConfig& cfg, const TraceData& data);

// Config documents (JSON). Unknown keys are rejected with ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

// Report documents.
std::string report_to_json(const ExperimentReport& report);
// CSV with a frozen column order; wall-clock fields are excluded so reruns
// are byte-identical.
std::string report_to_csv(const ExperimentReport& report);
const std::vector<std::string>& report_csv_columns();

}  // namespace rotatek
