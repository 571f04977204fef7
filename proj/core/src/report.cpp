#include <cinttypes>
#include <cstdio>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "rotatek/experiment.hpp"

namespace rotatek {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& what) { throw ConfigError("config", what); }

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
  if (!obj.is_object()) bad("'" + where + "' must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [k, _] : obj.items())
    if (!allowed.contains(k)) bad("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) bad(std::string("'") + key + "' must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned())
        bad(std::string("'") + key + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) bad(std::string("'") + key + "' must be a number");
    } else {
      if (!v.is_string()) bad(std::string("'") + key + "' must be a string");
    }
    out = v.get<T>();
  } catch (const json::exception& e) {
    bad(std::string("'") + key + "': " + e.what());
  }
}

Variant parse_variant(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos) bad("variant '" + text + "' must look like solver/weighting");
  return {parse_solver_mode(text.substr(0, slash)), parse_weighting(text.substr(slash + 1))};
}

json summary_json(const ErrorSummary& s) {
  return {{"score_mse", s.score_mse},
          {"score_max_abs", s.score_max_abs},
          {"weight_kl", s.weight_kl},
          {"output_l2", s.output_l2},
          {"captured_variance_ratio", s.captured_variance_ratio},
          {"eckart_young_tail", s.eckart_young_tail}};
}

json baseline_json(const std::optional<ErrorSummary>& s) {
  if (!s) return nullptr;
  json j = summary_json(*s);
  j.erase("captured_variance_ratio");
  j.erase("eckart_young_tail");
  return j;
}

json bytes_json(const CacheBytes& b) {
  return {{"visual_keys", b.visual_keys}, {"visual_values", b.visual_values}, {"text_keys", b.text_keys},
          {"text_values", b.text_values}, {"rotation", b.rotation},           {"total", b.total},
          {"uncompressed", b.uncompressed}, {"baseline", b.baseline}};
}

std::string fmt_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9e", x);
  return buf;
}

std::string fmt_optional(const std::optional<ErrorSummary>& s) { return s ? fmt_real(s->score_mse) : std::string(); }

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    bad(std::string("not valid JSON: ") + e.what());
  }
  reject_unknown(root, "config",
                 {"layout", "layers", "subspace", "decode", "token_keep", "mask_policy", "channel_keeps", "variants",
                  "trace", "synthetic", "baselines", "window", "threads"});
  ExperimentConfig cfg;
  if (root.contains("layout")) {
    const json& l = root["layout"];
    reject_unknown(l, "layout", {"n_visual", "n_text", "head_dim", "heads_q", "heads_kv"});
    read(l, "n_visual", cfg.layout.n_visual);
    read(l, "n_text", cfg.layout.n_text);
    read(l, "head_dim", cfg.layout.head_dim);
    read(l, "heads_q", cfg.layout.heads_q);
    read(l, "heads_kv", cfg.layout.heads_kv);
  }
  read(root, "layers", cfg.layers);
  if (root.contains("subspace")) {
    const json& s = root["subspace"];
    reject_unknown(s, "subspace", {"iterations", "ridge_epsilon", "seed"});
    read(s, "iterations", cfg.subspace.iterations);
    read(s, "ridge_epsilon", cfg.subspace.ridge_epsilon);
    read(s, "seed", cfg.subspace.seed);
  }
  if (root.contains("decode")) {
    const json& d = root["decode"];
    reject_unknown(d, "decode", {"block_n", "max_splits", "path"});
    read(d, "block_n", cfg.decode.block_n);
    read(d, "max_splits", cfg.decode.max_splits);
    std::string path(to_string(cfg.decode.path));
    read(d, "path", path);
    cfg.decode.path = parse_decode_path(path);
  }
  read(root, "token_keep", cfg.token_keep);
  if (root.contains("mask_policy")) {
    std::string policy;
    read(root, "mask_policy", policy);
    if (policy == "attention") {
      cfg.mask_policy = MaskPolicy::attention;
    } else if (policy == "random") {
      cfg.mask_policy = MaskPolicy::random;
    } else {
      bad("mask_policy must be 'attention' or 'random'");
    }
  }
  if (root.contains("channel_keeps")) {
    const json& k = root["channel_keeps"];
    if (!k.is_array()) bad("'channel_keeps' must be an array");
    cfg.channel_keeps.clear();
    for (const auto& v : k) {
      if (!v.is_number()) bad("'channel_keeps' entries must be numbers");
      cfg.channel_keeps.push_back(v.get<double>());
    }
  }
  if (root.contains("variants")) {
    const json& v = root["variants"];
    if (!v.is_array()) bad("'variants' must be an array");
    cfg.variants.clear();
    for (const auto& e : v) {
      if (!e.is_string()) bad("'variants' entries must be strings");
      cfg.variants.push_back(parse_variant(e.get<std::string>()));
    }
  }
  if (root.contains("trace") && !root["trace"].is_null()) {
    std::string path;
    read(root, "trace", path);
    cfg.trace_path = path;
  }
  if (root.contains("synthetic")) {
    const json& s = root["synthetic"];
    reject_unknown(s, "synthetic",
                   {"planted_rank", "outlier_channels", "outlier_gain", "rope_pairs", "rope_base_frequency",
                    "noise_sigma", "seed"});
    read(s, "planted_rank", cfg.synthetic.planted_rank);
    read(s, "outlier_channels", cfg.synthetic.outlier_channels);
    read(s, "outlier_gain", cfg.synthetic.outlier_gain);
    read(s, "rope_pairs", cfg.synthetic.rope_pairs);
    read(s, "rope_base_frequency", cfg.synthetic.rope_base_frequency);
    read(s, "noise_sigma", cfg.synthetic.noise_sigma);
    read(s, "seed", cfg.synthetic.seed);
  }
  if (root.contains("baselines")) {
    const json& b = root["baselines"];
    reject_unknown(b, "baselines", {"headwise", "tokenwise", "tokenwise_mean"});
    read(b, "headwise", cfg.baselines.headwise);
    read(b, "tokenwise", cfg.baselines.tokenwise);
    read(b, "tokenwise_mean", cfg.baselines.tokenwise_mean);
  }
  read(root, "window", cfg.window);
  read(root, "threads", cfg.threads);
  cfg.validate();
  return cfg;
}

namespace {

json config_json(const ExperimentConfig& cfg) {
  json variants = json::array();
  for (const auto& v : cfg.variants) variants.push_back(v.name());
  return {
      {"layout",
       {{"n_visual", cfg.layout.n_visual},
        {"n_text", cfg.layout.n_text},
        {"head_dim", cfg.layout.head_dim},
        {"heads_q", cfg.layout.heads_q},
        {"heads_kv", cfg.layout.heads_kv}}},
      {"layers", cfg.layers},
      {"subspace",
       {{"iterations", cfg.subspace.iterations},
        {"ridge_epsilon", cfg.subspace.ridge_epsilon},
        {"seed", cfg.subspace.seed}}},
      {"decode",
       {{"block_n", cfg.decode.block_n},
        {"max_splits", cfg.decode.max_splits},
        {"path", std::string(to_string(cfg.decode.path))}}},
      {"token_keep", cfg.token_keep},
      {"mask_policy", cfg.mask_policy == MaskPolicy::random ? "random" : "attention"},
      {"channel_keeps", cfg.channel_keeps},
      {"variants", variants},
      {"trace", cfg.trace_path ? json(cfg.trace_path->string()) : json(nullptr)},
      {"synthetic",
       {{"planted_rank", cfg.synthetic.planted_rank},
        {"outlier_channels", cfg.synthetic.outlier_channels},
        {"outlier_gain", cfg.synthetic.outlier_gain},
        {"rope_pairs", cfg.synthetic.rope_pairs},
        {"rope_base_frequency", cfg.synthetic.rope_base_frequency},
        {"noise_sigma", cfg.synthetic.noise_sigma},
        {"seed", cfg.synthetic.seed}}},
      {"baselines",
       {{"headwise", cfg.baselines.headwise},
        {"tokenwise", cfg.baselines.tokenwise},
        {"tokenwise_mean", cfg.baselines.tokenwise_mean}}},
      {"window", cfg.window},
      {"threads", cfg.threads},
  };
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

std::string report_to_json(const ExperimentReport& report) {
  json cells = json::array();
  bool any_rank_exceeds = false;
  for (const auto& c : report.cells) {
    json heads = json::array();
    for (const auto& h : c.heads) {
      any_rank_exceeds = any_rank_exceeds || h.rank_exceeds_tokens;
      heads.push_back({{"layer", h.layer},
                       {"kv_head", h.kv_head},
                       {"rank_exceeds_tokens", h.rank_exceeds_tokens},
                       {"rotatek", summary_json(h.rotatek)},
                       {"headwise", baseline_json(h.headwise)},
                       {"tokenwise", baseline_json(h.tokenwise)},
                       {"tokenwise_mean", baseline_json(h.tokenwise_mean)}});
    }
    cells.push_back({{"variant", c.variant.name()},
                     {"solver", std::string(to_string(c.variant.mode))},
                     {"weighting", std::string(to_string(c.variant.weighting))},
                     {"channel_keep", c.channel_keep},
                     {"rank_k", c.rank_k},
                     {"budget",
                      {{"token_keep", c.budget.token_keep},
                       {"channel_keep", c.budget.channel_keep},
                       {"visual_cache_multiplier", c.budget.visual_cache_multiplier},
                       {"display", c.budget.display()}}},
                     {"bytes", bytes_json(c.bytes)},
                     {"rotatek", summary_json(c.rotatek)},
                     {"headwise", baseline_json(c.headwise)},
                     {"tokenwise", baseline_json(c.tokenwise)},
                     {"tokenwise_mean", baseline_json(c.tokenwise_mean)},
                     {"heads", heads},
                     {"timing", {{"prefill_seconds", c.prefill_seconds}, {"evaluate_seconds", c.evaluate_seconds}}}});
  }
  json doc = {{"schema_version", kReportSchemaVersion},
              {"config", config_json(report.config)},
              {"seeds", {{"subspace", report.config.subspace.seed}, {"synthetic", report.config.synthetic.seed}}},
              {"n_kept", report.n_kept},
              {"flags", {{"probes_reuse_window", report.probes_reuse_window}, {"rank_exceeds_tokens", any_rank_exceeds}}},
              {"cells", cells},
              {"timing", {{"load_seconds", report.load_seconds}, {"total_seconds", report.total_seconds}}}};
  return doc.dump(2) + "\n";
}

const std::vector<std::string>& report_csv_columns() {
  static const std::vector<std::string> columns = {
      "variant",          "channel_keep",        "rank_k",
      "token_keep",       "visual_cache_multiplier", "visual_cache_display",
      "score_mse",        "score_max_abs",       "weight_kl",
      "output_l2",        "captured_variance_ratio", "eckart_young_tail",
      "headwise_score_mse", "tokenwise_score_mse", "tokenwise_mean_score_mse",
      "visual_key_bytes", "visual_value_bytes",  "text_bytes",
      "total_bytes",      "baseline_bytes"};
  return columns;
}

std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  const auto& cols = report_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (const auto& c : report.cells) {
    const auto& s = c.rotatek;
    out << c.variant.name() << ',' << fmt_real(c.channel_keep) << ',' << c.rank_k << ',' << fmt_real(c.budget.token_keep)
        << ',' << fmt_real(c.budget.visual_cache_multiplier) << ',' << c.budget.display() << ','
        << fmt_real(s.score_mse) << ',' << fmt_real(s.score_max_abs) << ',' << fmt_real(s.weight_kl) << ','
        << fmt_real(s.output_l2) << ',' << fmt_real(s.captured_variance_ratio) << ','
        << fmt_real(s.eckart_young_tail) << ',' << fmt_optional(c.headwise) << ',' << fmt_optional(c.tokenwise)
        << ',' << fmt_optional(c.tokenwise_mean) << ',' << c.bytes.visual_keys << ',' << c.bytes.visual_values
        << ',' << (c.bytes.text_keys + c.bytes.text_values) << ',' << c.bytes.total << ',' << c.bytes.baseline
        << "\n";
  }
  return out.str();
}

}  // namespace rotatek
