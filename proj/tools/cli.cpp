#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "rotatek/experiment.hpp"

namespace rotatek::cli {
namespace {

using json = nlohmann::ordered_json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "json";
  bool quiet = false;
  std::string trace;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> layers;
  std::optional<std::size_t> n_visual;
  std::optional<std::size_t> n_text;
  std::optional<std::size_t> head_dim;
  std::optional<std::size_t> heads_q;
  std::optional<std::size_t> heads_kv;
  std::optional<std::size_t> window;
  std::optional<double> token_keep;
  std::vector<double> keep;
  std::vector<std::string> variants;
  std::optional<std::string> decode_path;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "Seed for synthetic data and subspace initialization");
  sub->add_option("--out", o.out, "Output path (stdout when omitted)");
  sub->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  sub->add_flag("--quiet", o.quiet, "Suppress the summary on stdout");
  sub->add_option("--trace", o.trace, "RTKC trace file (synthetic data when omitted)");
  sub->add_option("--threads", o.threads, "Worker threads (0 = hardware concurrency)");
  sub->add_option("--layers", o.layers, "Synthetic layers");
  sub->add_option("--n-visual", o.n_visual, "Synthetic visual tokens");
  sub->add_option("--n-text", o.n_text, "Synthetic text tokens");
  sub->add_option("--head-dim", o.head_dim, "Synthetic head dimension");
  sub->add_option("--heads-q", o.heads_q, "Synthetic query heads");
  sub->add_option("--heads-kv", o.heads_kv, "Synthetic key/value heads");
  sub->add_option("--window", o.window, "Query window W for channel weights");
  sub->add_option("--token-keep", o.token_keep, "Visual token keep ratio");
  sub->add_option("--keep", o.keep, "Channel keep ratio(s)");
  sub->add_option("--variant", o.variants, "Solver variant(s), e.g. cholesky/q_aware");
  sub->add_option("--decode-path", o.decode_path, "Decode path")->check(CLI::IsMember({"split_k", "monolithic"}));
}

ExperimentConfig make_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) {
    cfg.synthetic.seed = *o.seed;
    cfg.subspace.seed = *o.seed;
  }
  if (!o.trace.empty()) cfg.trace_path = o.trace;
  if (o.threads) cfg.threads = *o.threads;
  if (o.layers) cfg.layers = *o.layers;
  if (o.n_visual) cfg.layout.n_visual = *o.n_visual;
  if (o.n_text) cfg.layout.n_text = *o.n_text;
  if (o.head_dim) cfg.layout.head_dim = *o.head_dim;
  if (o.heads_q) cfg.layout.heads_q = *o.heads_q;
  if (o.heads_kv) cfg.layout.heads_kv = *o.heads_kv;
  if (o.window) cfg.window = *o.window;
  if (o.token_keep) cfg.token_keep = *o.token_keep;
  if (!o.keep.empty()) cfg.channel_keeps = o.keep;
  if (!o.variants.empty()) {
    cfg.variants.clear();
    for (const auto& v : o.variants) {
      const auto slash = v.find('/');
      if (slash == std::string::npos) throw ConfigError("cli", "variant '" + v + "' must look like solver/weighting");
      cfg.variants.push_back({parse_solver_mode(v.substr(0, slash)), parse_weighting(v.substr(slash + 1))});
    }
  }
  if (o.decode_path) cfg.decode.path = parse_decode_path(*o.decode_path);
  return cfg;
}

std::string real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9e", x);
  return buf;
}

void emit(const Options& o, const std::string& document, std::ostream& out) {
  if (o.out.empty()) {
    out << document;
    return;
  }
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw IoError("cannot open '" + o.out + "' for writing");
  f << document;
  if (!f) throw IoError("failed writing '" + o.out + "'");
}

json layout_json(const SequenceLayout& l) {
  return {{"n_visual", l.n_visual}, {"n_text", l.n_text}, {"head_dim", l.head_dim}, {"heads_q", l.heads_q},
          {"heads_kv", l.heads_kv}};
}

int cmd_gen(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw ConfigError("cli", "gen needs --out <path>");
  ExperimentConfig cfg = make_config(o);
  cfg.trace_path.reset();
  cfg.validate();
  const TraceData data = make_synthetic_trace(cfg);
  const auto bytes = encode_trace(data);
  write_file(o.out, bytes);
  if (!o.quiet) {
    if (o.format == "csv") {
      out << "path,layers,n_visual,n_text,head_dim,heads_q,heads_kv,bytes\n"
          << o.out << ',' << data.layers << ',' << data.layout.n_visual << ',' << data.layout.n_text << ','
          << data.layout.head_dim << ',' << data.layout.heads_q << ',' << data.layout.heads_kv << ','
          << bytes.size() << '\n';
    } else {
      json doc = {{"schema_version", kReportSchemaVersion},
                  {"command", "gen"},
                  {"path", o.out},
                  {"seed", cfg.synthetic.seed},
                  {"layers", data.layers},
                  {"layout", layout_json(data.layout)},
                  {"bytes", bytes.size()}};
      out << doc.dump(2) << '\n';
    }
  }
  return kOk;
}

std::filesystem::path layer_path(const std::string& base, std::size_t layer, std::size_t layers) {
  if (layers == 1) return base;
  std::filesystem::path p(base);
  const std::string ext = p.extension().string();
  p.replace_extension();
  return p.string() + ".layer" + std::to_string(layer) + ext;
}

int cmd_compress(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = make_config(o);
  cfg.validate();
  const TraceData data = load_data(cfg);
  const Variant variant = cfg.variants.front();
  const double keep = cfg.channel_keeps.front();

  json layers = json::array();
  std::ostringstream csv;
  csv << "layer,n_kept,rank_k,visual_key_bytes,visual_value_bytes,text_bytes,rotation_bytes,total_bytes,"
         "baseline_bytes\n";
  for (std::size_t l = 0; l < data.layers; ++l) {
    const CompressedCache cache = compress_layer(cfg, data, l, variant, keep);
    const CacheBytes b = cache_bytes(cache);
    if (!o.out.empty()) write_file(layer_path(o.out, l, data.layers), encode_cache(cache));
    bool exceeds = false;
    for (const auto& h : cache.heads) exceeds = exceeds || h.rank_exceeds_tokens;
    layers.push_back({{"layer", l},
                      {"n_kept", cache.n_kept},
                      {"rank_k", cache.rank()},
                      {"rank_exceeds_tokens", exceeds},
                      {"bytes",
                       {{"visual_keys", b.visual_keys},
                        {"visual_values", b.visual_values},
                        {"text_keys", b.text_keys},
                        {"text_values", b.text_values},
                        {"rotation", b.rotation},
                        {"total", b.total},
                        {"uncompressed", b.uncompressed},
                        {"baseline", b.baseline}}}});
    csv << l << ',' << cache.n_kept << ',' << cache.rank() << ',' << b.visual_keys << ',' << b.visual_values << ','
        << (b.text_keys + b.text_values) << ',' << b.rotation << ',' << b.total << ',' << b.baseline << '\n';
  }
  if (o.quiet) return kOk;
  const double token_keep = data.token_mask.empty()
                                ? cfg.token_keep
                                : static_cast<double>(std::count(data.token_mask.begin(), data.token_mask.end(), 1)) /
                                      static_cast<double>(data.layout.n_visual);
  const BudgetReport budget_report = budget(token_keep, keep);
  if (o.format == "csv") {
    out << csv.str();
  } else {
    json doc = {{"schema_version", kReportSchemaVersion},
                {"command", "compress"},
                {"variant", variant.name()},
                {"channel_keep", keep},
                {"budget",
                 {{"token_keep", budget_report.token_keep},
                  {"channel_keep", budget_report.channel_keep},
                  {"visual_cache_multiplier", budget_report.visual_cache_multiplier},
                  {"display", budget_report.display()}}},
                {"layout", layout_json(data.layout)},
                {"layers", layers}};
    out << doc.dump(2) << '\n';
  }
  return kOk;
}

int cmd_decode(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = make_config(o);
  cfg.validate();
  const TraceData data = load_data(cfg);
  const Variant variant = cfg.variants.front();
  const double keep = cfg.channel_keeps.front();
  const auto checks = decode_check(cfg, data, variant, keep);

  double max_abs = 0.0;
  double max_split = 0.0;
  for (const auto& c : checks) {
    max_abs = std::max(max_abs, c.score_max_abs);
    max_split = std::max(max_split, c.split_vs_monolithic);
  }
  std::string doc;
  if (o.format == "csv") {
    std::ostringstream s;
    s << "layer,q_head,splits,score_max_abs,score_mse,output_l2,split_vs_monolithic\n";
    for (const auto& c : checks) {
      s << c.layer << ',' << c.q_head << ',' << c.splits << ',' << real(c.score_max_abs) << ','
        << real(c.score_mse) << ',' << real(c.output_l2) << ',' << real(c.split_vs_monolithic) << '\n';
    }
    doc = s.str();
  } else {
    json rows = json::array();
    for (const auto& c : checks) {
      rows.push_back({{"layer", c.layer},
                      {"q_head", c.q_head},
                      {"splits", c.splits},
                      {"score_max_abs", c.score_max_abs},
                      {"score_mse", c.score_mse},
                      {"output_l2", c.output_l2},
                      {"split_vs_monolithic", c.split_vs_monolithic}});
    }
    json j = {{"schema_version", kReportSchemaVersion},
              {"command", "decode"},
              {"variant", variant.name()},
              {"channel_keep", keep},
              {"rank_k", rank_for_keep(keep, data.layout.head_dim)},
              {"decode_path", std::string(to_string(cfg.decode.path))},
              {"max_abs_score_error", max_abs},
              {"max_split_vs_monolithic", max_split},
              {"probes", rows}};
    doc = j.dump(2) + "\n";
  }
  if (!o.out.empty()) {
    emit(o, doc, out);
    if (!o.quiet) out << "max_abs_score_error " << real(max_abs) << '\n';
  } else if (!o.quiet) {
    out << doc;
  }
  return kOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = make_config(o);
  const ExperimentReport report = run_experiment(cfg);
  const std::string doc = o.format == "csv" ? report_to_csv(report) : report_to_json(report);
  if (!o.out.empty() || !o.quiet) emit(o, doc, out);
  return kOk;
}

int cmd_compare(const Options& o, std::ostream& out) {
  ExperimentConfig cfg = make_config(o);
  cfg.baselines = BaselineFlags{};
  const ExperimentReport report = run_experiment(cfg);

  auto mse = [](const std::optional<ErrorSummary>& s) { return s ? s->score_mse : 0.0; };
  std::string doc;
  if (o.format == "csv") {
    std::ostringstream s;
    s << "variant,channel_keep,rank_k,rotatek_score_mse,headwise_score_mse,tokenwise_score_mse,"
         "tokenwise_mean_score_mse,headwise_over_rotatek\n";
    for (const auto& c : report.cells) {
      const double ratio = c.rotatek.score_mse > 0.0 ? mse(c.headwise) / c.rotatek.score_mse : 0.0;
      s << c.variant.name() << ',' << real(c.channel_keep) << ',' << c.rank_k << ',' << real(c.rotatek.score_mse)
        << ',' << real(mse(c.headwise)) << ',' << real(mse(c.tokenwise)) << ',' << real(mse(c.tokenwise_mean))
        << ',' << real(ratio) << '\n';
    }
    doc = s.str();
  } else {
    json rows = json::array();
    for (const auto& c : report.cells) {
      rows.push_back({{"variant", c.variant.name()},
                      {"channel_keep", c.channel_keep},
                      {"rank_k", c.rank_k},
                      {"budget", c.budget.display()},
                      {"rotatek_score_mse", c.rotatek.score_mse},
                      {"headwise_score_mse", mse(c.headwise)},
                      {"tokenwise_score_mse", mse(c.tokenwise)},
                      {"tokenwise_mean_score_mse", mse(c.tokenwise_mean)}});
    }
    json j = {{"schema_version", kReportSchemaVersion}, {"command", "compare"}, {"rows", rows}};
    doc = j.dump(2) + "\n";
  }
  if (!o.out.empty() || !o.quiet) emit(o, doc, out);
  return kOk;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
      return kUsage;
    case ErrorKind::data:
      return kData;
    case ErrorKind::numerical:
      return kNumerical;
  }
  return kData;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Query-aware low-rank key cache compression toolkit", "rotatek"};
  app.require_subcommand(1);
  Options o;
  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const Options&, std::ostream&);
  };
  const Sub subs[] = {
      {"gen", "Write a synthetic trace", cmd_gen},
      {"compress", "Compress a trace and report cache sizes", cmd_compress},
      {"decode", "Single-step decode against the compressed cache with an error report", cmd_decode},
      {"sweep", "Run the experiment grid", cmd_sweep},
      {"compare", "Compare against channel selection baselines", cmd_compare},
  };
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, o);
    apps.push_back(sub);
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "rotatek: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : apps)
      if (sub->parsed()) failing = sub;
    err << failing->help();
    return kUsage;
  }

  try {
    for (std::size_t i = 0; i < apps.size(); ++i)
      if (apps[i]->parsed()) return subs[i].fn(o, out);
  } catch (const Error& e) {
    err << "rotatek: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "rotatek: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace rotatek::cli
