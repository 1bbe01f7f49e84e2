#include "ctta/commands.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ctta {

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string seed_label(const std::string& method, std::uint64_t seed) {
  return method + "#seed=" + std::to_string(seed);
}

std::string render(const SummaryTable& t) {
  std::ostringstream out;
  std::size_t width = 6;
  for (const auto& r : t.rows) width = std::max(width, r.method.size());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), "method");
  out << buf;
  for (const auto& c : t.columns) {
    std::snprintf(buf, sizeof buf, " %10s", c.c_str());
    out << buf;
  }
  out << "       mean\n";
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), r.method.c_str());
    out << buf;
    for (double e : r.errors) {
      std::snprintf(buf, sizeof buf, " %10.1f", e);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, " %10.1f", r.mean);
    out << buf << '\n';
  }
  return out.str();
}

EngineConfig with_losses(EngineConfig e, bool single, bool mixup, bool cdm, bool scl) {
  e.strategy = Strategy::dcfs;
  e.losses = {single, mixup, cdm, scl};
  return e;
}

}  // namespace

Checkpoint cmd_pretrain(const RunConfig& config) {
  auto train = make_toy_dataset(config.source_data);
  train.name = "toy";
  auto eval = make_toy_dataset(config.eval_data);
  auto backbone = build_backbone<float>(config.arch, config.source_data.num_classes, config.seed, config.backbone);
  auto options = config.pretrain.options;
  options.eval_set = &eval;
  spdlog::info("pretraining {} on {} toy images for {} epochs", config.arch, train.size(), config.pretrain.epochs);
  auto ckpt = pretrain_source(backbone, train, config.pretrain.epochs, config.seed, options);
  if (config.checkpoint.has_parent_path()) ensure_dir(config.checkpoint.parent_path());
  ckpt.save(config.checkpoint);
  spdlog::info("checkpoint written to {} (clean accuracy {})", config.checkpoint.string(),
               ckpt.meta_value("clean_accuracy"));
  return ckpt;
}

Checkpoint load_source_checkpoint(const RunConfig& config) {
  if (!std::filesystem::exists(config.checkpoint)) {
    throw IoError("checkpoint " + config.checkpoint.string() + " does not exist (run pretrain first)");
  }
  return Checkpoint::load(config.checkpoint);
}

DomainStream make_stream(const RunConfig& config, std::uint64_t seed) {
  StreamConfig sc = config.stream;
  sc.seed = seed;
  if (sc.source == StreamSource::files) return build_stream(sc);
  auto opts = config.source_data;
  opts.num_samples = sc.samples_per_domain > 0 ? sc.samples_per_domain : config.eval_data.num_samples;
  opts.seed = config.stream_clean_seed + seed;
  auto clean = std::make_shared<const LabeledDataset>(make_toy_dataset(opts));
  return build_stream(sc, clean);
}

OnlineResult run_method(const RunConfig& config, const Checkpoint& source, EngineConfig engine, std::uint64_t seed,
                        const std::string& label) {
  engine.seed = seed;
  auto stream = make_stream(config, seed);
  Adapter<float> adapter(backbone_from_checkpoint<float>(source), engine);
  return run_stream(stream, adapter, label);
}

std::vector<SummaryRow> seed_rows(const std::vector<OnlineResult>& runs, const std::string& method) {
  auto table = emit_table(runs);
  if (table.rows.size() == 1) {
    table.rows[0].method = method;
    return table.rows;
  }
  auto rows = table.rows;
  rows.push_back(average_rows(table.rows, method));
  return rows;
}

SummaryTable cmd_adapt(const RunConfig& config) {
  ensure_dir(config.output_dir);
  write_text(config.output_dir / "config.json", config.document + "\n");
  const auto source = load_source_checkpoint(config);
  const auto method = to_string(config.engine.strategy);
  std::vector<OnlineResult> runs;
  for (auto seed : config.run_seeds()) {
    runs.push_back(run_method(config, source, config.engine, seed, seed_label(method, seed)));
    write_run_records(config.output_dir / ("records_" + method + "_seed" + std::to_string(seed) + ".jsonl"),
                      runs.back().records);
  }
  SummaryTable table = emit_table(runs);
  table.rows = seed_rows(runs, method);
  table.write(config.output_dir / "summary.csv");
  spdlog::info("{} mean error {:.2f}% over {} seed(s)", method, table.rows.back().mean, runs.size());
  return table;
}

SummaryTable cmd_ablate(const RunConfig& config) {
  ensure_dir(config.output_dir);
  write_text(config.output_dir / "config.json", config.document + "\n");
  const auto source = load_source_checkpoint(config);
  EngineConfig src = config.engine;
  src.strategy = Strategy::source;
  const std::vector<EngineConfig> variants = {
      src,
      with_losses(config.engine, true, true, false, false),
      with_losses(config.engine, true, true, true, false),
      with_losses(config.engine, true, true, false, true),
      with_losses(config.engine, true, true, true, true),
  };
  SummaryTable means, per_seed;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto& label = ablation_labels()[v];
    std::vector<OnlineResult> runs;
    for (auto seed : config.run_seeds()) runs.push_back(run_method(config, source, variants[v], seed, seed_label(label, seed)));
    auto table = emit_table(runs);
    if (means.columns.empty()) means.columns = per_seed.columns = table.columns;
    per_seed.rows.insert(per_seed.rows.end(), table.rows.begin(), table.rows.end());
    means.rows.push_back(average_rows(table.rows, label));
    spdlog::info("ablation {}: mean error {:.2f}%", label, means.rows.back().mean);
  }
  means.write(config.output_dir / "ablation.csv");
  per_seed.write(config.output_dir / "ablation_per_seed.csv");
  return means;
}

SweepResult cmd_sweep(const RunConfig& config) {
  ensure_dir(config.output_dir);
  const auto source = load_source_checkpoint(config);
  SweepResult sweep;
  sweep.param = config.sweep.param;
  const auto values = config.sweep.values.empty() ? default_sweep_grid() : config.sweep.values;
  for (double v : values) {
    EngineConfig e = config.engine;
    e.strategy = Strategy::dcfs;
    (sweep.param == "lambda_cdm" ? e.lambda_cdm : e.lambda_scl) = v;
    std::vector<OnlineResult> runs;
    for (auto seed : config.run_seeds()) runs.push_back(run_method(config, source, e, seed, "dcfs"));
    double mean = 0.0;
    for (const auto& r : runs) mean += r.mean_error;
    mean /= static_cast<double>(runs.size());
    sweep.points.push_back({e.lambda_cdm, e.lambda_scl, mean});
    spdlog::info("sweep {}={}: mean error {:.2f}%", sweep.param, v, mean);
  }
  const auto stem = config.output_dir / ("sweep_" + sweep.param);
  write_text(stem.string() + ".csv", sweep.to_csv());
  write_sweep_plot(stem.string() + ".png", sweep);
  const double spread = sweep.spread();
  spdlog::info("sweep {} spread {:.2f} points ({} threshold {:.1f})", sweep.param, spread,
               spread <= config.sweep.spread_threshold ? "within" : "above", config.sweep.spread_threshold);
  return sweep;
}

std::string cmd_report(const std::filesystem::path& dir, double spread_threshold) {
  if (!std::filesystem::is_directory(dir)) throw IoError("run directory " + dir.string() + " does not exist");
  std::ostringstream out;
  bool any = false;
  for (const char* name : {"summary.csv", "ablation.csv"}) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) continue;
    any = true;
    const auto table = SummaryTable::read(path);
    out << "== " << name << " (error %)\n" << render(table);
    for (const auto& r : table.rows) {
      double s = 0.0;
      for (double e : r.errors) s += e;
      const double recomputed = r.errors.empty() ? 0.0 : s / static_cast<double>(r.errors.size());
      // both sides carry one-decimal rounding
      if (std::abs(recomputed - r.mean) > 0.1 + 1e-9) {
        out << "warning: " << r.method << " mean " << r.mean << " differs from recomputed " << recomputed << '\n';
      }
    }
    out << '\n';
  }
  for (const char* param : {"lambda_cdm", "lambda_scl"}) {
    const auto path = dir / (std::string("sweep_") + param + ".csv");
    if (!std::filesystem::exists(path)) continue;
    any = true;
    const auto sweep = SweepResult::parse_csv(param, read_text(path));
    out << "== sweep " << param << '\n';
    char buf[96];
    for (const auto& p : sweep.points) {
      std::snprintf(buf, sizeof buf, "  %s = %.2f  mean error %.2f%%\n", param, sweep.swept_value(p), p.mean_error);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "  spread %.2f points (%s %.1f)\n\n", sweep.spread(),
                  sweep.spread() <= spread_threshold ? "within" : "above", spread_threshold);
    out << buf;
  }
  if (!any) throw DataError("no result files in " + dir.string());
  return out.str();
}

}  // namespace ctta
