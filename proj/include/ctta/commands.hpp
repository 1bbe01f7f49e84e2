#pragma once

#include <string>
#include <vector>

#include "ctta/checkpoint.hpp"
#include "ctta/config.hpp"
#include "ctta/metrics_report.hpp"

namespace ctta {

/// Trains the source model on the toy dataset and writes model.checkpoint.
Checkpoint cmd_pretrain(const RunConfig& config);

/// Reads model.checkpoint; IoError when it is missing.
Checkpoint load_source_checkpoint(const RunConfig& config);

/// Stream for one seed. Synthetic streams corrupt a fresh clean toy draw seeded with clean_seed + seed.
DomainStream make_stream(const RunConfig& config, std::uint64_t seed);

/// One continual run of `engine` (its seed is replaced by `seed`).
OnlineResult run_method(const RunConfig& config, const Checkpoint& source, EngineConfig engine, std::uint64_t seed,
                        const std::string& label);

/// Per-seed rows labelled "<method>#seed=<k>" followed by the seed-averaged row "<method>".
/// A single seed yields only the "<method>" row.
std::vector<SummaryRow> seed_rows(const std::vector<OnlineResult>& runs, const std::string& method);

/// Runs the configured strategy for every seed; writes summary.csv, records_<method>_seed<k>.jsonl and
/// config.json under output_dir.
SummaryTable cmd_adapt(const RunConfig& config);

/// The five loss configurations in table order; writes ablation.csv (seed means, five rows) and
/// ablation_per_seed.csv.
SummaryTable cmd_ablate(const RunConfig& config);

/// Seed-averaged mean error of DCFS for each value of sweep.param; writes sweep_<param>.csv and .png.
SweepResult cmd_sweep(const RunConfig& config);

/// Human-readable rendering of whichever result files exist in `dir`.
std::string cmd_report(const std::filesystem::path& dir, double spread_threshold = 3.0);

}  // namespace ctta
