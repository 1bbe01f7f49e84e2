#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctta/adaptation_engine.hpp"

namespace ctta {

/// 100 * mismatches / N. Throws DataError on length mismatch or empty input.
double error_rate(const std::vector<int>& predictions, const std::vector<int>& labels);

/// gaussian, shot, impulse, defocus, glass, motion, zoom, snow, frost, fog, brightness, contrast, elastic,
/// pixelate, jpeg.
const std::vector<std::string>& table_columns();

struct SummaryRow {
  std::string method;
  std::vector<double> errors;  // aligned with SummaryTable::columns
  double mean = 0.0;

  bool operator==(const SummaryRow&) const = default;
};

/// Methods by corruption columns plus the unweighted mean.
struct SummaryTable {
  std::vector<std::string> columns;  // subset of table_columns(), in table order
  std::vector<SummaryRow> rows;

  const SummaryRow& row(const std::string& method) const;
  std::string to_csv() const;
  static SummaryTable parse_csv(const std::string& text);
  void write(const std::filesystem::path& path) const;
  static SummaryTable read(const std::filesystem::path& path);
};

/// One row per result. All results must cover the same domains (DataError otherwise).
SummaryTable emit_table(const std::vector<OnlineResult>& results);

/// Mean over rows (seeds) of each column; the mean column is recomputed from the averaged entries.
SummaryRow average_rows(const std::vector<SummaryRow>& rows, const std::string& method);

/// source, +fdc, +fdc+cdm, +fdc+scl, full
const std::vector<std::string>& ablation_labels();

struct SweepPoint {
  double lambda_cdm = 1.0;
  double lambda_scl = 1.0;
  double mean_error = 0.0;
};

struct SweepResult {
  std::string param;  // "lambda_cdm" or "lambda_scl"
  std::vector<SweepPoint> points;

  double swept_value(const SweepPoint& p) const;
  /// max - min of mean_error; 0 for fewer than two points.
  double spread() const;
  std::string to_csv() const;
  static SweepResult parse_csv(const std::string& param, const std::string& text);
};

/// [0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6]
std::vector<double> default_sweep_grid();

/// Line plot of mean error against the swept value, written as an RGB PNG.
void write_sweep_plot(const std::filesystem::path& path, const SweepResult& sweep);

}  // namespace ctta
