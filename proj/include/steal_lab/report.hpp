#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "steal_lab/extraction.hpp"

namespace steal_lab {

/// One point of a variance curve as stored in curves CSV files.
struct CurvePoint {
  std::string family;
  std::string trunk;
  std::size_t epoch = 0;
  double variance = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// dataset,target_size,family,trunk,M,seed,fidelity,target_acc,queries
/// A failed cell has an empty fidelity; an unknown target accuracy is empty.
void write_report_csv(const std::vector<FidelityRow>& rows, const std::filesystem::path& path);

/// dataset,target_size,family,trunk,seed,train_seconds
void write_timings_csv(const std::vector<TimingRow>& rows, const std::filesystem::path& path);

/// target_size,family,trunk,seed,message
void write_errors_csv(const std::vector<CellError>& errors, const std::filesystem::path& path);

/// family,trunk,epoch,variance
void write_curves_csv(const std::vector<CurvePoint>& points, const std::filesystem::path& path);
std::vector<CurvePoint> read_curves_csv(const std::filesystem::path& path);

/// Curve points of every run matching target_size and seed.
std::vector<CurvePoint> curve_points(const std::vector<CurveRow>& curves,
                                     const std::string& target_size, std::uint64_t seed);

/// Per-epoch median over seeds for one target size.
std::vector<CurvePoint> median_curve_points(const std::vector<CurveRow>& curves,
                                            const std::string& target_size);

/// Human-readable medians per grid cell; no timings, so it is reproducible.
std::string summarize(const ExperimentResult& result);

/// Writes report.csv, timings.csv, summary.txt, errors.csv (when any),
/// curves/<size>_seed<seed>.csv per run, curves/<size>_median.csv, and
/// curves.csv (the median curves of the first target size).
void write_experiment(const ExperimentResult& result, const std::filesystem::path& out);

/// Text file written with '\n' line endings, replacing any existing file.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace steal_lab
