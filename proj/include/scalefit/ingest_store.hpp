#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scalefit/fitting.hpp"
#include "scalefit/run_record.hpp"

namespace scalefit {

inline constexpr int kSchemaVersion = 1;

// Run logs: one JSON header line, then one row per line.
//
//   {"schema_version":1,"format":"jsonl","run_id":"r1","n_params":10000000,
//    "batch_tokens":500000,"context_length":1024,"dataset_tag":"c4"}
//   {"step":100,"tokens":50000000,"loss":4.25,"split":"train"}
//
// With "format":"csv" in the header the rows are `step,tokens,loss,split`
// (a literal `step,tokens,loss,split` column line is skipped).
enum class RowFormat { jsonl, csv };

// Paths equal to "-" mean stdin / stdout throughout this header.
RunRecord read_run_log(std::istream& in, std::vector<std::string>* warnings = nullptr);
RunRecord read_run_log(const std::filesystem::path& path,
                       std::vector<std::string>* warnings = nullptr);

// Rows are written sorted by step (train before test at equal steps).
void write_run_log(const RunRecord& run, std::ostream& out,
                   RowFormat format = RowFormat::jsonl);
void write_run_log(const RunRecord& run, const std::filesystem::path& path,
                   RowFormat format = RowFormat::jsonl);

/// Persisted constants. b_star / alpha_b are absent for a partial fit.
struct ConstantsDocument {
  int schema_version = kSchemaVersion;
  double n_c = 0.0;
  double alpha_n = 0.0;
  double s_c = 0.0;
  double alpha_s = 0.0;
  std::optional<double> b_star;
  std::optional<double> alpha_b;
  std::map<std::string, std::string> meta;
  nlohmann::json diagnostics = nlohmann::json::object();

  bool complete() const { return b_star.has_value() && alpha_b.has_value(); }
  // Throws ValidationError for a partial document.
  ScalingConstants constants() const;

  bool operator==(const ConstantsDocument&) const = default;
};

ConstantsDocument make_constants_document(const ScalingConstants& c);
ConstantsDocument make_constants_document(const FitReport& report);

// Constants are written in scientific notation with 17 significant digits.
void write_constants(const ConstantsDocument& doc, std::ostream& out);
void write_constants(const ConstantsDocument& doc, const std::filesystem::path& path);
ConstantsDocument read_constants(std::istream& in);
ConstantsDocument read_constants(const std::filesystem::path& path);

// Converged-run table: header `n_params,final_loss`, one run per line.
std::vector<ConvergedRun> read_converged_table(std::istream& in);
std::vector<ConvergedRun> read_converged_table(const std::filesystem::path& path);
void write_converged_table(const std::vector<ConvergedRun>& runs, std::ostream& out);
void write_converged_table(const std::vector<ConvergedRun>& runs,
                           const std::filesystem::path& path);

struct PreprocessOptions {
  WarmupTrim trim{0.0, 0.0};
  std::optional<double> ema_half_life;
  std::size_t stride = 1;
};

// Warm-up trim, then EMA smoothing, then stride downsampling. Throws
// ValidationError when trimming leaves no samples.
RunRecord preprocess(const RunRecord& run, const PreprocessOptions& options);

// Writes via a temporary sibling file and rename; "-" writes to stdout.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

// Shortest decimal text that reads back to the same double; integral values
// below 2^53 print without exponent or fraction.
std::string format_count(double value);

}  // namespace scalefit
