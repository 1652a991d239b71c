#include "scalefit/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <variant>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include "scalefit/errors.hpp"
#include "scalefit/fitting.hpp"
#include "scalefit/ingest_store.hpp"
#include "scalefit/planner.hpp"
#include "scalefit/synth.hpp"

namespace scalefit {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class OutputFormat { table, csv, jsonl };

using Cell = std::variant<std::monostate, double, std::string>;

std::string cell_text(const Cell& cell, bool exact) {
  if (std::holds_alternative<double>(cell)) {
    const double v = std::get<double>(cell);
    return exact ? fmt::format("{}", v) : fmt::format("{:.8g}", v);
  }
  if (std::holds_alternative<std::string>(cell)) return std::get<std::string>(cell);
  return exact ? "" : "-";
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

nlohmann::ordered_json cell_json(const Cell& cell) {
  if (std::holds_alternative<double>(cell)) {
    const double v = std::get<double>(cell);
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
  }
  if (std::holds_alternative<std::string>(cell)) return std::get<std::string>(cell);
  return nullptr;
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  std::string render(OutputFormat format) const {
    std::string out;
    if (format == OutputFormat::csv) {
      for (std::size_t j = 0; j < columns.size(); ++j) {
        out += (j ? "," : "") + csv_escape(columns[j]);
      }
      out += "\n";
      for (const auto& row : rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
          out += (j ? "," : "") + csv_escape(cell_text(row[j], true));
        }
        out += "\n";
      }
      return out;
    }
    if (format == OutputFormat::jsonl) {
      for (const auto& row : rows) {
        nlohmann::ordered_json obj = nlohmann::ordered_json::object();
        for (std::size_t j = 0; j < row.size(); ++j) obj[columns[j]] = cell_json(row[j]);
        out += obj.dump() + "\n";
      }
      return out;
    }
    std::vector<std::vector<std::string>> text;
    text.push_back(columns);
    for (const auto& row : rows) {
      std::vector<std::string> line;
      for (const auto& cell : row) line.push_back(cell_text(cell, false));
      text.push_back(line);
    }
    std::vector<std::size_t> width(columns.size(), 0);
    for (const auto& line : text) {
      for (std::size_t j = 0; j < line.size(); ++j) width[j] = std::max(width[j], line[j].size());
    }
    for (const auto& line : text) {
      std::string rendered;
      for (std::size_t j = 0; j < line.size(); ++j) {
        rendered += j + 1 < line.size() ? fmt::format("{:<{}}  ", line[j], width[j]) : line[j];
      }
      out += rendered + "\n";
    }
    return out;
  }
};

// One named value per field: two columns as a table, one wide row otherwise.
struct Record {
  std::vector<std::pair<std::string, Cell>> fields;

  void add(std::string name, Cell value) { fields.emplace_back(std::move(name), std::move(value)); }

  std::string render(OutputFormat format) const {
    if (format == OutputFormat::table) {
      Table t{{"field", "value"}, {}};
      for (const auto& [name, value] : fields) t.rows.push_back({name, value});
      return t.render(format);
    }
    Table t;
    std::vector<Cell> row;
    for (const auto& [name, value] : fields) {
      t.columns.push_back(name);
      row.push_back(value);
    }
    t.rows.push_back(row);
    return t.render(format);
  }
};

OutputFormat parse_format(const std::string& text) {
  if (text == "csv") return OutputFormat::csv;
  if (text == "jsonl") return OutputFormat::jsonl;
  return OutputFormat::table;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text_atomic(path, text);
  }
}

// Rethrows library errors with the file that caused them.
template <class F>
auto from_file(const std::string& path, F&& read) {
  try {
    return read();
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", path, e.what()));
  }
}

struct ConstantsSource {
  std::string path;
  std::string preset;

  void attach(CLI::App* app) {
    app->add_option("--constants", path, "constants document (JSON)");
    app->add_option("--preset", preset, "built-in constants")
        ->check(CLI::IsMember({"c4", "mixed"}));
  }
  bool given() const { return !path.empty() || !preset.empty(); }
  ScalingConstants load() const {
    if (!path.empty() && !preset.empty()) {
      throw UsageError("give either --constants or --preset, not both");
    }
    if (!path.empty()) {
      return from_file(path, [&] { return read_constants(fs::path(path)).constants(); });
    }
    if (preset == "c4") return presets::c4();
    if (preset == "mixed") return presets::mixed_corpus();
    throw UsageError("one of --constants or --preset is required");
  }
};

struct TrimFlags {
  WarmupTrim trim;

  void attach(CLI::App* app) {
    app->add_option("--warmup-min-step", trim.min_step, "drop steps below this")
        ->capture_default_str();
    app->add_option("--warmup-fraction", trim.fraction, "and below this fraction of the last step")
        ->capture_default_str();
  }
};

struct OutputFlags {
  std::string format = "table";
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("--format", format, "table, csv or jsonl")
        ->check(CLI::IsMember({"table", "csv", "jsonl"}))
        ->capture_default_str();
    app->add_option("--out", out, "output file (default stdout)");
  }
  OutputFormat kind() const { return parse_format(format); }
};

std::vector<std::string> split_on(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep)) parts.push_back(part);
  return parts;
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError(fmt::format("{}: '{}' is not a number", what, text));
  }
}

// "first:last:count" (log-spaced), "lin:first:last:count", or "s1,s2,...".
std::vector<double> parse_steps(const std::string& text) {
  if (text.find(':') != std::string::npos) {
    auto parts = split_on(text, ':');
    std::string kind = "log";
    if (parts.size() == 4) {
      kind = parts[0];
      parts.erase(parts.begin());
    }
    if (parts.size() != 3 || (kind != "log" && kind != "lin")) {
      throw UsageError(fmt::format("bad --steps grid '{}'", text));
    }
    const double first = parse_double(parts[0], "--steps");
    const double last = parse_double(parts[1], "--steps");
    const double count = parse_double(parts[2], "--steps");
    if (!(first >= 1.0) || !(last >= first) || !(count >= 1.0) || count != std::floor(count)) {
      throw UsageError("--steps grid needs 1 <= first <= last and an integer count >= 1");
    }
    if (kind == "log") return log_step_grid(first, last, static_cast<std::size_t>(count));
    std::vector<double> steps;
    const auto k = static_cast<std::size_t>(count);
    for (std::size_t i = 0; i < k; ++i) {
      const double s = k == 1 ? last
                              : std::round(first + (last - first) * static_cast<double>(i) /
                                                        static_cast<double>(k - 1));
      if (steps.empty() || s > steps.back()) steps.push_back(s);
    }
    return steps;
  }
  std::vector<double> steps;
  for (const auto& part : split_on(text, ',')) steps.push_back(parse_double(part, "--steps"));
  if (steps.empty()) throw UsageError("--steps is empty");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (!(steps[i] > steps[i - 1])) throw UsageError("--steps must be strictly increasing");
  }
  return steps;
}

RunLabels labels_for(const ScalingConstants& c, const std::string& run_id) {
  RunLabels labels;
  labels.run_id = run_id;
  if (auto it = c.meta.find("dataset_tag"); it != c.meta.end()) labels.dataset_tag = it->second;
  if (auto it = c.meta.find("context_length"); it != c.meta.end()) {
    labels.context_length = parse_double(it->second, "context_length");
  }
  return labels;
}

void print_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

// ---- fit ----

struct FitCommand {
  std::string converged_table;
  std::vector<std::string> converged_logs;
  std::string big_batch;
  std::vector<std::string> scans;
  std::vector<double> targets;
  std::size_t contours = 5;
  double half_life = 0.0;
  bool no_post_correct = false;
  TrimFlags trim;
  OutputFlags output;

  void attach(CLI::App* app) {
    app->add_option("--converged", converged_table, "converged-run table (n_params,final_loss)");
    app->add_option("--converged-log", converged_logs,
                    "run logs trained to convergence; the tail mean is the converged loss");
    app->add_option("--big-batch", big_batch, "run log at a (relatively) infinite batch")
        ->required();
    app->add_option("--scan", scans, "batch-size scan run logs");
    app->add_option("--targets", targets, "contour loss levels")->delimiter(',');
    app->add_option("--contours", contours, "number of automatic contour levels")
        ->capture_default_str();
    app->add_option("--smooth-half-life", half_life, "EMA half-life in steps");
    app->add_flag("--no-post-correct", no_post_correct, "skip the critical-batch post-correction");
    trim.attach(app);
    app->add_option("--format", output.format, "table, csv or jsonl")
        ->check(CLI::IsMember({"table", "csv", "jsonl"}))
        ->capture_default_str();
    app->add_option("--out", output.out, "constants document to write")->required();
  }

  int run(std::ostream& out, std::ostream& err) const {
    if (converged_table.empty() && converged_logs.empty()) {
      throw UsageError("fit needs --converged and/or --converged-log");
    }
    std::vector<std::string> warnings;
    std::vector<ConvergedRun> converged;
    if (!converged_table.empty()) {
      const auto table = from_file(converged_table, [&] {
        return read_converged_table(fs::path(converged_table));
      });
      converged.insert(converged.end(), table.begin(), table.end());
    }
    for (const auto& path : converged_logs) {
      converged.push_back(from_file(path, [&] {
        return converged_run_from_log(read_run_log(fs::path(path), &warnings), trim.trim);
      }));
    }
    const RunRecord big =
        from_file(big_batch, [&] { return read_run_log(fs::path(big_batch), &warnings); });
    std::vector<RunRecord> scan_runs;
    for (const auto& path : scans) {
      scan_runs.push_back(from_file(path, [&] { return read_run_log(fs::path(path), &warnings); }));
    }

    PipelineOptions options;
    options.trim = trim.trim;
    options.contour_targets = targets;
    options.contour_count = contours;
    if (half_life > 0.0) options.smoothing_half_life = half_life;
    options.post_correct = !no_post_correct;
    options.post_correction.trim = trim.trim;
    const FitReport report = fit_full_pipeline(converged, big, scan_runs, options);
    warnings.insert(warnings.end(), report.warnings.begin(), report.warnings.end());

    const ConstantsDocument doc = make_constants_document(report);
    std::ostringstream text;
    write_constants(doc, text);
    emit(text.str(), output.out, out);

    auto optional_cell = [](const std::optional<double>& v) { return v ? Cell{*v} : Cell{}; };
    const std::vector<std::pair<std::string, Cell>> values = {
        {"alpha_N", report.alpha_n}, {"alpha_S", report.alpha_s},
        {"alpha_B", optional_cell(report.alpha_b)}, {"N_c", report.n_c},
        {"S_c", report.s_c}, {"B_*", optional_cell(report.b_star)}};
    Table table;
    table.columns.push_back("Parameter");
    std::vector<Cell> row{std::string("Value")};
    for (const auto& [name, value] : values) {
      table.columns.push_back(name);
      row.push_back(value);
    }
    table.rows.push_back(row);
    // A constants document on stdout keeps the summary off it.
    std::ostream& summary = (output.out.empty() || output.out == "-") ? err : out;
    summary << table.render(output.kind());
    if (!report.complete) summary << "partial fit: critical-batch constants not estimated\n";
    print_warnings(warnings, err);
    return 0;
  }
};

// ---- predict ----

struct PredictCommand {
  ConstantsSource source;
  double n = 0.0;
  double batch = 0.0;
  std::string steps;
  OutputFlags output;

  void attach(CLI::App* app) {
    source.attach(app);
    app->add_option("--n-params", n, "model size")->required();
    app->add_option("--batch-tokens", batch, "batch size in tokens")->required();
    app->add_option("--steps", steps, "step grid: first:last:count, lin:first:last:count or a list")
        ->required();
    output.attach(app);
  }

  int run(std::ostream& out, std::ostream&) const {
    const ScalingConstants c = source.load();
    const auto grid = parse_steps(steps);
    const auto prediction = predict_trajectory(c, ModelSize{n}, TokenCount{batch}, grid);
    Table table{{"step", "loss"}, {}};
    for (const auto& p : prediction.points) table.rows.push_back({p.step, p.loss});
    emit(table.render(output.kind()), output.out, out);
    return 0;
  }
};

// ---- plan ----

struct PlanCommand {
  ConstantsSource source;
  std::optional<double> budget;
  std::optional<double> target;
  std::optional<double> n;
  double time_weight = 1.0;
  OutputFlags output;

  void attach(CLI::App* app) {
    source.attach(app);
    auto* b = app->add_option("--budget-flops", budget, "training compute in FLOPs");
    auto* t = app->add_option("--target-loss", target, "loss to reach at minimum compute");
    b->excludes(t);
    app->add_option("--n-params", n, "with --target-loss: also report steps for this size");
    app->add_option("--time-weight", time_weight, "weight of steps against compute")
        ->capture_default_str();
    output.attach(app);
  }

  static void add_plan(Record& r, const ScalingConstants& c, const AllocationPlan& p) {
    r.add("budget_flops", p.budget_flops);
    r.add("min_compute_flops", p.min_compute_flops);
    r.add("n_opt", p.n_opt.value);
    r.add("s_opt", p.s_opt.value);
    r.add("s_min", p.s_min.value);
    r.add("b_schedule", p.b_schedule.value);
    r.add("loss_converged", p.loss_converged.value);
    r.add("loss_final", p.loss_final.value);
    r.add("final_over_converged", p.loss_final.value / p.loss_converged.value);
    r.add("one_plus_alpha_n_over_alpha_s", final_loss_ratio(c));
    r.add("alpha_c", p.alpha_c);
    r.add("c_c", p.c_c);
  }

  int run(std::ostream& out, std::ostream& err) const {
    if (budget.has_value() == target.has_value()) {
      throw UsageError("plan needs exactly one of --budget-flops or --target-loss");
    }
    const ScalingConstants c = source.load();
    Record record;
    LossNats loss{0.0};
    if (budget) {
      const AllocationPlan plan = optimal_allocation(c, ComputeBudget{*budget});
      add_plan(record, c, plan);
      loss = plan.loss_final;
    } else {
      if (n) {
        const ModelSize size{*n};
        record.add("n_params", size.value);
        record.add("converged_floor", loss_at_convergence(c, size).value);
        record.add("min_steps", min_steps_for_loss(c, size, LossNats{*target}).value);
        record.add("min_tokens", min_tokens_for_loss(c, size, LossNats{*target}).value);
      }
      const BudgetForLoss inverse = min_budget_for_loss(c, LossNats{*target});
      record.add("target_loss", *target);
      add_plan(record, c, inverse.plan);
      loss = LossNats{*target};
    }
    const BatchRecommendation rec = recommend_batch(c, loss, time_weight);
    record.add("time_weight", time_weight);
    record.add("recommended_batch", rec.batch.value);
    record.add("batch_objective", rec.objective);
    if (!rec.advisory.empty()) {
      record.add("advisory", rec.advisory);
      err << "note: " << rec.advisory << "\n";
    }
    emit(record.render(output.kind()), output.out, out);
    return 0;
  }
};

// ---- scan ----

struct ScanCommand {
  std::vector<std::string> scans;
  std::vector<double> targets;
  std::size_t contours = 5;
  double half_life = 0.0;
  ConstantsSource source;
  TrimFlags trim;
  OutputFlags output;

  void attach(CLI::App* app) {
    app->add_option("--scan", scans, "batch-size scan run logs")->required();
    app->add_option("--targets", targets, "contour loss levels")->delimiter(',');
    app->add_option("--contours", contours, "number of automatic contour levels")
        ->capture_default_str();
    app->add_option("--smooth-half-life", half_life, "EMA half-life in steps");
    source.attach(app);
    trim.attach(app);
    output.attach(app);
  }

  int run(std::ostream& out, std::ostream& err) const {
    std::vector<std::string> warnings;
    std::vector<RunRecord> runs;
    for (const auto& path : scans) {
      RunRecord run = from_file(path, [&] { return read_run_log(fs::path(path), &warnings); });
      run = trim_warmup(run, trim.trim);
      if (half_life > 0.0 && !run.samples.empty()) run = smooth_ema(run, half_life);
      runs.push_back(std::move(run));
    }
    const auto levels = targets.empty() ? choose_contour_targets(runs, contours) : targets;
    const auto extraction = extract_contours(runs, levels);
    warnings.insert(warnings.end(), extraction.warnings.begin(), extraction.warnings.end());
    std::vector<ContourFit> fits;
    for (const auto& contour : extraction.contours) {
      try {
        fits.push_back(fit_contour(contour.loss_target, contour.points));
      } catch (const FitFailure& e) {
        warnings.push_back(fmt::format("contour dropped: {}", e.what()));
      }
    }
    const CriticalBatchFit law = fit_critical_batch_law(fits);
    double b_star = law.b_star;
    double alpha_b = law.alpha_b;
    if (source.given()) {
      ScalingConstants candidate = source.load();
      candidate.b_star = b_star;
      candidate.alpha_b = alpha_b;
      PostCorrectionOptions options;
      options.trim = WarmupTrim{0.0, 0.0};
      const PostCorrection post = post_correct_batch_law(candidate, fits, runs, options);
      warnings.insert(warnings.end(), post.warnings.begin(), post.warnings.end());
      b_star = post.b_star;
      alpha_b = post.alpha_b;
    }

    Table table{{"loss_target", "s_min", "e_min", "b_crit", "points", "residual_rms"}, {}};
    if (output.kind() != OutputFormat::table) {
      table.columns.push_back("fitted_b_star");
      table.columns.push_back("fitted_alpha_b");
    }
    for (const auto& f : fits) {
      std::vector<Cell> row{f.loss_target, f.s_min_hat, f.e_min_hat, f.b_crit_hat,
                            static_cast<double>(f.point_count), f.residual_rms};
      if (output.kind() != OutputFormat::table) {
        row.push_back(b_star);
        row.push_back(alpha_b);
      }
      table.rows.push_back(row);
    }
    std::string text = table.render(output.kind());
    if (output.kind() == OutputFormat::table) {
      text += fmt::format("\nB_* = {:.10g}\nalpha_B = {:.10g}{}\n", b_star, alpha_b,
                          source.given() ? " (post-corrected)" : "");
    }
    emit(text, output.out, out);
    print_warnings(warnings, err);
    return 0;
  }
};

// ---- simulate ----

struct SimulateCommand {
  ConstantsSource source;
  std::string kind = "suite";
  std::string out_path;
  std::optional<double> n;
  std::optional<double> batch;
  std::vector<double> batches;
  std::vector<double> sizes;
  std::string steps;
  std::size_t points = 4000;
  std::uint64_t seed = 0;
  double sigma = 0.0;
  double warmup_length = 0.0;
  double warmup_inflation = 0.0;
  bool converged_from_logs = false;
  std::string row_format = "jsonl";
  std::string run_id = "sim";

  void attach(CLI::App* app) {
    source.attach(app);
    app->add_option("--kind", kind, "suite, trajectory, scan or converged")
        ->check(CLI::IsMember({"suite", "trajectory", "scan", "converged"}))
        ->capture_default_str();
    app->add_option("--out", out_path, "directory (suite, scan) or file (trajectory, converged)")
        ->required();
    app->add_option("--n-params", n, "model size of the trajectory or scan");
    app->add_option("--batch-tokens", batch, "batch size of a trajectory");
    app->add_option("--batches", batches, "scan batch sizes")->delimiter(',');
    app->add_option("--sizes", sizes, "converged-run model sizes")->delimiter(',');
    app->add_option("--steps", steps, "step grid: first:last:count, lin:first:last:count or a list");
    app->add_option("--points", points, "samples per generated trajectory")->capture_default_str();
    app->add_option("--seed", seed, "noise seed")->capture_default_str();
    app->add_option("--noise-sigma", sigma, "log-normal noise level (0 = noiseless)")
        ->capture_default_str();
    app->add_option("--warmup-length", warmup_length, "trajectory warm-up length in steps");
    app->add_option("--warmup-inflation", warmup_inflation, "loss added at step 0 of warm-up");
    app->add_flag("--converged-from-logs", converged_from_logs,
                  "suite: converged losses from the tail of noisy runs");
    app->add_option("--row-format", row_format, "jsonl or csv")
        ->check(CLI::IsMember({"jsonl", "csv"}))
        ->capture_default_str();
    app->add_option("--run-id", run_id, "run id prefix")->capture_default_str();
  }

  NoiseSpec noise() const {
    return sigma > 0.0 ? NoiseSpec::lognormal(sigma, seed) : NoiseSpec::none();
  }
  RowFormat rows() const { return row_format == "csv" ? RowFormat::csv : RowFormat::jsonl; }

  SuiteSpec suite_spec(const ScalingConstants& c) const {
    SuiteSpec spec;
    spec.sizes = sizes;
    if (n) spec.run_n = *n;
    spec.points = points;
    spec.noise = noise();
    spec.converged_from_logs = converged_from_logs;
    spec.labels = labels_for(c, run_id);
    return spec;
  }

  std::vector<std::pair<std::string, std::string>> write_scan(const std::vector<RunRecord>& runs,
                                                             const fs::path& dir) const {
    std::vector<std::pair<std::string, std::string>> written;
    const std::string ext = row_format == "csv" ? ".csv" : ".jsonl";
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const fs::path file = dir / fmt::format("scan_{:02d}{}", i, ext);
      write_run_log(runs[i], file, rows());
      written.emplace_back("scan", file.string());
    }
    return written;
  }

  int run(std::ostream& out, std::ostream&) const {
    const ScalingConstants c = source.load();
    std::vector<std::pair<std::string, std::string>> written;
    auto make_dir = [&] {
      std::error_code ec;
      fs::create_directories(out_path, ec);
      if (ec) throw IoError(fmt::format("cannot create '{}': {}", out_path, ec.message()));
      return fs::path(out_path);
    };

    if (kind == "suite") {
      const fs::path dir = make_dir();
      const SyntheticSuite suite = gen_fit_suite(c, suite_spec(c));
      const std::string ext = row_format == "csv" ? ".csv" : ".jsonl";
      write_converged_table(suite.converged, dir / "converged.csv");
      written.emplace_back("converged", (dir / "converged.csv").string());
      write_run_log(suite.big_batch, dir / ("big_batch" + ext), rows());
      written.emplace_back("big_batch", (dir / ("big_batch" + ext)).string());
      const auto scans = write_scan(suite.scan, dir);
      written.insert(written.end(), scans.begin(), scans.end());
      write_constants(make_constants_document(c), dir / "constants.json");
      written.emplace_back("constants", (dir / "constants.json").string());
    } else if (kind == "converged") {
      if (sizes.empty()) throw UsageError("--kind converged needs --sizes");
      std::vector<ModelSize> ns;
      for (double s : sizes) ns.push_back(ModelSize{s});
      const auto runs = gen_converged_suite(c, ns, noise());
      std::ostringstream text;
      write_converged_table(runs, text);
      emit(text.str(), out_path, out);
      if (out_path == "-") return 0;
      written.emplace_back("converged", out_path);
    } else if (kind == "trajectory") {
      if (!batch) throw UsageError("--kind trajectory needs --batch-tokens");
      if (steps.empty()) throw UsageError("--kind trajectory needs --steps");
      const RunRecord run = gen_trajectory(c, ModelSize{n.value_or(1e7)}, TokenCount{*batch},
                                           parse_steps(steps), noise(),
                                           WarmupSpec{warmup_length, warmup_inflation},
                                           labels_for(c, run_id));
      std::ostringstream text;
      write_run_log(run, text, rows());
      emit(text.str(), out_path, out);
      if (out_path == "-") return 0;
      written.emplace_back("trajectory", out_path);
    } else {
      const fs::path dir = make_dir();
      std::vector<RunRecord> runs;
      if (batches.empty() && steps.empty()) {
        runs = gen_fit_suite(c, suite_spec(c)).scan;
      } else {
        if (batches.empty() || steps.empty()) {
          throw UsageError("--kind scan needs both --batches and --steps, or neither");
        }
        RunLabels labels = labels_for(c, run_id + "-scan");
        runs = gen_batch_scan(c, ModelSize{n.value_or(1e7)}, batches, parse_steps(steps),
                              noise(), labels);
      }
      written = write_scan(runs, dir);
    }
    Table table{{"kind", "path"}, {}};
    for (const auto& [k, p] : written) table.rows.push_back({k, p});
    out << table.render(OutputFormat::table);
    return 0;
  }
};

// ---- diagnose ----

struct DiagnoseCommand {
  std::vector<std::string> logs;
  double data_threshold = 0.01;
  double batch_threshold = 0.005;
  TrimFlags trim;
  OutputFlags output;

  void attach(CLI::App* app) {
    app->add_option("--log", logs, "run logs")->required();
    app->add_option("--data-threshold", data_threshold, "max test-train gap for infinite data")
        ->capture_default_str();
    app->add_option("--batch-threshold", batch_threshold,
                    "max loss change to the next larger batch")
        ->capture_default_str();
    trim.attach(app);
    output.attach(app);
  }

  int run(std::ostream& out, std::ostream& err) const {
    std::vector<std::string> warnings;
    std::vector<RunRecord> runs;
    for (const auto& path : logs) {
      runs.push_back(from_file(path, [&] { return read_run_log(fs::path(path), &warnings); }));
    }
    std::string text;
    Table data{{"run_id", "batch_tokens", "max_gap", "step_at_max_gap", "threshold",
                "relatively_infinite"},
               {}};
    std::vector<std::string> verdicts;
    for (const auto& run : runs) {
      if (!run.has_split(Split::train) || !run.has_split(Split::test)) {
        data.rows.push_back({run.run_id, run.batch_tokens.value, Cell{}, Cell{}, data_threshold,
                             std::string("n/a")});
        verdicts.push_back(fmt::format("{}: relatively infinite: n/a (needs train and test rows)",
                                       run.run_id));
        continue;
      }
      const DataDiagnosis d = diagnose_infinite_data(run, data_threshold, trim.trim);
      const std::string yes_no = d.relatively_infinite ? "yes" : "no";
      data.rows.push_back(
          {run.run_id, run.batch_tokens.value, d.max_gap, d.step_at_max_gap, d.threshold, yes_no});
      verdicts.push_back(fmt::format(
          "{}: relatively infinite: {} (max test-train gap {:.6g} at step {:.6g}, threshold {})",
          run.run_id, yes_no, d.max_gap, d.step_at_max_gap, d.threshold));
    }
    if (output.kind() == OutputFormat::table) {
      for (const auto& v : verdicts) text += v + "\n";
    } else {
      text += data.render(output.kind());
    }

    if (runs.size() >= 2) {
      std::vector<RunRecord> sorted = runs;
      std::sort(sorted.begin(), sorted.end(), [](const RunRecord& a, const RunRecord& b) {
        return a.batch_tokens.value < b.batch_tokens.value;
      });
      try {
        const BatchDiagnosis b =
            diagnose_infinite_batch(sorted, batch_threshold, trim.trim, Split::train);
        Table batch{{"batch_tokens", "next_batch_tokens", "max_deviation", "threshold"}, {}};
        for (std::size_t i = 0; i < b.max_deviation.size(); ++i) {
          batch.rows.push_back({sorted[i].batch_tokens.value, sorted[i + 1].batch_tokens.value,
                                b.max_deviation[i], b.threshold});
        }
        const std::string verdict =
            b.stationary_batch ? fmt::format("relatively infinite batch: {:.8g}", *b.stationary_batch)
                               : std::string("relatively infinite batch: none");
        if (output.kind() == OutputFormat::table) {
          text += "\n" + batch.render(output.kind()) + verdict + "\n";
        } else {
          err << verdict << "\n";
        }
      } catch (const Error& e) {
        warnings.push_back(fmt::format("batch diagnostic skipped: {}", e.what()));
      }
    }
    emit(text, output.out, out);
    print_warnings(warnings, err);
    return 0;
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scaling-law fitting, prediction and planning", "scalefit"};
  app.require_subcommand(1);

  FitCommand fit;
  PredictCommand predict;
  PlanCommand plan;
  ScanCommand scan;
  SimulateCommand simulate;
  DiagnoseCommand diagnose;
  auto* fit_app = app.add_subcommand("fit", "fit all six constants from run logs");
  auto* predict_app = app.add_subcommand("predict", "predict a loss trajectory");
  auto* plan_app = app.add_subcommand("plan", "compute-optimal allocation or budget for a loss");
  auto* scan_app = app.add_subcommand("scan", "fit the critical-batch law from a batch scan");
  auto* simulate_app = app.add_subcommand("simulate", "write synthetic run logs");
  auto* diagnose_app = app.add_subcommand("diagnose", "infinite-data and infinite-batch checks");
  fit.attach(fit_app);
  predict.attach(predict_app);
  plan.attach(plan_app);
  scan.attach(scan_app);
  simulate.attach(simulate_app);
  diagnose.attach(diagnose_app);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit_app->parsed()) return fit.run(out, err);
    if (predict_app->parsed()) return predict.run(out, err);
    if (plan_app->parsed()) return plan.run(out, err);
    if (scan_app->parsed()) return scan.run(out, err);
    if (simulate_app->parsed()) return simulate.run(out, err);
    if (diagnose_app->parsed()) return diagnose.run(out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const UnreachableLossError& e) {
    err << "error: " << e.what() << "\n"
        << fmt::format("converged floor: {:.10g}\n", e.floor());
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace scalefit
