#include "scalefit/ingest_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <system_error>

#include <fmt/core.h>

#include "scalefit/errors.hpp"

namespace scalefit {
namespace {

using nlohmann::json;

constexpr std::string_view kCsvColumns = "step,tokens,loss,split";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

bool blank(std::string_view s) { return trim(s).empty(); }

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

double parse_number(std::string_view text, std::string_view what, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ParseError(fmt::format("{}: '{}' is not a number", what, text), line);
  }
  return v;
}

json parse_json_line(const std::string& text, std::size_t line) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("malformed JSON: {}", e.what()), line);
  }
}

double number_field(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(fmt::format("missing field '{}'", key), line);
  if (!it->is_number()) throw ParseError(fmt::format("field '{}' is not a number", key), line);
  return it->get<double>();
}

std::string string_field(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(fmt::format("missing field '{}'", key), line);
  if (!it->is_string()) throw ParseError(fmt::format("field '{}' is not a string", key), line);
  return it->get<std::string>();
}

void check_version(const json& doc, const char* what) {
  const auto it = doc.find("schema_version");
  if (it == doc.end()) {
    throw FormatVersionError(fmt::format("{} has no schema_version", what));
  }
  if (!it->is_number_integer() || it->get<long long>() != kSchemaVersion) {
    throw FormatVersionError(fmt::format("{}: unsupported schema_version {} (expected {})",
                                         what, it->dump(), kSchemaVersion));
  }
}

Split split_field(std::string_view text, std::size_t line) {
  try {
    return parse_split(text);
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), line);
  }
}

void sort_samples(std::vector<TrajectorySample>& samples) {
  std::stable_sort(samples.begin(), samples.end(),
                   [](const TrajectorySample& a, const TrajectorySample& b) {
                     if (a.step != b.step) return a.step < b.step;
                     return a.split == Split::train && b.split == Split::test;
                   });
}

std::string json_string(const std::string& s) { return json(s).dump(); }

// Scientific notation for reals, integers as integers; non-finite -> null.
void emit(const json& value, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (value.type()) {
    case json::value_t::object: {
      if (value.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [key, item] : value.items()) {
        if (!first) out += ",\n";
        first = false;
        out += inner + json_string(key) + ": ";
        emit(item, out, indent + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (value.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (i > 0) out += ",\n";
        out += inner;
        emit(value[i], out, indent + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::number_float: {
      const double v = value.get<double>();
      out += std::isfinite(v) ? fmt::format("{:.16e}", v) : "null";
      return;
    }
    default:
      out += value.dump();
      return;
  }
}

json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

json regression_json(const StageDiagnostics& d) {
  return {{"stage", d.stage},
          {"slope", d.regression.slope},
          {"intercept", d.regression.intercept},
          {"r_squared", d.regression.r_squared},
          {"residual_std", d.regression.residual_std},
          {"samples", d.samples_used}};
}

std::istream& open_input(const std::filesystem::path& path, std::ifstream& file) {
  if (path == "-") return std::cin;
  file.open(path);
  if (!file) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  return file;
}

}  // namespace

std::string format_count(double value) {
  constexpr double kExactIntegers = 9007199254740992.0;  // 2^53
  if (std::isfinite(value) && value == std::trunc(value) && std::abs(value) < kExactIntegers) {
    return fmt::format("{:.0f}", value);
  }
  return fmt::format("{}", value);
}

RunRecord read_run_log(std::istream& in, std::vector<std::string>* warnings) {
  std::string text;
  std::size_t line = 0;
  bool have_header = false;
  while (!have_header && std::getline(in, text)) {
    ++line;
    have_header = !blank(text);
  }
  if (!have_header) throw ParseError("run log is empty; expected a JSON header", line + 1);

  const json header = parse_json_line(text, line);
  if (!header.is_object()) throw ParseError("header is not a JSON object", line);
  check_version(header, "run log header");
  RowFormat format = RowFormat::jsonl;
  if (const auto it = header.find("format"); it != header.end()) {
    const std::string f = it->is_string() ? it->get<std::string>() : std::string();
    if (f == "csv") {
      format = RowFormat::csv;
    } else if (f != "jsonl") {
      throw ParseError(fmt::format("unknown row format {}", it->dump()), line);
    }
  }

  RunRecord run;
  run.run_id = string_field(header, "run_id", line);
  run.n = ModelSize{number_field(header, "n_params", line)};
  run.batch_tokens = TokenCount{number_field(header, "batch_tokens", line)};
  run.context_length = header.contains("context_length")
                           ? number_field(header, "context_length", line)
                           : 0.0;
  run.dataset_tag = header.contains("dataset_tag") ? string_field(header, "dataset_tag", line)
                                                    : std::string();

  std::optional<double> last_step[2];
  while (std::getline(in, text)) {
    ++line;
    if (blank(text)) continue;
    TrajectorySample s;
    if (format == RowFormat::csv) {
      if (trim(text) == kCsvColumns) continue;
      const auto cells = split_commas(text);
      if (cells.size() != 4) {
        throw ParseError(fmt::format("expected 4 columns ({}), got {}", kCsvColumns,
                                     cells.size()),
                         line);
      }
      s.step = parse_number(cells[0], "step", line);
      s.tokens = parse_number(cells[1], "tokens", line);
      s.loss = parse_number(cells[2], "loss", line);
      s.split = split_field(cells[3], line);
    } else {
      const json row = parse_json_line(text, line);
      if (!row.is_object()) throw ParseError("row is not a JSON object", line);
      s.step = number_field(row, "step", line);
      s.tokens = number_field(row, "tokens", line);
      s.loss = number_field(row, "loss", line);
      s.split = split_field(string_field(row, "split", line), line);
    }
    if (!(s.loss > 0.0) || !std::isfinite(s.loss)) {
      throw ValidationError(
          fmt::format("line {}: loss must be positive and finite, got {}", line, s.loss));
    }
    auto& last = last_step[s.split == Split::train ? 0 : 1];
    if (last && !(s.step > *last)) {
      throw ValidationError(fmt::format(
          "line {}: {} step {} is {} previous step {}", line, to_string(s.split), s.step,
          s.step == *last ? "a duplicate of the" : "below the", *last));
    }
    last = s.step;
    run.samples.push_back(s);
  }
  sort_samples(run.samples);
  validate_run(run, warnings);
  return run;
}

RunRecord read_run_log(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream file;
  std::istream& in = open_input(path, file);
  return read_run_log(in, warnings);
}

void write_run_log(const RunRecord& run, std::ostream& out, RowFormat format) {
  validate_run(run);
  std::vector<TrajectorySample> samples = run.samples;
  sort_samples(samples);
  out << "{\"schema_version\":" << kSchemaVersion << ",\"format\":"
      << (format == RowFormat::csv ? "\"csv\"" : "\"jsonl\"")
      << ",\"run_id\":" << json_string(run.run_id)
      << ",\"n_params\":" << format_count(run.n.value)
      << ",\"batch_tokens\":" << format_count(run.batch_tokens.value)
      << ",\"context_length\":" << format_count(run.context_length)
      << ",\"dataset_tag\":" << json_string(run.dataset_tag) << "}\n";
  if (format == RowFormat::csv) out << kCsvColumns << '\n';
  for (const auto& s : samples) {
    if (format == RowFormat::csv) {
      out << fmt::format("{},{},{},{}\n", format_count(s.step), format_count(s.tokens), s.loss,
                         to_string(s.split));
    } else {
      out << fmt::format("{{\"step\":{},\"tokens\":{},\"loss\":{},\"split\":\"{}\"}}\n",
                         format_count(s.step), format_count(s.tokens), s.loss,
                         to_string(s.split));
    }
  }
}

void write_run_log(const RunRecord& run, const std::filesystem::path& path, RowFormat format) {
  std::ostringstream buffer;
  write_run_log(run, buffer, format);
  write_text_atomic(path, buffer.str());
}

ScalingConstants ConstantsDocument::constants() const {
  if (!complete()) {
    throw ValidationError("constants document is partial: b_star / alpha_b are missing");
  }
  ScalingConstants c;
  c.n_c = n_c;
  c.alpha_n = alpha_n;
  c.s_c = s_c;
  c.alpha_s = alpha_s;
  c.b_star = *b_star;
  c.alpha_b = *alpha_b;
  c.meta = meta;
  c.validate();
  return c;
}

ConstantsDocument make_constants_document(const ScalingConstants& c) {
  ConstantsDocument doc;
  doc.n_c = c.n_c;
  doc.alpha_n = c.alpha_n;
  doc.s_c = c.s_c;
  doc.alpha_s = c.alpha_s;
  doc.b_star = c.b_star;
  doc.alpha_b = c.alpha_b;
  doc.meta = c.meta;
  return doc;
}

ConstantsDocument make_constants_document(const FitReport& report) {
  ConstantsDocument doc;
  doc.n_c = report.n_c;
  doc.alpha_n = report.alpha_n;
  doc.s_c = report.s_c;
  doc.alpha_s = report.alpha_s;
  doc.b_star = report.b_star;
  doc.alpha_b = report.alpha_b;
  doc.meta = report.meta;

  json stages = json::array();
  stages.push_back(regression_json(report.converged.diagnostics));
  stages.push_back(regression_json(report.step_law.diagnostics));
  if (report.critical_batch) stages.push_back(regression_json(report.critical_batch->diagnostics));
  json contours = json::array();
  for (const auto& f : report.contour_fits) {
    contours.push_back({{"loss_target", f.loss_target},
                        {"s_min", f.s_min_hat},
                        {"e_min", f.e_min_hat},
                        {"b_crit", f.b_crit_hat},
                        {"points", f.point_count},
                        {"residual_rms", f.residual_rms}});
  }
  doc.diagnostics = {{"complete", report.complete},
                     {"stages", stages},
                     {"contours", contours},
                     {"warnings", report.warnings}};
  if (report.post_correction) {
    const auto& p = *report.post_correction;
    doc.diagnostics["post_correction"] = {{"b_star", p.b_star},
                                          {"alpha_b", p.alpha_b},
                                          {"rms_before", p.rms_before},
                                          {"rms_after", p.rms_after},
                                          {"original_pairs", p.original_pairs},
                                          {"analytic_pairs", p.analytic_pairs}};
  }
  return doc;
}

void write_constants(const ConstantsDocument& doc, std::ostream& out) {
  json constants = {{"n_c", doc.n_c},
                    {"alpha_n", doc.alpha_n},
                    {"s_c", doc.s_c},
                    {"alpha_s", doc.alpha_s},
                    {"b_star", optional_number(doc.b_star)},
                    {"alpha_b", optional_number(doc.alpha_b)}};
  // Fixed key order instead of json's sorted keys.
  std::string text = "{\n  \"schema_version\": " + std::to_string(doc.schema_version) +
                     ",\n  \"constants\": {\n";
  const char* order[] = {"n_c", "alpha_n", "s_c", "alpha_s", "b_star", "alpha_b"};
  for (std::size_t i = 0; i < 6; ++i) {
    text += fmt::format("    \"{}\": ", order[i]);
    emit(constants[order[i]], text, 2);
    text += i + 1 < 6 ? ",\n" : "\n";
  }
  text += "  },\n  \"meta\": ";
  emit(json(doc.meta), text, 1);
  text += ",\n  \"diagnostics\": ";
  emit(doc.diagnostics, text, 1);
  text += "\n}\n";
  out << text;
}

void write_constants(const ConstantsDocument& doc, const std::filesystem::path& path) {
  std::ostringstream buffer;
  write_constants(doc, buffer);
  write_text_atomic(path, buffer.str());
}

ConstantsDocument read_constants(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("malformed constants document: {}", e.what()), 1);
  }
  if (!doc.is_object()) throw ParseError("constants document is not a JSON object", 1);
  check_version(doc, "constants document");
  const auto block = doc.find("constants");
  if (block == doc.end() || !block->is_object()) {
    throw ValidationError("constants document has no \"constants\" object");
  }
  auto required = [&](const char* key) {
    const auto it = block->find(key);
    if (it == block->end() || !it->is_number()) {
      throw ValidationError(fmt::format("constants.{} is missing or not a number", key));
    }
    return it->get<double>();
  };
  auto optional = [&](const char* key) -> std::optional<double> {
    const auto it = block->find(key);
    if (it == block->end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) {
      throw ValidationError(fmt::format("constants.{} is not a number", key));
    }
    return it->get<double>();
  };

  ConstantsDocument out;
  out.schema_version = doc["schema_version"].get<int>();
  out.n_c = required("n_c");
  out.alpha_n = required("alpha_n");
  out.s_c = required("s_c");
  out.alpha_s = required("alpha_s");
  out.b_star = optional("b_star");
  out.alpha_b = optional("alpha_b");
  if (const auto it = doc.find("meta"); it != doc.end() && !it->is_null()) {
    if (!it->is_object()) throw ValidationError("meta must be an object of strings");
    for (const auto& [key, value] : it->items()) {
      if (!value.is_string()) {
        throw ValidationError(fmt::format("meta.{} must be a string", key));
      }
      out.meta[key] = value.get<std::string>();
    }
  }
  if (const auto it = doc.find("diagnostics"); it != doc.end() && !it->is_null()) {
    out.diagnostics = *it;
  }
  return out;
}

ConstantsDocument read_constants(const std::filesystem::path& path) {
  std::ifstream file;
  std::istream& in = open_input(path, file);
  return read_constants(in);
}

std::vector<ConvergedRun> read_converged_table(std::istream& in) {
  std::vector<ConvergedRun> runs;
  std::string text;
  std::size_t line = 0;
  bool header_seen = false;
  while (std::getline(in, text)) {
    ++line;
    if (blank(text)) continue;
    const auto cells = split_commas(text);
    if (!header_seen) {
      if (cells.size() != 2 || cells[0] != "n_params" || cells[1] != "final_loss") {
        throw ParseError("expected header 'n_params,final_loss'", line);
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != 2) throw ParseError("expected 2 columns", line);
    const double n = parse_number(cells[0], "n_params", line);
    const double loss = parse_number(cells[1], "final_loss", line);
    if (!(n > 0.0) || !std::isfinite(n) || !(loss > 0.0) || !std::isfinite(loss)) {
      throw ValidationError(
          fmt::format("line {}: n_params and final_loss must be positive", line));
    }
    runs.push_back({ModelSize{n}, LossNats{loss}});
  }
  if (!header_seen) throw ParseError("converged table is empty", line + 1);
  return runs;
}

std::vector<ConvergedRun> read_converged_table(const std::filesystem::path& path) {
  std::ifstream file;
  std::istream& in = open_input(path, file);
  return read_converged_table(in);
}

void write_converged_table(const std::vector<ConvergedRun>& runs, std::ostream& out) {
  out << "n_params,final_loss\n";
  for (const auto& r : runs) {
    out << format_count(r.n.value) << ',' << fmt::format("{}", r.final_loss.value) << '\n';
  }
}

void write_converged_table(const std::vector<ConvergedRun>& runs,
                           const std::filesystem::path& path) {
  std::ostringstream buffer;
  write_converged_table(runs, buffer);
  write_text_atomic(path, buffer.str());
}

RunRecord preprocess(const RunRecord& run, const PreprocessOptions& options) {
  validate_run(run);
  RunRecord out = trim_warmup(run, options.trim);
  if (out.samples.empty()) {
    throw ValidationError(fmt::format("run '{}': warm-up trimming removed every sample",
                                      run.run_id));
  }
  if (options.ema_half_life) out = smooth_ema(out, *options.ema_half_life);
  if (options.stride != 1) out = downsample(out, options.stride);
  return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path == "-") {
    std::cout << content << std::flush;
    return;
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError(fmt::format("cannot open '{}' for writing", tmp.string()));
    file << content;
    file.flush();
    if (!file) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw IoError(fmt::format("write to '{}' failed", tmp.string()));
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw IoError(fmt::format("cannot move '{}' to '{}': {}", tmp.string(), path.string(),
                              ec.message()));
  }
}

}  // namespace scalefit
