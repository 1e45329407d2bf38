#pragma once

#include <string>
#include <utility>
#include <vector>

namespace dwtk {

inline constexpr const char* kReportSchema = "distilkit.v1";

/// A machine-readable table. CSV form:
///
///   # schema=distilkit.v1
///   # kind=<kind>
///   # <key>=<value>        (one line per meta entry)
///   col1,col2,...
///   ...
///
/// The JSON mirror holds the same fields: {"schema", "kind", "meta", "rows"}
/// with one object per row keyed by column name.
struct Report {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> cells);
  /// Column index; throws ValidationError if absent.
  std::size_t column(const std::string& name) const;
  const std::string& cell(std::size_t row, const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
  /// First meta value for `key`, or `fallback`.
  std::string meta_value(const std::string& key, const std::string& fallback = "") const;
};

/// Shortest decimal text that parses back to the same double.
std::string format_number(double value);
std::string format_number(long long value);
double parse_number(const std::string& text);

std::string to_csv(const Report& report);
std::string to_json(const Report& report);
Report parse_csv(const std::string& text);
Report parse_json(const std::string& text);

/// Writes `path` as CSV and a JSON mirror next to it (extension replaced by
/// .json), both atomically.
void write_report(const std::string& path, const Report& report);
std::string json_mirror_path(const std::string& csv_path);

/// Aligned plain-text rendering for terminals.
std::string render_text(const Report& report);

}  // namespace dwtk
