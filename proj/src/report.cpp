#include "dwtk/report.hpp"

#include "dwtk/checkpoint.hpp"
#include "dwtk/types.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace dwtk {
namespace {

using Json = nlohmann::ordered_json;

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  if (quoted) throw ValidationError("unterminated quote in report");
  return cells;
}

bool looks_numeric(const std::string& s, double& value) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  return ec == std::errc() && ptr == end && std::isfinite(value);
}

}  // namespace

void Report::add_row(std::vector<std::string> cells) {
  if (cells.size() != columns.size()) throw ValidationError("row width does not match the report columns");
  rows.push_back(std::move(cells));
}

std::size_t Report::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw ValidationError("report has no column " + name);
}

const std::string& Report::cell(std::size_t row, const std::string& name) const {
  return rows.at(row).at(column(name));
}

double Report::number(std::size_t row, const std::string& name) const { return parse_number(cell(row, name)); }

std::string Report::meta_value(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  return fallback;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  (void)ec;
  return std::string(buf, ptr);
}

std::string format_number(long long value) { return std::to_string(value); }

double parse_number(const std::string& text) {
  if (text == "nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double value = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ValidationError("not a number: " + text);
  return value;
}

std::string to_csv(const Report& report) {
  std::ostringstream out;
  out << "# schema=" << kReportSchema << "\n# kind=" << report.kind << "\n";
  for (const auto& [k, v] : report.meta) out << "# " << k << "=" << v << "\n";
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_escape(cells[i]);
    out << "\n";
  };
  line(report.columns);
  for (const auto& r : report.rows) line(r);
  return out.str();
}

std::string to_json(const Report& report) {
  Json j;
  j["schema"] = kReportSchema;
  j["kind"] = report.kind;
  Json meta = Json::object();
  for (const auto& [k, v] : report.meta) meta[k] = v;
  j["meta"] = meta;
  Json rows = Json::array();
  for (const auto& r : report.rows) {
    Json row = Json::object();
    for (std::size_t i = 0; i < r.size(); ++i) {
      double v = 0.0;
      if (looks_numeric(r[i], v)) {
        row[report.columns[i]] = v;
      } else {
        row[report.columns[i]] = r[i];
      }
    }
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

Report parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != std::string("# schema=") + kReportSchema) {
    throw ValidationError("report does not start with the schema line");
  }
  Report report;
  bool header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header && line.starts_with("# ")) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ValidationError("malformed report meta line: " + line);
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 1);
      if (key == "kind") {
        report.kind = value;
      } else {
        report.meta.emplace_back(key, value);
      }
      continue;
    }
    if (!header) {
      report.columns = csv_split(line);
      header = true;
      continue;
    }
    if (line.empty()) continue;
    report.add_row(csv_split(line));
  }
  if (!header) throw ValidationError("report has no header row");
  return report;
}

Report parse_json(const std::string& text) {
  const Json j = Json::parse(text);
  if (j.at("schema").get<std::string>() != kReportSchema) throw ValidationError("unknown report schema");
  Report report;
  report.kind = j.at("kind").get<std::string>();
  for (const auto& [k, v] : j.at("meta").items()) report.meta.emplace_back(k, v.get<std::string>());
  for (const auto& row : j.at("rows")) {
    if (report.columns.empty()) {
      for (const auto& [k, v] : row.items()) report.columns.push_back(k);
    }
    std::vector<std::string> cells;
    for (const auto& name : report.columns) {
      const Json& v = row.at(name);
      cells.push_back(v.is_string() ? v.get<std::string>() : format_number(v.get<double>()));
    }
    report.add_row(std::move(cells));
  }
  return report;
}

std::string json_mirror_path(const std::string& csv_path) {
  return std::filesystem::path(csv_path).replace_extension(".json").string();
}

void write_report(const std::string& path, const Report& report) {
  write_file_atomic(path, to_csv(report));
  write_file_atomic(json_mirror_path(path), to_json(report));
}

std::string render_text(const Report& report) {
  std::vector<std::size_t> width(report.columns.size());
  for (std::size_t i = 0; i < width.size(); ++i) {
    width[i] = report.columns[i].size();
    for (const auto& r : report.rows) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out << (i ? "  " : "") << cells[i] << std::string(width[i] - cells[i].size(), ' ');
    }
    out << "\n";
  };
  line(report.columns);
  for (const auto& r : report.rows) line(r);
  return out.str();
}

}  // namespace dwtk
