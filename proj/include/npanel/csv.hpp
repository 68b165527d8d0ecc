#pragma once

#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "npanel/panel.hpp"

namespace npanel {

/// 17 significant digits: enough for bit-exact double round trips.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  return out;
}

inline double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw std::runtime_error(std::string("csv: bad ") + what + " value '" + s + "'");
  }
}

inline void check_id(const std::string& id) {
  if (id.find(',') != std::string::npos || id.find('"') != std::string::npos ||
      id.find('\n') != std::string::npos)
    throw std::invalid_argument("csv: identifiers may not contain ',', '\"' or newline");
}

}  // namespace detail

struct LongPanel {
  Panel panel;
  std::optional<TreatmentMask> mask;
};

/// Long format: header `unit,time,outcome[,treated]`, one row per cell.
/// Unit/time identifiers are mapped to indices in order of first appearance;
/// the panel must be balanced (every unit observed in every period, once).
inline LongPanel read_panel_long(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty input");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "unit" || header[1] != "time" ||
      header[2] != "outcome")
    throw std::runtime_error("csv: expected header unit,time,outcome[,treated]");
  const bool has_treated = header.size() >= 4 && header[3] == "treated";

  std::vector<std::string> unit_ids, time_ids;
  std::unordered_map<std::string, std::size_t> unit_idx, time_idx;
  struct Row {
    std::size_t u, t;
    double y;
    bool w;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw std::runtime_error("csv: row with wrong field count: " + line);
    auto intern = [](const std::string& id, std::vector<std::string>& ids,
                     std::unordered_map<std::string, std::size_t>& idx) {
      auto it = idx.find(id);
      if (it != idx.end()) return it->second;
      const std::size_t k = ids.size();
      ids.push_back(id);
      idx.emplace(id, k);
      return k;
    };
    Row r;
    r.u = intern(f[0], unit_ids, unit_idx);
    r.t = intern(f[1], time_ids, time_idx);
    r.y = detail::parse_double(f[2], "outcome");
    r.w = false;
    if (has_treated) {
      if (f[3] == "1")
        r.w = true;
      else if (f[3] != "0")
        throw std::runtime_error("csv: treated must be 0 or 1, got '" + f[3] + "'");
    }
    rows.push_back(r);
  }
  const std::size_t n = unit_ids.size();
  const std::size_t t = time_ids.size();
  if (rows.size() != n * t)
    throw std::runtime_error("csv: panel is not balanced (" + std::to_string(rows.size()) +
                             " rows, expected " + std::to_string(n * t) + ")");
  Matrix y(n, t);
  std::vector<bool> seen(n * t, false);
  TreatmentMask mask(n, t);
  for (const auto& r : rows) {
    if (seen[r.u * t + r.t])
      throw std::runtime_error("csv: duplicate cell " + unit_ids[r.u] + "," +
                               time_ids[r.t]);
    seen[r.u * t + r.t] = true;
    y(r.u, r.t) = r.y;
    mask.set(r.u, r.t, r.w);
  }
  LongPanel out{Panel(std::move(y), std::move(unit_ids), std::move(time_ids)),
                std::nullopt};
  if (has_treated) out.mask = std::move(mask);
  return out;
}

inline void write_panel_long(std::ostream& os, const Panel& panel,
                             const TreatmentMask* mask = nullptr) {
  if (mask != nullptr && !mask->matches(panel))
    throw std::invalid_argument("csv: mask does not match panel");
  os << (mask != nullptr ? "unit,time,outcome,treated\n" : "unit,time,outcome\n");
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    detail::check_id(panel.unit_ids()[i]);
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      detail::check_id(panel.time_ids()[t]);
      os << panel.unit_ids()[i] << ',' << panel.time_ids()[t] << ','
         << format_double(panel(i, t));
      if (mask != nullptr) os << ',' << (mask->treated(i, t) ? '1' : '0');
      os << '\n';
    }
  }
}

/// Wide format: first column the unit id, remaining columns outcomes for the
/// time ids named in the header.
inline Panel read_panel_wide(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty input");
  auto header = detail::split_csv_line(line);
  if (header.size() < 3)
    throw std::runtime_error("csv: wide format needs at least two time columns");
  std::vector<std::string> time_ids(header.begin() + 1, header.end());
  std::vector<std::string> unit_ids;
  std::vector<std::vector<double>> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw std::runtime_error("csv: row with wrong field count: " + line);
    unit_ids.push_back(f[0]);
    std::vector<double> row;
    row.reserve(time_ids.size());
    for (std::size_t c = 1; c < f.size(); ++c)
      row.push_back(detail::parse_double(f[c], "outcome"));
    values.push_back(std::move(row));
  }
  return Panel(Matrix::from_rows(values), std::move(unit_ids), std::move(time_ids));
}

inline void write_panel_wide(std::ostream& os, const Panel& panel) {
  os << "unit";
  for (const auto& t : panel.time_ids()) {
    detail::check_id(t);
    os << ',' << t;
  }
  os << '\n';
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    detail::check_id(panel.unit_ids()[i]);
    os << panel.unit_ids()[i];
    for (std::size_t t = 0; t < panel.n_periods(); ++t)
      os << ',' << format_double(panel(i, t));
    os << '\n';
  }
}

}  // namespace npanel
