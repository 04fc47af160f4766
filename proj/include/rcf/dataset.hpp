#pragma once

// Yearly consumption series: CSV ingestion, roster filtering, the fixed
// train/test split, per-entity scaling and sliding-window sample generation.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rcf/errors.hpp"
#include "rcf/scaler.hpp"

namespace rcf {

inline constexpr int kFirstYear = 1990;
inline constexpr int kLastYear = 2019;

/// One entity's consecutive yearly consumption in TWh.
struct ConsumptionSeries {
  std::string entity;
  int first_year = kFirstYear;
  std::vector<double> values;

  int last_year() const { return first_year + static_cast<int>(values.size()) - 1; }
  bool covers(int year) const { return year >= first_year && year <= last_year(); }
  double at(int year) const {
    if (!covers(year)) {
      throw DataError(DataError::Kind::Coverage,
                      entity + " has no value for " + std::to_string(year));
    }
    return values[static_cast<std::size_t>(year - first_year)];
  }

  friend bool operator==(const ConsumptionSeries&, const ConsumptionSeries&) = default;
};

/// The nineteen G-20 countries plus the European Union.
inline const std::vector<std::string>& g20_roster() {
  static const std::vector<std::string> roster{
      "Argentina",    "Australia",    "Brazil",         "Canada",        "China",
      "France",       "Germany",      "India",          "Indonesia",     "Italy",
      "Japan",        "South Korea",  "Mexico",         "Russia",        "Saudi Arabia",
      "South Africa", "Turkey",       "United Kingdom", "United States", "European Union"};
  return roster;
}

inline constexpr std::string_view kCsvHeader = "entity,year,consumption_twh";

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
      cur += ch;
    } else if (ch == ',' && !quoted) {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

}  // namespace detail

/// Parses `entity,year,consumption_twh` rows in any order into one series per
/// entity, sorted by entity name and year.
inline std::vector<ConsumptionSeries> parse_csv(std::istream& in) {
  std::string line;
  // Skip a UTF-8 BOM and blank lines before the header.
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    if (detail::trim(line) != kCsvHeader) {
      throw FormatError("expected header '" + std::string(kCsvHeader) + "', got '" +
                        detail::trim(line) + "'");
    }
    have_header = true;
    break;
  }
  if (!have_header) throw FormatError("missing header '" + std::string(kCsvHeader) + "'");

  std::map<std::string, std::map<int, double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != 3) {
      throw FormatError(where + ": expected 3 fields, got " + std::to_string(fields.size()));
    }
    const std::string& entity = fields[0];
    if (entity.empty()) throw FormatError(where + ": empty entity name");
    int year = 0;
    double value = 0.0;
    if (!detail::parse_number(fields[1], year)) {
      throw FormatError(where + ": year '" + fields[1] + "' is not an integer");
    }
    if (!detail::parse_number(fields[2], value)) {
      throw FormatError(where + ": consumption '" + fields[2] + "' is not a number");
    }
    if (year < kFirstYear || year > kLastYear) {
      throw DataError(DataError::Kind::Range, where + ": " + entity + " year " +
                                                  std::to_string(year) + " outside [" +
                                                  std::to_string(kFirstYear) + ", " +
                                                  std::to_string(kLastYear) + "]");
    }
    if (!std::isfinite(value) || value <= 0.0) {
      throw DataError(DataError::Kind::Range, where + ": " + entity + " " + std::to_string(year) +
                                                  " consumption " + fields[2] +
                                                  " must be positive and finite");
    }
    if (!rows[entity].emplace(year, value).second) {
      throw FormatError(where + ": duplicate row for " + entity + " " + std::to_string(year));
    }
  }

  std::vector<ConsumptionSeries> out;
  for (auto& [entity, by_year] : rows) {
    ConsumptionSeries s{entity, by_year.begin()->first, {}};
    int expected = s.first_year;
    for (const auto& [year, value] : by_year) {
      if (year != expected) {
        throw DataError(DataError::Kind::Continuity,
                        entity + " is missing year " + std::to_string(expected));
      }
      s.values.push_back(value);
      ++expected;
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<ConsumptionSeries> load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open data file '" + path + "'");
  return parse_csv(in);
}

/// Writes series in the same schema parse_csv reads; doubles round-trip exactly.
inline void write_csv(std::ostream& out, std::span<const ConsumptionSeries> series) {
  out << kCsvHeader << '\n';
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      char buf[64];
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, s.values[i]);
      out << s.entity << ',' << s.first_year + static_cast<int>(i) << ','
          << std::string_view(buf, static_cast<std::size_t>(end - buf)) << '\n';
    }
  }
}

/// Series for exactly the roster entities, in roster order.
inline std::vector<ConsumptionSeries> filter_entities(std::span<const ConsumptionSeries> series,
                                                      std::span<const std::string> roster) {
  std::vector<ConsumptionSeries> out;
  std::vector<std::string> missing;
  for (const auto& name : roster) {
    const auto it = std::find_if(series.begin(), series.end(),
                                 [&](const ConsumptionSeries& s) { return s.entity == name; });
    if (it == series.end()) {
      missing.push_back(name);
    } else {
      out.push_back(*it);
    }
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw DataError(DataError::Kind::Coverage, "roster entities missing from data: " + names);
  }
  return out;
}

struct SplitSpec {
  int train_first = 1990;
  int train_last = 2015;
  int test_first = 2016;
  int test_last = 2019;
};

struct TestPoint {
  int year = 0;
  double value = 0.0;  // TWh
};

struct SplitSeries {
  ConsumptionSeries train;
  std::vector<TestPoint> test;
};

inline SplitSeries split(const ConsumptionSeries& series, const SplitSpec& spec = {}) {
  if (!series.covers(spec.test_last) || !series.covers(spec.train_first)) {
    throw DataError(DataError::Kind::Coverage,
                    series.entity + " covers " + std::to_string(series.first_year) + "-" +
                        std::to_string(series.last_year()) + ", split needs " +
                        std::to_string(spec.train_first) + "-" + std::to_string(spec.test_last));
  }
  SplitSeries out;
  out.train.entity = series.entity;
  out.train.first_year = spec.train_first;
  for (int y = spec.train_first; y <= spec.train_last; ++y) out.train.values.push_back(series.at(y));
  for (int y = spec.test_first; y <= spec.test_last; ++y) out.test.push_back({y, series.at(y)});
  return out;
}

inline std::vector<SplitSeries> split_all(std::span<const ConsumptionSeries> series,
                                          const SplitSpec& spec = {}) {
  std::vector<SplitSeries> out;
  out.reserve(series.size());
  for (const auto& s : series) out.push_back(split(s, spec));
  return out;
}

/// Min-max per entity. Refuses any series reaching past `train_last`, so a
/// test year can never leak into the fit.
inline Scaler fit_scaler(std::span<const ConsumptionSeries> train, const SplitSpec& spec = {}) {
  Scaler scaler;
  int through = 0;
  for (const auto& s : train) {
    if (s.values.empty()) {
      throw DataError(DataError::Kind::InsufficientData, s.entity + " has no training values");
    }
    if (s.last_year() > spec.train_last) {
      throw DataError(DataError::Kind::Coverage,
                      "scaler fit for " + s.entity + " would see year " +
                          std::to_string(s.last_year()) + " beyond training end " +
                          std::to_string(spec.train_last));
    }
    const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
    scaler.set(s.entity, {*lo, *hi});
    through = std::max(through, s.last_year());
  }
  scaler.fitted_through = through;
  return scaler;
}

inline Scaler fit_scaler(std::span<const SplitSeries> splits, const SplitSpec& spec = {}) {
  std::vector<ConsumptionSeries> train;
  for (const auto& s : splits) train.push_back(s.train);
  return fit_scaler(std::span<const ConsumptionSeries>(train), spec);
}

struct WindowSample {
  std::string entity;
  std::vector<double> window;  // scaled
  double target = 0.0;         // scaled
  int target_year = 0;
};

struct WindowedDataset {
  std::size_t window_size = 0;
  std::vector<WindowSample> samples;
};

inline constexpr std::size_t kMinWindow = 3;
inline constexpr std::size_t kMaxWindow = 7;

/// Every (N consecutive values -> next value) pair of each training series,
/// pooled across entities in input order.
inline WindowedDataset make_windows(std::span<const ConsumptionSeries> train, const Scaler& scaler,
                                    std::size_t window, bool allow_any_window = false) {
  if (!allow_any_window && (window < kMinWindow || window > kMaxWindow)) {
    throw ConfigError("window size " + std::to_string(window) + " outside [" +
                      std::to_string(kMinWindow) + ", " + std::to_string(kMaxWindow) + "]");
  }
  if (window == 0) throw ConfigError("window size must be >= 1");
  WindowedDataset ds{window, {}};
  for (const auto& s : train) {
    if (s.values.size() < window + 1) {
      throw DataError(DataError::Kind::InsufficientData,
                      s.entity + " has " + std::to_string(s.values.size()) +
                          " training values, window " + std::to_string(window) + " needs " +
                          std::to_string(window + 1));
    }
    std::vector<double> scaled;
    scaled.reserve(s.values.size());
    for (double v : s.values) scaled.push_back(scaler.scale(v, s.entity));
    for (std::size_t t = window; t < scaled.size(); ++t) {
      ds.samples.push_back({s.entity,
                            std::vector<double>(scaled.begin() + static_cast<std::ptrdiff_t>(t - window),
                                                scaled.begin() + static_cast<std::ptrdiff_t>(t)),
                            scaled[t], s.first_year + static_cast<int>(t)});
    }
  }
  return ds;
}

inline WindowedDataset make_windows(std::span<const SplitSeries> splits, const Scaler& scaler,
                                    std::size_t window, bool allow_any_window = false) {
  std::vector<ConsumptionSeries> train;
  for (const auto& s : splits) train.push_back(s.train);
  return make_windows(std::span<const ConsumptionSeries>(train), scaler, window, allow_any_window);
}

}  // namespace rcf
