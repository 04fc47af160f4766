#pragma once

// Test-year scoring with true history, self-fed multi-year forecasts, growth
// summaries and plot-ready per-entity tables.

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rcf/dataset.hpp"
#include "rcf/errors.hpp"
#include "rcf/model.hpp"
#include "rcf/scaler.hpp"

namespace rcf {

struct PredictionContext {
  std::string entity;
  int target_year = 0;
};

/// Anything that maps a scaled window to a scaled next value. Trained models
/// ignore the context; test oracles use it.
struct Predictor {
  std::size_t window_size = 0;
  std::function<double(std::span<const double>, const PredictionContext&)> predict;
};

inline Predictor make_predictor(const TrainedModel& model) {
  return {model.spec.window_size,
          [&model](std::span<const double> w, const PredictionContext&) { return forward(model, w); }};
}

/// Always returns the last value of the window.
inline Predictor persistence_predictor(std::size_t window) {
  return {window, [](std::span<const double> w, const PredictionContext&) { return w.back(); }};
}

enum class MaeAggregation { Pooled, PerEntityMean };

struct EvalPoint {
  std::string entity;
  int year = 0;
  double truth = 0.0;       // TWh
  double prediction = 0.0;  // TWh
};

struct EvalResult {
  double mae = 0.0;  // TWh
  std::vector<EvalPoint> points;
};

namespace detail {

/// Scaled true values for years [first, first + n).
inline std::vector<double> scaled_history(const ConsumptionSeries& s, const Scaler& scaler,
                                          int first, std::size_t n) {
  std::vector<double> w;
  w.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const int year = first + static_cast<int>(k);
    if (!s.covers(year)) {
      throw DataError(DataError::Kind::Coverage,
                      s.entity + " lacks history year " + std::to_string(year));
    }
    w.push_back(scaler.scale(s.at(year), s.entity));
  }
  return w;
}

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

/// One-step-ahead MAE in TWh over every (entity, test year). Each prediction
/// reads the true values of the N preceding years and is unscaled before
/// differencing.
inline EvalResult evaluate(const Predictor& model, std::span<const SplitSeries> tests,
                           std::span<const ConsumptionSeries> histories, const Scaler& scaler,
                           MaeAggregation aggregation = MaeAggregation::Pooled) {
  EvalResult out;
  double per_entity_sum = 0.0;
  std::size_t entity_count = 0;
  for (const auto& split_series : tests) {
    const std::string& entity = split_series.train.entity;
    const auto hist = std::find_if(histories.begin(), histories.end(),
                                   [&](const ConsumptionSeries& s) { return s.entity == entity; });
    if (hist == histories.end()) {
      throw DataError(DataError::Kind::Coverage, "no history for " + entity);
    }
    double entity_abs = 0.0;
    for (const TestPoint& tp : split_series.test) {
      const int first = tp.year - static_cast<int>(model.window_size);
      const auto window = detail::scaled_history(*hist, scaler, first, model.window_size);
      const double pred = scaler.unscale(model.predict(window, {entity, tp.year}), entity);
      out.points.push_back({entity, tp.year, tp.value, pred});
      entity_abs += std::abs(pred - tp.value);
    }
    if (!split_series.test.empty()) {
      per_entity_sum += entity_abs / static_cast<double>(split_series.test.size());
      ++entity_count;
    }
  }
  if (out.points.empty()) throw DataError(DataError::Kind::Coverage, "no test points to evaluate");
  if (aggregation == MaeAggregation::Pooled) {
    double total = 0.0;
    for (const auto& p : out.points) total += std::abs(p.prediction - p.truth);
    out.mae = total / static_cast<double>(out.points.size());
  } else {
    out.mae = per_entity_sum / static_cast<double>(entity_count);
  }
  return out;
}

struct ForecastResult {
  std::vector<TestPoint> predictions;  // TWh, one per year after the history
  /// Latest calendar year whose true value entered any window.
  int latest_true_year_read = 0;
};

/// Predicts history_end+1 .. horizon_end, feeding each scaled prediction back
/// into the rolling window. Only true values up to `history_end` are read.
inline ForecastResult autoregressive_forecast(const Predictor& model,
                                              const ConsumptionSeries& history,
                                              const Scaler& scaler, int horizon_end = 2025,
                                              int history_end = kLastYear) {
  if (horizon_end <= history_end) {
    throw InputError("forecast horizon " + std::to_string(horizon_end) +
                     " must be after the last history year " + std::to_string(history_end));
  }
  const std::size_t n = model.window_size;
  struct Slot {
    double scaled;
    std::optional<int> true_year;
  };
  std::vector<Slot> window;
  const int first = history_end - static_cast<int>(n) + 1;
  const auto seed = detail::scaled_history(history, scaler, first, n);
  for (std::size_t k = 0; k < n; ++k) window.push_back({seed[k], first + static_cast<int>(k)});

  ForecastResult out;
  std::vector<double> values(n);
  for (int year = history_end + 1; year <= horizon_end; ++year) {
    for (std::size_t k = 0; k < n; ++k) {
      values[k] = window[k].scaled;
      if (window[k].true_year) {
        out.latest_true_year_read = std::max(out.latest_true_year_read, *window[k].true_year);
      }
    }
    const double pred = model.predict(values, {history.entity, year});
    out.predictions.push_back({year, scaler.unscale(pred, history.entity)});
    window.erase(window.begin());
    window.push_back({pred, std::nullopt});
  }
  if (out.latest_true_year_read > history_end) {
    throw ConsistencyError("self-fed forecast read a true value from " +
                           std::to_string(out.latest_true_year_read));
  }
  return out;
}

struct EntityForecast {
  /// One-step predictions from true windows, keyed by year (history and test regimes).
  std::map<int, double> fitted;
  std::vector<TestPoint> forecast;
};

struct ModelForecast {
  CellKind kind = CellKind::Lstm;
  std::size_t window_size = 0;
  std::map<std::string, EntityForecast> entities;
};

struct ForecastReport {
  std::vector<ConsumptionSeries> truth;  // full series through the last history year
  SplitSpec split;
  int horizon_end = 2025;
  std::vector<ModelForecast> models;
};

/// Fitted values for every year with a full true window, then the self-fed tail.
inline ModelForecast forecast_model(CellKind kind, const Predictor& model,
                                    std::span<const ConsumptionSeries> truth, const Scaler& scaler,
                                    int horizon_end = 2025) {
  ModelForecast mf{kind, model.window_size, {}};
  for (const auto& s : truth) {
    EntityForecast ef;
    for (int year = s.first_year + static_cast<int>(model.window_size); year <= s.last_year();
         ++year) {
      const auto window = detail::scaled_history(
          s, scaler, year - static_cast<int>(model.window_size), model.window_size);
      ef.fitted[year] = scaler.unscale(model.predict(window, {s.entity, year}), s.entity);
    }
    ef.forecast = autoregressive_forecast(model, s, scaler, horizon_end, s.last_year()).predictions;
    mf.entities.emplace(s.entity, std::move(ef));
  }
  return mf;
}

struct GrowthRow {
  CellKind kind = CellKind::Lstm;
  std::size_t window_size = 0;
  double mean_growth = 0.0;  // TWh
  std::size_t entities = 0;
};

/// Per model: mean over entities of (forecast at the horizon - last true value).
inline std::vector<GrowthRow> growth_summary(const ForecastReport& report) {
  std::vector<GrowthRow> rows;
  for (const auto& m : report.models) {
    double sum = 0.0;
    for (const auto& s : report.truth) {
      const auto it = m.entities.find(s.entity);
      if (it == m.entities.end() || it->second.forecast.empty() ||
          it->second.forecast.back().year != report.horizon_end) {
        throw DataError(DataError::Kind::Coverage,
                        to_string(m.kind) + " forecast lacks " + s.entity + " through " +
                            std::to_string(report.horizon_end));
      }
      sum += it->second.forecast.back().value - s.values.back();
    }
    if (report.truth.empty()) throw DataError(DataError::Kind::Coverage, "no entities to summarize");
    rows.push_back({m.kind, m.window_size, sum / static_cast<double>(report.truth.size()),
                    report.truth.size()});
  }
  return rows;
}

inline constexpr std::string_view kPlotHeader =
    "year,truth_twh,pred_lstm,pred_gru,pred_bilstm,pred_convlstm,regime";

/// Per-year rows from the entity's first year to the horizon. Unavailable
/// values are blank; regime is history / test / forecast.
inline std::string emit_plot_series(const ForecastReport& report, const std::string& entity) {
  const auto s = std::find_if(report.truth.begin(), report.truth.end(),
                              [&](const ConsumptionSeries& c) { return c.entity == entity; });
  if (s == report.truth.end()) throw LookupError("no forecast report for entity '" + entity + "'");

  static constexpr CellKind kColumns[] = {CellKind::Lstm, CellKind::Gru, CellKind::BiLstm,
                                          CellKind::ConvLstm};
  std::vector<const EntityForecast*> cols;
  for (CellKind k : kColumns) {
    const EntityForecast* found = nullptr;
    for (const auto& m : report.models) {
      if (m.kind != k) continue;
      const auto it = m.entities.find(entity);
      if (it != m.entities.end()) found = &it->second;
    }
    cols.push_back(found);
  }

  std::ostringstream out;
  out << kPlotHeader << '\n';
  for (int year = s->first_year; year <= report.horizon_end; ++year) {
    out << year << ',';
    if (s->covers(year)) out << detail::fixed(s->at(year));
    for (const EntityForecast* ef : cols) {
      out << ',';
      if (!ef) continue;
      if (year <= s->last_year()) {
        const auto it = ef->fitted.find(year);
        if (it != ef->fitted.end()) out << detail::fixed(it->second);
      } else {
        for (const auto& p : ef->forecast) {
          if (p.year == year) out << detail::fixed(p.value);
        }
      }
    }
    const char* regime = year < report.split.test_first  ? "history"
                         : year <= s->last_year()        ? "test"
                                                         : "forecast";
    out << ',' << regime << '\n';
  }
  return out.str();
}

}  // namespace rcf
