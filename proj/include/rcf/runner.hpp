#pragma once

// Batch commands behind the `rcf` tool: validate a dataset, train and score
// the (cell kind x window size) grid, and forecast from saved checkpoints.
// Each command returns the process exit code.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rcf/checkpoint.hpp"
#include "rcf/dataset.hpp"
#include "rcf/errors.hpp"
#include "rcf/forecast.hpp"
#include "rcf/training.hpp"

namespace rcf {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitDivergence = 3 };

struct RunConfig {
  std::string data_path;
  std::string out_dir = "out";
  std::vector<CellKind> cells{CellKind::Lstm, CellKind::BiLstm, CellKind::Gru, CellKind::ConvLstm};
  std::vector<std::size_t> windows{3, 4, 5, 6, 7};
  bool allow_any_window = false;
  TrainConfig train;
  std::uint64_t seed_init = 42;
  std::uint64_t seed_shuffle = 7;
  unsigned jobs = 1;
  /// Empty selects the G-20 roster; a single "all" keeps every entity in the file.
  std::vector<std::string> entities;
  MaeAggregation aggregation = MaeAggregation::Pooled;
  int horizon = 2025;
  std::vector<std::string> checkpoints;
  ActivationKind convlstm_g_activation = ActivationKind::Sigmoid;

  void validate() const {
    train.validate();
    if (cells.empty()) throw ConfigError("no cell kinds selected");
    if (windows.empty()) throw ConfigError("no window sizes selected");
    for (std::size_t w : windows) {
      if (w == 0) throw ConfigError("window size must be >= 1");
      if (!allow_any_window && (w < kMinWindow || w > kMaxWindow)) {
        throw ConfigError("window size " + std::to_string(w) +
                          " outside [3, 7]; pass --allow-any-window to use it");
      }
    }
    if (jobs == 0) throw ConfigError("--jobs must be >= 1");
    if (convlstm_g_activation != ActivationKind::Sigmoid &&
        convlstm_g_activation != ActivationKind::Tanh) {
      throw ConfigError("convlstm g activation must be sigmoid or tanh");
    }
  }
};

/// Applies keys present in a JSON object onto `cfg`; absent keys keep their value.
inline void apply_config_json(const nlohmann::json& j, RunConfig& cfg) {
  try {
    if (j.contains("data")) cfg.data_path = j.at("data").get<std::string>();
    if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
    if (j.contains("cells")) {
      cfg.cells.clear();
      for (const auto& c : j.at("cells")) cfg.cells.push_back(cell_kind_from_string(c.get<std::string>()));
    }
    if (j.contains("windows")) cfg.windows = j.at("windows").get<std::vector<std::size_t>>();
    if (j.contains("allow_any_window")) {
      cfg.allow_any_window = j.at("allow_any_window").get<bool>();
    }
    if (j.contains("epochs")) cfg.train.max_epochs = j.at("epochs").get<int>();
    if (j.contains("lr")) cfg.train.learning_rate = j.at("lr").get<double>();
    if (j.contains("batch")) cfg.train.batch_size = j.at("batch").get<std::size_t>();
    if (j.contains("huber_delta")) cfg.train.huber_delta = j.at("huber_delta").get<double>();
    if (j.contains("patience")) cfg.train.early_stop_patience = j.at("patience").get<int>();
    if (j.contains("seed_init")) cfg.seed_init = j.at("seed_init").get<std::uint64_t>();
    if (j.contains("seed_shuffle")) cfg.seed_shuffle = j.at("seed_shuffle").get<std::uint64_t>();
    if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<unsigned>();
    if (j.contains("entities")) cfg.entities = j.at("entities").get<std::vector<std::string>>();
    if (j.contains("mae")) {
      const auto m = j.at("mae").get<std::string>();
      if (m == "pooled") cfg.aggregation = MaeAggregation::Pooled;
      else if (m == "per-entity") cfg.aggregation = MaeAggregation::PerEntityMean;
      else throw ConfigError("config 'mae' must be 'pooled' or 'per-entity'");
    }
    if (j.contains("convlstm_g")) {
      cfg.convlstm_g_activation = activation_from_string(j.at("convlstm_g").get<std::string>());
    }
    if (j.contains("horizon")) cfg.horizon = j.at("horizon").get<int>();
    if (j.contains("checkpoints")) cfg.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
}

inline void load_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  apply_config_json(j, cfg);
}

namespace detail {

inline std::string seeds_header(std::uint64_t init, std::uint64_t shuffle) {
  return "seed_init=" + std::to_string(init) + ",seed_shuffle=" + std::to_string(shuffle);
}

/// Entities the run works on, in roster order (file order for "all").
inline std::vector<ConsumptionSeries> select_entities(const RunConfig& cfg,
                                                      std::span<const ConsumptionSeries> all) {
  if (cfg.entities.size() == 1 && cfg.entities.front() == "all") {
    return {all.begin(), all.end()};
  }
  const auto& roster = cfg.entities.empty() ? g20_roster() : cfg.entities;
  return filter_entities(all, roster);
}

inline std::string checkpoint_name(CellKind kind, std::size_t window) {
  return to_string(kind) + "_w" + std::to_string(window) + ".rcfc";
}

inline std::string slug(const std::string& entity) {
  std::string s;
  for (char c : entity) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!s.empty() && s.back() != '_') {
      s += '_';
    }
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

/// Column order of the MAE table: LSTM, BiLSTM, GRU, ConvLSTM, then RNN.
inline std::vector<CellKind> table_order(std::span<const CellKind> requested) {
  std::vector<CellKind> out;
  for (CellKind k : {CellKind::Lstm, CellKind::BiLstm, CellKind::Gru, CellKind::ConvLstm,
                     CellKind::Rnn}) {
    if (std::find(requested.begin(), requested.end(), k) != requested.end()) out.push_back(k);
  }
  return out;
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const LookupError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace detail

/// Schema, continuity and positivity check. Exit 0 iff the file is clean.
inline int cmd_validate(const std::string& data_path, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto series = load_csv(data_path);
    if (series.empty()) throw FormatError("no data rows after the header");
    int first = series.front().first_year, last = series.front().last_year();
    for (const auto& s : series) {
      first = std::min(first, s.first_year);
      last = std::max(last, s.last_year());
    }
    out << series.size() << " entities, " << first << "\xE2\x80\x93" << last << ", OK\n";
    return static_cast<int>(kExitOk);
  });
}

struct GridCell {
  CellKind kind = CellKind::Lstm;
  std::size_t window = 0;
  std::optional<double> mae;  // empty when the job failed
  std::string failure;
};

struct GridResult {
  std::vector<GridCell> cells;  // window-major, table column order
  std::string table_csv;
};

/// Renders the table with one row per window size and one column per cell kind.
inline std::string format_mae_table(const RunConfig& cfg, std::span<const GridCell> cells) {
  const auto kinds = detail::table_order(cfg.cells);
  std::ostringstream out;
  out << "# " << detail::seeds_header(cfg.seed_init, cfg.seed_shuffle)
      << ",epochs=" << cfg.train.max_epochs << ",lr=" << cfg.train.learning_rate
      << ",batch=" << cfg.train.batch_size << ",mae="
      << (cfg.aggregation == MaeAggregation::Pooled ? "pooled" : "per-entity") << ",unit=TWh\n";
  out << "window_size";
  for (CellKind k : kinds) out << ',' << to_string(k);
  out << '\n';
  for (std::size_t w : cfg.windows) {
    out << w;
    for (CellKind k : kinds) {
      out << ',';
      for (const auto& c : cells) {
        if (c.kind == k && c.window == w) out << (c.mae ? detail::fixed(*c.mae) : "failed");
      }
    }
    out << '\n';
  }
  return out.str();
}

/// Trains every requested (kind, window) pair, saves one checkpoint per pair
/// and writes mae_table.csv. A diverging job is marked failed; the others run
/// to completion and the exit code becomes 3.
inline int cmd_train_grid(const RunConfig& cfg, std::ostream& log, std::ostream& err,
                          GridResult* result_out = nullptr) {
  return detail::guarded(err, [&] {
    cfg.validate();
    if (cfg.data_path.empty()) throw ConfigError("--data is required");
    const auto all = load_csv(cfg.data_path);
    const auto series = detail::select_entities(cfg, all);
    const SplitSpec split_spec;
    const auto splits = split_all(series, split_spec);
    const Scaler scaler = fit_scaler(std::span<const SplitSeries>(splits), split_spec);

    std::vector<WindowedDataset> datasets;
    for (std::size_t w : cfg.windows) {
      datasets.push_back(make_windows(std::span<const SplitSeries>(splits), scaler, w,
                                      cfg.allow_any_window));
    }
    std::filesystem::create_directories(cfg.out_dir);

    std::vector<GridCell> cells;
    for (std::size_t w : cfg.windows) {
      for (CellKind k : detail::table_order(cfg.cells)) cells.push_back({k, w, std::nullopt, {}});
    }

    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        GridCell& cell = cells[i];
        const auto widx = static_cast<std::size_t>(
            std::find(cfg.windows.begin(), cfg.windows.end(), cell.window) - cfg.windows.begin());
        try {
          TrainConfig tc = cfg.train;
          tc.shuffle_seed = cfg.seed_shuffle;
          ModelSpec spec = ModelSpec::standard(cell.kind, cell.window);
          spec.convlstm_g_activation = cfg.convlstm_g_activation;
          TrainedModel model = train(spec, datasets[widx], tc, cfg.seed_init);
          model.scaler = scaler;
          cell.mae = evaluate(make_predictor(model), std::span<const SplitSeries>(splits),
                              std::span<const ConsumptionSeries>(series), scaler, cfg.aggregation)
                         .mae;
          checkpoint_save_file(model, std::filesystem::path(cfg.out_dir) /
                                          detail::checkpoint_name(cell.kind, cell.window));
          std::lock_guard lock(log_mutex);
          log << to_string(cell.kind) << " window " << cell.window << ": test MAE "
              << detail::fixed(*cell.mae) << " TWh\n";
        } catch (const std::exception& e) {
          cell.failure = e.what();
          std::lock_guard lock(log_mutex);
          err << to_string(cell.kind) << " window " << cell.window << " failed: " << e.what()
              << '\n';
        }
      }
    };
    const unsigned workers = std::min<unsigned>(cfg.jobs, static_cast<unsigned>(cells.size()));
    if (workers <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
    }

    GridResult result{cells, format_mae_table(cfg, cells)};
    write_text_atomic(std::filesystem::path(cfg.out_dir) / "mae_table.csv", result.table_csv);
    const bool any_failed =
        std::any_of(cells.begin(), cells.end(), [](const GridCell& c) { return !c.mae; });
    if (result_out) *result_out = std::move(result);
    return static_cast<int>(any_failed ? kExitDivergence : kExitOk);
  });
}

/// Loads up to one checkpoint per plotted cell kind, scores the test years,
/// forecasts to the horizon and writes series_<entity>.csv files plus
/// growth_summary.csv.
inline int cmd_forecast(const RunConfig& cfg, std::ostream& log, std::ostream& err,
                        ForecastReport* report_out = nullptr) {
  return detail::guarded(err, [&] {
    if (cfg.horizon < kLastYear + 1) {
      throw ConfigError("horizon " + std::to_string(cfg.horizon) + " must be >= " +
                        std::to_string(kLastYear + 1));
    }
    if (cfg.checkpoints.empty()) throw ConfigError("at least one --checkpoint is required");
    if (cfg.data_path.empty()) throw ConfigError("--data is required");

    std::vector<TrainedModel> models;
    for (const auto& path : cfg.checkpoints) {
      TrainedModel m = checkpoint_load_file(path);
      if (m.spec.cell_kind == CellKind::Rnn) {
        throw ConfigError("'" + path + "' is an rnn baseline; plot series have no rnn column");
      }
      for (const auto& other : models) {
        if (other.spec.cell_kind == m.spec.cell_kind) {
          throw ConfigError("two checkpoints for cell kind " + to_string(m.spec.cell_kind));
        }
      }
      models.push_back(std::move(m));
    }

    const auto all = load_csv(cfg.data_path);
    const auto series = detail::select_entities(cfg, all);
    const SplitSpec split_spec;
    const auto splits = split_all(series, split_spec);

    ForecastReport report;
    report.truth = series;
    report.split = split_spec;
    report.horizon_end = cfg.horizon;
    for (const auto& m : models) {
      const Predictor p = make_predictor(m);
      const auto eval = evaluate(p, std::span<const SplitSeries>(splits),
                                 std::span<const ConsumptionSeries>(series), m.scaler, cfg.aggregation);
      log << to_string(m.spec.cell_kind) << " window " << m.spec.window_size << ": test MAE "
          << detail::fixed(eval.mae) << " TWh\n";
      report.models.push_back(forecast_model(m.spec.cell_kind, p,
                                             std::span<const ConsumptionSeries>(series), m.scaler,
                                             cfg.horizon));
    }

    std::filesystem::create_directories(cfg.out_dir);
    for (const auto& s : series) {
      write_text_atomic(std::filesystem::path(cfg.out_dir) / ("series_" + detail::slug(s.entity) + ".csv"),
                        emit_plot_series(report, s.entity));
    }
    const auto rows = growth_summary(report);
    std::ostringstream g;
    g << "# horizon=" << cfg.horizon << ",growth=mean(forecast_" << cfg.horizon << " - truth_"
      << kLastYear << "),unit=TWh\n";
    g << "cell_kind,window_size,mean_growth_twh,entities,seed_init,seed_shuffle\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      g << to_string(rows[i].kind) << ',' << rows[i].window_size << ','
        << detail::fixed(rows[i].mean_growth) << ',' << rows[i].entities << ','
        << models[i].init_seed << ',' << models[i].shuffle_seed << '\n';
      log << to_string(rows[i].kind) << " mean growth " << kLastYear << "->" << cfg.horizon << ": "
          << detail::fixed(rows[i].mean_growth) << " TWh\n";
    }
    write_text_atomic(std::filesystem::path(cfg.out_dir) / "growth_summary.csv", g.str());
    if (report_out) *report_out = std::move(report);
    return static_cast<int>(kExitOk);
  });
}

}  // namespace rcf
