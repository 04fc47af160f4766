// rcf: train and evaluate recurrent consumption forecasters from the shell.
//
//   rcf validate --data consumption.csv
//   rcf train    --data consumption.csv --out runs/a [--cells lstm,gru] [--windows 3,6]
//   rcf forecast --data consumption.csv --out runs/a/fc --checkpoint runs/a/lstm_w6.rcfc ...

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rcf/runner.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Flags {
  std::string config;
  std::optional<std::string> data, out, cells, windows, entities, mae, convlstm_g;
  std::optional<int> epochs, horizon, patience;
  std::optional<double> lr, huber_delta;
  std::optional<std::size_t> batch;
  std::optional<std::uint64_t> seed_init, seed_shuffle;
  std::optional<unsigned> jobs;
  bool allow_any_window = false;
  std::vector<std::string> checkpoints;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file (flags override it)");
  cmd->add_option("--data", f.data, "consumption CSV (entity,year,consumption_twh)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--entities", f.entities, "comma-separated roster, or 'all' (default: G-20)");
  cmd->add_option("--mae", f.mae, "MAE aggregation: pooled | per-entity")
      ->check(CLI::IsMember({"pooled", "per-entity"}));
}

/// defaults < config file < flags
rcf::RunConfig resolve(const Flags& f) {
  rcf::RunConfig cfg;
  if (!f.config.empty()) rcf::load_config_file(f.config, cfg);
  if (f.data) cfg.data_path = *f.data;
  if (f.out) cfg.out_dir = *f.out;
  if (f.cells) {
    cfg.cells.clear();
    for (const auto& c : split_list(*f.cells)) cfg.cells.push_back(rcf::cell_kind_from_string(c));
  }
  if (f.windows) {
    cfg.windows.clear();
    for (const auto& w : split_list(*f.windows)) {
      try {
        cfg.windows.push_back(static_cast<std::size_t>(std::stoul(w)));
      } catch (const std::exception&) {
        throw rcf::ConfigError("bad window size '" + w + "'");
      }
    }
  }
  if (f.allow_any_window) cfg.allow_any_window = true;
  if (f.entities) cfg.entities = split_list(*f.entities);
  if (f.mae) {
    cfg.aggregation = *f.mae == "pooled" ? rcf::MaeAggregation::Pooled
                                         : rcf::MaeAggregation::PerEntityMean;
  }
  if (f.convlstm_g) cfg.convlstm_g_activation = rcf::activation_from_string(*f.convlstm_g);
  if (f.epochs) cfg.train.max_epochs = *f.epochs;
  if (f.lr) cfg.train.learning_rate = *f.lr;
  if (f.batch) cfg.train.batch_size = *f.batch;
  if (f.huber_delta) cfg.train.huber_delta = *f.huber_delta;
  if (f.patience) cfg.train.early_stop_patience = *f.patience;
  if (f.seed_init) cfg.seed_init = *f.seed_init;
  if (f.seed_shuffle) cfg.seed_shuffle = *f.seed_shuffle;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (f.horizon) cfg.horizon = *f.horizon;
  if (!f.checkpoints.empty()) cfg.checkpoints = f.checkpoints;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent-network forecasting of yearly electricity consumption"};
  app.require_subcommand(1);
  Flags f;

  auto* validate = app.add_subcommand("validate", "check a consumption CSV");
  validate->add_option("--data", f.data, "consumption CSV")->required();

  auto* train = app.add_subcommand("train", "train and score the cell-kind x window grid");
  add_common(train, f);
  train->add_option("--cells", f.cells, "comma list of lstm,bilstm,gru,convlstm,rnn");
  train->add_option("--windows", f.windows, "comma list of window sizes (default 3,4,5,6,7)");
  train->add_flag("--allow-any-window", f.allow_any_window,
                  "accept window sizes outside 3..7");
  train->add_option("--convlstm-g", f.convlstm_g, "ConvLSTM g-gate activation: sigmoid | tanh")
      ->check(CLI::IsMember({"sigmoid", "tanh"}));
  train->add_option("--epochs", f.epochs, "maximum epochs (default 200)");
  train->add_option("--lr", f.lr, "Adam learning rate (default 0.001)");
  train->add_option("--batch", f.batch, "mini-batch size (default 32)");
  train->add_option("--huber-delta", f.huber_delta, "Huber delta in scaled units (default 1)");
  train->add_option("--patience", f.patience, "early-stop patience in epochs (default off)");
  train->add_option("--seed-init", f.seed_init, "parameter initialization seed");
  train->add_option("--seed-shuffle", f.seed_shuffle, "mini-batch shuffle seed");
  train->add_option("--jobs", f.jobs, "parallel training jobs");

  auto* forecast = app.add_subcommand("forecast", "forecast from checkpoints to the horizon");
  add_common(forecast, f);
  forecast->add_option("--checkpoint", f.checkpoints, "checkpoint file (repeat per cell kind)");
  forecast->add_option("--horizon", f.horizon, "last forecast year (default 2025)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? rcf::kExitOk : rcf::kExitUsage;
  }

  if (validate->parsed()) return rcf::cmd_validate(*f.data, std::cout, std::cerr);

  rcf::RunConfig cfg;
  try {
    cfg = resolve(f);
  } catch (const rcf::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return rcf::kExitUsage;
  }
  if (train->parsed()) return rcf::cmd_train_grid(cfg, std::cout, std::cerr);
  return rcf::cmd_forecast(cfg, std::cout, std::cerr);
}
