#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rcf/runner.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;

namespace rcf {
namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("rcf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    auto series = testing::linear_trend_entities(20, 0.01, 8);
    for (std::size_t i = 0; i < series.size(); ++i) series[i].entity = g20_roster()[i];
    data_ = (dir_ / "g20.csv").string();
    std::ofstream out(data_);
    write_csv(out, series);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunConfig quick(const std::string& out) const {
    RunConfig cfg;
    cfg.data_path = data_;
    cfg.out_dir = (dir_ / out).string();
    cfg.cells = {CellKind::Lstm};
    cfg.windows = {3};
    cfg.train.max_epochs = 2;
    return cfg;
  }

  fs::path dir_;
  std::string data_;
  std::ostringstream log_, err_;
};

TEST_F(Cli, ValidateReportsCoverage) {
  EXPECT_EQ(cmd_validate(data_, log_, err_), kExitOk);
  EXPECT_EQ(log_.str(), "20 entities, 1990\xE2\x80\x93" "2019, OK\n");
}

TEST_F(Cli, ValidateNamesTheGap) {
  const auto bad = dir_ / "gap.csv";
  std::ofstream(bad) << "entity,year,consumption_twh\nX,2000,1\nX,2002,2\n";
  EXPECT_EQ(cmd_validate(bad.string(), log_, err_), kExitData);
  EXPECT_NE(err_.str().find("X is missing year 2001"), std::string::npos) << err_.str();
}

TEST_F(Cli, ValidateRejectsEmptyAndMissingFiles) {
  const auto empty = dir_ / "empty.csv";
  std::ofstream(empty) << "entity,year,consumption_twh\n";
  EXPECT_EQ(cmd_validate(empty.string(), log_, err_), kExitData);
  EXPECT_EQ(cmd_validate((dir_ / "nope.csv").string(), log_, err_), kExitData);
}

TEST_F(Cli, TrainWritesCheckpointAndTable) {
  GridResult result;
  ASSERT_EQ(cmd_train_grid(quick("run"), log_, err_, &result), kExitOk) << err_.str();
  ASSERT_EQ(result.cells.size(), 1u);
  ASSERT_TRUE(result.cells[0].mae.has_value());
  EXPECT_GT(*result.cells[0].mae, 0.0);
  const auto ckpt = checkpoint_load_file(dir_ / "run" / "lstm_w3.rcfc");
  EXPECT_EQ(ckpt.spec.window_size, 3u);
  EXPECT_EQ(ckpt.history.size(), 2u);
  EXPECT_EQ(ckpt.init_seed, 42u);
  EXPECT_EQ(ckpt.shuffle_seed, 7u);
  EXPECT_EQ(ckpt.scaler.fitted_through, 2015);

  const std::string table = slurp(dir_ / "run" / "mae_table.csv");
  EXPECT_EQ(table, result.table_csv);
  std::istringstream lines(table);
  std::string comment, header, row;
  std::getline(lines, comment);
  std::getline(lines, header);
  std::getline(lines, row);
  EXPECT_EQ(comment.rfind("# seed_init=42,seed_shuffle=7,epochs=2,", 0), 0u) << comment;
  EXPECT_EQ(header, "window_size,lstm");
  EXPECT_EQ(row.rfind("3,", 0), 0u);
  EXPECT_FALSE(fs::exists(dir_ / "run" / "mae_table.csv.tmp"));
}

TEST_F(Cli, TableColumnsFollowFixedOrder) {
  auto cfg = quick("cols");
  cfg.cells = {CellKind::Gru, CellKind::Rnn, CellKind::Lstm};
  cfg.windows = {4, 3};
  cfg.train.max_epochs = 1;
  GridResult result;
  ASSERT_EQ(cmd_train_grid(cfg, log_, err_, &result), kExitOk) << err_.str();
  std::istringstream lines(result.table_csv);
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  EXPECT_EQ(line, "window_size,lstm,gru,rnn");
  std::getline(lines, line);
  EXPECT_EQ(line.rfind("4,", 0), 0u);
  EXPECT_TRUE(fs::exists(dir_ / "cols" / "rnn_w4.rcfc"));
  EXPECT_TRUE(fs::exists(dir_ / "cols" / "gru_w3.rcfc"));
}

TEST_F(Cli, ConvLstmGateActivationReachesCheckpoint) {
  auto cfg = quick("g");
  cfg.cells = {CellKind::ConvLstm};
  cfg.train.max_epochs = 1;
  cfg.convlstm_g_activation = ActivationKind::Tanh;
  ASSERT_EQ(cmd_train_grid(cfg, log_, err_), kExitOk) << err_.str();
  EXPECT_EQ(checkpoint_load_file(dir_ / "g" / "convlstm_w3.rcfc").spec.convlstm_g_activation,
            ActivationKind::Tanh);
}

TEST_F(Cli, RerunIsByteIdentical) {
  auto a = quick("a");
  auto b = quick("b");
  a.jobs = 2;
  ASSERT_EQ(cmd_train_grid(a, log_, err_), kExitOk);
  ASSERT_EQ(cmd_train_grid(b, log_, err_), kExitOk);
  EXPECT_EQ(slurp(dir_ / "a" / "mae_table.csv"), slurp(dir_ / "b" / "mae_table.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "lstm_w3.rcfc"), slurp(dir_ / "b" / "lstm_w3.rcfc"));
}

TEST_F(Cli, UsageAndDataErrorsMapToExitCodes) {
  auto cfg = quick("bad");
  cfg.windows = {9};
  EXPECT_EQ(cmd_train_grid(cfg, log_, err_), kExitUsage);
  cfg.allow_any_window = true;
  cfg.train.max_epochs = 1;
  EXPECT_EQ(cmd_train_grid(cfg, log_, err_), kExitOk);
  cfg = quick("bad");
  cfg.data_path = (dir_ / "missing.csv").string();
  EXPECT_EQ(cmd_train_grid(cfg, log_, err_), kExitData);
  cfg = quick("bad");
  cfg.entities = {"Atlantis"};
  EXPECT_EQ(cmd_train_grid(cfg, log_, err_), kExitData);
}

TEST_F(Cli, DivergenceMarksCellFailed) {
  auto cfg = quick("div");
  cfg.train.learning_rate = 1e308;  // head weights overflow after one step
  cfg.train.max_epochs = 3;
  GridResult result;
  EXPECT_EQ(cmd_train_grid(cfg, log_, err_, &result), kExitDivergence);
  EXPECT_NE(result.table_csv.find("3,failed"), std::string::npos) << result.table_csv;
}

TEST_F(Cli, ConfigJsonAppliesKnownKeys) {
  RunConfig cfg;
  apply_config_json(nlohmann::json::parse(R"({"cells":["gru","convlstm"],"windows":[6],
      "epochs":5,"lr":0.01,"mae":"per-entity","seed_init":3,"convlstm_g":"tanh"})"),
                    cfg);
  EXPECT_EQ(cfg.cells, (std::vector<CellKind>{CellKind::Gru, CellKind::ConvLstm}));
  EXPECT_EQ(cfg.windows, std::vector<std::size_t>{6});
  EXPECT_EQ(cfg.train.max_epochs, 5);
  EXPECT_EQ(cfg.train.learning_rate, 0.01);
  EXPECT_EQ(cfg.aggregation, MaeAggregation::PerEntityMean);
  EXPECT_EQ(cfg.seed_init, 3u);
  EXPECT_EQ(cfg.seed_shuffle, 7u);
  EXPECT_EQ(cfg.convlstm_g_activation, ActivationKind::Tanh);
  cfg.convlstm_g_activation = ActivationKind::Relu;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(apply_config_json(nlohmann::json::parse(R"({"epochs":"many"})"), cfg), ConfigError);
  EXPECT_THROW(apply_config_json(nlohmann::json::parse(R"({"cells":["transformer"]})"), cfg),
               LookupError);
}

TEST_F(Cli, ForecastWritesSeriesAndGrowth) {
  auto cfg = quick("fc_train");
  cfg.cells = {CellKind::Lstm, CellKind::Gru};
  ASSERT_EQ(cmd_train_grid(cfg, log_, err_), kExitOk);
  RunConfig fc;
  fc.data_path = data_;
  fc.out_dir = (dir_ / "fc").string();
  fc.checkpoints = {(dir_ / "fc_train" / "lstm_w3.rcfc").string(),
                    (dir_ / "fc_train" / "gru_w3.rcfc").string()};
  ForecastReport report;
  ASSERT_EQ(cmd_forecast(fc, log_, err_, &report), kExitOk) << err_.str();
  EXPECT_EQ(report.models.size(), 2u);
  const std::string series = slurp(dir_ / "fc" / "series_united_states.csv");
  EXPECT_EQ(series.rfind(std::string(kPlotHeader) + "\n", 0), 0u);
  EXPECT_NE(series.find("\n2025,,"), std::string::npos);
  const std::string growth = slurp(dir_ / "fc" / "growth_summary.csv");
  EXPECT_NE(growth.find("cell_kind,window_size,mean_growth_twh,entities,seed_init,seed_shuffle\nlstm,3,"),
            std::string::npos)
      << growth;
  EXPECT_NE(growth.find("\ngru,3,"), std::string::npos);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "fc")) files += e.path().filename().string().rfind("series_", 0) == 0;
  EXPECT_EQ(files, 20u);
}

TEST_F(Cli, ForecastErrors) {
  RunConfig fc;
  fc.data_path = data_;
  fc.out_dir = (dir_ / "fc").string();
  fc.checkpoints = {(dir_ / "absent.rcfc").string()};
  EXPECT_EQ(cmd_forecast(fc, log_, err_), kExitData);
  fc.horizon = 2019;
  EXPECT_EQ(cmd_forecast(fc, log_, err_), kExitUsage);
  fc.horizon = 2025;
  fc.checkpoints.clear();
  EXPECT_EQ(cmd_forecast(fc, log_, err_), kExitUsage);
  const auto junk = dir_ / "junk.rcfc";
  std::ofstream(junk) << "not a checkpoint";
  fc.checkpoints = {junk.string()};
  EXPECT_EQ(cmd_forecast(fc, log_, err_), kExitData);
}

#ifdef RCF_CLI_PATH
int run(const std::string& args) {
  const std::string cmd = std::string(RCF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(Cli, BinaryExitCodesAndFlagPrecedence) {
  EXPECT_EQ(run("validate --data " + data_), 0);
  EXPECT_EQ(run("validate"), 1);
  EXPECT_EQ(run("train --data " + data_ + " --cells lstm --windows 3 --epochs 0"), 1);
  EXPECT_EQ(run("train --data " + data_ + " --cells nosuchcell"), 1);
  EXPECT_EQ(run("train --data " + data_ + " --convlstm-g relu"), 1);
  EXPECT_EQ(run("forecast --data " + data_ + " --checkpoint x.rcfc --horizon 2010"), 1);

  const auto config = dir_ / "cfg.json";
  std::ofstream(config) << R"({"cells":["gru"],"windows":[3],"epochs":1,"seed_shuffle":5})";
  const auto out = dir_ / "bin";
  ASSERT_EQ(run("train --config " + config.string() + " --data " + data_ + " --out " + out.string() +
                " --cells lstm"),
            0);
  const std::string table = slurp(out / "mae_table.csv");
  EXPECT_EQ(table.rfind("# seed_init=42,seed_shuffle=5,epochs=1,", 0), 0u) << table;
  EXPECT_NE(table.find("window_size,lstm\n"), std::string::npos) << table;
}
#endif

}  // namespace
}  // namespace rcf
