#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "metaseg/metaseg.hpp"

namespace {

namespace fs = std::filesystem;
using namespace metaseg;

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("metaseg_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static int run(const std::string& args) {
    const std::string cmd = std::string(METASEG_CLI_PATH) + " " + args + " >" + (dir_ / "stdout").string() + " 2>" +
                            (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  static std::string p(const std::string& name) { return (dir_ / name).string(); }
  static std::string stderr_text() { return io::read_file(dir_ / "stderr"); }

  static fs::path dir_;
};

fs::path Cli::dir_;

TEST_F(Cli, SynthThenMetricsGives77Columns) {
  ASSERT_EQ(run("synth --count 10 --seed 7 --out " + p("d")), 0) << stderr_text();
  EXPECT_EQ(list_ids(p("d")).size(), 10u);
  ASSERT_EQ(run("metrics --in " + p("d") + " --t 0.7 --out " + p("mu.csv")), 0) << stderr_text();
  const std::string text = io::read_file(p("mu.csv"));
  const std::string header = text.substr(0, text.find('\n'));
  EXPECT_EQ(io::split(header, ',').size(), 77u);
}

TEST_F(Cli, TrainMetaIsBitIdentical) {
  ASSERT_EQ(run("synth --count 6 --seed 3 --out " + p("t")), 0);
  ASSERT_EQ(run("metrics --in " + p("t") + " --out " + p("t.csv")), 0);
  ASSERT_EQ(run("train-meta --kind mlp --mu " + p("t.csv") + " --seed 1 --epochs 3 --out " + p("a.model")), 0)
      << stderr_text();
  ASSERT_EQ(run("train-meta --kind mlp --mu " + p("t.csv") + " --seed 1 --epochs 3 --out " + p("b.model")), 0);
  EXPECT_EQ(io::read_file(p("a.model")), io::read_file(p("b.model")));
}

TEST_F(Cli, EvalMetaOnSeparableDataReportsPerfectAuroc) {
  MetricsDataset ds;
  ds.registry = MetricRegistry::from_names({"x", "y"});
  ds.rows.resize(40, 2);
  for (int i = 0; i < 40; ++i) {
    ds.rows(i, 0) = i < 20 ? -1.0 - i * 0.1 : 1.0 + i * 0.1;
    ds.rows(i, 1) = (i * 7) % 5;
    ds.labels.push_back(i < 20 ? 0 : 1);
    ds.group_ids.push_back("img" + std::to_string(i % 4));
  }
  save_metrics_csv(ds, p("sep.csv"));
  ASSERT_EQ(run("train-meta --kind logistic --mu " + p("sep.csv") + " --lr 0.05 --epochs 50 --batch 8 --out " +
                p("sep.model")),
            0);
  ASSERT_EQ(run("eval-meta --model " + p("sep.model") + " --mu " + p("sep.csv") + " --out " + p("sep_report.csv")), 0)
      << stderr_text();
  const std::string report = io::read_file(p("sep_report.csv"));
  EXPECT_NE(report.find("auroc,1\n"), std::string::npos) << report;
}

TEST_F(Cli, FullPipelineRuns) {
  ASSERT_EQ(run("synth --count 8 --seed 11 --coupling --out " + p("f")), 0);
  ASSERT_EQ(run("score --in " + p("f") + " --out " + p("fs")), 0) << stderr_text();
  ASSERT_EQ(run("segments --scores " + p("fs") + " --masks " + p("f") + " --out " + p("seg.csv")), 0) << stderr_text();
  ASSERT_EQ(run("metrics --in " + p("f") + " --out " + p("f.csv")), 0);
  ASSERT_EQ(run("loo --mu " + p("f.csv") + " --epochs 2 --out " + p("loo.csv") + " --plot " + p("loo.svg")), 0)
      << stderr_text();
  ASSERT_EQ(run("lars --mu " + p("f.csv") + " --out " + p("lars.csv")), 0) << stderr_text();
  ASSERT_EQ(run("filter-proxy --masks " + p("f") + " --low 0.01 --high 0.05 --out " + p("proxy.csv")), 0)
      << stderr_text();
  ASSERT_EQ(run("eval-pixel --scores " + p("fs") + " --masks " + p("f") + " --out " + p("pix.csv") + " --plot " +
                p("pix.svg")),
            0)
      << stderr_text();
  EXPECT_EQ(io::read_file(p("seg.csv")).rfind("sample,component,", 0), 0u);
  EXPECT_EQ(io::read_file(p("loo.svg")).rfind("<svg", 0), 0u);
  EXPECT_EQ(io::read_file(p("lars.csv")).rfind("rank,metric,column,abs_correlation\n1,", 0), 0u);
  EXPECT_EQ(io::lines(io::read_file(p("proxy.csv"))).size(), 9u);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("synth --count 2 --out " + p("x") + " --bogus"), 1);
  EXPECT_NE(stderr_text().find("--count"), std::string::npos);
  EXPECT_EQ(run("metrics --in " + p("does_not_exist") + " --out " + p("y.csv")), 1);
  io::write_file_atomic(p("broken.csv"), "a,b\n1,2\n");
  EXPECT_EQ(run("lars --mu " + p("broken.csv") + " --out " + p("z.csv")), 2);
  EXPECT_FALSE(fs::exists(p("z.csv")));
  EXPECT_EQ(run("synth --count 2 --blob-size-max 100000 --out " + p("x")), 2);
}

TEST_F(Cli, HelpOnEverySubcommand) {
  for (const char* cmd : {"synth", "score", "segments", "metrics", "train-meta", "eval-meta", "loo", "lars",
                          "incremental", "filter-proxy", "eval-pixel"}) {
    EXPECT_EQ(run(std::string(cmd) + " --help"), 0) << cmd;
    const std::string help = io::read_file(dir_ / "stdout");
    EXPECT_NE(help.find("--"), std::string::npos) << cmd;
  }
  EXPECT_EQ(run("--help"), 0);
}

}  // namespace
