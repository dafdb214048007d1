#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "seldiff/artifacts.hpp"
#include "seldiff/checkpoint.hpp"
#include "seldiff/report.hpp"

using namespace seldiff;
namespace fs = std::filesystem;

namespace {

const char* kTinyIni = R"(
[data]
window = 16
[model]
blocks = 1
latent = 8
heads = 2
ff_dim = 16
[train]
max_epochs = 2
batch = 32
[score]
smoothing = 5
[synthetic]
train_length = 300
test_length = 200
noise = 0.05
seed = 2
[anomaly]
type = level-shift
position = 120
length = 15
magnitude = 3
)";

struct CliResult {
  int status = -1;
  std::string output;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("seldiff_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write("tiny.ini", kTinyIni);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name), std::ios::binary) << text;
  }

  static std::string read(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  CliResult run(const std::string& args) const {
    const std::string log = path("cli.log");
    const std::string cmd = std::string(SELDIFF_CLI) + " " + args + " > " + log + " 2>&1";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, read(log)};
  }

  CliResult train(const std::string& out, const std::string& extra = "") const {
    return run("train --config " + path("tiny.ini") + " --out " + path(out) + " " + extra);
  }

  fs::path dir_;
};

std::size_t data_rows(const std::string& csv) {
  std::size_t n = 0;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') ++n;
  return n - 1;  // header
}

}  // namespace

TEST_F(Cli, MissingDatasetNamesTheKey) {
  write("empty.ini", "[data]\nwindow = 16\n");
  const auto r = run("train --config " + path("empty.ini") + " --out " + path("o"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("data.train"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("error[config]"), std::string::npos) << r.output;
}

TEST_F(Cli, UsageAndConfigErrors) {
  EXPECT_EQ(run("").status, 64);
  EXPECT_EQ(run("frobnicate").status, 64);
  write("bad.ini", "[train]\nlr = 0\nbogus = 1\n");
  const auto r = run("train --config " + path("bad.ini"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("bogus"), std::string::npos);
  EXPECT_NE(r.output.find("train.lr must be positive"), std::string::npos);
  EXPECT_EQ(run("train --config " + path("nope.ini")).status, 7);
}

TEST_F(Cli, SameSeedSameCheckpoint) {
  ASSERT_EQ(train("a").status, 0);
  ASSERT_EQ(train("b").status, 0);
  ASSERT_EQ(train("c", "--seed 1").status, 0);
  const auto a = read(path("a/checkpoint.sdck"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, read(path("b/checkpoint.sdck")));
  EXPECT_NE(a, read(path("c/checkpoint.sdck")));
  EXPECT_EQ(read(path("a/train_log.csv")), read(path("b/train_log.csv")));
  // every artifact leads with its provenance
  for (const char* f : {"train_log.csv", "config.resolved.ini"}) {
    const auto line = read(path(std::string("a/") + f)).substr(0, 200);
    const auto prov = artifacts::parse_provenance(line.substr(0, line.find('\n')));
    EXPECT_EQ(prov.at("seed"), "0") << f;
    EXPECT_EQ(prov.at("config_hash").size(), 16u) << f;
  }
  const auto summary = read_json(path("a/train_summary.json"));
  EXPECT_EQ(summary.at("epochs_run"), 2);
}

TEST_F(Cli, DetectCoversEveryStepAndIsRepeatable) {
  ASSERT_EQ(train("m").status, 0);
  ASSERT_EQ(run("detect --config " + path("tiny.ini") + " --out " + path("m")).status, 0);
  const auto first = read(path("m/scores.csv"));
  ASSERT_EQ(run("detect --config " + path("tiny.ini") + " --out " + path("m")).status, 0);
  EXPECT_EQ(read(path("m/scores.csv")), first);
  EXPECT_EQ(data_rows(first), 200u);
  const auto table = artifacts::read_score_csv(path("m/scores.csv"));
  EXPECT_EQ(table.scores.size(), 200u);
  ASSERT_TRUE(table.labels);
  EXPECT_EQ(table.provenance.at("method"), "AnomalyFilter");
}

TEST_F(Cli, PerfectReconstructionScoresZero) {
  ASSERT_EQ(train("m").status, 0);
  // zero output head: the reverse process returns its input
  auto ck = load_checkpoint(path("m/checkpoint.sdck"));
  for (auto& v : ck.params.head2.weight.mutable_value().data()) v = 0.0;
  for (auto& v : ck.params.head2.bias.mutable_value().data()) v = 0.0;
  save_checkpoint(path("m/stub.sdck"), ck);
  ASSERT_EQ(run("detect --config " + path("tiny.ini") + " --out " + path("m") + " --checkpoint " +
                path("m/stub.sdck"))
                .status,
            0);
  const auto table = artifacts::read_score_csv(path("m/scores.csv"));
  ASSERT_EQ(table.scores.size(), 200u);
  for (double s : table.scores) EXPECT_LT(s, 1e-20);
}

TEST_F(Cli, DetectRejectsIncompatibleCheckpoint) {
  ASSERT_EQ(train("m").status, 0);
  std::string changed = kTinyIni;
  changed.replace(changed.find("latent = 8"), 10, "latent = 4");
  write("other.ini", changed);
  auto r = run("detect --config " + path("other.ini") + " --checkpoint " + path("m/checkpoint.sdck") +
               " --out " + path("m"));
  EXPECT_EQ(r.status, 8);
  EXPECT_NE(r.output.find("model hash"), std::string::npos) << r.output;
  write("dae.ini", std::string(kTinyIni) + "[run]\nmethod = DAE\n");
  r = run("detect --config " + path("dae.ini") + " --checkpoint " + path("m/checkpoint.sdck") + " --out " +
          path("m"));
  EXPECT_EQ(r.status, 8);
  EXPECT_EQ(run("detect --config " + path("tiny.ini") + " --checkpoint " + path("none.sdck")).status, 7);
}

TEST_F(Cli, EvalOfLabelsAsScores) {
  std::ostringstream csv;
  std::vector<int> labels(200, 0);
  for (std::size_t i = 60; i < 75; ++i) labels[i] = 1;
  for (std::size_t i = 150; i < 152; ++i) labels[i] = 1;
  csv << "# config_hash=abc,seed=4\nt,score,label\n";
  for (std::size_t i = 0; i < 200; ++i) csv << i << "," << labels[i] << "," << labels[i] << "\n";
  write("perfect.csv", csv.str());
  ASSERT_EQ(run("eval --scores " + path("perfect.csv") + " --out " + path("e")).status, 0);
  const auto r = report_from_json(read_json(path("e/metrics.json")));
  EXPECT_EQ(*r.f1_best, 1.0);
  EXPECT_EQ(*r.auc_roc, 1.0);
  EXPECT_EQ(*r.range_f, 1.0);
  const std::vector<double> s(labels.begin(), labels.end());
  const auto v = oracle::vus(s, labels, 50);
  EXPECT_NEAR(*r.vus_roc, v.roc, 1e-12);
  EXPECT_NEAR(*r.vus_pr, v.pr, 1e-12);
  EXPECT_FALSE(r.ucr_accuracy);  // two segments
  EXPECT_FALSE(r.mse_n);         // no raw error column
  EXPECT_EQ(r.seed, 4u);
  EXPECT_EQ(r.config_hash, "abc");
  // the JSON file reproduces itself
  EXPECT_EQ(to_json(r).dump(2) + "\n", read(path("e/metrics.json")));
}

TEST_F(Cli, EvalNeedsLabels) {
  write("nolabel.csv", "t,score\n0,1\n1,2\n");
  auto r = run("eval --scores " + path("nolabel.csv") + " --out " + path("e"));
  EXPECT_EQ(r.status, 6);
  EXPECT_NE(r.output.find("label"), std::string::npos);
  write("labels.csv", "x,label\n5,0\n6,1\n7,0\n");
  r = run("eval --scores " + path("nolabel.csv") + " --labels " + path("labels.csv") + " --out " + path("e"));
  EXPECT_EQ(r.status, 3);
}

TEST_F(Cli, EndToEndWithPlotAndSynth) {
  ASSERT_EQ(run("synth --config " + path("tiny.ini") + " --out " + path("d")).status, 0);
  EXPECT_EQ(data_rows(read(path("d/test.csv"))), 200u);
  std::string ini = kTinyIni;
  ini.replace(ini.find("[synthetic]"), std::string::npos, "");
  ini.replace(ini.find("[data]\n"), 7, "[data]\ntrain = " + path("d/train.csv") + "\ntest = " + path("d/test.csv") + "\n");
  write("files.ini", ini);
  ASSERT_EQ(train("f").status, 0);
  ASSERT_EQ(run("train --config " + path("files.ini") + " --out " + path("g")).status, 0);
  // same data through CSV files and the generator
  const auto cf = load_checkpoint(path("f/checkpoint.sdck")), cg = load_checkpoint(path("g/checkpoint.sdck"));
  EXPECT_EQ(cf.params.head2.weight.value().storage(), cg.params.head2.weight.value().storage());
  EXPECT_EQ(cf.norm.mean, cg.norm.mean);
  ASSERT_EQ(run("detect --config " + path("files.ini") + " --out " + path("g")).status, 0);
  ASSERT_EQ(run("eval --config " + path("files.ini") + " --scores " + path("g/scores.csv") + " --out " +
                path("g") + " --plot")
                .status,
            0);
  EXPECT_EQ(read(path("g/scores.svg")).rfind("<svg", 0), 0u);
  const auto r = report_from_json(read_json(path("g/metrics.json")));
  EXPECT_TRUE(r.mse_n);
  EXPECT_EQ(r.method, "AnomalyFilter");
}

TEST_F(Cli, TinyFixtureTrainsWithinBudget) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run("train --config " SELDIFF_SOURCE_DIR "/configs/tiny_synthetic.ini --out " + path("t"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_LT(secs, 60.0);
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
  const std::string cmd = "SELDIFF_OUT=" + path("env") + " " + SELDIFF_CLI + " synth --config " + path("tiny.ini") +
                          " > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(path("env/train.csv")));
}
