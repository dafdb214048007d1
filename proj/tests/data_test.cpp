#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "seldiff/data.hpp"
#include "seldiff/rng.hpp"
#include "seldiff/scoring.hpp"

using namespace seldiff;
using namespace seldiff::data;

namespace {

TimeSeries parse(const std::string& text, CsvSchema schema = {}) {
  std::istringstream in(text);
  return parse_csv(in, schema, "mem.csv");
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return ErrorKind::kShape;
}

}  // namespace

TEST(Csv, SingleColumnWithoutHeader) {
  std::string text;
  for (int i = 0; i < 10; ++i) text += std::to_string(i * 0.5) + "\n";
  const auto ts = parse(text);
  EXPECT_EQ(ts.n_features(), 1u);
  EXPECT_EQ(ts.length(), 10u);
  EXPECT_FALSE(ts.labels);
  EXPECT_EQ(ts.value(0, 9), 4.5);
}

TEST(Csv, WideRowsWithLabelColumn) {
  std::string text;
  for (int k = 0; k < 38; ++k) text += "f" + std::to_string(k) + ",";
  text += "label\n";
  for (int t = 0; t < 5; ++t) {
    for (int k = 0; k < 38; ++k) text += std::to_string(k + t) + ",";
    text += t == 3 ? "1\n" : "0\n";
  }
  const auto ts = parse(text);
  EXPECT_EQ(ts.n_features(), 38u);
  EXPECT_EQ(ts.length(), 5u);
  ASSERT_TRUE(ts.labels);
  EXPECT_EQ(*ts.labels, (std::vector<int>{0, 0, 0, 1, 0}));
  EXPECT_EQ(ts.value(37, 4), 41.0);
}

TEST(Csv, LabelColumnAnywhereAndCustomName) {
  const auto ts = parse("anomaly,a,b\n1,2,3\n0,4,5\n", {HeaderMode::kAuto, "anomaly", true});
  EXPECT_EQ(ts.n_features(), 2u);
  EXPECT_EQ(*ts.labels, (std::vector<int>{1, 0}));
  EXPECT_EQ(ts.value(1, 1), 5.0);
}

TEST(Csv, SkipsCommentsAndBlankLines) {
  const auto ts = parse("# produced by test\n\nx\n1\n\n# mid\n2\n");
  EXPECT_EQ(ts.length(), 2u);
}

TEST(Csv, WrongArityNamesTheLine) {
  try {
    parse("a,b\n1,2\n3\n4,5\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Csv, RejectsBadCells) {
  EXPECT_EQ(kind_of([] { parse("a\n1\nxyz\n"); }), ErrorKind::kData);
  EXPECT_EQ(kind_of([] { parse("a,label\n1,2\n"); }), ErrorKind::kData);
  EXPECT_EQ(kind_of([] { parse("a\n1\nnan\n"); }), ErrorKind::kData);
  EXPECT_EQ(kind_of([] { parse("a\n"); }), ErrorKind::kData);
  EXPECT_EQ(kind_of([] { parse("a,b\n1,2\n", {HeaderMode::kAuto, "label", true}); }), ErrorKind::kData);
}

TEST(Csv, ExplicitHeaderModes) {
  EXPECT_EQ(parse("1\n2\n3\n", {HeaderMode::kPresent}).length(), 2u);
  EXPECT_EQ(kind_of([] { parse("x\n2\n", {HeaderMode::kAbsent}); }), ErrorKind::kData);
}

TEST(Csv, WriteReadRoundTripIsExact) {
  Rng rng = make_rng(1);
  TimeSeries ts;
  ts.values = randn({3, 17}, rng);
  ts.labels = std::vector<int>(17, 0);
  (*ts.labels)[5] = 1;
  std::ostringstream out;
  write_csv(out, ts);
  const auto back = parse(out.str());
  EXPECT_EQ(back.values.storage(), ts.values.storage());
  EXPECT_EQ(*back.labels, *ts.labels);
}

TEST(Csv, MissingFileIsIoError) {
  EXPECT_EQ(kind_of([] { load_csv("/nonexistent/file.csv"); }), ErrorKind::kIo);
}

TEST(Series, ValidateCatchesLabelProblems) {
  TimeSeries ts;
  ts.values = NdArray({1, 3});
  ts.labels = std::vector<int>{0, 1};
  EXPECT_EQ(kind_of([&] { ts.validate(); }), ErrorKind::kData);
  ts.labels = std::vector<int>{0, 2, 0};
  EXPECT_EQ(kind_of([&] { ts.validate(); }), ErrorKind::kData);
}

// ---------------------------------------------------------------------------

TEST(Normalize, ConstantFeatureBecomesZero) {
  TimeSeries ts;
  ts.values = NdArray({2, 4}, std::vector<double>{3, 3, 3, 3, 1, 2, 3, 4});
  const auto n = normalize(ts);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(n.train.value(0, t), 0.0);
  EXPECT_EQ(n.stats.scale[0], 1.0);
}

TEST(Normalize, TrainHasZeroMeanUnitStd) {
  Rng rng = make_rng(2);
  TimeSeries ts;
  ts.values = randn({3, 200}, rng);
  for (std::size_t i = 0; i < 200; ++i) ts.values[i] = 5 + 3 * ts.values[i];
  const auto n = normalize(ts);
  for (std::size_t k = 0; k < 3; ++k) {
    double m = 0, v = 0;
    for (std::size_t t = 0; t < 200; ++t) m += n.train.value(k, t) / 200;
    for (std::size_t t = 0; t < 200; ++t) v += std::pow(n.train.value(k, t) - m, 2) / 200;
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(v), 1.0, 1e-9);
  }
}

TEST(Normalize, TestUsesTrainStatistics) {
  TimeSeries train, test;
  train.values = NdArray({1, 4}, std::vector<double>{1, 2, 3, 4});  // mean 2.5, std sqrt(1.25)
  test.values = NdArray({1, 4}, std::vector<double>{11, 12, 13, 14});
  const auto n = normalize(train, {test});
  const double sd = std::sqrt(1.25);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(n.others[0].value(0, t), (11 + t - 2.5) / sd, 1e-12);
}

TEST(Normalize, FeatureCountMismatchIsRejected) {
  TimeSeries a, b;
  a.values = NdArray({2, 3});
  b.values = NdArray({1, 3});
  EXPECT_THROW(normalize(a, {b}), Error);
}

// ---------------------------------------------------------------------------

TEST(Windows, ExactFitGivesOneWindow) {
  EXPECT_EQ(window_origins(100, 100, 1, WindowMode::kTraining), (std::vector<std::size_t>{0}));
  EXPECT_EQ(window_origins(100, 100, 100, WindowMode::kInference), (std::vector<std::size_t>{0}));
}

TEST(Windows, InferenceClampsTail) {
  EXPECT_EQ(window_origins(250, 100, 100, WindowMode::kInference), (std::vector<std::size_t>{0, 100, 150}));
  EXPECT_EQ(window_origins(250, 100, 100, WindowMode::kTraining), (std::vector<std::size_t>{0, 100}));
}

TEST(Windows, TrainingStrideOneCount) {
  EXPECT_EQ(window_origins(105, 100, 1, WindowMode::kTraining).size(), 6u);
}

TEST(Windows, RejectsShortSeriesAndZeroStride) {
  EXPECT_THROW(window_origins(50, 100, 1, WindowMode::kTraining), Error);
  EXPECT_THROW(window_origins(150, 100, 0, WindowMode::kTraining), Error);
}

TEST(Windows, ContentsAreSlicesOfEveryFeature) {
  TimeSeries ts;
  ts.values = NdArray({2, 6}, std::vector<double>{0, 1, 2, 3, 4, 5, 10, 11, 12, 13, 14, 15});
  const auto ws = make_windows(ts, 4, 2, WindowMode::kInference);
  ASSERT_EQ(ws.origins, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(ws.windows[1].storage(), (std::vector<double>{2, 3, 4, 5, 12, 13, 14, 15}));
}

TEST(Windows, StrideOneReassemblyIsExact) {
  Rng rng = make_rng(3);
  TimeSeries ts;
  ts.values = randn({1, 60}, rng);
  const auto ws = make_windows(ts, 10, 1, WindowMode::kTraining);
  std::vector<std::vector<double>> per;
  for (const auto& w : ws.windows) per.emplace_back(w.storage());
  const auto back = scoring::assemble_scores(per, ws.origins, 60);
  for (std::size_t t = 0; t < 60; ++t) EXPECT_NEAR(back[t], ts.values[t], 1e-12);
}
