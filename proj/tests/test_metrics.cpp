#include <gtest/gtest.h>

#include <random>

#include "hmresnet/metrics.hpp"
#include "reference_data.hpp"

using namespace hmresnet;
using hmresnet::testing::kSmartphoneClasses;
using hmresnet::testing::kSmartphoneReferenceMatrix;

namespace {

ConfusionMatrix reference() {
  ConfusionMatrix cm(kSmartphoneClasses);
  cm.counts = kSmartphoneReferenceMatrix;
  return cm;
}

ConfusionMatrix random_matrix(std::mt19937_64& rng, std::size_t k, int max_count) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("c" + std::to_string(i));
  ConfusionMatrix cm(names);
  std::uniform_int_distribution<int> u(0, max_count);
  for (auto& r : cm.counts)
    for (auto& v : r) v = static_cast<std::uint64_t>(u(rng));
  if (cm.total() == 0) cm.counts[0][0] = 1;
  return cm;
}

}  // namespace

TEST(Confusion, CountsActualByPredicted) {
  const auto cm = confusion({0, 1, 1, 2, 0}, {0, 1, 2, 2, 1}, 3);
  EXPECT_EQ(cm.counts, (std::vector<std::vector<std::uint64_t>>{{1, 0, 0}, {1, 1, 0}, {0, 1, 1}}));
  EXPECT_EQ(cm.total(), 5u);
  EXPECT_EQ(cm.class_names, (std::vector<std::string>{"0", "1", "2"}));
}

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  std::vector<std::size_t> y{0, 3, 2, 1, 3, 3};
  const auto cm = confusion(y, y, 4);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t p = 0; p < 4; ++p)
      if (a != p) EXPECT_EQ(cm.counts[a][p], 0u);
  EXPECT_EQ(cm.trace(), 6u);
}

TEST(Confusion, OutOfRangeNamesTheIndex) {
  try {
    confusion({0, 1, 5}, {0, 1, 1}, 3);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("prediction 5 at index 2"), std::string::npos) << e.what();
  }
  try {
    confusion({0, 1}, {3, 1}, 3);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("label 3 at index 0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(confusion({0}, {0, 1}, 3), InvalidArgument);
}

TEST(Confusion, ConcatenationSumsMatrices) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> u(0, 4);
  std::vector<std::size_t> p1(40), y1(40), p2(25), y2(25);
  for (auto* v : {&p1, &y1, &p2, &y2})
    for (auto& x : *v) x = u(rng);
  auto joined_p = p1, joined_y = y1;
  joined_p.insert(joined_p.end(), p2.begin(), p2.end());
  joined_y.insert(joined_y.end(), y2.begin(), y2.end());
  auto sum = confusion(p1, y1, 5);
  sum += confusion(p2, y2, 5);
  EXPECT_EQ(sum, confusion(joined_p, joined_y, 5));
}

TEST(Metrics, ReferenceMatrixAccuracy) {
  const auto cm = reference();
  EXPECT_EQ(cm.total(), 2947u);
  EXPECT_EQ(cm.trace(), 2878u);
  EXPECT_EQ(accuracy(cm), 2878.0 / 2947.0);
  EXPECT_NEAR(accuracy(cm), 0.9766, 5e-5);
  EXPECT_EQ(cm.counts[5], (std::vector<std::uint64_t>{0, 0, 0, 0, 0, 537}));
}

TEST(Metrics, ReferenceMatrixPerClass) {
  const auto m = compute_metrics(reference());
  EXPECT_EQ(m.per_class[5].precision, 1.0);
  EXPECT_EQ(m.per_class[5].recall, 1.0);
  // Hand-derived column and row sums.
  EXPECT_EQ(m.per_class[0].precision, 496.0 / 501.0);
  EXPECT_EQ(m.per_class[0].recall, 1.0);
  EXPECT_EQ(m.per_class[3].precision, 438.0 / 448.0);
  EXPECT_EQ(m.per_class[3].recall, 438.0 / 491.0);
  EXPECT_EQ(m.per_class[4].precision, 522.0 / 575.0);
  EXPECT_EQ(m.per_class[4].recall, 522.0 / 532.0);
  const double macro_r = (1.0 + 468.0 / 471 + 417.0 / 420 + 438.0 / 491 + 522.0 / 532 + 1.0) / 6;
  EXPECT_NEAR(m.macro_recall, macro_r, 1e-15);
  EXPECT_EQ(m.sample_count, 2947u);
}

TEST(Metrics, UniformTwoClass) {
  ConfusionMatrix cm({"a", "b"});
  cm.counts = {{1, 1}, {1, 1}};
  const auto m = compute_metrics(cm);
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_EQ(m.macro_precision, 0.5);
  EXPECT_EQ(m.macro_recall, 0.5);
}

TEST(Metrics, ZeroDenominatorsAreZeroAndFlagged) {
  ConfusionMatrix cm({"a", "b", "c"});
  cm.counts = {{3, 0, 0}, {2, 0, 0}, {0, 0, 0}};
  const auto m = compute_metrics(cm);
  EXPECT_TRUE(m.per_class[1].precision_undefined);
  EXPECT_FALSE(m.per_class[1].recall_undefined);
  EXPECT_EQ(m.per_class[1].precision, 0.0);
  EXPECT_TRUE(m.per_class[2].precision_undefined);
  EXPECT_TRUE(m.per_class[2].recall_undefined);
  EXPECT_DOUBLE_EQ(m.macro_precision, 0.6 / 3);
  const auto j = report_json(cm, m);
  EXPECT_EQ(j["zero_denominator"]["precision"], (nlohmann::json{"b", "c"}));
  EXPECT_EQ(j["zero_denominator"]["recall"], (nlohmann::json{"c"}));
  EXPECT_NE(render_report(cm, m, ReportFormat::text).find("* zero denominator"), std::string::npos);
}

TEST(Metrics, EmptyMatrixIsAnError) {
  ConfusionMatrix cm({"a", "b"});
  EXPECT_THROW(compute_metrics(cm), InvalidArgument);
  EXPECT_THROW(accuracy(cm), InvalidArgument);
}

TEST(MetricsProperty, AccuracyIsRowWeightedRecall) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cm = random_matrix(rng, 2 + static_cast<std::size_t>(trial % 9), trial % 3 == 0 ? 3 : 50);
    const auto m = compute_metrics(cm);
    double weighted = 0;
    for (std::size_t c = 0; c < cm.classes(); ++c)
      weighted += m.per_class[c].recall * static_cast<double>(cm.row_sum(c)) / static_cast<double>(cm.total());
    EXPECT_NEAR(weighted, m.accuracy, 1e-12);
  }
}

TEST(MetricsProperty, AllValuesInUnitInterval) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = compute_metrics(random_matrix(rng, 2 + static_cast<std::size_t>(trial % 7), trial % 2 ? 2 : 30));
    for (double v : {m.accuracy, m.macro_precision, m.macro_recall}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (const auto& c : m.per_class) {
      EXPECT_GE(c.precision, 0.0);
      EXPECT_LE(c.precision, 1.0);
      EXPECT_GE(c.recall, 0.0);
      EXPECT_LE(c.recall, 1.0);
    }
  }
}

TEST(MetricsProperty, ClassPermutationInvariance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + static_cast<std::size_t>(trial % 6);
    const auto cm = random_matrix(rng, k, 20);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ConfusionMatrix pc(cm.class_names);
    for (std::size_t a = 0; a < k; ++a) {
      pc.class_names[perm[a]] = cm.class_names[a];
      for (std::size_t p = 0; p < k; ++p) pc.counts[perm[a]][perm[p]] = cm.counts[a][p];
    }
    const auto m = compute_metrics(cm), pm = compute_metrics(pc);
    EXPECT_EQ(m.accuracy, pm.accuracy);
    EXPECT_NEAR(m.macro_precision, pm.macro_precision, 1e-15);
    EXPECT_NEAR(m.macro_recall, pm.macro_recall, 1e-15);
    for (std::size_t c = 0; c < k; ++c) {
      EXPECT_EQ(m.per_class[c].precision, pm.per_class[perm[c]].precision);
      EXPECT_EQ(m.per_class[c].recall, pm.per_class[perm[c]].recall);
    }
  }
}

TEST(Report, TextShowsZeroOffDiagonals) {
  std::vector<std::size_t> y{0, 1, 2, 2};
  auto cm = confusion(y, y, {"x", "y", "z"});
  const auto text = render_report(cm, compute_metrics(cm), ReportFormat::text);
  EXPECT_NE(text.find("x        1   0   0  [0]"), std::string::npos) << text;
  EXPECT_NE(text.find("z        0   0   2  [2]"), std::string::npos) << text;
  EXPECT_NE(text.find("accuracy 1.0000 (4/4)"), std::string::npos) << text;
}

TEST(Report, JsonRoundTripsAndFollowsSchema) {
  const auto cm = reference();
  const auto m = compute_metrics(cm);
  const auto doc = render_report(cm, m, ReportFormat::json);
  const auto j = nlohmann::json::parse(doc);
  for (const char* key : {"schema_version", "classes", "matrix", "accuracy", "per_class", "macro", "sample_count"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["per_class"]["precision"].size(), 6u);
  EXPECT_EQ(j["macro"]["recall"].get<double>(), m.macro_recall);
  EXPECT_EQ(j["accuracy"].get<double>(), 2878.0 / 2947.0);
  EXPECT_EQ(confusion_from_json(j), cm);
  auto broken = j;
  broken["sample_count"] = 1;
  EXPECT_THROW(confusion_from_json(broken), FormatError);
  broken = j;
  broken["matrix"][2].erase(0);
  EXPECT_THROW(confusion_from_json(broken), FormatError);
}

TEST(Report, CsvHasHeaderPlusOneRowPerClass) {
  const auto cm = reference();
  const auto csv = render_report(cm, compute_metrics(cm), ReportFormat::csv);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "actual\\predicted,WALKING,WALKING UPSTAIRS,WALKING DOWNSTAIRS,SITTING,STANDING,LAYING");
  EXPECT_NE(csv.find("SITTING,0,1,0,438,52,0\n"), std::string::npos);
  ConfusionMatrix quoted({"a,b", "c"});
  quoted.counts = {{1, 0}, {0, 1}};
  EXPECT_NE(render_report(quoted, compute_metrics(quoted), ReportFormat::csv).find("\"a,b\""), std::string::npos);
}

TEST(Report, RenderingIsDeterministicAndFormatsAreChecked) {
  const auto cm = reference();
  const auto m = compute_metrics(cm);
  for (auto f : {ReportFormat::text, ReportFormat::json, ReportFormat::csv})
    EXPECT_EQ(render_report(cm, m, f), render_report(cm, m, f));
  EXPECT_EQ(parse_report_format("csv"), ReportFormat::csv);
  EXPECT_THROW(parse_report_format("xml"), InvalidArgument);
}
