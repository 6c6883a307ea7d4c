#include <gtest/gtest.h>

#include "lsdan/report.hpp"

using namespace lsdan;

namespace {

TrialSummary summary(double p, double mean, double sd, std::size_t n) {
  TrialSummary s;
  s.dataset = "cora";
  s.objective = Objective::nnpu;
  s.p = p;
  s.kappa = 4;
  s.layers = 2;
  s.dim = 64;
  s.trials.resize(n);
  s.mean_f1 = mean;
  s.std_f1 = sd;
  s.single_trial = n == 1;
  return s;
}

}  // namespace

TEST(Report, CsvRowLayout) {
  EXPECT_EQ(csv_row(summary(0.05, 0.8671234567, 0.009, 10)), "nnpu,cora,nnpu,0.05,4,2,64,0.867123,0.009000,10");
  auto s = summary(0.01, 0.5, 0.0, 1);
  s.label = "upu_k1";
  EXPECT_EQ(csv_row(s).substr(0, 12), "upu_k1,cora,");
}

TEST(Report, CsvDocumentEmbedsVersionAndConfig) {
  const std::vector<TrialSummary> rows = {summary(0.01, 0.7, 0.01, 10), summary(0.02, 0.75, 0.02, 10)};
  const auto doc = csv_document(rows, {{"seed", 3}});
  EXPECT_EQ(doc.rfind("# lsdan " + version_string() + " config={\"seed\":3}\n", 0), 0u);
  EXPECT_NE(doc.find(std::string(kCsvHeader) + "\n"), std::string::npos);
  EXPECT_EQ(std::count(doc.begin(), doc.end(), '\n'), 4);
  EXPECT_EQ(csv_document(rows, {{"seed", 3}}), doc);
}

TEST(Report, SummaryTableMarksSingleTrialsAndGaps) {
  const auto a = summary(0.01, 0.7, 0.0, 1);
  const std::vector<std::string> cols = {"nnpu", "upu"};
  const std::vector<double> ps = {0.01};
  const auto table = summary_table("t", cols, ps, {{&a, nullptr}});
  EXPECT_NE(table.find("0.700+-0.000*"), std::string::npos);
  EXPECT_NE(table.find(" - "), std::string::npos);
  TrialSummary failed;
  EXPECT_EQ(mean_std(failed), "failed");
}

TEST(Report, SummaryJsonCarriesFailures) {
  auto s = summary(0.03, 0.6, 0.1, 2);
  s.failures.push_back({7, "boom"});
  const auto j = summary_to_json(s);
  EXPECT_EQ(j["failures"][0]["seed"], 7);
  EXPECT_EQ(j["n_trials"], 2);
  EXPECT_EQ(j["objective"], "nnpu");
}
