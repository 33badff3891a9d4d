#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/experiment.hpp"
#include "hilctc/report.hpp"
#include "support.hpp"

using namespace hilctc;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    parse_experiment_config(j);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidSpec);
    return e.what();
  }
  return "";
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config errors name the field") {
  json j = testing::small_experiment();
  j["hil"]["threshold"] = 1.5;
  CHECK(starts_with(error_of(j), "/hil/threshold:"));

  j = testing::small_experiment();
  j["hil"]["svm"] = {{"gamma", "auto"}};
  CHECK(starts_with(error_of(j), "/hil/svm/gamma:"));

  j = testing::small_experiment();
  j["pipeline"]["projection"] = {{"n_neighbors", "many"}};
  CHECK(starts_with(error_of(j), "/pipeline/projection/n_neighbors:"));

  j = testing::small_experiment();
  j["hil"]["budgte"] = 5;
  CHECK(starts_with(error_of(j), "/hil/budgte:"));

  j = testing::small_experiment();
  j["kind"] = "scenario3";
  CHECK(starts_with(error_of(j), "/kind:"));

  j = testing::small_experiment();
  j["manifest"] = "cells.jsonl";
  CHECK(starts_with(error_of(j), "/manifest:"));

  CHECK(starts_with(error_of(json::array()), "/:"));
}

TEST_CASE("config round trip") {
  json j = testing::small_experiment("scenario2");
  j["hil"]["svm"] = {{"C", 3.0}, {"gamma", 0.25}, {"class_weight", "none"}};
  j["hil"]["steering"] = "test_set";
  j["hil"]["review_order"] = "least_likely_first";
  const auto c = parse_experiment_config(j);
  CHECK(c.hil.svm.C == 3.0);
  CHECK(*c.hil.svm.gamma == 0.25);
  CHECK(c.hil.steering == Steering::TestSet);
  CHECK_FALSE(c.hil.review_most_likely_first);
  CHECK(*c.main_cluster == 0);
  const auto again = parse_experiment_config(config_json(c));
  CHECK(config_json(again) == config_json(c));

  const auto dir = testing::scratch_dir("config");
  std::ofstream(dir / "bad.json") << "{ not json";
  try {
    load_experiment_config(dir / "bad.json");
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
  }
  CHECK_THROWS_AS(load_experiment_config(dir / "missing.json"), Error);
}

TEST_CASE("pipeline and fixed-seed runs") {
  const auto config = parse_experiment_config(testing::small_experiment());
  const auto prepared = prepare_experiment(config, 1);
  const auto& d = *prepared.data;
  CHECK(d.size() == prepared.records.size());
  CHECK(prepared.projection.coords.rows() == static_cast<Eigen::Index>(d.size()));
  CHECK(prepared.clusters.cluster_count() >= 2);
  std::set<std::string> split_patients;
  for (const auto& r : prepared.holdout) CHECK(prepared.split.holdout_patients.contains(r.patient_id));
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.role[i] == Role::Test) CHECK(prepared.split.test_patients.contains(d.patient[i]));
    else CHECK(prepared.split.train_patients.contains(d.patient[i]));
  }

  const auto a = render_report(run_experiment(config, prepared, 1), config);
  const auto b = render_report(run_experiment(config, prepare_experiment(config, 1), 1), config);
  CHECK(a == b);
  const auto parsed = json::parse(a);
  CHECK(parsed["experiment"]["seed"] == 1);
  CHECK(parsed["arms"]["cluster_specific"]["loops"].size() == 3);

  // the stepwise driver produces the same report as the one-shot runner
  auto run = start_protocol(config, prepared, 1);
  while (!run.finished()) run.advance();
  CHECK(render_report(run.report(), config) == a);
}

TEST_CASE("scenario 2 needs a main cluster") {
  auto j = testing::small_experiment("scenario2");
  j.erase("main_cluster");
  const auto config = parse_experiment_config(j);
  CHECK_THROWS_AS(start_protocol(config, prepare_experiment(config, 1), 1), Error);
}

}  // TEST_SUITE

TEST_SUITE("report") {

TEST_CASE("summary statistics and CSV") {
  const auto config = parse_experiment_config(testing::small_experiment());
  const auto prepared = prepare_experiment(config, 1);
  std::vector<json> reports;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    reports.push_back(json::parse(render_report(run_experiment(config, prepared, seed), config)));
  }
  const auto rows = summarize(reports);
  REQUIRE_FALSE(rows.empty());
  for (const auto& row : rows) {
    std::vector<double> f1;
    for (const auto& r : reports) {
      const json& test = r["arms"][row.arm]["loops"][static_cast<std::size_t>(row.loop)]["test"];
      if (row.cluster == "total") f1.push_back(test["total"]["f1"].get<double>());
      else if (test["per_cluster"].contains(row.cluster)) f1.push_back(test["per_cluster"][row.cluster]["f1"].get<double>());
    }
    REQUIRE(f1.size() == row.n);
    double mean = 0;
    for (double v : f1) mean += v / static_cast<double>(f1.size());
    double var = 0;
    for (double v : f1) var += (v - mean) * (v - mean) / static_cast<double>(f1.size() - 1);
    CHECK(std::abs(row.mean_f1 - mean) <= 1e-12);
    CHECK(std::abs(row.sd_f1 - std::sqrt(var)) <= 1e-12);
  }

  std::ostringstream csv;
  write_report_csv(csv, reports[0]);
  std::istringstream lines(csv.str());
  std::string header, line;
  std::getline(lines, header);
  CHECK(header == "arm,loop,cluster,n_points,tp,fp,fn,tn,precision,recall,f1,training_size");
  long totals = 0;
  while (std::getline(lines, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 11);
    totals += line.find(",total,") != std::string::npos;
  }
  CHECK(totals == 2 * 3);  // two arms, three evaluations each

  std::ostringstream summary;
  write_summary_csv(summary, rows);
  CHECK(summary.str().rfind("arm,loop,cluster,n,mean_f1,sd_f1\n", 0) == 0);

  CHECK_THROWS_AS(summarize({json{{"format", "other"}}}), Error);
}

}  // TEST_SUITE
