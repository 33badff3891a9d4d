#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hilctc/hil.hpp"

namespace hilctc {

void to_json(nlohmann::json& j, const LabelEvent& e);
void from_json(const nlohmann::json& j, LabelEvent& e);
void to_json(nlohmann::json& j, const SamplingPlan& p);

/// Deterministic report document. `experiment` (optional) is echoed under "experiment".
nlohmann::json report_json(const RunReport& report, const nlohmann::json& experiment = nullptr);

/// Serialised form used for files and HTTP responses.
std::string dump_report(const nlohmann::json& report);

/// One row per arm, loop and cluster (cluster "total" for the pooled scores).
void write_report_csv(std::ostream& out, const nlohmann::json& report);

struct SummaryRow {
  std::string arm;
  int loop = 0;
  std::string cluster;  // id or "total"
  std::size_t n = 0;
  double mean_f1 = 0.0;
  double sd_f1 = 0.0;  // sample standard deviation; 0 when n < 2
};

/// Mean and standard deviation of test-set F1 across reports, per arm, loop and cluster.
std::vector<SummaryRow> summarize(const std::vector<nlohmann::json>& reports);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

nlohmann::json application_json(const ApplicationReport& report);
/// patient_id,suggested,confirmed,ppv
void write_application_csv(std::ostream& out, const ApplicationReport& report);

}  // namespace hilctc
