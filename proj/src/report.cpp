#include "hilctc/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "hilctc/error.hpp"
#include "hilctc/experiment.hpp"
#include "hilctc/reduce.hpp"

namespace hilctc {

using nlohmann::json;

void to_json(json& j, const LabelEvent& e) {
  j = json{{"cell_id", e.cell_id},
           {"label", to_string(e.assigned_label)},
           {"source", to_string(e.source)},
           {"loop_index", e.loop_index},
           {"elapsed_ms", e.elapsed_ms}};
  j["timestamp"] = e.timestamp ? json(*e.timestamp) : json(nullptr);
}

void from_json(const json& j, LabelEvent& e) {
  e.cell_id = j.at("cell_id").get<std::string>();
  e.assigned_label = parse_label(j.at("label").get<std::string>());
  e.source = j.at("source").get<std::string>() == "human" ? LabelSource::Human : LabelSource::SimulatedOracle;
  e.loop_index = j.at("loop_index").get<int>();
  e.elapsed_ms = j.value("elapsed_ms", 0L);
  if (j.contains("timestamp") && !j["timestamp"].is_null()) e.timestamp = j["timestamp"].get<std::string>();
  else e.timestamp.reset();
}

namespace {

template <typename V>
json keyed(const std::map<int, V>& m) {
  json out = json::object();
  for (const auto& [k, v] : m) out[std::to_string(k)] = v;
  return out;
}

json arm_json(const ArmReport& a) {
  json loops = json::array();
  for (std::size_t k = 0; k < a.test_metrics.size(); ++k) {
    json loop{{"loop", k}, {"test", a.test_metrics[k]}};
    loop["training_size"] = k < a.training_sizes.size() ? json(a.training_sizes[k]) : json(nullptr);
    loop["added"] = k > 0 && k - 1 < a.added_per_loop.size() ? json(a.added_per_loop[k - 1]) : json(0);
    loop["steering"] = k < a.steering_metrics.size() && a.steering_metrics[k] ? json(*a.steering_metrics[k]) : json(nullptr);
    loop["plan"] = k > 0 && k - 1 < a.plans.size() ? json(a.plans[k - 1]) : json(nullptr);
    loops.push_back(std::move(loop));
  }
  return json{{"strategy", to_string(a.strategy)}, {"loops", loops}, {"events", a.events}};
}

}  // namespace

void to_json(json& j, const SamplingPlan& p) {
  j = json{{"scores", keyed(p.scores)},
           {"frequencies", keyed(p.frequencies)},
           {"budget", p.budget},
           {"allocation", keyed(p.allocation)}};
}

json report_json(const RunReport& report, const json& experiment) {
  json j{{"format", "hilctc.run_report"},
         {"version", 1},
         {"kind", report.kind},
         {"seed", report.seed},
         {"config", config_json(report.config)},
         {"arms", {{"cluster_specific", arm_json(report.cluster_specific)}, {"random", arm_json(report.random)}}}};
  j["focus_cluster"] = report.focus_cluster ? json(*report.focus_cluster) : json(nullptr);
  if (!experiment.is_null()) j["experiment"] = experiment;
  return j;
}

std::string dump_report(const json& report) { return report.dump(2) + "\n"; }

namespace {

void check_report(const json& report) {
  if (!report.is_object() || report.value("format", std::string()) != "hilctc.run_report") {
    fail(ErrorKind::Parse, "not a run report document");
  }
}

}  // namespace

void write_report_csv(std::ostream& out, const json& report) {
  check_report(report);
  out << "arm,loop,cluster,n_points,tp,fp,fn,tn,precision,recall,f1,training_size\n";
  for (const char* arm : {"cluster_specific", "random"}) {
    for (const auto& loop : report["arms"][arm]["loops"]) {
      const json& test = loop["test"];
      auto row = [&](const std::string& cluster, const json& s, long n) {
        out << arm << ',' << loop["loop"].get<int>() << ',' << cluster << ',' << n << ',' << s["tp"].get<long>() << ','
            << s["fp"].get<long>() << ',' << s["fn"].get<long>() << ',' << s["tn"].get<long>() << ','
            << format_double(s["precision"].get<double>()) << ',' << format_double(s["recall"].get<double>()) << ','
            << format_double(s["f1"].get<double>()) << ','
            << (loop["training_size"].is_null() ? std::string() : std::to_string(loop["training_size"].get<long>()))
            << '\n';
      };
      if (!test.contains("per_cluster")) continue;
      std::vector<std::pair<int, std::string>> ids;
      for (const auto& [key, s] : test["per_cluster"].items()) ids.emplace_back(std::stoi(key), key);
      std::sort(ids.begin(), ids.end());
      long total_n = 0;
      for (const auto& [id, key] : ids) {
        const json& s = test["per_cluster"][key];
        row(key, s, s["n_points"].get<long>());
        total_n += s["n_points"].get<long>();
      }
      row("total", test["total"], total_n);
    }
  }
}

std::vector<SummaryRow> summarize(const std::vector<json>& reports) {
  // (arm rank, loop, cluster order, arm, cluster) -> F1 per report
  std::map<std::tuple<int, int, int, std::string, std::string>, std::vector<double>> cells;
  for (const auto& r : reports) {
    check_report(r);
    int rank = 0;
    for (const std::string arm : {"cluster_specific", "random"}) {
      for (const auto& loop : r["arms"][arm]["loops"]) {
        const int k = loop["loop"].get<int>();
        const json& test = loop["test"];
        if (!test.contains("per_cluster")) continue;
        for (const auto& [key, s] : test["per_cluster"].items()) {
          cells[{rank, k, std::stoi(key), arm, key}].push_back(s["f1"].get<double>());
        }
        cells[{rank, k, std::numeric_limits<int>::max(), arm, "total"}].push_back(test["total"]["f1"].get<double>());
      }
      ++rank;
    }
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, values] : cells) {
    SummaryRow row;
    row.arm = std::get<3>(key);
    row.loop = std::get<1>(key);
    row.cluster = std::get<4>(key);
    row.n = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    row.mean_f1 = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean_f1) * (v - row.mean_f1);
      row.sd_f1 = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    out.push_back(std::move(row));
  }
  return out;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "arm,loop,cluster,n,mean_f1,sd_f1\n";
  for (const auto& r : rows) {
    out << r.arm << ',' << r.loop << ',' << r.cluster << ',' << r.n << ',' << format_double(r.mean_f1) << ','
        << format_double(r.sd_f1) << '\n';
  }
}

json application_json(const ApplicationReport& report) {
  json suggestions = json::array();
  for (const auto& s : report.suggestions) {
    json e{{"cell_id", s.cell_id}, {"patient_id", s.patient_id}, {"probability", s.probability}};
    e["cartridge_id"] = s.cartridge_id ? json(*s.cartridge_id) : json(nullptr);
    e["cartridge_xy"] = s.cartridge_xy ? json::array({s.cartridge_xy->first, s.cartridge_xy->second}) : json(nullptr);
    suggestions.push_back(std::move(e));
  }
  json patients = json::object();
  for (const auto& [pid, row] : report.per_patient) {
    json p{{"suggested", row.suggested}};
    p["confirmed"] = row.confirmed ? json(*row.confirmed) : json(nullptr);
    p["ppv"] = row.ppv ? json(*row.ppv) : json(nullptr);
    patients[pid] = std::move(p);
  }
  return json{{"format", "hilctc.application_report"},
              {"threshold", report.threshold},
              {"dedup_radius", report.dedup_radius},
              {"duplicates_removed", report.duplicates_removed},
              {"suggestions", suggestions},
              {"patients", patients}};
}

void write_application_csv(std::ostream& out, const ApplicationReport& report) {
  out << "patient_id,suggested,confirmed,ppv\n";
  for (const auto& [pid, row] : report.per_patient) {
    out << pid << ',' << row.suggested << ',' << (row.confirmed ? std::to_string(*row.confirmed) : std::string()) << ','
        << (row.ppv ? format_double(*row.ppv) : std::string()) << '\n';
  }
}

}  // namespace hilctc
