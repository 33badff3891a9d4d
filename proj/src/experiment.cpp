#include "hilctc/experiment.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/random.hpp"
#include "hilctc/report.hpp"

namespace hilctc {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const std::string& msg) {
  fail(ErrorKind::InvalidSpec, (path.empty() ? std::string("/") : path) + ": " + msg);
}

// Strict object reader: every key must be consumed, types are checked.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad(path_, "must be an object");
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) bad(at(key), "must be a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, long& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) bad(at(key), "must be an integer");
      out = v->get<long>();
    }
  }
  void get(const std::string& key, int& out) {
    long tmp = out;
    get(key, tmp);
    out = static_cast<int>(tmp);
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      // Parsed text yields unsigned values; JSON built in code may carry signed ones.
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
        bad(at(key), "must be a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) bad(at(key), "must be a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) bad(at(key), "must be a string");
      out = v->get<std::string>();
    }
  }
  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    if (find(key)) {
      T tmp{};
      get(key, tmp);
      out = tmp;
    }
  }
  // A number or an array of numbers.
  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_number()) {
        out = {v->get<double>()};
        return;
      }
      if (!v->is_array()) bad(at(key), "must be a number or an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) bad(at(key) + "/" + std::to_string(i), "must be a number");
        out.push_back((*v)[i].get<double>());
      }
    }
  }

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key) && key != "$schema") bad(at(key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& path, const char* msg) {
  if (!ok) bad(path, msg);
}

SvmConfig parse_svm(const json& j, const std::string& path) {
  SvmConfig c;
  Fields f(j, path);
  f.get("C", c.C);
  if (const json* g = f.find("gamma")) {
    if (g->is_string()) {
      check(g->get<std::string>() == "scale", f.at("gamma"), "must be \"scale\" or a positive number");
      c.gamma.reset();
    } else {
      check(g->is_number() && g->get<double>() > 0.0, f.at("gamma"), "must be \"scale\" or a positive number");
      c.gamma = g->get<double>();
    }
  }
  std::string weight = c.class_weight == ClassWeight::Balanced ? "balanced" : "none";
  f.get("class_weight", weight);
  check(weight == "balanced" || weight == "none", f.at("class_weight"), "must be \"balanced\" or \"none\"");
  c.class_weight = weight == "balanced" ? ClassWeight::Balanced : ClassWeight::None;
  f.get("break_ties", c.break_ties);
  f.get("tolerance", c.tolerance);
  f.get("max_passes", c.max_passes);
  f.get("calibration_folds", c.calibration_folds);
  f.get("cache_mb", c.cache_mb);
  f.done();
  check(c.C > 0.0, f.at("C"), "must be positive");
  check(c.tolerance > 0.0, f.at("tolerance"), "must be positive");
  check(c.calibration_folds >= 2, f.at("calibration_folds"), "must be at least 2");
  check(c.max_passes > 0, f.at("max_passes"), "must be positive");
  return c;
}

HilConfig parse_hil(const json& j, const std::string& path) {
  HilConfig c;
  Fields f(j, path);
  if (const json* s = f.find("svm")) c.svm = parse_svm(*s, f.at("svm"));
  f.get("threshold", c.threshold);
  f.get("loops", c.loops);
  f.get("budget", c.budget);
  f.get("initial_pool", c.initial_pool);
  std::string steering(to_string(c.steering));
  f.get("steering", steering);
  check(steering == "mccv_training_pool" || steering == "test_set", f.at("steering"),
        "must be \"mccv_training_pool\" or \"test_set\"");
  c.steering = steering == "test_set" ? Steering::TestSet : Steering::McCvTrainingPool;
  f.get("mc_folds", c.mc_folds);
  f.get("mc_train_fraction", c.mc_train_fraction);
  f.get("include_background", c.include_background);
  f.get("scenario2_initial_fraction", c.scenario2_initial_fraction);
  f.get("scenario2_other_fraction", c.scenario2_other_fraction);
  f.get("scenario2_random_pool_fraction", c.scenario2_random_pool_fraction);
  f.get("relabel_pool_size", c.relabel_pool_size);
  f.get("label_budget_ms", c.label_budget_ms);
  std::string order = c.review_most_likely_first ? "most_likely_first" : "least_likely_first";
  f.get("review_order", order);
  check(order == "most_likely_first" || order == "least_likely_first", f.at("review_order"),
        "must be \"most_likely_first\" or \"least_likely_first\"");
  c.review_most_likely_first = order == "most_likely_first";
  f.done();
  check(c.threshold > 0.0 && c.threshold < 1.0, f.at("threshold"), "must lie in (0, 1)");
  check(c.loops >= 0, f.at("loops"), "must be non-negative");
  check(c.budget >= 0, f.at("budget"), "must be non-negative");
  check(c.initial_pool >= 2, f.at("initial_pool"), "must be at least 2");
  check(c.mc_folds >= 1, f.at("mc_folds"), "must be at least 1");
  check(c.mc_train_fraction > 0.0 && c.mc_train_fraction < 1.0, f.at("mc_train_fraction"), "must lie in (0, 1)");
  for (const auto& [key, v] : {std::pair{"scenario2_initial_fraction", c.scenario2_initial_fraction},
                                std::pair{"scenario2_other_fraction", c.scenario2_other_fraction},
                                std::pair{"scenario2_random_pool_fraction", c.scenario2_random_pool_fraction}}) {
    check(v > 0.0 && v <= 1.0, f.at(key), "must lie in (0, 1]");
  }
  check(c.relabel_pool_size >= 0, f.at("relabel_pool_size"), "must be non-negative");
  check(c.label_budget_ms > 0, f.at("label_budget_ms"), "must be positive");
  return c;
}

PipelineConfig parse_pipeline(const json& j, const std::string& path) {
  PipelineConfig c;
  Fields f(j, path);
  f.get("pca_components", c.pca_components);
  std::string scope = c.pca_scope == PcaScope::TrainingPool ? "training_pool" : "labeled_training";
  f.get("pca_scope", scope);
  check(scope == "training_pool" || scope == "labeled_training", f.at("pca_scope"),
        "must be \"training_pool\" or \"labeled_training\"");
  c.pca_scope = scope == "training_pool" ? PcaScope::TrainingPool : PcaScope::LabeledTraining;
  if (const json* p = f.find("projection")) {
    Fields g(*p, f.at("projection"));
    g.get("n_neighbors", c.projection.n_neighbors);
    g.get("min_dist", c.projection.min_dist);
    g.get("spread", c.projection.spread);
    g.get("n_epochs", c.projection.n_epochs);
    g.get("negative_sample_rate", c.projection.negative_sample_rate);
    g.get("learning_rate", c.projection.learning_rate);
    g.done();
    check(c.projection.n_neighbors >= 2, g.at("n_neighbors"), "must be at least 2");
    check(c.projection.min_dist >= 0.0, g.at("min_dist"), "must be non-negative");
    check(c.projection.spread > 0.0, g.at("spread"), "must be positive");
    check(c.projection.n_epochs >= 1, g.at("n_epochs"), "must be at least 1");
    check(c.projection.negative_sample_rate >= 0, g.at("negative_sample_rate"), "must be non-negative");
    check(c.projection.learning_rate > 0.0, g.at("learning_rate"), "must be positive");
  }
  f.get("min_cluster_size", c.min_cluster_size);
  f.get("min_samples", c.min_samples);
  f.get("hidden_label_fraction", c.hidden_label_fraction);
  f.get("noise_filter", c.noise_filter);
  f.get("seed", c.seed);
  f.done();
  check(c.pca_components >= 1, f.at("pca_components"), "must be at least 1");
  check(c.min_cluster_size >= 2, f.at("min_cluster_size"), "must be at least 2");
  check(!c.min_samples || *c.min_samples >= 1, f.at("min_samples"), "must be at least 1");
  check(c.hidden_label_fraction >= 0.0 && c.hidden_label_fraction < 1.0, f.at("hidden_label_fraction"),
        "must lie in [0, 1)");
  return c;
}

SyntheticSpec parse_synthetic(const json& j, const std::string& path) {
  SyntheticSpec s;
  Fields f(j, path);
  f.get("n_clusters", s.n_clusters);
  f.get("points_per_cluster", s.points_per_cluster);
  f.get("dim", s.dim);
  if (const json* c = f.find("centers")) {
    try {
      s.centers = c->get<std::vector<std::vector<double>>>();
    } catch (const json::exception&) {
      bad(f.at("centers"), "must be an array of coordinate arrays");
    }
  }
  f.get("spread", s.spread);
  f.get("class_overlap", s.class_overlap);
  f.get("positive_shift", s.positive_shift);
  f.get("center_distance", s.center_distance);
  f.get("n_patients", s.n_patients);
  f.get("seed", s.seed);
  f.done();
  check(s.n_clusters >= 1, f.at("n_clusters"), "must be at least 1");
  check(s.points_per_cluster >= 1, f.at("points_per_cluster"), "must be at least 1");
  check(s.dim >= 1, f.at("dim"), "must be at least 1");
  check(s.n_patients >= 1, f.at("n_patients"), "must be at least 1");
  return s;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig c;
  Fields f(j, "");
  f.get("kind", c.kind);
  check(c.kind == "scenario1" || c.kind == "scenario2" || c.kind == "realworld", "/kind",
        "must be scenario1, scenario2 or realworld");
  f.get("seed", c.seed);
  f.get("manifest", c.manifest);
  if (const json* s = f.find("synthetic")) c.synthetic = parse_synthetic(*s, "/synthetic");
  if (const json* s = f.find("split")) {
    Fields g(*s, "/split");
    g.get("train_patients", c.split.train_patients);
    g.get("test_patients", c.split.test_patients);
    g.get("holdout_patients", c.split.holdout_patients);
    g.done();
  }
  if (const json* p = f.find("pipeline")) c.pipeline = parse_pipeline(*p, "/pipeline");
  if (const json* h = f.find("hil")) c.hil = parse_hil(*h, "/hil");
  f.get("main_cluster", c.main_cluster);
  f.get("target_cluster", c.target_cluster);
  f.get("scripted_ms_per_label", c.scripted_ms_per_label);
  f.done();
  check(c.split.train_patients >= 1, "/split/train_patients", "must be at least 1");
  check(c.split.test_patients >= 1, "/split/test_patients", "must be at least 1");
  check(c.split.holdout_patients >= 0, "/split/holdout_patients", "must be non-negative");
  check(!(c.manifest && c.synthetic), "/manifest", "manifest and synthetic are mutually exclusive");
  check(c.scripted_ms_per_label > 0, "/scripted_ms_per_label", "must be positive");
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, "config '" + path.string() + "': " + e.what());
  }
  return parse_experiment_config(j);
}

json config_json(const SvmConfig& c) {
  json j{{"C", c.C},
         {"class_weight", c.class_weight == ClassWeight::Balanced ? "balanced" : "none"},
         {"break_ties", c.break_ties},
         {"tolerance", c.tolerance},
         {"max_passes", c.max_passes},
         {"calibration_folds", c.calibration_folds},
         {"cache_mb", c.cache_mb}};
  j["gamma"] = c.gamma ? json(*c.gamma) : json("scale");
  return j;
}

json config_json(const HilConfig& c) {
  return json{{"svm", config_json(c.svm)},
              {"threshold", c.threshold},
              {"loops", c.loops},
              {"budget", c.budget},
              {"initial_pool", c.initial_pool},
              {"steering", to_string(c.steering)},
              {"mc_folds", c.mc_folds},
              {"mc_train_fraction", c.mc_train_fraction},
              {"include_background", c.include_background},
              {"scenario2_initial_fraction", c.scenario2_initial_fraction},
              {"scenario2_other_fraction", c.scenario2_other_fraction},
              {"scenario2_random_pool_fraction", c.scenario2_random_pool_fraction},
              {"relabel_pool_size", c.relabel_pool_size},
              {"label_budget_ms", c.label_budget_ms},
              {"review_order", c.review_most_likely_first ? "most_likely_first" : "least_likely_first"}};
}

json config_json(const PipelineConfig& c) {
  json j{{"pca_components", c.pca_components},
         {"pca_scope", c.pca_scope == PcaScope::TrainingPool ? "training_pool" : "labeled_training"},
         {"projection",
          {{"n_neighbors", c.projection.n_neighbors},
           {"min_dist", c.projection.min_dist},
           {"spread", c.projection.spread},
           {"n_epochs", c.projection.n_epochs},
           {"negative_sample_rate", c.projection.negative_sample_rate},
           {"learning_rate", c.projection.learning_rate}}},
         {"min_cluster_size", c.min_cluster_size},
         {"min_samples", c.min_samples.value_or(c.min_cluster_size)},
         {"hidden_label_fraction", c.hidden_label_fraction},
         {"noise_filter", c.noise_filter}};
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  return j;
}

json config_json(const SyntheticSpec& s) {
  json j{{"n_clusters", s.n_clusters},   {"points_per_cluster", s.points_per_cluster},
         {"dim", s.dim},                 {"spread", s.spread},
         {"class_overlap", s.class_overlap}, {"positive_shift", s.positive_shift},
         {"center_distance", s.center_distance}, {"n_patients", s.n_patients},
         {"seed", s.seed}};
  if (s.centers) j["centers"] = *s.centers;
  return j;
}

json config_json(const ExperimentConfig& c) {
  json j{{"kind", c.kind},
         {"split",
          {{"train_patients", c.split.train_patients},
           {"test_patients", c.split.test_patients},
           {"holdout_patients", c.split.holdout_patients}}},
         {"pipeline", config_json(c.pipeline)},
         {"hil", config_json(c.hil)},
         {"scripted_ms_per_label", c.scripted_ms_per_label}};
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["manifest"] = c.manifest ? json(*c.manifest) : json(nullptr);
  j["synthetic"] = c.synthetic ? config_json(*c.synthetic) : json(nullptr);
  j["main_cluster"] = c.main_cluster ? json(*c.main_cluster) : json(nullptr);
  j["target_cluster"] = c.target_cluster ? json(*c.target_cluster) : json(nullptr);
  return j;
}

PipelineResult run_pipeline(const std::vector<CellRecord>& records, const DatasetSplit& split,
                            const PipelineConfig& config, std::uint64_t seed) {
  validate_records(records);
  std::vector<CellRecord> train, test, holdout;
  for (const auto& r : records) {
    if (split.train_patients.contains(r.patient_id)) train.push_back(r);
    else if (split.test_patients.contains(r.patient_id)) test.push_back(r);
    else if (split.holdout_patients.contains(r.patient_id)) holdout.push_back(r);
  }
  if (train.empty() || test.empty()) fail(ErrorKind::InsufficientData, "training and test partitions must be non-empty");

  PipelineResult out;
  out.split = split;
  std::vector<CellRecord> fit_rows;
  for (const auto& r : train) {
    if (config.pca_scope == PcaScope::TrainingPool || r.label) fit_rows.push_back(r);
  }
  out.pca = pca_fit(embedding_matrix(fit_rows), config.pca_components);

  if (config.noise_filter) {
    std::vector<CellRecord> noisy, clean;
    for (const auto& r : train) {
      if (r.noisy) (*r.noisy ? noisy : clean).push_back(r);
    }
    if (noisy.empty() || clean.empty()) {
      fail(ErrorKind::InsufficientData, "noise filter needs training cells flagged both noisy and clean");
    }
    SvmConfig cfg;
    cfg.seed = mix_seed(seed, 23);
    out.noise_filter = noise_filter_fit(pca_transform(out.pca, embedding_matrix(noisy)),
                                        pca_transform(out.pca, embedding_matrix(clean)), cfg);
    for (auto* part : {&train, &test, &holdout}) {
      auto filtered = noise_filter_apply(*out.noise_filter, *part, &out.pca);
      out.noise_dropped += filtered.dropped;
      *part = std::move(filtered.kept);
    }
    if (train.empty() || test.empty()) fail(ErrorKind::InsufficientData, "noise filter removed a whole partition");
  }

  out.records = train;
  out.records.insert(out.records.end(), test.begin(), test.end());
  out.holdout = std::move(holdout);

  auto data = std::make_shared<HilData>();
  const std::size_t n = out.records.size();
  data->features = pca_transform(out.pca, embedding_matrix(out.records));
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = out.records[i];
    data->ids.push_back(r.cell_id);
    data->patient.push_back(r.patient_id);
    data->truth.push_back(r.label);
    const bool is_train = i < train.size();
    data->role.push_back(!is_train ? Role::Test : r.label ? Role::TrainLabeled : Role::TrainUnlabeled);
    if (is_train && r.label) labeled.push_back(i);
  }
  if (config.hidden_label_fraction > 0.0) {
    Rng rng(mix_seed(seed, 21));
    const auto k = static_cast<std::size_t>(std::floor(config.hidden_label_fraction * static_cast<double>(labeled.size())));
    for (std::size_t i : rng.sample_indices(labeled.size(), k)) data->role[labeled[i]] = Role::TrainUnlabeled;
  }

  out.projection = project_2d(data->features, config.projection, mix_seed(seed, 22), data->ids);
  out.clusters = hdbscan_fit(out.projection.coords, config.min_cluster_size,
                             config.min_samples.value_or(config.min_cluster_size), data->ids);
  data->cluster = out.clusters.labels;
  data->build_index();
  out.data = std::move(data);
  return out;
}

PipelineResult prepare_experiment(const ExperimentConfig& config, std::uint64_t run_seed) {
  const std::uint64_t seed = config.pipeline.seed.value_or(run_seed);
  std::vector<CellRecord> records;
  if (config.manifest) {
    records = load_manifest(*config.manifest);
  } else if (config.synthetic) {
    records = generate_synthetic(*config.synthetic);
  } else {
    fail(ErrorKind::InvalidSpec, "/manifest: a manifest or a synthetic spec is required");
  }
  if (records.empty()) fail(ErrorKind::InsufficientData, "dataset is empty");
  const DatasetSplit split = split_by_patient(records, config.split.train_patients, config.split.test_patients,
                                              config.split.holdout_patients, mix_seed(seed, 20));
  return run_pipeline(records, split, config.pipeline, seed);
}

ProtocolRun start_protocol(const ExperimentConfig& config, const PipelineResult& prepared, std::uint64_t seed) {
  if (config.kind == "scenario1") return ProtocolRun::scenario1(prepared.data, config.hil, seed);
  if (config.kind == "scenario2") {
    if (!config.main_cluster) fail(ErrorKind::InvalidSpec, "/main_cluster: required for scenario2");
    return ProtocolRun::scenario2(prepared.data, *config.main_cluster, config.hil, seed);
  }
  return ProtocolRun::realworld(prepared.data, config.target_cluster, config.hil, seed);
}

std::string render_report(const RunReport& report, ExperimentConfig config) {
  config.seed = report.seed;
  return dump_report(report_json(report, config_json(config)));
}

RunReport run_experiment(const ExperimentConfig& config, const PipelineResult& prepared, std::uint64_t seed) {
  if (config.kind == "scenario1") return run_scenario1(prepared.data, config.hil, seed);
  if (config.kind == "scenario2") {
    if (!config.main_cluster) fail(ErrorKind::InvalidSpec, "/main_cluster: required for scenario2");
    return run_scenario2(prepared.data, *config.main_cluster, config.hil, seed);
  }
  std::shared_ptr<const HilData> data = prepared.data;
  ScriptedOracle oracle(
      [data](const std::string& id) -> std::optional<Label> { return data->truth[data->row_of(id)]; },
      config.scripted_ms_per_label);
  return run_realworld(data, config.target_cluster, oracle, config.hil, seed);
}

}  // namespace hilctc
