// hilctc command-line entry points.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/experiment.hpp"
#include "hilctc/random.hpp"
#include "hilctc/report.hpp"
#include "hilctc/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hilctc;

namespace {

bool g_json_logs = false;

void log_info(const std::string& message, json fields = json::object()) {
  if (g_json_logs) {
    fields["level"] = "info";
    fields["msg"] = message;
    std::cerr << fields.dump() << '\n';
  } else {
    std::cerr << message << '\n';
  }
}

void log_error(const std::string& kind, const std::string& message) {
  if (g_json_logs) {
    std::cerr << json{{"level", "error"}, {"kind", kind}, {"msg", message}}.dump() << '\n';
  } else {
    std::cerr << "error: " << message << '\n';
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, "'" + path.string() + "': " + e.what());
  }
}

// Flags shared by run-producing subcommands. Precedence: flag > config file > default.
struct RunFlags {
  std::string config;
  std::string manifest;
  std::optional<std::uint64_t> seed;
  std::optional<int> main_cluster;
  std::optional<double> threshold;
  std::string out;
};

void add_run_flags(CLI::App* app, RunFlags& f, bool seed_flag = true) {
  app->add_option("--config", f.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--manifest", f.manifest, "manifest (JSON lines); overrides the config")->check(CLI::ExistingFile);
  if (seed_flag) app->add_option("--seed", f.seed, "run seed; overrides the config");
  app->add_option("--threshold", f.threshold, "classification threshold; overrides the config");
  app->add_option("--out", f.out, "output directory")->required();
}

ExperimentConfig resolve_config(const RunFlags& f) {
  ExperimentConfig c;
  if (!f.config.empty()) c = parse_experiment_config(read_json(f.config));
  if (!f.manifest.empty()) {
    c.manifest = f.manifest;
    c.synthetic.reset();
  }
  if (f.seed) c.seed = *f.seed;
  if (f.main_cluster) c.main_cluster = *f.main_cluster;
  if (f.threshold) {
    if (!(*f.threshold > 0.0 && *f.threshold < 1.0)) fail(ErrorKind::InvalidSpec, "--threshold must be in (0, 1)");
    c.hil.threshold = *f.threshold;
  }
  return c;
}

std::uint64_t require_seed(const ExperimentConfig& c) {
  if (!c.seed) fail(ErrorKind::InvalidSpec, "a seed is required (--seed or \"seed\" in the config)");
  return *c.seed;
}

void write_model(const fs::path& path, const PcaModel& pca, const SvmModel& svm) {
  json j = FinalModel{pca, svm};
  write_text(path, j.dump(2) + "\n");
}

std::string seed_name(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

void write_run_outputs(const fs::path& dir, const ExperimentConfig& config, const PipelineResult& prepared,
                       const RunReport& report) {
  const std::string text = render_report(report, config);
  write_text(dir / "report.json", text);
  std::ostringstream csv;
  write_report_csv(csv, json::parse(text));
  write_text(dir / "report.csv", csv.str());
  write_model(dir / "model.json", prepared.pca, *report.final_model);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto dash = item.find('-');
    try {
      if (dash != std::string::npos && dash > 0) {
        const auto lo = std::stoull(item.substr(0, dash));
        const auto hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) fail(ErrorKind::InvalidSpec, "--seeds: empty range '" + item + "'");
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      } else {
        seeds.push_back(std::stoull(item));
      }
    } catch (const std::logic_error&) {
      fail(ErrorKind::InvalidSpec, "--seeds: cannot parse '" + item + "'");
    }
  }
  if (seeds.empty()) fail(ErrorKind::InvalidSpec, "--seeds: no seeds given");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster-guided human-in-the-loop refinement of a CTC classifier"};
  app.require_subcommand(1);
  app.add_flag("--json", g_json_logs, "machine-readable JSON log lines on stderr");

  // ingest
  std::string ingest_in, ingest_out;
  auto* ingest = app.add_subcommand("ingest", "validate and normalise a manifest");
  ingest->add_option("--manifest", ingest_in, "input manifest")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "normalised manifest");

  // synth
  std::string synth_config, synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "generate a synthetic manifest");
  synth->add_option("--config", synth_config, "experiment config with a \"synthetic\" section")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_seed, "generator seed; overrides the config");
  synth->add_option("--out", synth_out, "manifest to write")->required();

  // pipeline
  RunFlags pipe_flags;
  auto* pipeline = app.add_subcommand("pipeline", "PCA, 2-D projection and clustering");
  add_run_flags(pipeline, pipe_flags);

  // simulate
  RunFlags sim_flags;
  std::string sim_seeds, sim_kind;
  auto* simulate = app.add_subcommand("simulate", "simulated HiL scenarios, both arms per seed");
  add_run_flags(simulate, sim_flags);
  simulate->add_option("--seeds", sim_seeds, "comma-separated seeds or ranges, e.g. 1-5");
  simulate->add_option("--kind", sim_kind, "scenario1 or scenario2; overrides the config")
      ->check(CLI::IsMember({"scenario1", "scenario2"}));
  simulate->add_option("--main-cluster", sim_flags.main_cluster, "scenario 2 main cluster");

  // realworld
  RunFlags rw_flags;
  std::optional<int> rw_target;
  auto* realworld = app.add_subcommand("realworld", "real-world protocol with a scripted ground-truth expert");
  add_run_flags(realworld, rw_flags);
  realworld->add_option("--target-cluster", rw_target, "cluster to relabel; default: lowest initial F1");

  // train
  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "fit PCA and classifier on all labeled training cells");
  add_run_flags(train, train_flags);

  // apply
  std::string apply_model, apply_manifest, apply_confirm, apply_out;
  double apply_threshold = 0.5, apply_radius = 5.0;
  auto* apply = app.add_subcommand("apply", "final-model application to hold-out patients");
  apply->add_option("--model", apply_model, "model.json from simulate, realworld or train")
      ->required()
      ->check(CLI::ExistingFile);
  apply->add_option("--manifest", apply_manifest, "hold-out manifest")->required()->check(CLI::ExistingFile);
  apply->add_option("--threshold", apply_threshold, "CTC probability threshold")->check(CLI::Range(0.0, 1.0));
  apply->add_option("--dedup-radius", apply_radius, "duplicate radius in cartridge pixels")->check(CLI::NonNegativeNumber);
  apply->add_option("--confirmations", apply_confirm, "file with one confirmed cell id per line")
      ->check(CLI::ExistingFile);
  apply->add_option("--out", apply_out, "output directory")->required();

  // serve
  std::string serve_dir, serve_addr = "127.0.0.1:8080", serve_token, serve_images;
  auto* serve = app.add_subcommand("serve", "HTTP service for runs and labeling sessions");
  serve->add_option("--data-dir", serve_dir, "journal and snapshot directory")->required()->check(CLI::ExistingDirectory);
  serve->add_option("--serve-addr", serve_addr, "host:port (port 0 picks a free one)");
  serve->add_option("--token", serve_token, "require this value in the X-Hilctc-Token header");
  serve->add_option("--image-root", serve_images, "base directory for relative image paths");

  // report
  std::vector<std::string> report_in;
  std::string report_out;
  auto* report = app.add_subcommand("report", "CSV export of run reports; several reports add a summary");
  report->add_option("reports", report_in, "report.json files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "CSV to write (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      const auto records = load_manifest(ingest_in);
      validate_records(records);
      if (!ingest_out.empty()) write_manifest(fs::path(ingest_out), records);
      const auto patients = distinct_patients(records).size();
      std::cout << records.size() << " records, " << patients << " patients\n";
    } else if (*synth) {
      const json raw = read_json(synth_config);
      const ExperimentConfig c = parse_experiment_config(raw);
      if (!c.synthetic) fail(ErrorKind::InvalidSpec, "/synthetic: required for synth");
      SyntheticSpec spec = *c.synthetic;
      if (synth_seed) spec.seed = *synth_seed;
      else if (!raw["synthetic"].contains("seed")) fail(ErrorKind::InvalidSpec, "a seed is required (--seed or /synthetic/seed)");
      const auto records = generate_synthetic(spec);
      write_manifest(fs::path(synth_out), records);
      std::cout << records.size() << " records, " << distinct_patients(records).size() << " patients\n";
    } else if (*pipeline) {
      const ExperimentConfig c = resolve_config(pipe_flags);
      const auto seed = require_seed(c);
      const PipelineResult p = prepare_experiment(c, seed);
      const fs::path out(pipe_flags.out);
      fs::create_directories(out);
      write_projection_csv(out / "projection.csv", p.projection, p.clusters.labels);
      write_text(out / "clusters.json", condensed_tree_json(p.clusters).dump(2) + "\n");
      write_text(out / "pca.json", json(p.pca).dump(2) + "\n");
      json split{{"seed", p.split.seed},
                 {"train_patients", p.split.train_patients},
                 {"test_patients", p.split.test_patients},
                 {"holdout_patients", p.split.holdout_patients}};
      write_text(out / "split.json", split.dump(2) + "\n");
      std::cout << p.data->size() << " points, " << p.clusters.cluster_count() << " clusters\n";
    } else if (*simulate) {
      ExperimentConfig c = resolve_config(sim_flags);
      if (!sim_kind.empty()) c.kind = sim_kind;
      if (c.kind == "realworld") fail(ErrorKind::InvalidSpec, "simulate runs scenario1 or scenario2; use realworld");
      std::vector<std::uint64_t> seeds;
      if (!sim_seeds.empty()) seeds = parse_seeds(sim_seeds);
      else seeds.push_back(require_seed(c));
      const fs::path out(sim_flags.out);
      std::vector<json> reports;
      for (const auto seed : seeds) {
        ExperimentConfig run_config = c;
        run_config.seed = seed;
        const PipelineResult p = prepare_experiment(run_config, seed);
        const RunReport r = run_experiment(run_config, p, seed);
        write_run_outputs(out / seed_name(seed), run_config, p, r);
        reports.push_back(json::parse(render_report(r, run_config)));
        log_info("finished " + c.kind + " seed " + std::to_string(seed), {{"seed", seed}});
      }
      std::ostringstream summary;
      write_summary_csv(summary, summarize(reports));
      write_text(out / "summary.csv", summary.str());
      std::cout << seeds.size() << " runs written to " << out.string() << '\n';
    } else if (*realworld) {
      ExperimentConfig c = resolve_config(rw_flags);
      c.kind = "realworld";
      if (rw_target) c.target_cluster = *rw_target;
      const auto seed = require_seed(c);
      const PipelineResult p = prepare_experiment(c, seed);
      const RunReport r = run_experiment(c, p, seed);
      write_run_outputs(rw_flags.out, c, p, r);
      std::cout << "target cluster " << *r.focus_cluster << ", report written to " << rw_flags.out << '\n';
    } else if (*train) {
      const ExperimentConfig c = resolve_config(train_flags);
      const auto seed = require_seed(c);
      const PipelineResult p = prepare_experiment(c, seed);
      std::vector<std::size_t> rows = p.data->rows_with(Role::TrainLabeled);
      Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), p.data->features.cols());
      std::vector<Label> y;
      for (std::size_t k = 0; k < rows.size(); ++k) {
        X.row(static_cast<Eigen::Index>(k)) = p.data->features.row(static_cast<Eigen::Index>(rows[k]));
        y.push_back(*p.data->truth[rows[k]]);
      }
      SvmConfig svm = c.hil.svm;
      svm.seed = mix_seed(seed, 0x5f);
      write_model(fs::path(train_flags.out) / "model.json", p.pca, svm_fit(X, y, svm));
      std::cout << "model fitted on " << rows.size() << " labeled cells\n";
    } else if (*apply) {
      const FinalModel model = read_json(apply_model).get<FinalModel>();
      const auto holdout = load_manifest(apply_manifest);
      ApplicationReport result = apply_final_model(model, holdout, apply_threshold, apply_radius);
      if (!apply_confirm.empty()) {
        std::set<std::string> confirmed;
        std::istringstream lines(read_text(apply_confirm));
        for (std::string line; std::getline(lines, line);) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (!line.empty()) confirmed.insert(line);
        }
        attach_confirmations(result, confirmed);
      }
      const fs::path out(apply_out);
      write_text(out / "suggestions.json", application_json(result).dump(2) + "\n");
      std::ostringstream csv;
      write_application_csv(csv, result);
      write_text(out / "patients.csv", csv.str());
      std::cout << result.suggestions.size() << " suggestions, " << result.duplicates_removed
                << " duplicates removed\n";
    } else if (*serve) {
      ServiceConfig sc;
      sc.data_dir = serve_dir;
      const auto colon = serve_addr.rfind(':');
      if (colon == std::string::npos) fail(ErrorKind::InvalidSpec, "--serve-addr must be host:port");
      sc.host = serve_addr.substr(0, colon);
      try {
        sc.port = std::stoi(serve_addr.substr(colon + 1));
      } catch (const std::logic_error&) {
        fail(ErrorKind::InvalidSpec, "--serve-addr: bad port");
      }
      if (!serve_token.empty()) sc.token = serve_token;
      if (!serve_images.empty()) sc.image_root = serve_images;
      Service service(sc);
      const int port = service.bind();
      std::cout << "listening on " << sc.host << ':' << port << " (" << service.run_count() << " runs recovered)"
                << std::endl;
      log_info("serving", {{"host", sc.host}, {"port", port}});
      service.listen();
    } else if (*report) {
      std::vector<json> docs;
      for (const auto& path : report_in) docs.push_back(read_json(path));
      std::ostringstream csv;
      if (docs.size() == 1) write_report_csv(csv, docs[0]);
      else write_summary_csv(csv, summarize(docs));
      if (report_out.empty()) std::cout << csv.str();
      else write_text(report_out, csv.str());
    }
  } catch (const Error& e) {
    log_error(std::string(to_string(e.kind())), e.what());
    return 1;
  } catch (const std::exception& e) {
    log_error("internal", e.what());
    return 1;
  }
  return 0;
}
