#include "hilctc/service.hpp"

#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/experiment.hpp"
#include "hilctc/journal.hpp"
#include "hilctc/report.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen parameter names.
#include <httplib.h>

namespace hilctc {

using nlohmann::json;
namespace fs = std::filesystem;
using TimePoint = std::chrono::system_clock::time_point;

std::string format_timestamp(TimePoint t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms >= 0 ? ms / 1000 : (ms - 999) / 1000);
  const long frac = static_cast<long>(ms - static_cast<long long>(secs) * 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(frac));
  return buf;
}

namespace {

long long to_ms(TimePoint t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

std::string ms_timestamp(long long ms) { return format_timestamp(TimePoint(std::chrono::milliseconds(ms))); }

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotFound:
    case ErrorKind::UnknownId:
      return 404;
    case ErrorKind::Conflict:
    case ErrorKind::InvalidState:
      return 409;
    case ErrorKind::BudgetExpired:
      return 410;
    case ErrorKind::Io:
    case ErrorKind::JournalCorruption:
      return 500;
    default:
      return 400;
  }
}

struct Session {
  PendingStep step;
  long long opened_ms = 0;
  std::vector<LabelEvent> events;
  std::set<std::string> labeled;
  std::unordered_map<std::string, std::size_t> position;  // cell id -> index in step.candidates
};

struct Run {
  std::string id;
  ExperimentConfig config;  // as posted; echoed in the report
  std::uint64_t seed = 0;
  std::string status = "created";
  std::optional<std::string> error;
  std::string created_at;
  std::string updated_at;
  std::shared_ptr<const PipelineResult> prepared;
  std::optional<ProtocolRun> protocol;
  std::optional<Session> session;
  std::unordered_map<std::string, fs::path> images;
  mutable std::shared_mutex mutex;
};

json error_body(ErrorKind kind, const std::string& message) {
  return json{{"error", {{"kind", std::string(to_string(kind))}, {"message", message}}}};
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, std::string("request body is not valid JSON: ") + e.what());
  }
}

bool is_png(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char sig[8] = {};
  in.read(sig, 8);
  return in.gcount() == 8 && std::string_view(sig, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8);
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  std::unique_ptr<Journal> journal;
  std::map<std::string, std::shared_ptr<Run>> runs;
  mutable std::shared_mutex runs_mutex;
  httplib::Server server;
  std::thread thread;
  int port = -1;

  explicit Impl(ServiceConfig c) : config(std::move(c)) {
    if (!config.clock) config.clock = [] { return std::chrono::system_clock::now(); };
    if (!fs::is_directory(config.data_dir)) {
      fail(ErrorKind::Io, "data directory '" + config.data_dir.string() + "' does not exist");
    }
    fs::create_directories(config.data_dir / "runs");
    journal = std::make_unique<Journal>(config.data_dir / "journal.jsonl");
    replay();
    routes();
  }

  long long now_ms() const { return to_ms(config.clock()); }

  // -------------------------------------------------------------------------
  // Transitions. Each is journaled before it is applied; replay applies the
  // same records in order and lands in the same state.

  std::shared_ptr<Run> find(const std::string& id) const {
    std::shared_lock lock(runs_mutex);
    const auto it = runs.find(id);
    if (it == runs.end()) fail(ErrorKind::NotFound, "no run '" + id + "'");
    return it->second;
  }

  static void mark_failed(Run& run, const std::exception& e) {
    run.status = "failed";
    run.error = e.what();
    run.session.reset();
  }

  void snapshot(const Run& run) const {
    if (!run.protocol) return;
    const fs::path dir = config.data_dir / "runs" / run.id;
    fs::create_directories(dir);
    write_file_atomic(dir / "report.json", render_report(run.protocol->report(), run.config));
  }

  void apply_create(Run& run, const json& body, const std::string& at) {
    run.created_at = at;
    run.updated_at = at;
    try {
      run.config = parse_experiment_config(body);
      run.seed = *run.config.seed;
      ExperimentConfig resolved = run.config;
      fs::path manifest_dir = config.data_dir;
      if (resolved.manifest) {
        fs::path m(*resolved.manifest);
        if (m.is_relative()) m = config.data_dir / m;
        resolved.manifest = m.string();
        manifest_dir = m.parent_path();
      }
      run.prepared = std::make_shared<PipelineResult>(prepare_experiment(resolved, run.seed));
      run.protocol.emplace(start_protocol(resolved, *run.prepared, run.seed));
      const fs::path base = config.image_root.value_or(manifest_dir);
      auto index = [&](const std::vector<CellRecord>& records) {
        for (const auto& r : records) {
          if (!r.image_ref) continue;
          fs::path p(*r.image_ref);
          run.images.emplace(r.cell_id, p.is_relative() ? base / p : p);
        }
      };
      index(run.prepared->records);
      index(run.prepared->holdout);
    } catch (const std::exception& e) {
      mark_failed(run, e);
    }
  }

  void apply_advance(Run& run, const std::string& at, long long at_ms) {
    run.updated_at = at;
    try {
      if (run.config.kind != "realworld") {
        run.status = "running";
        run.protocol->advance();
      } else if (!run.session) {
        Session s;
        s.step = run.protocol->review_step();
        s.opened_ms = at_ms;
        for (std::size_t i = 0; i < s.step.candidates.size(); ++i) {
          s.position.emplace(run.prepared->data->ids[s.step.candidates[i]], i);
        }
        run.session = std::move(s);
        run.status = "awaiting_labels";
        snapshot(run);
        return;
      } else {
        run.status = "running";
        const auto data = run.prepared->data;
        ScriptedOracle truth([data](const std::string& id) { return data->truth[data->row_of(id)]; }, 0);
        run.protocol->commit_review(run.session->step, run.session->events, truth);
        run.session.reset();
      }
      run.status = run.protocol->finished() ? "finished" : "running";
      snapshot(run);
    } catch (const std::exception& e) {
      mark_failed(run, e);
    }
  }

  static void apply_label(Run& run, const LabelEvent& event, const std::string& at) {
    run.updated_at = at;
    run.session->events.push_back(event);
    run.session->labeled.insert(event.cell_id);
  }

  void replay() {
    for (const auto& rec : journal->records()) {
      const std::string type = rec.at("type").get<std::string>();
      const std::string id = rec.at("run_id").get<std::string>();
      const std::string at = rec.at("at").get<std::string>();
      auto corrupt = [&](const std::string& why) {
        fail(ErrorKind::JournalCorruption,
             "journal record seq " + std::to_string(rec.at("seq").get<std::uint64_t>()) + ": " + why);
      };
      if (type == "create") {
        if (runs.contains(id)) corrupt("duplicate run id '" + id + "'");
        auto run = std::make_shared<Run>();
        run->id = id;
        apply_create(*run, rec.at("config"), at);
        runs.emplace(id, run);
        continue;
      }
      const auto it = runs.find(id);
      if (it == runs.end()) corrupt("unknown run id '" + id + "'");
      Run& run = *it->second;
      if (type == "advance") {
        apply_advance(run, at, rec.at("at_ms").get<long long>());
      } else if (type == "label") {
        if (!run.session) corrupt("label outside a labeling session");
        apply_label(run, rec.at("event").get<LabelEvent>(), at);
      } else {
        corrupt("unknown record type '" + type + "'");
      }
    }
    for (const auto& [id, run] : runs) snapshot(*run);
  }

  // -------------------------------------------------------------------------
  // Views

  json summary(const Run& run) const {
    json j{{"run_id", run.id},
           {"kind", run.config.kind},
           {"status", run.status},
           {"seed", run.seed},
           {"created_at", run.created_at},
           {"updated_at", run.updated_at}};
    j["error"] = run.error ? json(*run.error) : json(nullptr);
    j["loop"] = run.protocol ? json(run.protocol->loop_index()) : json(nullptr);
    j["loops"] = run.config.hil.loops;
    const auto focus = run.protocol ? run.protocol->focus_cluster() : std::nullopt;
    j["focus_cluster"] = focus ? json(*focus) : json(nullptr);
    if (run.session) {
      j["session"] = {{"opened_at", ms_timestamp(run.session->opened_ms)},
                      {"remaining_budget_ms", remaining_ms(run)},
                      {"labeled", run.session->events.size()},
                      {"candidates", run.session->step.candidates.size()}};
    } else {
      j["session"] = nullptr;
    }
    return j;
  }

  long remaining_ms(const Run& run) const {
    if (!run.session) return 0;
    const long long left = run.config.hil.label_budget_ms - (now_ms() - run.session->opened_ms);
    return static_cast<long>(std::max<long long>(0, left));
  }

  bool image_available(const Run& run, const std::string& cell_id) const {
    const auto it = run.images.find(cell_id);
    return it != run.images.end() && fs::is_regular_file(it->second);
  }

  json queue(const Run& run) const {
    json items = json::array();
    if (run.session) {
      const auto& step = run.session->step;
      const auto& data = *run.prepared->data;
      const std::string presented = ms_timestamp(run.session->opened_ms);
      for (std::size_t i = 0; i < step.candidates.size(); ++i) {
        const std::size_t r = step.candidates[i];
        if (run.session->labeled.contains(data.ids[r])) continue;
        items.push_back({{"cell_id", data.ids[r]},
                         {"probability", step.probabilities[i]},
                         {"cluster_id", data.cluster[r]},
                         {"image_available", image_available(run, data.ids[r])},
                         {"presented_at", presented}});
      }
    }
    json j{{"run_id", run.id},
           {"status", run.status},
           {"session_open", run.session.has_value()},
           {"budget_ms", run.config.hil.label_budget_ms},
           {"remaining_budget_ms", remaining_ms(run)},
           {"items", items}};
    j["loop"] = run.session ? json(run.session->step.loop_index) : json(nullptr);
    return j;
  }

  json latent(const Run& run) const {
    if (!run.protocol) fail(ErrorKind::InvalidState, "run '" + run.id + "' has no model");
    const auto& data = *run.prepared->data;
    const auto& arm = run.protocol->cluster_arm();
    const Eigen::VectorXd proba = predict_proba(*arm.model, data.features);
    std::unordered_map<std::size_t, Label> known;
    for (std::size_t k = 0; k < arm.training_pool.size(); ++k) known.emplace(arm.training_pool[k], arm.training_labels[k]);
    const auto& coords = run.prepared->projection.coords;
    json points = json::array();
    for (std::size_t r = 0; r < data.size(); ++r) {
      const auto idx = static_cast<Eigen::Index>(r);
      json p{{"cell_id", data.ids[r]},
             {"x", coords(idx, 0)},
             {"y", coords(idx, 1)},
             {"cluster", data.cluster[r]},
             {"role", std::string(to_string(data.role[r]))},
             {"probability", proba(idx)},
             {"prediction", std::string(to_string(proba(idx) >= run.config.hil.threshold ? Label::Ctc : Label::NonCtc))}};
      std::optional<Label> truth;
      if (const auto it = known.find(r); it != known.end()) truth = it->second;
      else if (data.role[r] != Role::TrainUnlabeled) truth = data.truth[r];
      p["truth"] = truth ? json(std::string(to_string(*truth))) : json(nullptr);
      points.push_back(std::move(p));
    }
    return json{{"run_id", run.id}, {"loop", arm.loop_index}, {"points", points}};
  }

  // -------------------------------------------------------------------------
  // Mutating handlers

  json create(const json& body) {
    if (!body.is_object()) fail(ErrorKind::InvalidSpec, "/: run config must be an object");
    const ExperimentConfig parsed = parse_experiment_config(body);
    if (!parsed.seed) fail(ErrorKind::InvalidSpec, "/seed: required");
    if (parsed.kind == "scenario2" && !parsed.main_cluster) fail(ErrorKind::InvalidSpec, "/main_cluster: required");

    auto run = std::make_shared<Run>();
    std::unique_lock run_lock(run->mutex);
    const long long at_ms = now_ms();
    {
      std::unique_lock lock(runs_mutex);
      char buf[32];
      std::snprintf(buf, sizeof buf, "run-%04zu", runs.size() + 1);
      run->id = buf;
      journal->append({{"type", "create"}, {"run_id", run->id}, {"at", ms_timestamp(at_ms)}, {"config", body}});
      runs.emplace(run->id, run);
    }
    apply_create(*run, body, ms_timestamp(at_ms));
    snapshot(*run);
    return summary(*run);
  }

  json advance(const std::string& id) {
    auto run = find(id);
    std::unique_lock lock(run->mutex);
    if (run->status == "failed") fail(ErrorKind::InvalidState, "run '" + id + "' has failed: " + *run->error);
    if (run->protocol->finished()) fail(ErrorKind::InvalidState, "run '" + id + "' is finished");
    const long long at_ms = now_ms();
    journal->append({{"type", "advance"}, {"run_id", id}, {"at", ms_timestamp(at_ms)}, {"at_ms", at_ms}});
    apply_advance(*run, ms_timestamp(at_ms), at_ms);
    return summary(*run);
  }

  json label(const std::string& id, const json& body) {
    if (!body.is_object()) fail(ErrorKind::InvalidSpec, "/: label body must be an object");
    for (const auto& [key, value] : body.items()) {
      if (key != "cell_id" && key != "label") fail(ErrorKind::InvalidSpec, "/" + key + ": unknown field");
    }
    if (!body.contains("cell_id") || !body["cell_id"].is_string()) fail(ErrorKind::InvalidSpec, "/cell_id: required string");
    if (!body.contains("label") || !body["label"].is_string()) fail(ErrorKind::InvalidSpec, "/label: required string");
    const std::string cell = body["cell_id"].get<std::string>();
    Label value;
    try {
      value = parse_label(body["label"].get<std::string>());
    } catch (const Error&) {
      fail(ErrorKind::InvalidSpec, "/label: must be CTC or NON_CTC");
    }

    auto run = find(id);
    std::unique_lock lock(run->mutex);
    if (!run->session) fail(ErrorKind::InvalidState, "run '" + id + "' has no open labeling session");
    Session& s = *run->session;
    if (!s.position.contains(cell)) fail(ErrorKind::NotFound, "cell '" + cell + "' is not in the current queue");
    if (s.labeled.contains(cell)) fail(ErrorKind::Conflict, "cell '" + cell + "' is already labeled");
    const long long at_ms = now_ms();
    const long long elapsed = at_ms - s.opened_ms;
    if (elapsed > run->config.hil.label_budget_ms) {
      fail(ErrorKind::BudgetExpired, "labeling budget of " + std::to_string(run->config.hil.label_budget_ms) +
                                         " ms expired " + std::to_string(elapsed - run->config.hil.label_budget_ms) +
                                         " ms ago");
    }
    LabelEvent event{cell, value, LabelSource::Human, s.step.loop_index, ms_timestamp(at_ms), static_cast<long>(elapsed)};
    journal->append({{"type", "label"}, {"run_id", id}, {"at", ms_timestamp(at_ms)}, {"event", event}});
    apply_label(*run, event, ms_timestamp(at_ms));
    return json{{"accepted", event}, {"remaining_budget_ms", remaining_ms(*run)}};
  }

  // -------------------------------------------------------------------------
  // HTTP wiring

  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      reply(res, status_for(e.kind()), error_body(e.kind(), e.what()));
    } catch (const json::exception& e) {
      reply(res, 400, error_body(ErrorKind::Parse, e.what()));
    } catch (const std::exception& e) {
      reply(res, 500, error_body(ErrorKind::Io, e.what()));
    }
  }

  template <typename F>
  auto read_run(const std::string& id, F&& f) const {
    auto run = find(id);
    std::shared_lock lock(run->mutex);
    return f(*run);
  }

  void routes() {
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (!config.token || req.get_header_value("X-Hilctc-Token") == *config.token) {
        return httplib::Server::HandlerResponse::Unhandled;
      }
      reply(res, 401, error_body(ErrorKind::InvalidSpec, "missing or wrong X-Hilctc-Token header"));
      return httplib::Server::HandlerResponse::Handled;
    });

    server.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 201, create(parse_body(req))); });
    });
    server.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        std::vector<std::shared_ptr<Run>> all;
        {
          std::shared_lock lock(runs_mutex);
          for (const auto& [id, run] : runs) all.push_back(run);
        }
        json list = json::array();
        for (const auto& run : all) {
          std::shared_lock lock(run->mutex);
          list.push_back(summary(*run));
        }
        reply(res, 200, json{{"runs", list}});
      });
    });
    server.Get(R"(/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, read_run(req.matches[1], [&](const Run& r) { return summary(r); })); });
    });
    server.Post(R"(/runs/([^/]+)/advance)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, advance(req.matches[1])); });
    });
    server.Get(R"(/runs/([^/]+)/queue)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, read_run(req.matches[1], [&](const Run& r) { return queue(r); })); });
    });
    server.Post(R"(/runs/([^/]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 201, label(req.matches[1], parse_body(req))); });
    });
    server.Get(R"(/runs/([^/]+)/latent)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, read_run(req.matches[1], [&](const Run& r) { return latent(r); })); });
    });
    server.Get(R"(/runs/([^/]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string text = read_run(req.matches[1], [&](const Run& r) {
          if (!r.protocol) fail(ErrorKind::InvalidState, "run '" + r.id + "' failed before its first loop: " + *r.error);
          return render_report(r.protocol->report(), r.config);
        });
        res.status = 200;
        res.set_content(text, "application/json");
      });
    });
    server.Get(R"(/cells/([^/]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string cell = req.matches[1];
        std::vector<std::shared_ptr<Run>> all;
        {
          std::shared_lock lock(runs_mutex);
          for (const auto& [id, run] : runs) all.push_back(run);
        }
        for (const auto& run : all) {
          std::shared_lock lock(run->mutex);
          const auto it = run->images.find(cell);
          if (it == run->images.end() || !fs::is_regular_file(it->second) || !is_png(it->second)) continue;
          std::ifstream in(it->second, std::ios::binary);
          std::ostringstream bytes;
          bytes << in.rdbuf();
          res.status = 200;
          res.set_content(bytes.str(), "image/png");
          return;
        }
        fail(ErrorKind::NotFound, "no PNG image for cell '" + cell + "'");
      });
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) reply(res, res.status, error_body(ErrorKind::NotFound, "no such endpoint"));
    });
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::bind() {
  if (impl_->port >= 0) return impl_->port;
  const auto& c = impl_->config;
  if (c.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(c.host);
  } else if (impl_->server.bind_to_port(c.host, c.port)) {
    impl_->port = c.port;
  }
  if (impl_->port < 0) {
    fail(ErrorKind::Io, "cannot listen on " + c.host + ":" + std::to_string(c.port) + " (port in use?)");
  }
  return impl_->port;
}

void Service::listen() {
  bind();
  impl_->server.listen_after_bind();
}

int Service::start() {
  const int port = bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::size_t Service::run_count() const {
  std::shared_lock lock(impl_->runs_mutex);
  return impl_->runs.size();
}

}  // namespace hilctc
