#include <doctest.h>

#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "hilctc/experiment.hpp"
#include "hilctc/report.hpp"
#include "hilctc/service.hpp"
#include "support.hpp"

// httplib after the Eigen-based headers: it defines macros that clash with Eigen internals.
#include <httplib.h>

using namespace hilctc;
using nlohmann::json;

namespace {

// Manually advanced clock shared by the service under test.
struct FakeClock {
  std::shared_ptr<std::atomic<long long>> ms = std::make_shared<std::atomic<long long>>(1'800'000'000'000LL);
  Clock clock() const {
    auto p = ms;
    return [p] { return std::chrono::system_clock::time_point(std::chrono::milliseconds(p->load())); };
  }
  void advance(long long d) const { *ms += d; }
};

struct Harness {
  std::filesystem::path dir;
  FakeClock time;
  std::unique_ptr<Service> service;
  std::unique_ptr<httplib::Client> client;
  std::optional<std::string> token;

  explicit Harness(const std::string& name, std::optional<std::string> tok = std::nullopt, bool fresh = true)
      : dir(fresh ? testing::scratch_dir(name) : std::filesystem::temp_directory_path() / ("hilctc-test-" + name)),
        token(std::move(tok)) {
    start();
  }

  void start() {
    ServiceConfig cfg;
    cfg.data_dir = dir;
    cfg.port = 0;
    cfg.token = token;
    cfg.clock = time.clock();
    service = std::make_unique<Service>(cfg);
    const int port = service->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(120, 0);
    if (token) client->set_default_headers({{"X-Hilctc-Token", *token}});
  }

  void restart() {
    client.reset();
    service.reset();
    start();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client->Post(path, body.dump(), "application/json");
  }
  httplib::Result get(const std::string& path) { return client->Get(path); }
};

json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return json::parse(r->body);
}

std::string error_kind(const httplib::Result& r) { return body_of(r)["error"]["kind"].get<std::string>(); }

std::string create(Harness& h, const json& config) {
  const auto r = h.post("/runs", config);
  REQUIRE(r);
  REQUIRE(r->status == 201);
  return body_of(r)["run_id"].get<std::string>();
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("unknown routes and runs give JSON errors") {
  Harness h("svc-errors");
  auto r = h.get("/runs/run-9999");
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(error_kind(r) == "not_found");
  r = h.get("/nowhere");
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(body_of(r).contains("error"));

  r = h.client->Post("/runs", "{oops", "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  auto cfg = testing::small_experiment();
  cfg["hil"]["loops"] = -1;
  r = h.post("/runs", cfg);
  CHECK(r->status == 400);
  CHECK(body_of(r)["error"]["message"].get<std::string>().rfind("/hil/loops", 0) == 0);
  cfg = testing::small_experiment();
  cfg.erase("seed");
  CHECK(h.post("/runs", cfg)->status == 400);
  CHECK(body_of(h.get("/runs"))["runs"].empty());
}

TEST_CASE("simulated run lifecycle") {
  Harness h("svc-sim");
  const auto id = create(h, testing::small_experiment());
  auto s = body_of(h.get("/runs/" + id));
  CHECK(s["loop"] == 0);
  CHECK(s["status"] == "created");
  CHECK(h.post("/runs/" + id + "/advance", json::object())->status == 200);
  s = body_of(h.post("/runs/" + id + "/advance", json::object()));
  CHECK(s["status"] == "finished");
  const auto r = h.post("/runs/" + id + "/advance", json::object());
  CHECK(r->status == 409);

  // identical to the library run with the same config and seed
  const auto config = parse_experiment_config(testing::small_experiment());
  const auto expected = render_report(run_experiment(config, prepare_experiment(config, 1), 1), config);
  CHECK(h.get("/runs/" + id + "/report")->body == expected);
  std::ifstream snap(h.dir / "runs" / id / "report.json");
  std::string text((std::istreambuf_iterator<char>(snap)), std::istreambuf_iterator<char>());
  CHECK(text == expected);

  const auto latent = body_of(h.get("/runs/" + id + "/latent"));
  CHECK(latent["points"].size() == prepare_experiment(config, 1).data->size());
  for (const auto& p : latent["points"]) {
    CHECK(p["probability"].get<double>() >= 0.0);
    CHECK(p["probability"].get<double>() <= 1.0);
  }
}

TEST_CASE("expert labeling session") {
  Harness h("svc-rw");
  const json cfg = testing::small_experiment("realworld");
  const auto id = create(h, cfg);

  // labels before a session is open
  CHECK(h.post("/runs/" + id + "/labels", {{"cell_id", "b0-00000"}, {"label", "CTC"}})->status == 409);

  auto s = body_of(h.post("/runs/" + id + "/advance", json::object()));
  CHECK(s["status"] == "awaiting_labels");
  auto q = body_of(h.get("/runs/" + id + "/queue"));
  REQUIRE(q["items"].size() >= 3);
  CHECK(q["remaining_budget_ms"] == 300000);
  const auto first = q["items"][0]["cell_id"].get<std::string>();
  const auto second = q["items"][1]["cell_id"].get<std::string>();

  // bad bodies
  CHECK(h.post("/runs/" + id + "/labels", {{"cell_id", first}})->status == 400);
  CHECK(h.post("/runs/" + id + "/labels", {{"cell_id", first}, {"label", "MAYBE"}})->status == 400);
  CHECK(h.post("/runs/" + id + "/labels", {{"cell_id", first}, {"label", "CTC"}, {"x", 1}})->status == 400);
  CHECK(h.post("/runs/" + id + "/labels", {{"cell_id", "not-a-cell"}, {"label", "CTC"}})->status == 404);

  // the same cell labeled twice at once: exactly one wins
  std::atomic<int> created{0}, conflict{0};
  auto attempt = [&] {
    httplib::Client c("127.0.0.1", h.client->port());
    const auto r = c.Post("/runs/" + id + "/labels", json{{"cell_id", first}, {"label", "CTC"}}.dump(), "application/json");
    if (r && r->status == 201) ++created;
    if (r && r->status == 409) ++conflict;
  };
  std::thread t1(attempt), t2(attempt);
  t1.join();
  t2.join();
  CHECK(created == 1);
  CHECK(conflict == 1);

  h.time.advance(2000);
  auto r = h.post("/runs/" + id + "/labels", {{"cell_id", second}, {"label", "NON_CTC"}});
  REQUIRE(r->status == 201);
  CHECK(body_of(r)["remaining_budget_ms"] == 298000);
  CHECK(body_of(h.get("/runs/" + id + "/queue"))["items"].size() == q["items"].size() - 2);

  // past the five-minute budget
  h.time.advance(300'000);
  const auto third = q["items"][2]["cell_id"].get<std::string>();
  r = h.post("/runs/" + id + "/labels", {{"cell_id", third}, {"label", "CTC"}});
  CHECK(r->status == 410);
  CHECK(error_kind(r) == "budget_expired");

  s = body_of(h.post("/runs/" + id + "/advance", json::object()));
  CHECK(s["loop"] == 1);
  CHECK(s["status"] == "running");
  const std::string served = h.get("/runs/" + id + "/report")->body;

  // the library, fed the same accepted events, writes the same report
  const auto config = parse_experiment_config(cfg);
  const auto prepared = prepare_experiment(config, 1);
  auto run = start_protocol(config, prepared, 1);
  const auto step = run.review_step();
  const auto events = json::parse(served)["arms"]["cluster_specific"]["events"].get<std::vector<LabelEvent>>();
  CHECK(events.size() == 2);
  const auto data = prepared.data;
  ScriptedOracle truth([data](const std::string& c) { return data->truth[data->row_of(c)]; }, 0);
  run.commit_review(step, events, truth);
  CHECK(render_report(run.report(), config) == served);

  // restart: the journal rebuilds the same state
  h.restart();
  CHECK(h.service->run_count() == 1);
  CHECK(h.get("/runs/" + id + "/report")->body == served);
  CHECK(body_of(h.get("/runs/" + id))["loop"] == 1);
}

TEST_CASE("restart in the middle of a session keeps accepted labels") {
  Harness h("svc-mid");
  const auto id = create(h, testing::small_experiment("realworld"));
  h.post("/runs/" + id + "/advance", json::object());
  const auto q = body_of(h.get("/runs/" + id + "/queue"));
  const auto cell = q["items"][0]["cell_id"].get<std::string>();
  REQUIRE(h.post("/runs/" + id + "/labels", {{"cell_id", cell}, {"label", "CTC"}})->status == 201);
  h.restart();
  const auto again = body_of(h.get("/runs/" + id + "/queue"));
  CHECK(again["session_open"] == true);
  CHECK(again["items"].size() == q["items"].size() - 1);
  CHECK(h.post("/runs/" + id + "/labels", {{"cell_id", cell}, {"label", "CTC"}})->status == 409);
}

TEST_CASE("token and images") {
  const auto dir = testing::scratch_dir("svc-img");
  auto records = generate_synthetic(testing::small_spec());
  records[0].image_ref = "img/a.png";
  records[1].image_ref = "img/b.png";
  std::filesystem::create_directories(dir / "img");
  std::ofstream(dir / "img" / "a.png", std::ios::binary) << std::string("\x89PNG\r\n\x1a\n", 8) << "pixels";
  std::ofstream(dir / "img" / "b.png", std::ios::binary) << "not an image";
  write_manifest(dir / "cells.jsonl", records);

  Harness h("svc-img", std::string("s3cret"), false);
  auto cfg = testing::small_experiment();
  cfg.erase("synthetic");
  cfg["manifest"] = "cells.jsonl";
  create(h, cfg);
  auto r = h.get("/cells/" + records[0].cell_id + "/image");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->get_header_value("Content-Type") == "image/png");
  CHECK(r->body.substr(1, 3) == "PNG");
  CHECK(h.get("/cells/" + records[1].cell_id + "/image")->status == 404);
  CHECK(h.get("/cells/" + records[2].cell_id + "/image")->status == 404);

  httplib::Client anon("127.0.0.1", h.client->port());
  CHECK(anon.Get("/runs")->status == 401);
}

}  // TEST_SUITE
