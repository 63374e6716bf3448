#include <doctest.h>

#include <cmath>
#include <set>
#include <thread>

#include "gridlens/analysis.h"
#include "gridlens/service.h"
#include "support.h"

// After Eigen: <resolv.h> (pulled in by httplib) defines a _res macro.
#include <httplib.h>

using namespace gridlens;
namespace fs = std::filesystem;

namespace {

const fs::path& fixture() {
  static const fs::path run = testing::make_fixture_run("service");
  return run;
}

const testing::SchemaValidator& schema() {
  static const testing::SchemaValidator v =
      testing::SchemaValidator::from_file(fs::path(GRIDLENS_SOURCE_DIR) / "docs" / "api.schema.json");
  return v;
}

ApiRequest get(const std::string& path, std::multimap<std::string, std::string> query = {}) {
  ApiRequest r;
  r.path = path;
  r.query = std::move(query);
  return r;
}

std::string header(const ApiResponse& r, const std::string& name) {
  for (const auto& [k, v] : r.headers) {
    if (k == name) return v;
  }
  return {};
}

nlohmann::json body_of(const ApiResponse& r) { return nlohmann::json::parse(r.body); }

void check_schema(const ApiResponse& r, const std::string& name) {
  INFO(name << ": " << r.body.substr(0, 300));
  const auto errors = schema().validate(body_of(r), name);
  for (const auto& e : errors) FAIL_CHECK(e);
  CHECK(errors.empty());
}

void check_error(const ApiResponse& r, int status, const std::string& code) {
  INFO(r.body);
  CHECK(r.status == status);
  check_schema(r, "error");
  CHECK(body_of(r).at("error").at("code") == code);
}

}  // namespace

TEST_CASE("every documented endpoint returns schema-valid JSON") {
  Service svc(fixture());
  const std::string run = svc.manifest().run_id;
  const std::string ep = "/api/runs/" + run + "/episodes/2";

  const std::vector<std::pair<std::string, ApiRequest>> cases = {
      {"runs", get("/api/runs")},
      {"run", get("/api/runs/" + run)},
      {"episodes", get("/api/runs/" + run + "/episodes")},
      {"episodes", get("/api/runs/" + run + "/episodes", {{"kind", "train"}, {"sort", "queue"}, {"order", "asc"}})},
      {"overview", get(ep + "/overview")},
      {"overview", get(ep + "/overview", {{"from", "400"}, {"to", "790"}})},
      {"states", get(ep + "/agents/B1/states")},
      {"series", get(ep + "/series")},
      {"series", get(ep + "/series", {{"agents", "A0,B0"}, {"metric", "critic_value"}})},
      {"series", get(ep + "/series", {{"metric", "queue"}})},
      {"influence", get(ep + "/influence", {{"step", "500"}})},
      {"explain", get(ep + "/explain", {{"agent", "A1"}, {"step", "0"}})},
      {"explain", get(ep + "/explain", {{"agent", "B0"}, {"step", "1590"}})},
      {"replay", get(ep + "/replay", {{"from", "100"}, {"to", "120"}})},
      {"snapshot_list", get("/api/snapshots")},
  };
  for (const auto& [name, req] : cases) {
    const ApiResponse r = svc.handle(req);
    INFO(req.path);
    REQUIRE(r.status == 200);
    CHECK(r.content_type == "application/json");
    CHECK(header(r, "Access-Control-Allow-Origin") == "*");
    check_schema(r, name);
  }
}

TEST_CASE("repeated reads are byte-identical") {
  Service a(fixture());
  Service b(fixture());
  const std::string run = a.manifest().run_id;
  const std::string ep = "/api/runs/" + run + "/episodes/1";
  const std::vector<ApiRequest> reqs = {
      get("/api/runs"),
      get("/api/runs/" + run),
      get("/api/runs/" + run + "/episodes", {{"kind", "all"}}),
      get(ep + "/overview", {{"from", "0"}, {"to", "300"}}),
      get(ep + "/agents/A0/states"),
      get(ep + "/series", {{"metric", "reward"}}),
      get(ep + "/influence", {{"step", "10"}}),
      get(ep + "/explain", {{"agent", "A0"}, {"step", "10"}}),
      get(ep + "/replay", {{"from", "0"}, {"to", "30"}}),
  };
  for (const auto& req : reqs) {
    INFO(req.path);
    const ApiResponse first = a.handle(req);
    REQUIRE(first.status == 200);
    CHECK(a.handle(req).body == first.body);
    CHECK(b.handle(req).body == first.body);
  }
  const ApiResponse r = a.handle(get(ep + "/overview"));
  CHECK(header(r, "Cache-Control") == "public, max-age=31536000, immutable");
}

TEST_CASE("episode table") {
  Service svc(fixture());
  const std::string base = "/api/runs/" + svc.manifest().run_id + "/episodes";
  const auto all = body_of(svc.handle(get(base)));
  REQUIRE(all.at("rows").size() == 3);
  CHECK(all.at("rows").at(2).at("kind") == "test");
  CHECK(body_of(svc.handle(get(base, {{"kind", "train"}}))).at("rows").size() == 2);
  CHECK(body_of(svc.handle(get(base, {{"kind", "test"}}))).at("rows").size() == 1);
  for (const auto& row : all.at("rows")) {
    for (const auto& [metric, v] : row.at("normalized").items()) {
      CHECK(v.get<double>() >= 0.0);
      CHECK(v.get<double>() <= 1.0);
    }
  }
  const auto sorted = body_of(svc.handle(get(base, {{"sort", "reward"}, {"order", "desc"}})));
  for (std::size_t i = 1; i < sorted.at("rows").size(); ++i) {
    CHECK(sorted["rows"][i - 1]["raw"]["reward"].get<double>() >= sorted["rows"][i]["raw"]["reward"].get<double>());
  }
  check_error(svc.handle(get(base, {{"kind", "bogus"}})), 400, "bad_request");
  check_error(svc.handle(get(base, {{"sort", "bogus"}})), 400, "bad_request");
}

TEST_CASE("view payloads agree with the stored episode") {
  Service svc(fixture());
  const RunStore store = RunStore::open(fixture());
  const EpisodeRecord rec = store.load_episode(2);
  const std::string ep = "/api/runs/" + svc.manifest().run_id + "/episodes/2";

  SUBCASE("overview selection and sectors") {
    const auto j = body_of(svc.handle(get(ep + "/overview", {{"from", "100"}, {"to", "100"}})));
    int selected = 0;
    for (const auto& p : j.at("projection").at("points")) selected += p.at("selected").get<bool>() ? 1 : 0;
    CHECK(selected == 1);
    CHECK(j.at("projection").at("points").size() == rec.decisions.size());
    const auto& s = j.at("overview").at("sectors").at(1);
    CHECK(s.at("N").get<double>() == doctest::Approx(rec.decisions[10].probabilities[1][0]));
    CHECK(s.at("W").get<double>() == doctest::Approx(rec.decisions[10].probabilities[1][1]));
  }

  SUBCASE("series lengths and phase bands") {
    const auto j = body_of(svc.handle(get(ep + "/series", {{"agents", "A1"}, {"metric", "reward"}})));
    REQUIRE(j.at("values").size() == 1);
    CHECK(j.at("steps").size() == 160);
    CHECK(j.at("values").at("A1").size() == 160);
    CHECK(j.at("values").at("A1").at(7).get<double>() == rec.decisions[7].rewards[1]);
    const auto& bands = j.at("phase_bands").at("A1");
    CHECK(bands.front().at("from") == 0);
    CHECK(bands.back().at("to") == 1600);
    for (std::size_t i = 1; i < bands.size(); ++i) CHECK(bands[i].at("from") == bands[i - 1].at("to"));
  }

  SUBCASE("influence weights follow the ranked bars") {
    const auto j = body_of(svc.handle(get(ep + "/influence", {{"step", "300"}, {"threshold", "0.05"}})));
    const auto& agents = j.at("matrix").at("agents");
    for (std::size_t b = 0; b < agents.size(); ++b) {
      const auto& bars = j.at("bars").at(agents[b].get<std::string>());
      double total = 0.0;
      for (const auto& bar : bars) total += std::abs(bar.at("value").get<double>());
      for (std::size_t i = 1; i < bars.size(); ++i) {
        CHECK(std::abs(bars[i - 1]["value"].get<double>()) >= std::abs(bars[i]["value"].get<double>()));
      }
      for (std::size_t a = 0; a < agents.size(); ++a) {
        int count = 0;
        for (const auto& bar : bars) {
          const double v = std::abs(bar.at("value").get<double>());
          if (bar.at("owner") == agents[a] && v > 0.0 && v >= 0.05 * total) ++count;
        }
        CHECK(j.at("matrix").at("weights").at(a).at(b).get<int>() == count);
      }
    }
  }

  SUBCASE("explain paths contain the instance") {
    for (const char* agent : {"A0", "A1", "B0", "B1"}) {
      const auto j = body_of(svc.handle(get(ep + "/explain", {{"agent", agent}, {"step", "420"}})));
      CHECK(j.at("decision") == 42);
      for (const char* model : {"critic", "actor"}) {
        const auto& m = j.at(model);
        const auto& instance = m.at("instance");
        for (const auto& jd : m.at("path").at("judgments")) {
          const double x = instance.at(jd.at("feature").get<std::size_t>()).get<double>();
          const auto& iv = jd.at("interval");
          CHECK(jd.at("instance_value").get<double>() == x);
          CHECK((iv.at("lo_closed").get<bool>() ? x >= iv.at("lo").get<double>() : x > iv.at("lo").get<double>()));
          CHECK((iv.at("hi_closed").get<bool>() ? x <= iv.at("hi").get<double>() : x < iv.at("hi").get<double>()));
        }
        const auto& at = m.at("attribution");
        double sum = at.at("baseline").get<double>();
        for (const auto& v : at.at("values")) sum += v.get<double>();
        CHECK(sum == doctest::Approx(at.at("output").get<double>()).epsilon(1e-4));
      }
      CHECK(j.at("actor").at("path").at("action_distribution").is_object());
      CHECK(j.at("critic").at("path").at("action_distribution").is_null());
    }
  }

  SUBCASE("replay slice bounds") {
    const auto j = body_of(svc.handle(get(ep + "/replay", {{"from", "50"}, {"to", "59"}})));
    REQUIRE(j.at("frames").size() == 10);
    CHECK(j.at("frames").front().at("step") == 50);
    CHECK(j.at("frames").back().at("step") == 59);
  }
}

TEST_CASE("malformed requests and unknown routes") {
  Service svc(fixture());
  const std::string run = "/api/runs/" + svc.manifest().run_id;
  const std::string ep = run + "/episodes/2";

  check_error(svc.handle(get(ep + "/explain", {{"agent", "A1"}, {"step", "101"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/explain", {{"agent", "A1"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/explain", {{"agent", "A1"}, {"step", "ten"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/explain", {{"agent", "Z9"}, {"step", "100"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/influence", {{"step", "105"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/influence", {{"step", "100"}, {"threshold", "2"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/overview", {{"from", "500"}, {"to", "100"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/series", {{"metric", "speed"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/series", {{"agents", "A0,Q1"}})), 400, "bad_request");
  check_error(svc.handle(get(ep + "/replay", {{"from", "-1"}})), 400, "bad_request");

  check_error(svc.handle(get("/api/nothing")), 404, "not_found");
  check_error(svc.handle(get("/elsewhere")), 404, "not_found");
  check_error(svc.handle(get("/api/runs/run-000000000000")), 404, "not_found");
  check_error(svc.handle(get(run + "/episodes/99/overview")), 404, "not_found");
  check_error(svc.handle(get(run + "/episodes/x/overview")), 404, "not_found");
  check_error(svc.handle(get(ep + "/agents/Z9/states")), 404, "not_found");
  check_error(svc.handle(get(ep + "/unknown")), 404, "not_found");
  check_error(svc.handle(get("/api/snapshots/snap-9999")), 404, "not_found");
  check_error(svc.handle(get("/api/snapshots/..%2Fmanifest")), 404, "not_found");

  ApiRequest post = get(run);
  post.method = "POST";
  check_error(svc.handle(post), 405, "method_not_allowed");

  ApiRequest options = get(ep + "/overview");
  options.method = "OPTIONS";
  const ApiResponse pre = svc.handle(options);
  CHECK(pre.status == 204);
  CHECK(header(pre, "Access-Control-Allow-Methods").find("POST") != std::string::npos);
}

TEST_CASE("episodes without analysis report 404") {
  const fs::path dir = fs::temp_directory_path() / "gridlens_unanalyzed";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::copy_file(fixture() / "manifest.json", dir / "manifest.json");
  fs::copy(fixture() / "episodes", dir / "episodes");
  Service svc(dir);
  const std::string ep = "/api/runs/" + svc.manifest().run_id + "/episodes/0";
  const ApiResponse r = svc.handle(get(ep + "/overview"));
  check_error(r, 404, "not_found");
  CHECK(body_of(r).at("error").at("message").get<std::string>().find("analyzed") != std::string::npos);
  check_error(svc.handle(get(ep + "/replay")), 404, "not_found");
  CHECK(svc.handle(get("/api/runs/" + svc.manifest().run_id + "/episodes")).status == 200);
  fs::remove_all(dir);
}

TEST_CASE("snapshots round-trip") {
  Service svc(fixture());
  const std::string run = svc.manifest().run_id;
  const auto explain =
      body_of(svc.handle(get("/api/runs/" + run + "/episodes/2/explain", {{"agent", "A1"}, {"step", "200"}})));

  ApiRequest post = get("/api/snapshots");
  post.method = "POST";
  post.body = nlohmann::json{{"label", "A1 at 200"}, {"payload", explain}}.dump();
  const ApiResponse created = svc.handle(post);
  REQUIRE(created.status == 201);
  check_schema(created, "snapshot");
  const auto doc = body_of(created);
  const std::string id = doc.at("id");
  CHECK(header(created, "Location") == "/api/snapshots/" + id);
  CHECK(doc.at("payload") == explain);
  CHECK(doc.at("run_id") == run);

  const ApiResponse fetched = svc.handle(get("/api/snapshots/" + id));
  REQUIRE(fetched.status == 200);
  CHECK(fetched.body == created.body);
  CHECK(svc.handle(get("/api/snapshots/" + id)).body == created.body);

  Service other(fixture());
  CHECK(other.handle(get("/api/snapshots/" + id)).body == created.body);

  const ApiResponse list = svc.handle(get("/api/snapshots"));
  check_schema(list, "snapshot_list");
  CHECK(header(list, "Cache-Control") == "no-store");
  bool listed = false;
  const auto listing = body_of(list);
  for (const auto& s : listing.at("snapshots")) {
    if (s.at("id") == id) {
      listed = true;
      CHECK(s.at("agent") == "A1");
      CHECK(s.at("step") == 200);
      CHECK(s.at("episode") == 2);
      CHECK(s.at("label") == "A1 at 200");
    }
  }
  CHECK(listed);

  post.body = "{not json";
  check_error(svc.handle(post), 400, "bad_request");
  post.body = R"({"label": "no payload"})";
  check_error(svc.handle(post), 400, "bad_request");
  post.body = R"({"payload": [1, 2]})";
  check_error(svc.handle(post), 400, "bad_request");
}

TEST_CASE("concurrent requests") {
  Service svc(fixture());
  const std::string ep = "/api/runs/" + svc.manifest().run_id + "/episodes/";
  const std::string expected = svc.handle(get(ep + "0/agents/A0/states")).body;

  std::vector<std::string> bodies(8);
  std::vector<std::string> ids(8);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      // Rotate across episodes so the caches evict and reload.
      for (int e = 0; e < 3; ++e) svc.handle(get(ep + std::to_string((t + e) % 3) + "/series"));
      bodies[t] = svc.handle(get(ep + "0/agents/A0/states")).body;
      ApiRequest post = get("/api/snapshots");
      post.method = "POST";
      post.body = nlohmann::json{{"payload", {{"thread", t}}}}.dump();
      ids[t] = body_of(svc.handle(post)).at("id");
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& b : bodies) CHECK(b == expected);
  CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 8);
}

TEST_CASE("real HTTP server") {
  Service svc(fixture());
  const int port = svc.bind_any("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server([&] { svc.run_bound(); });
  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(5);
  client.set_read_timeout(60);

  const std::string run = svc.manifest().run_id;
  const std::string path = "/api/runs/" + run + "/episodes/2/explain?agent=B1&step=800";
  auto res = client.Get(path);
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "application/json");
  CHECK(res->get_header_value("Cache-Control") == "public, max-age=31536000, immutable");
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  const std::string first = res->body;
  CHECK(schema().validate(nlohmann::json::parse(first), "explain").empty());
  auto again = client.Get(path);
  REQUIRE(again);
  CHECK(again->body == first);

  ApiRequest direct = get("/api/runs/" + run + "/episodes/2/explain", {{"agent", "B1"}, {"step", "800"}});
  CHECK(svc.handle(direct).body == first);

  auto missing = client.Get("/api/no/such/route");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(nlohmann::json::parse(missing->body).at("error").at("code") == "not_found");

  auto bad = client.Get("/api/runs/" + run + "/episodes/2/explain?agent=B1&step=801");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  auto posted = client.Post("/api/snapshots", R"({"payload": {"agent": "B1", "step": 800}, "label": "http"})",
                            "application/json");
  REQUIRE(posted);
  CHECK(posted->status == 201);
  const std::string id = nlohmann::json::parse(posted->body).at("id");
  auto fetched = client.Get("/api/snapshots/" + id);
  REQUIRE(fetched);
  CHECK(fetched->body == posted->body);

  svc.stop();
  server.join();
}
