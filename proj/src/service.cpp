#include "gridlens/service.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <regex>
#include <sstream>
#include <stdexcept>

#include <httplib.h>

#include "gridlens/analysis.h"
#include "gridlens/explain/influence.h"
#include "gridlens/explain/tree.h"

namespace gridlens {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCacheSize = 6;

struct ApiError : std::runtime_error {
  ApiError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

ApiError bad_request(const std::string& message) { return {400, "bad_request", message}; }
ApiError not_found(const std::string& message) { return {404, "not_found", message}; }

ApiResponse json_response(const nlohmann::json& body, int status = 200) {
  ApiResponse r;
  r.status = status;
  r.body = body.dump();
  return r;
}

ApiResponse immutable(ApiResponse r) {
  r.headers.emplace_back("Cache-Control", "public, max-age=31536000, immutable");
  return r;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

int int_param(const ApiRequest& req, const std::string& key, std::optional<int> fallback) {
  const auto raw = req.param(key);
  if (!raw) {
    if (fallback) return *fallback;
    throw bad_request("missing query parameter '" + key + "'");
  }
  const auto v = parse_int(*raw);
  if (!v) throw bad_request("query parameter '" + key + "' must be an integer");
  return *v;
}

double double_param(const ApiRequest& req, const std::string& key, double fallback) {
  const auto raw = req.param(key);
  if (!raw) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(*raw, &used);
    if (used != raw->size() || !std::isfinite(v)) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw bad_request("query parameter '" + key + "' must be a number");
  }
}

std::string now_utc() {
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count();
  return iso8601_utc(secs);
}

const char* phase_name(int action) { return action == 0 ? "NS_GREEN" : "WE_GREEN"; }

template <typename T>
std::shared_ptr<const T> cache_get(std::list<std::pair<int, std::shared_ptr<const T>>>& cache, int key) {
  for (auto it = cache.begin(); it != cache.end(); ++it) {
    if (it->first == key) {
      cache.splice(cache.begin(), cache, it);
      return cache.front().second;
    }
  }
  return nullptr;
}

template <typename T>
void cache_put(std::list<std::pair<int, std::shared_ptr<const T>>>& cache, int key, std::shared_ptr<const T> value) {
  cache.emplace_front(key, std::move(value));
  if (cache.size() > kCacheSize) cache.pop_back();
}

nlohmann::json attribution_json(const nlohmann::json& cached, const nlohmann::json& names, const std::string& target,
                                bool exact) {
  return {{"target", target},
          {"feature_names", names},
          {"values", cached.at("values")},
          {"baseline", cached.at("baseline")},
          {"output", cached.at("output")},
          {"exact", exact}};
}

}  // namespace

std::optional<std::string> ApiRequest::param(const std::string& key) const {
  const auto it = query.find(key);
  if (it == query.end()) return std::nullopt;
  return it->second;
}

nlohmann::json explain_payload(const nlohmann::json& analysis, const EpisodeRecord& record, const std::string& agent,
                               int step) {
  const int i = decision_index(analysis, step);
  if (i < 0) throw std::out_of_range("step " + std::to_string(step) + " is not a decision boundary");
  const auto a_it = std::find(record.agents.begin(), record.agents.end(), agent);
  if (a_it == record.agents.end()) throw std::invalid_argument("unknown agent: " + agent);
  const auto a = static_cast<std::size_t>(a_it - record.agents.begin());
  const ObservationRecord& dec = record.decisions.at(static_cast<std::size_t>(i));

  const std::vector<double> critic_x = critic_input(dec.observations, dec.probabilities);
  const auto local = dec.observations[a].features();
  const std::vector<double> actor_x(local.begin(), local.end());

  const auto& trees = analysis.at("trees").at(agent);
  const auto critic_tree = trees.at("critic").get<explain::RegressionTree>();
  const auto actor_tree = trees.at("actor").get<explain::RegressionTree>();
  const auto& cached = analysis.at("decisions").at(static_cast<std::size_t>(i)).at("agents").at(agent);
  const auto& q = dec.observations[a].queues;

  return {{"episode", record.index},
          {"agent", agent},
          {"step", step},
          {"decision", i},
          {"observation",
           {{"queues", {{"N", q[0]}, {"S", q[1]}, {"W", q[2]}, {"E", q[3]}}},
            {"phase", phase_name(dec.observations[a].phase)},
            {"last_action", dec.observations[a].last_action == 0 ? "N-S" : "W-E"}}},
          {"action", dec.actions[a] == 0 ? "N-S" : "W-E"},
          {"probabilities", {{"N-S", dec.probabilities[a][0]}, {"W-E", dec.probabilities[a][1]}}},
          {"critic",
           {{"tree", trees.at("critic")},
            {"r2", trees.at("critic_r2")},
            {"instance", critic_x},
            {"path", explain::extract_decision_path(critic_tree, critic_x)},
            {"attribution",
             attribution_json(cached.at("critic"), analysis.at("features").at("critic"), "critic " + agent, false)}}},
          {"actor",
           {{"tree", trees.at("actor")},
            {"r2", trees.at("actor_r2")},
            {"instance", actor_x},
            {"path", explain::extract_decision_path(actor_tree, actor_x)},
            {"attribution", attribution_json(cached.at("actor"), analysis.at("features").at("actor").at(agent),
                                             "actor " + agent, true)}}}};
}

Service::Service(const fs::path& run_dir) : store_(RunStore::open(run_dir)) {
  config_ = store_.manifest().config.get<RunConfig>();
  net_ = config_.build_network();
}

Service::~Service() = default;

std::shared_ptr<const nlohmann::json> Service::analysis(int episode) {
  {
    std::lock_guard lock(cache_mutex_);
    if (auto hit = cache_get(analysis_cache_, episode)) return hit;
  }
  const fs::path path = store_.analysis_path(episode);
  if (!fs::exists(path)) {
    throw not_found("episode " + std::to_string(episode) + " has not been analyzed; run `gridlens analyze`");
  }
  auto value = std::make_shared<const nlohmann::json>(nlohmann::json::parse(read_file(path)));
  std::lock_guard lock(cache_mutex_);
  cache_put(analysis_cache_, episode, value);
  return value;
}

std::shared_ptr<const EpisodeRecord> Service::record(int episode) {
  if (!store_.has_episode(episode)) throw not_found("episode " + std::to_string(episode) + " not in run");
  {
    std::lock_guard lock(cache_mutex_);
    if (auto hit = cache_get(record_cache_, episode)) return hit;
  }
  auto value = std::make_shared<const EpisodeRecord>(store_.load_episode(episode));
  std::lock_guard lock(cache_mutex_);
  cache_put(record_cache_, episode, value);
  return value;
}

ApiResponse Service::handle(const ApiRequest& req) {
  ApiResponse r;
  try {
    r = route(req);
  } catch (const ApiError& e) {
    r = json_response({{"error", {{"code", e.code}, {"message", e.what()}}}}, e.status);
  } catch (const std::exception& e) {
    r = json_response({{"error", {{"code", "internal"}, {"message", e.what()}}}}, 500);
  }
  r.headers.emplace_back("Access-Control-Allow-Origin", "*");
  r.headers.emplace_back("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  r.headers.emplace_back("Access-Control-Allow-Headers", "Content-Type");
  return r;
}

ApiResponse Service::route(const ApiRequest& req) {
  const auto parts = split_path(req.path);
  if (req.method == "OPTIONS") {
    ApiResponse r;
    r.status = 204;
    r.content_type.clear();
    return r;
  }
  if (parts.size() < 2 || parts[0] != "api") throw not_found("no route for " + req.path);

  auto require = [&](const char* method) {
    if (req.method != method) throw ApiError(405, "method_not_allowed", req.method + " not allowed on " + req.path);
  };

  if (parts[1] == "snapshots") {
    if (parts.size() == 2) {
      if (req.method == "POST") return create_snapshot(req);
      require("GET");
      return list_snapshots();
    }
    if (parts.size() == 3) {
      require("GET");
      return get_snapshot(parts[2]);
    }
    throw not_found("no route for " + req.path);
  }
  if (parts[1] != "runs") throw not_found("no route for " + req.path);
  if (parts.size() == 2) {
    require("GET");
    return runs();
  }
  if (parts[2] != store_.manifest().run_id) throw not_found("unknown run: " + parts[2]);
  if (parts.size() == 3) {
    require("GET");
    return run();
  }
  if (parts[3] != "episodes") throw not_found("no route for " + req.path);
  if (parts.size() == 4) {
    require("GET");
    return episodes(req);
  }
  const auto episode = parse_int(parts[4]);
  if (!episode || !store_.has_episode(*episode)) throw not_found("unknown episode: " + parts[4]);
  require("GET");
  if (parts.size() == 6) {
    const std::string& view = parts[5];
    if (view == "overview") return overview(*episode, req);
    if (view == "series") return series(*episode, req);
    if (view == "influence") return influence(*episode, req);
    if (view == "explain") return explain(*episode, req);
    if (view == "replay") return replay(*episode, req);
  }
  if (parts.size() == 8 && parts[5] == "agents" && parts[7] == "states") return states(*episode, parts[6]);
  throw not_found("no route for " + req.path);
}

ApiResponse Service::runs() const {
  const auto& m = store_.manifest();
  return json_response({{"runs",
                         {{{"id", m.run_id},
                           {"created_at", m.created_at},
                           {"seed", m.seed},
                           {"episodes", m.episodes.size()}}}}});
}

ApiResponse Service::run() const {
  nlohmann::json j = store_.manifest();
  j["network"] = net_.to_json();
  return json_response(j);
}

ApiResponse Service::episodes(const ApiRequest& req) const {
  std::optional<EpisodeKind> kind;
  const std::string kind_text = req.param("kind").value_or("all");
  if (kind_text == "train") {
    kind = EpisodeKind::Train;
  } else if (kind_text == "test") {
    kind = EpisodeKind::Test;
  } else if (kind_text != "all") {
    throw bad_request("kind must be train, test or all");
  }
  std::vector<EpisodeEntry> selected;
  for (const auto& e : store_.manifest().episodes) {
    if (!kind || e.kind == *kind) selected.push_back(e);
  }
  nlohmann::json rows = nlohmann::json::array();
  if (!selected.empty()) {
    auto table = normalize_metrics(selected);
    if (const auto sort = req.param("sort")) {
      const std::string order = req.param("order").value_or("desc");
      if (order != "asc" && order != "desc") throw bad_request("order must be asc or desc");
      const auto& names = metric_names();
      if (std::find(names.begin(), names.end(), *sort) == names.end()) throw bad_request("unknown metric: " + *sort);
      sort_rows(table, *sort, order == "asc");
    }
    for (const auto& row : table) rows.push_back(to_json(row));
  }
  return immutable(json_response({{"kind", kind_text}, {"metrics", metric_names()}, {"rows", rows}}));
}

ApiResponse Service::overview(int episode, const ApiRequest& req) {
  const auto rec = record(episode);
  const auto an = analysis(episode);
  if (rec->decisions.empty()) throw not_found("episode has no decisions");
  const int from = int_param(req, "from", rec->decisions.front().step);
  const int to = int_param(req, "to", rec->decisions.back().step);
  if (from > to) throw bad_request("from must not exceed to");
  explain::PolicyOverview ov;
  try {
    ov = explain::policy_overview(*rec, from, to);
  } catch (const std::invalid_argument& e) {
    throw bad_request(e.what());
  }
  const auto& proj = an->at("traffic_projection");
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : proj.at("points")) {
    nlohmann::json q = p;
    const int step = p.at("step").get<int>();
    q["selected"] = step >= from && step <= to;
    points.push_back(std::move(q));
  }
  return immutable(json_response({{"episode", episode},
                                  {"projection",
                                   {{"params", proj.at("params")}, {"kl", proj.at("kl")}, {"points", points}}},
                                  {"overview", ov}}));
}

ApiResponse Service::states(int episode, const std::string& agent) {
  const auto an = analysis(episode);
  const auto& states = an->at("agent_states");
  if (!states.contains(agent)) throw not_found("unknown agent: " + agent);
  nlohmann::json j = states.at(agent);
  j["agent"] = agent;
  j["episode"] = episode;
  return immutable(json_response(j));
}

ApiResponse Service::series(int episode, const ApiRequest& req) {
  const auto rec = record(episode);
  const std::string metric = req.param("metric").value_or("reward");
  if (metric != "reward" && metric != "queue" && metric != "critic_value") {
    throw bad_request("metric must be reward, queue or critic_value");
  }
  std::vector<std::size_t> selected;
  if (const auto agents = req.param("agents"); agents && !agents->empty()) {
    std::stringstream ss(*agents);
    std::string name;
    while (std::getline(ss, name, ',')) {
      const auto it = std::find(rec->agents.begin(), rec->agents.end(), name);
      if (it == rec->agents.end()) throw bad_request("unknown agent: " + name);
      selected.push_back(static_cast<std::size_t>(it - rec->agents.begin()));
    }
  } else {
    for (std::size_t a = 0; a < rec->agents.size(); ++a) selected.push_back(a);
  }

  const SimConfig& sim = config_.sim;
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& d : rec->decisions) steps.push_back(d.step);
  nlohmann::json values = nlohmann::json::object();
  nlohmann::json bands = nlohmann::json::object();
  for (std::size_t a : selected) {
    nlohmann::json v = nlohmann::json::array();
    nlohmann::json b = nlohmann::json::array();
    auto push_band = [&](int from, int to, const char* phase) {
      if (to <= from) return;
      if (!b.empty() && b.back().at("phase") == phase && b.back().at("to").get<int>() == from) {
        b.back()["to"] = to;
      } else {
        b.push_back({{"from", from}, {"to", to}, {"phase", phase}});
      }
    };
    for (const auto& d : rec->decisions) {
      if (metric == "reward") {
        v.push_back(d.rewards[a]);
      } else if (metric == "queue") {
        v.push_back(d.queues_after[a]);
      } else {
        v.push_back(d.critic_values[a]);
      }
      const int end = d.step + sim.decision_interval;
      if (d.switched[a]) {
        push_band(d.step, d.step + sim.all_red, "ALL_RED");
        push_band(d.step + sim.all_red, end, phase_name(d.actions[a]));
      } else {
        push_band(d.step, end, phase_name(d.actions[a]));
      }
    }
    values[rec->agents[a]] = std::move(v);
    bands[rec->agents[a]] = std::move(b);
  }
  return immutable(json_response(
      {{"episode", episode}, {"metric", metric}, {"steps", steps}, {"values", values}, {"phase_bands", bands}}));
}

ApiResponse Service::influence(int episode, const ApiRequest& req) {
  const auto an = analysis(episode);
  const int step = int_param(req, "step", std::nullopt);
  const double threshold =
      double_param(req, "threshold", an->at("config").at("influence_threshold").get<double>());
  if (threshold < 0.0 || threshold > 1.0) throw bad_request("threshold must lie in [0, 1]");
  const int i = decision_index(*an, step);
  if (i < 0) throw bad_request("step " + std::to_string(step) + " is not a decision boundary");
  const auto matrix = compute_influence(*an, step, threshold);

  const auto& names = an->at("features").at("critic");
  const auto owners = an->at("owners").get<std::vector<std::size_t>>();
  const auto agents = an->at("agents").get<std::vector<std::string>>();
  nlohmann::json bars = nlohmann::json::object();
  const auto& per_agent = an->at("decisions").at(static_cast<std::size_t>(i)).at("agents");
  for (const auto& agent : agents) {
    const auto values = per_agent.at(agent).at("critic").at("values").get<std::vector<double>>();
    std::vector<std::size_t> order(values.size());
    for (std::size_t f = 0; f < order.size(); ++f) order[f] = f;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return std::abs(values[x]) > std::abs(values[y]); });
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t f : order) {
      list.push_back({{"feature", names.at(f)}, {"owner", agents.at(owners[f])}, {"value", values[f]}});
    }
    bars[agent] = std::move(list);
  }
  return immutable(json_response({{"episode", episode}, {"step", step}, {"matrix", matrix}, {"bars", bars}}));
}

ApiResponse Service::explain(int episode, const ApiRequest& req) {
  const auto an = analysis(episode);
  const auto rec = record(episode);
  const auto agent = req.param("agent");
  if (!agent) throw bad_request("missing query parameter 'agent'");
  const int step = int_param(req, "step", std::nullopt);
  if (std::find(rec->agents.begin(), rec->agents.end(), *agent) == rec->agents.end()) {
    throw bad_request("unknown agent: " + *agent);
  }
  try {
    return immutable(json_response(explain_payload(*an, *rec, *agent, step)));
  } catch (const std::out_of_range& e) {
    throw bad_request(e.what());
  }
}

ApiResponse Service::replay(int episode, const ApiRequest& req) {
  const int from = int_param(req, "from", 0);
  const int to = int_param(req, "to", config_.sim.episode_steps - 1);
  if (from < 0 || from > to) throw bad_request("need 0 <= from <= to");
  const fs::path path = store_.replay_path(episode);
  if (!fs::exists(path)) throw not_found("episode " + std::to_string(episode) + " has no replay");
  return immutable(
      json_response({{"episode", episode}, {"from", from}, {"to", to}, {"frames", read_replay(path, from, to)}}));
}

ApiResponse Service::create_snapshot(const ApiRequest& req) {
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error&) {
    throw bad_request("snapshot body must be JSON");
  }
  if (!body.is_object() || !body.contains("payload") || !body.at("payload").is_object()) {
    throw bad_request("snapshot body needs a 'payload' object");
  }
  std::lock_guard lock(snapshot_mutex_);
  const fs::path dir = store_.snapshots_dir();
  fs::create_directories(dir);
  int next = 1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string stem = entry.path().stem().string();
    if (entry.path().extension() == ".json" && stem.rfind("snap-", 0) == 0) {
      if (const auto n = parse_int(stem.substr(5))) next = std::max(next, *n + 1);
    }
  }
  char id[32];
  std::snprintf(id, sizeof id, "snap-%04d", next);
  const nlohmann::json snapshot = {{"id", id},
                                   {"created_at", now_utc()},
                                   {"run_id", store_.manifest().run_id},
                                   {"label", body.value("label", std::string())},
                                   {"payload", body.at("payload")}};
  const std::string text = snapshot.dump();
  write_file_atomic(dir / (std::string(id) + ".json"), text);
  ApiResponse r;
  r.status = 201;
  r.body = text;
  r.headers.emplace_back("Location", std::string("/api/snapshots/") + id);
  return r;
}

ApiResponse Service::list_snapshots() {
  std::lock_guard lock(snapshot_mutex_);
  std::vector<fs::path> files;
  if (fs::exists(store_.snapshots_dir())) {
    for (const auto& entry : fs::directory_iterator(store_.snapshots_dir())) {
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  nlohmann::json list = nlohmann::json::array();
  for (const auto& f : files) {
    const auto j = nlohmann::json::parse(read_file(f));
    const auto& p = j.at("payload");
    list.push_back({{"id", j.at("id")},
                    {"created_at", j.at("created_at")},
                    {"label", j.value("label", std::string())},
                    {"episode", p.value("episode", nlohmann::json())},
                    {"agent", p.value("agent", nlohmann::json())},
                    {"step", p.value("step", nlohmann::json())}});
  }
  ApiResponse r = json_response({{"snapshots", list}});
  r.headers.emplace_back("Cache-Control", "no-store");
  return r;
}

ApiResponse Service::get_snapshot(const std::string& id) {
  static const std::regex pattern("snap-[0-9]{4,}");
  if (!std::regex_match(id, pattern)) throw not_found("unknown snapshot: " + id);
  const fs::path path = store_.snapshots_dir() / (id + ".json");
  std::lock_guard lock(snapshot_mutex_);
  if (!fs::exists(path)) throw not_found("unknown snapshot: " + id);
  ApiResponse r;
  r.body = read_file(path);
  return r;
}

void Service::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto bridge = [this](const httplib::Request& hreq, httplib::Response& hres) {
    ApiRequest req;
    req.method = hreq.method;
    req.path = hreq.path;
    for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
    req.body = hreq.body;
    const ApiResponse r = handle(req);
    hres.status = r.status;
    for (const auto& [k, v] : r.headers) hres.set_header(k, v);
    if (!r.content_type.empty()) hres.set_content(r.body, r.content_type);
  };
  server_->Get("/api/.*", bridge);
  server_->Post("/api/.*", bridge);
  server_->Options("/api/.*", bridge);
  server_->set_error_handler([this](const httplib::Request& hreq, httplib::Response& hres) {
    if (hres.status != 404 || !hres.body.empty()) return;
    ApiRequest req;
    req.method = hreq.method;
    req.path = hreq.path;
    const ApiResponse r = handle(req);
    hres.status = r.status;
    for (const auto& [k, v] : r.headers) hres.set_header(k, v);
    hres.set_content(r.body, r.content_type);
  });
}

void Service::listen(const std::string& host, int port, const std::optional<fs::path>& static_dir) {
  install_routes();
  if (static_dir && !server_->set_mount_point("/", static_dir->string())) {
    throw std::runtime_error("cannot serve static files from " + static_dir->string());
  }
  if (!server_->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  server_->listen_after_bind();
}

int Service::bind_any(const std::string& host) {
  install_routes();
  const int port = server_->bind_to_any_port(host);
  if (port < 0) throw std::runtime_error("cannot bind " + host);
  return port;
}

void Service::run_bound() {
  if (!server_) throw std::logic_error("bind_any must be called first");
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace gridlens
