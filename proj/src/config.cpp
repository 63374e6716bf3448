#include "gridlens/config.h"

#include <charconv>
#include <cstdlib>
#include <ctime>
#include <stdexcept>

#include "gridlens/episode_store.h"

namespace gridlens {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"rows", c.rows},
       {"cols", c.cols},
       {"link",
        {{"length_m", c.link.length_m}, {"free_flow_speed", c.link.free_flow_speed}, {"lanes", c.link.lanes}}}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  c.rows = j.value("rows", c.rows);
  c.cols = j.value("cols", c.cols);
  if (j.contains("link")) {
    const auto& l = j.at("link");
    c.link.length_m = l.value("length_m", c.link.length_m);
    c.link.free_flow_speed = l.value("free_flow_speed", c.link.free_flow_speed);
    c.link.lanes = l.value("lanes", c.link.lanes);
  }
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"network", c.network},
       {"sim", c.sim},
       {"train", c.train},
       {"analysis", c.analysis},
       {"run", {{"id", c.run_id}, {"created_at", c.created_at}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "seed" && key != "network" && key != "sim" && key != "train" && key != "analysis" && key != "run") {
      throw std::invalid_argument("unknown config section: " + key);
    }
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("network")) j.at("network").get_to(c.network);
  if (j.contains("sim")) j.at("sim").get_to(c.sim);
  if (j.contains("train")) j.at("train").get_to(c.train);
  if (j.contains("analysis")) j.at("analysis").get_to(c.analysis);
  if (j.contains("run")) {
    c.run_id = j.at("run").value("id", c.run_id);
    c.created_at = j.at("run").value("created_at", c.created_at);
  }
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.sim.seed = seed;
  r.train.seed = seed;
  r.analysis.seed = seed;
  if (r.created_at.empty()) {
    std::int64_t epoch = 0;
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
      if (auto parsed = parse_seed(sde)) epoch = static_cast<std::int64_t>(*parsed);
    }
    r.created_at = iso8601_utc(epoch);
  }
  if (r.run_id.empty()) {
    RunConfig key = r;
    key.created_at.clear();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(nlohmann::json(key).dump())));
    r.run_id = std::string("run-") + std::string(buf, 12);
  }
  return r;
}

void RunConfig::validate() const {
  if (network.rows < 1 || network.cols < 1) throw std::invalid_argument("network needs at least one row and column");
  sim.validate();
  train.validate();
  analysis.validate();
}

RoadNetwork RunConfig::build_network() const { return RoadNetwork::build_grid(network.rows, network.cols, network.link); }

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

std::optional<std::uint64_t> parse_seed(const std::string& text) {
  std::uint64_t v = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || text.empty()) return std::nullopt;
  return v;
}

std::string iso8601_utc(std::int64_t seconds) {
  const auto t = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace gridlens
