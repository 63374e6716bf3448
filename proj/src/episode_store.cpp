#include "gridlens/episode_store.h"

#include <algorithm>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace gridlens {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const EpisodeEntry& e) {
  j = {{"index", e.index},
       {"kind", to_string(e.kind)},
       {"file", e.file},
       {"aggregates", e.aggregates},
       {"temperature", e.temperature},
       {"critic_loss", e.critic_loss},
       {"actor_loss", e.actor_loss}};
}

void from_json(const nlohmann::json& j, EpisodeEntry& e) {
  j.at("index").get_to(e.index);
  e.kind = episode_kind_from_string(j.at("kind").get<std::string>());
  j.at("file").get_to(e.file);
  j.at("aggregates").get_to(e.aggregates);
  e.temperature = j.value("temperature", 0.0);
  e.critic_loss = j.value("critic_loss", 0.0);
  e.actor_loss = j.value("actor_loss", 0.0);
}

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = {{"format_version", m.format_version},
       {"run_id", m.run_id},
       {"created_at", m.created_at},
       {"seed", m.seed},
       {"config", m.config},
       {"episodes", m.episodes}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  j.at("format_version").get_to(m.format_version);
  j.at("run_id").get_to(m.run_id);
  j.at("created_at").get_to(m.created_at);
  j.at("seed").get_to(m.seed);
  m.config = j.at("config");
  j.at("episodes").get_to(m.episodes);
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunStore RunStore::create(const fs::path& dir, RunManifest manifest) {
  if (fs::exists(dir / "manifest.json")) throw std::runtime_error("run already exists: " + dir.string());
  for (const char* sub : {"episodes", "replay", "checkpoints", "analysis"}) fs::create_directories(dir / sub);
  RunStore store;
  store.dir_ = dir;
  store.manifest_ = std::move(manifest);
  store.write_manifest();
  return store;
}

RunStore RunStore::open(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw std::runtime_error("no run found at " + dir.string());
  RunStore store;
  store.dir_ = dir;
  store.refresh();
  return store;
}

void RunStore::refresh() { manifest_ = nlohmann::json::parse(read_file(dir_ / "manifest.json")).get<RunManifest>(); }

void RunStore::write_manifest() const {
  write_file_atomic(dir_ / "manifest.json", nlohmann::json(manifest_).dump(2) + "\n");
}

std::string RunStore::append_episode(const EpisodeRecord& record, double temperature, double critic_loss,
                                     double actor_loss) {
  if (has_episode(record.index)) {
    throw std::invalid_argument("episode " + std::to_string(record.index) + " already stored");
  }
  const fs::path path = episode_path(record.index);
  write_file_atomic(path, nlohmann::json(record).dump() + "\n");
  EpisodeEntry e;
  e.index = record.index;
  e.kind = record.kind;
  e.file = fs::relative(path, dir_).generic_string();
  e.aggregates = record.aggregates;
  e.temperature = temperature;
  e.critic_loss = critic_loss;
  e.actor_loss = actor_loss;
  manifest_.episodes.push_back(e);
  write_manifest();
  return e.file;
}

EpisodeRecord RunStore::load_episode(int index) const {
  if (!has_episode(index)) throw std::out_of_range("episode " + std::to_string(index) + " not in run");
  return nlohmann::json::parse(read_file(episode_path(index))).get<EpisodeRecord>();
}

bool RunStore::has_episode(int index) const {
  return std::any_of(manifest_.episodes.begin(), manifest_.episodes.end(),
                     [&](const EpisodeEntry& e) { return e.index == index; });
}

std::vector<int> RunStore::episode_indices(std::optional<EpisodeKind> kind) const {
  std::vector<int> out;
  for (const auto& e : manifest_.episodes) {
    if (!kind || e.kind == *kind) out.push_back(e.index);
  }
  return out;
}

fs::path RunStore::episode_path(int index) const { return dir_ / "episodes" / ("ep" + std::to_string(index) + ".json"); }
fs::path RunStore::replay_path(int index) const { return dir_ / "replay" / ("ep" + std::to_string(index) + ".jsonl"); }
fs::path RunStore::checkpoint_path(int index) const {
  return dir_ / "checkpoints" / ("ep" + std::to_string(index) + ".bin");
}
fs::path RunStore::analysis_path(int index) const { return dir_ / "analysis" / ("ep" + std::to_string(index) + ".json"); }
fs::path RunStore::snapshots_dir() const { return dir_ / "snapshots"; }

ReplayWriter::ReplayWriter(fs::path path) : path_(std::move(path)) {
  tmp_ = path_;
  tmp_ += ".tmp";
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot write " + tmp_.string());
}

ReplayWriter::~ReplayWriter() {
  if (!finished_) {
    out_.close();
    std::error_code ec;
    fs::remove(tmp_, ec);
  }
}

void ReplayWriter::write(const nlohmann::json& frame) { out_ << frame.dump() << '\n'; }

void ReplayWriter::finish() {
  out_.close();
  if (!out_) throw std::runtime_error("failed writing " + tmp_.string());
  fs::rename(tmp_, path_);
  finished_ = true;
}

std::vector<nlohmann::json> read_replay(const fs::path& path, int from, int to) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // Frames are written in step order; peek at the step before parsing the whole line.
    const auto pos = line.find("\"step\":");
    if (pos != std::string::npos) {
      const int step = std::stoi(line.substr(pos + 7));
      if (step < from) continue;
      if (step > to) break;
    }
    out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

double metric_value(const EpisodeAggregates& a, const std::string& metric) {
  if (metric == "reward") return a.mean_reward;
  if (metric == "queue") return a.mean_queue;
  if (metric == "delay") return a.delay;
  if (metric == "travel_time") return a.avg_travel_time;
  if (metric == "speed_loss") return a.speed_loss;
  throw std::invalid_argument("unknown metric: " + metric);
}

std::vector<MetricRow> normalize_metrics(const std::vector<EpisodeEntry>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("cannot normalise an empty run");
  const auto& names = metric_names();
  std::vector<MetricRow> rows;
  for (const auto& e : episodes) {
    MetricRow r;
    r.index = e.index;
    r.kind = e.kind;
    for (const auto& m : names) r.raw.push_back(metric_value(e.aggregates, m));
    rows.push_back(std::move(r));
  }
  for (std::size_t m = 0; m < names.size(); ++m) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& r : rows) {
      lo = std::min(lo, r.raw[m]);
      hi = std::max(hi, r.raw[m]);
    }
    for (auto& r : rows) r.normalized.push_back(hi > lo ? (r.raw[m] - lo) / (hi - lo) : 0.0);
  }
  return rows;
}

void sort_rows(std::vector<MetricRow>& rows, const std::string& metric, bool ascending) {
  const auto& names = metric_names();
  const auto it = std::find(names.begin(), names.end(), metric);
  if (it == names.end()) throw std::invalid_argument("unknown metric: " + metric);
  const auto m = static_cast<std::size_t>(it - names.begin());
  std::stable_sort(rows.begin(), rows.end(), [&](const MetricRow& a, const MetricRow& b) {
    return ascending ? a.raw[m] < b.raw[m] : a.raw[m] > b.raw[m];
  });
}

nlohmann::json to_json(const MetricRow& row) {
  nlohmann::json raw = nlohmann::json::object();
  nlohmann::json norm = nlohmann::json::object();
  const auto& names = metric_names();
  for (std::size_t m = 0; m < names.size(); ++m) {
    raw[names[m]] = row.raw[m];
    norm[names[m]] = row.normalized[m];
  }
  return {{"episode", row.index}, {"kind", to_string(row.kind)}, {"raw", raw}, {"normalized", norm}};
}

}  // namespace gridlens
