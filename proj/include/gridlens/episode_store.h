#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridlens/records.h"

namespace gridlens {

struct EpisodeEntry {
  int index = 0;
  EpisodeKind kind = EpisodeKind::Train;
  std::string file;
  EpisodeAggregates aggregates;
  double temperature = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;

  bool operator==(const EpisodeEntry&) const = default;
};

struct RunManifest {
  int format_version = 1;
  std::string run_id;
  std::string created_at;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<EpisodeEntry> episodes;

  bool operator==(const RunManifest&) const = default;
};

void to_json(nlohmann::json& j, const EpisodeEntry& e);
void from_json(const nlohmann::json& j, EpisodeEntry& e);
void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

/// Writes `text` to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

/// One directory per run:
///   manifest.json, episodes/ep{N}.json, replay/ep{N}.jsonl, checkpoints/ep{N}.bin, analysis/ep{N}.json
/// Single writer; readers only ever observe episodes already listed in the manifest.
class RunStore {
 public:
  static RunStore create(const std::filesystem::path& dir, RunManifest manifest);
  static RunStore open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  const RunManifest& manifest() const { return manifest_; }

  /// Persists the record, then lists it in the manifest. Duplicate indices are rejected.
  std::string append_episode(const EpisodeRecord& record, double temperature = 0.0, double critic_loss = 0.0,
                             double actor_loss = 0.0);
  EpisodeRecord load_episode(int index) const;
  bool has_episode(int index) const;
  std::vector<int> episode_indices(std::optional<EpisodeKind> kind = std::nullopt) const;

  std::filesystem::path episode_path(int index) const;
  std::filesystem::path replay_path(int index) const;
  std::filesystem::path checkpoint_path(int index) const;
  std::filesystem::path analysis_path(int index) const;
  std::filesystem::path snapshots_dir() const;

  /// Re-reads the manifest from disk.
  void refresh();

 private:
  std::filesystem::path dir_;
  RunManifest manifest_;

  void write_manifest() const;
};

/// Streams replay frames to replay/ep{N}.jsonl; the file appears only after finish().
class ReplayWriter {
 public:
  explicit ReplayWriter(std::filesystem::path path);
  ~ReplayWriter();
  ReplayWriter(const ReplayWriter&) = delete;
  ReplayWriter& operator=(const ReplayWriter&) = delete;

  void write(const nlohmann::json& frame);
  void finish();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  bool finished_ = false;
};

/// Frames with from <= step <= to, read from a replay JSONL file.
std::vector<nlohmann::json> read_replay(const std::filesystem::path& path, int from, int to);

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"reward", "queue", "delay", "travel_time", "speed_loss"};
  return names;
}

double metric_value(const EpisodeAggregates& a, const std::string& metric);

struct MetricRow {
  int index = 0;
  EpisodeKind kind = EpisodeKind::Train;
  std::vector<double> raw;         // aligned with metric_names()
  std::vector<double> normalized;  // aligned with metric_names()
};

/// Min-max normalises each metric across the given episodes; min == max maps to 0.
std::vector<MetricRow> normalize_metrics(const std::vector<EpisodeEntry>& episodes);

/// Stable sort on one metric's raw value.
void sort_rows(std::vector<MetricRow>& rows, const std::string& metric, bool ascending);

nlohmann::json to_json(const MetricRow& row);

}  // namespace gridlens
