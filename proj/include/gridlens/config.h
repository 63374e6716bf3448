#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "gridlens/analysis.h"
#include "gridlens/maddpg.h"
#include "gridlens/network.h"
#include "gridlens/simulator.h"

namespace gridlens {

struct NetworkConfig {
  int rows = 2;
  int cols = 2;
  LinkParams link;

  bool operator==(const NetworkConfig&) const = default;
};

/// Whole-run configuration. `seed` is copied into the simulator, trainer and
/// analysis seeds by resolved().
struct RunConfig {
  NetworkConfig network;
  SimConfig sim;
  TrainConfig train;
  AnalysisConfig analysis;
  std::uint64_t seed = 0;
  std::string run_id;      // empty: derived from the config contents
  std::string created_at;  // empty: SOURCE_DATE_EPOCH, else the epoch

  RunConfig resolved() const;
  void validate() const;
  RoadNetwork build_network() const;

  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

/// Parses a decimal seed as used by the MARLENS_SEED override.
std::optional<std::uint64_t> parse_seed(const std::string& text);

/// ISO-8601 UTC timestamp for seconds since the epoch.
std::string iso8601_utc(std::int64_t seconds);

}  // namespace gridlens
