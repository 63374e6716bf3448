#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "gridlens/records.h"

namespace gridlens::explain {

struct InfluenceMatrix {
  std::vector<std::string> agents;
  std::vector<std::vector<int>> weights;  // weights[a][b]: features owned by a that drive b's critic
  double threshold_fraction = 0.05;

  bool operator==(const InfluenceMatrix&) const = default;
};

void to_json(nlohmann::json& j, const InfluenceMatrix& m);

/// `critic_attributions[b]` holds the Shapley values of agent b's critic over
/// the joint critic input; `owners[f]` is the agent owning feature f. A feature
/// counts when |value| > 0 and |value| >= threshold_fraction * sum |values|.
InfluenceMatrix influence_from_attributions(const std::vector<std::string>& agents,
                                            const std::vector<std::vector<double>>& critic_attributions,
                                            const std::vector<std::size_t>& owners, double threshold_fraction);

struct AgentSectors {
  std::string agent;
  double north = 0.0;
  double south = 0.0;
  double west = 0.0;
  double east = 0.0;

  bool operator==(const AgentSectors&) const = default;
};

struct PolicyOverview {
  int from = 0;
  int to = 0;
  int decisions = 0;
  std::vector<AgentSectors> sectors;
  std::vector<std::string> link_ids;
  std::vector<double> link_mean_counts;
};

void to_json(nlohmann::json& j, const AgentSectors& s);
void to_json(nlohmann::json& j, const PolicyOverview& o);

/// Mean actor probabilities over decisions with from <= step <= to, mapped to
/// approach sectors (N-S action covers N and S, W-E covers W and E), plus mean
/// vehicle count per link.
PolicyOverview policy_overview(const EpisodeRecord& record, int from, int to);

}  // namespace gridlens::explain
