#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridlens/episode_store.h"
#include "gridlens/explain/influence.h"
#include "gridlens/explain/shapley.h"
#include "gridlens/explain/tree.h"
#include "gridlens/explain/tsne.h"
#include "gridlens/maddpg.h"
#include "gridlens/network.h"
#include "gridlens/simulator.h"

namespace gridlens {

struct AnalysisConfig {
  int critic_shap_samples = 100;
  double influence_threshold = 0.05;
  explain::TreeParams tree;
  explain::TsneParams tsne;
  /// "mean" (per-episode mean input) or "zero".
  std::string background = "mean";
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const AnalysisConfig&) const = default;
};

void to_json(nlohmann::json& j, const AnalysisConfig& c);
void from_json(const nlohmann::json& j, AnalysisConfig& c);

/// Decision-aligned matrices extracted from one episode record.
struct EpisodeMatrices {
  Eigen::MatrixXd critic_inputs;               // decisions x (n_agents * 10)
  std::vector<Eigen::MatrixXd> local;          // per agent: decisions x 8
  Eigen::MatrixXd link_counts;                 // decisions x links
  std::vector<int> steps;
};

EpisodeMatrices episode_matrices(const EpisodeRecord& record);

/// Everything the service needs for one episode: projections, surrogate trees,
/// and per-decision actor (exact) and critic (sampled) Shapley attributions,
/// all evaluated on the episode's end-of-episode networks.
nlohmann::json analyze_episode(const EpisodeRecord& record, const std::vector<AgentNets>& nets,
                               const RoadNetwork& net, const SimConfig& sim, const AnalysisConfig& cfg);

using AnalysisProgress = std::function<void(int episode)>;

/// Runs analyze_episode for every stored episode and writes analysis/ep{N}.json.
void analyze_run(const RunStore& store, const RoadNetwork& net, const SimConfig& sim, const AnalysisConfig& cfg,
                 const AnalysisProgress& progress = {});

/// Decision index for `step`, or -1 when step is not a decision boundary.
int decision_index(const nlohmann::json& analysis, int step);

/// Influence matrix at a decision step, recomputed from cached critic attributions.
explain::InfluenceMatrix compute_influence(const nlohmann::json& analysis, int step, double threshold_fraction);
explain::InfluenceMatrix compute_influence(const RunStore& store, int episode, int step, double threshold_fraction);

}  // namespace gridlens
