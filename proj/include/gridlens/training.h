#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "gridlens/episode_store.h"
#include "gridlens/maddpg.h"
#include "gridlens/network.h"
#include "gridlens/simulator.h"

namespace gridlens {

struct EpisodeStats {
  int index = 0;
  double temperature = 0.0;
  double critic_loss = 0.0;  // mean over train steps taken in the episode
  double actor_loss = 0.0;
  int train_steps = 0;
};

struct TrainingResult {
  std::vector<EpisodeRecord> episodes;  // training episodes then the greedy test episode
  std::vector<EpisodeStats> stats;
  std::vector<AgentNets> final_nets;
  int target_copies = 0;
};

using ProgressFn = std::function<void(const EpisodeRecord&, const EpisodeStats&)>;

/// Trains for cfg.episodes exploratory episodes, then runs one greedy test episode
/// on the same scenario. When `store` is given, every episode is persisted with
/// its replay stream and an end-of-episode checkpoint.
TrainingResult run_training(const TrainConfig& cfg, const SimConfig& sim, const RoadNetwork& net,
                            RunStore* store = nullptr, const ProgressFn& progress = {});

/// Greedy (argmax) evaluation of fixed networks on one episode.
EpisodeRecord evaluate_policy(const std::vector<AgentNets>& nets, const SimConfig& sim, const RoadNetwork& net,
                              const FrameSink& sink = {});

/// Fraction of seconds in [from, to) that the agent's signal showed W-E green,
/// counted from replay-style phase traces.
double we_green_fraction(const std::vector<std::vector<Phase>>& phases_by_second, std::size_t agent, int from, int to);

}  // namespace gridlens
