#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridlens/network.h"
#include "gridlens/records.h"

namespace gridlens {

enum class Phase : int { NsGreen = 0, WeGreen = 1, AllRed = 2 };

const char* to_string(Phase phase);

// How a directional demand from the stage table maps onto entry approaches.
enum class FlowSplit { DirectionTotal, PerApproach };
enum class ArrivalProcess { Uniform, Poisson };

struct StageFlow {
  int duration = 400;
  double flow_we = 0.0;  // veh/h
  double flow_ns = 0.0;  // veh/h

  bool operator==(const StageFlow&) const = default;
};

struct SimConfig {
  int episode_steps = 1600;
  int decision_interval = 10;
  int all_red = 3;
  std::vector<StageFlow> stages = default_stages();
  double saturation_headway = 2.0;
  double queue_speed_threshold = 0.1;
  double omega_queue = 1.0;
  double omega_phase = 2.0;
  double vehicle_spacing_m = 7.0;
  FlowSplit flow_split = FlowSplit::DirectionTotal;
  ArrivalProcess arrivals = ArrivalProcess::Uniform;
  // Also feed eastern and southern entries (westbound / northbound traffic).
  bool bidirectional = false;
  std::uint64_t seed = 0;

  /// Four 400 s stages: W-E only, N-S only, W-E heavy, N-S heavy.
  static std::vector<StageFlow> default_stages();

  void validate() const;
  int decisions_per_episode() const { return episode_steps / decision_interval; }
  /// Zero-based stage index containing `step`.
  int stage_at(int step) const;

  bool operator==(const SimConfig&) const = default;
};

void to_json(nlohmann::json& j, const SimConfig& c);
void from_json(const nlohmann::json& j, SimConfig& c);

struct Vehicle {
  int id = 0;
  int entry_step = -1;  // -1 while still waiting outside the network
  std::vector<std::size_t> route;  // link indices
  std::size_t link_index = 0;      // position in route
  int link_enter_step = 0;
  std::optional<int> queued_since;
  std::optional<int> exit_step;
};

struct SignalState {
  Phase phase = Phase::NsGreen;
  int green = 0;  // green the signal is showing or heading to
  int last_action = 0;
  int switch_step = -1;
  int switch_count = 0;
};

struct LinkState {
  std::deque<int> running;  // FIFO by link entry time
  std::deque<int> queued;   // head = stop line
  int last_discharge = -1000000;

  std::size_t size() const { return running.size() + queued.size(); }
};

struct SimState {
  int step = 0;
  std::vector<Vehicle> vehicles;  // indexed by id
  std::vector<LinkState> links;   // indexed by network link order
  std::vector<SignalState> signals;  // indexed by agent order
  std::vector<std::deque<int>> backlog;  // per link; vehicles waiting to enter
  int entered = 0;
  int exited = 0;
  double delay = 0.0;
  double speed_loss_sum = 0.0;
  double vehicle_seconds = 0.0;
  double travel_time_sum = 0.0;

  static SimState initial(const RoadNetwork& net);

  int in_network() const;
  int queued_total() const;
  /// Queued vehicles summed over the agent's incoming links.
  int agent_queue(const RoadNetwork& net, std::size_t agent) const;
};

struct MetricsSample {
  int step = 0;
  std::vector<int> queue;       // per agent
  std::vector<double> reward;   // per agent
  double speed_loss = 0.0;      // sum over vehicles of (1 - v / v_free)
  double delay = 0.0;           // queued vehicles this second
  double vehicle_count = 0.0;
  int completed = 0;
  double travel_time_sum = 0.0;
  std::optional<double> avg_travel_time;  // over trips finished this second
};

struct ReplayVehicle {
  int id = 0;
  std::size_t link = 0;
  double offset_m = 0.0;
};

struct ReplayFrame {
  int step = 0;
  std::vector<Phase> signals;
  std::vector<ReplayVehicle> vehicles;
};

nlohmann::json to_json(const ReplayFrame& frame, const RoadNetwork& net);

/// Decision penalty: -(w_queue * queue + w_phase * switched).
double compute_reward(double queue, bool switched, const SimConfig& cfg);

/// Entry links fed by a given axis, in deterministic order.
std::vector<std::size_t> entry_links(const RoadNetwork& net, Axis axis, bool bidirectional);

/// Straight-through route starting with `entry_link` and ending at a boundary.
std::vector<std::size_t> straight_route(const RoadNetwork& net, std::size_t entry_link);

/// Vehicles that want to enter at `step`. Ids start at `first_id`.
std::vector<Vehicle> spawn_arrivals(int step, const SimConfig& cfg, const RoadNetwork& net, int first_id = 0);

/// Applies an agent decision at a boundary step. Returns true if the phase switched.
bool apply_action(SimState& state, std::size_t agent, int action, int step, const SimConfig& cfg);

/// Places a vehicle in the entry backlog of its first route link. Used by the spawner and by tests.
int inject_vehicle(SimState& state, std::vector<std::size_t> route);

/// Advances the simulation by one second.
MetricsSample step(SimState& state, const SimConfig& cfg, const RoadNetwork& net);

ReplayFrame make_replay_frame(const SimState& state, const RoadNetwork& net, const SimConfig& cfg);

std::vector<LocalObservation> observe(const SimState& state, const RoadNetwork& net);
std::vector<int> link_vehicle_counts(const SimState& state);

using FrameSink = std::function<void(const ReplayFrame&)>;

struct DecisionResult {
  std::vector<int> switched;
  std::vector<double> rewards;
  std::vector<double> queues_after;
  IntervalMetrics interval;
};

/// Drives one episode decision interval at a time.
class EpisodeSim {
 public:
  EpisodeSim(const RoadNetwork& net, SimConfig cfg);

  bool finished() const { return state_.step >= cfg_.episode_steps; }
  int current_step() const { return state_.step; }
  const SimState& state() const { return state_; }
  const SimConfig& config() const { return cfg_; }
  const RoadNetwork& network() const { return net_; }

  std::vector<LocalObservation> observe() const { return gridlens::observe(state_, net_); }

  /// Applies one action per agent and runs until the next decision boundary.
  DecisionResult advance(std::span<const int> actions, const FrameSink& sink = {});

 private:
  const RoadNetwork& net_;
  SimConfig cfg_;
  SimState state_;
  int next_vehicle_id_ = 0;
};

struct PolicyOutput {
  std::vector<int> actions;
  std::vector<std::array<double, 2>> probabilities;  // optional
  std::vector<double> critic_values;                 // optional
};

using Policy = std::function<PolicyOutput(int step, std::span<const LocalObservation> obs)>;

/// Runs a full episode. A throwing policy yields a partial record with valid = false.
EpisodeRecord run_episode(const Policy& policy, const SimConfig& cfg, const RoadNetwork& net,
                          const FrameSink& sink = {});

}  // namespace gridlens
