#include "gridlens/records.h"

#include <stdexcept>

namespace gridlens {

std::array<double, LocalObservation::kDim> LocalObservation::features() const {
  return {queues[0],         queues[1],         queues[2],
          queues[3],         phase == 0 ? 1.0 : 0.0,
          phase == 1 ? 1.0 : 0.0,
          last_action == 0 ? 1.0 : 0.0,
          last_action == 1 ? 1.0 : 0.0};
}

LocalObservation LocalObservation::from_features(const double* f) {
  LocalObservation o;
  for (int i = 0; i < 4; ++i) o.queues[i] = f[i];
  o.phase = f[5] > f[4] ? 1 : 0;
  o.last_action = f[7] > f[6] ? 1 : 0;
  return o;
}

EpisodeAggregates recompute_aggregates(const EpisodeRecord& record) {
  EpisodeAggregates a;
  double reward_sum = 0.0;
  double queue_sum = 0.0;
  std::size_t samples = 0;
  double travel = 0.0;
  double speed_loss = 0.0;
  double vehicle_seconds = 0.0;
  for (const auto& d : record.decisions) {
    for (std::size_t i = 0; i < d.rewards.size(); ++i) {
      reward_sum += d.rewards[i];
      queue_sum += d.queues_after[i];
      ++samples;
    }
    a.delay += d.interval.queued_vehicle_seconds;
    a.completed_trips += d.interval.completed_trips;
    travel += d.interval.travel_time_sum;
    speed_loss += d.interval.speed_loss_sum;
    vehicle_seconds += d.interval.vehicle_seconds;
  }
  if (samples > 0) {
    a.mean_reward = reward_sum / static_cast<double>(samples);
    a.mean_queue = queue_sum / static_cast<double>(samples);
  }
  if (a.completed_trips > 0) a.avg_travel_time = travel / a.completed_trips;
  if (vehicle_seconds > 0.0) a.speed_loss = speed_loss / vehicle_seconds;
  return a;
}

const char* to_string(EpisodeKind kind) { return kind == EpisodeKind::Train ? "train" : "test"; }

EpisodeKind episode_kind_from_string(const std::string& s) {
  if (s == "train") return EpisodeKind::Train;
  if (s == "test") return EpisodeKind::Test;
  throw std::invalid_argument("unknown episode kind: " + s);
}

void to_json(nlohmann::json& j, const LocalObservation& o) {
  j = {{"queues", o.queues}, {"phase", o.phase}, {"last_action", o.last_action}};
}

void from_json(const nlohmann::json& j, LocalObservation& o) {
  j.at("queues").get_to(o.queues);
  j.at("phase").get_to(o.phase);
  j.at("last_action").get_to(o.last_action);
}

void to_json(nlohmann::json& j, const IntervalMetrics& m) {
  j = {{"queued_vehicle_seconds", m.queued_vehicle_seconds},
       {"speed_loss_sum", m.speed_loss_sum},
       {"vehicle_seconds", m.vehicle_seconds},
       {"completed_trips", m.completed_trips},
       {"travel_time_sum", m.travel_time_sum}};
}

void from_json(const nlohmann::json& j, IntervalMetrics& m) {
  j.at("queued_vehicle_seconds").get_to(m.queued_vehicle_seconds);
  j.at("speed_loss_sum").get_to(m.speed_loss_sum);
  j.at("vehicle_seconds").get_to(m.vehicle_seconds);
  j.at("completed_trips").get_to(m.completed_trips);
  j.at("travel_time_sum").get_to(m.travel_time_sum);
}

void to_json(nlohmann::json& j, const ObservationRecord& r) {
  j = {{"step", r.step},
       {"observations", r.observations},
       {"actions", r.actions},
       {"switched", r.switched},
       {"rewards", r.rewards},
       {"queues_after", r.queues_after},
       {"critic_values", r.critic_values},
       {"probabilities", r.probabilities},
       {"link_vehicle_counts", r.link_vehicle_counts},
       {"interval", r.interval}};
}

void from_json(const nlohmann::json& j, ObservationRecord& r) {
  j.at("step").get_to(r.step);
  j.at("observations").get_to(r.observations);
  j.at("actions").get_to(r.actions);
  j.at("switched").get_to(r.switched);
  j.at("rewards").get_to(r.rewards);
  j.at("queues_after").get_to(r.queues_after);
  j.at("critic_values").get_to(r.critic_values);
  j.at("probabilities").get_to(r.probabilities);
  j.at("link_vehicle_counts").get_to(r.link_vehicle_counts);
  j.at("interval").get_to(r.interval);
}

void to_json(nlohmann::json& j, const EpisodeAggregates& a) {
  j = {{"mean_reward", a.mean_reward},
       {"mean_queue", a.mean_queue},
       {"delay", a.delay},
       {"avg_travel_time", a.avg_travel_time},
       {"speed_loss", a.speed_loss},
       {"completed_trips", a.completed_trips}};
}

void from_json(const nlohmann::json& j, EpisodeAggregates& a) {
  j.at("mean_reward").get_to(a.mean_reward);
  j.at("mean_queue").get_to(a.mean_queue);
  j.at("delay").get_to(a.delay);
  j.at("avg_travel_time").get_to(a.avg_travel_time);
  j.at("speed_loss").get_to(a.speed_loss);
  j.at("completed_trips").get_to(a.completed_trips);
}

void to_json(nlohmann::json& j, const EpisodeRecord& r) {
  j = {{"index", r.index},
       {"kind", to_string(r.kind)},
       {"valid", r.valid},
       {"error", r.error},
       {"agents", r.agents},
       {"link_ids", r.link_ids},
       {"aggregates", r.aggregates},
       {"decisions", r.decisions},
       {"replay_path", r.replay_path},
       {"checkpoint_path", r.checkpoint_path}};
}

void from_json(const nlohmann::json& j, EpisodeRecord& r) {
  j.at("index").get_to(r.index);
  r.kind = episode_kind_from_string(j.at("kind").get<std::string>());
  j.at("valid").get_to(r.valid);
  j.at("error").get_to(r.error);
  j.at("agents").get_to(r.agents);
  j.at("link_ids").get_to(r.link_ids);
  j.at("aggregates").get_to(r.aggregates);
  j.at("decisions").get_to(r.decisions);
  j.at("replay_path").get_to(r.replay_path);
  j.at("checkpoint_path").get_to(r.checkpoint_path);
}

}  // namespace gridlens
