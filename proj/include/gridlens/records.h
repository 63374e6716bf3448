#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace gridlens {

/// What a single intersection sees at a decision boundary.
struct LocalObservation {
  static constexpr int kDim = 8;

  std::array<double, 4> queues{};  // N, S, W, E approaches
  int phase = 0;                   // current green: 0 = N-S, 1 = W-E
  int last_action = 0;

  std::array<double, kDim> features() const;
  static LocalObservation from_features(const double* f);

  bool operator==(const LocalObservation&) const = default;
};

/// Network totals accumulated over one decision interval.
struct IntervalMetrics {
  double queued_vehicle_seconds = 0.0;
  double speed_loss_sum = 0.0;
  double vehicle_seconds = 0.0;
  int completed_trips = 0;
  double travel_time_sum = 0.0;

  bool operator==(const IntervalMetrics&) const = default;
};

struct ObservationRecord {
  int step = 0;
  std::vector<LocalObservation> observations;
  std::vector<int> actions;
  std::vector<int> switched;
  std::vector<double> rewards;
  std::vector<double> queues_after;
  std::vector<double> critic_values;
  std::vector<std::array<double, 2>> probabilities;
  std::vector<int> link_vehicle_counts;
  IntervalMetrics interval;

  bool operator==(const ObservationRecord&) const = default;
};

struct EpisodeAggregates {
  double mean_reward = 0.0;
  double mean_queue = 0.0;
  double delay = 0.0;
  double avg_travel_time = 0.0;
  double speed_loss = 0.0;
  int completed_trips = 0;

  bool operator==(const EpisodeAggregates&) const = default;
};

enum class EpisodeKind { Train, Test };

struct EpisodeRecord {
  int index = 0;
  EpisodeKind kind = EpisodeKind::Train;
  bool valid = true;
  std::string error;
  std::vector<std::string> agents;
  std::vector<std::string> link_ids;
  EpisodeAggregates aggregates;
  std::vector<ObservationRecord> decisions;
  std::string replay_path;
  std::string checkpoint_path;

  bool operator==(const EpisodeRecord&) const = default;
};

EpisodeAggregates recompute_aggregates(const EpisodeRecord& record);

const char* to_string(EpisodeKind kind);
EpisodeKind episode_kind_from_string(const std::string& s);

void to_json(nlohmann::json& j, const LocalObservation& o);
void from_json(const nlohmann::json& j, LocalObservation& o);
void to_json(nlohmann::json& j, const IntervalMetrics& m);
void from_json(const nlohmann::json& j, IntervalMetrics& m);
void to_json(nlohmann::json& j, const ObservationRecord& r);
void from_json(const nlohmann::json& j, ObservationRecord& r);
void to_json(nlohmann::json& j, const EpisodeAggregates& a);
void from_json(const nlohmann::json& j, EpisodeAggregates& a);
void to_json(nlohmann::json& j, const EpisodeRecord& r);
void from_json(const nlohmann::json& j, EpisodeRecord& r);

}  // namespace gridlens
