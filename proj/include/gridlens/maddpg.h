#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gridlens/mlp.h"
#include "gridlens/records.h"

namespace gridlens {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  double learning_rate = 0.0005;
  int target_update_every = 10;  // episodes, hard copy
  int episodes = 50;
  double gamma = 0.95;
  std::size_t buffer_capacity = 50000;
  int batch_size = 128;
  double temperature_start = 1.0;
  double temperature_end = 0.1;
  double grad_clip = 0.5;
  double reward_scale = 0.1;  // applied before buffering
  std::vector<int> hidden = {64, 64};
  OptimizerKind optimizer = OptimizerKind::Adam;
  int updates_per_decision = 1;
  double logit_regularization = 1e-3;
  bool straight_through = true;
  double queue_input_scale = 0.1;  // network-side scaling of queue counts
  std::uint64_t seed = 0;

  void validate() const;
  /// Exploration temperature for a training episode, linear from start to end.
  double temperature(int episode) const;

  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct GumbelSample {
  int action = 0;
  std::array<double, 2> relaxed{};
};

/// Tempered straight-through Gumbel sample: the hard action is the argmax of
/// log(p)/T + g, the relaxation is its softmax. T -> 0 concentrates on argmax(p).
GumbelSample gumbel_sample(std::span<const double> probs, double temperature, Rng& rng);
GumbelSample gumbel_sample(std::span<const double> probs, double temperature, std::uint64_t seed);

/// Decision-aligned experience for every agent. Rewards are stored already scaled.
struct Transition {
  std::vector<double> obs;       // n_agents * 8 raw features
  std::vector<double> actions;   // n_agents * 2 one-hot
  std::vector<double> rewards;   // n_agents
  std::vector<double> next_obs;  // n_agents * 8
  bool done = false;
};

/// Fixed-capacity ring buffer; evicts oldest first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th transition counted from the oldest retained one.
  const Transition& at(std::size_t i) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

struct AgentNets {
  Mlp actor;
  Mlp critic;

  bool operator==(const AgentNets&) const = default;
};

struct LossResult {
  double loss = 0.0;
  MlpGrad grad;
};

/// r + gamma * not_done * q_next, element-wise.
Eigen::VectorXd td_targets(const Eigen::VectorXd& rewards, const Eigen::VectorXd& q_next,
                           const Eigen::VectorXd& not_done, double gamma);

/// Mean squared TD error of critic(inputs) against fixed targets.
LossResult critic_loss(const Mlp& critic, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets);

/// -mean Q(inputs with this agent's action block replaced by its relaxed actor
/// output) + logit regularisation. `noise` holds one Gumbel draw per action.
LossResult actor_loss(const Mlp& actor, const Mlp& critic, const Eigen::MatrixXd& local_obs,
                      const Eigen::MatrixXd& critic_inputs, int action_offset, const Eigen::MatrixXd& noise,
                      double temperature, bool straight_through, double logit_regularization);

struct LossReport {
  std::vector<double> critic_loss;
  std::vector<double> actor_loss;
};

/// Per-agent actor/critic pairs with centralised critics over the joint
/// observation and joint action-probability vector.
class Maddpg {
 public:
  Maddpg(std::size_t n_agents, const TrainConfig& cfg);

  std::size_t n_agents() const { return agents_.size(); }
  int critic_input_dim() const { return static_cast<int>(n_agents() * (LocalObservation::kDim + 2)); }

  std::array<double, 2> actor_probs(std::size_t agent, const LocalObservation& obs) const;
  Eigen::MatrixXd actor_probs_batch(std::size_t agent, const Eigen::MatrixXd& local_features) const;
  double critic_value(std::size_t agent, std::span<const double> critic_input) const;
  Eigen::VectorXd critic_values_batch(std::size_t agent, const Eigen::MatrixXd& critic_inputs) const;

  /// One gradient step for every agent on a sampled batch.
  LossReport train_step(const ReplayBuffer& buffer, Rng& rng);

  /// Hard copy when episode_index is a multiple of the update period. Returns true on copy.
  bool update_targets(int episode_index);

  const std::vector<AgentNets>& agents() const { return agents_; }
  std::vector<AgentNets>& agents() { return agents_; }
  const std::vector<AgentNets>& targets() const { return targets_; }

  void save(const std::filesystem::path& path) const;
  static std::vector<AgentNets> load(const std::filesystem::path& path);

 private:
  TrainConfig cfg_;
  std::vector<AgentNets> agents_;
  std::vector<AgentNets> targets_;
  std::vector<AdamState> actor_opt_;
  std::vector<AdamState> critic_opt_;

  void apply(Mlp& net, AdamState& opt, MlpGrad grad);
};

/// Builds the critic input row: all observations then all action probabilities.
std::vector<double> critic_input(std::span<const LocalObservation> obs, std::span<const std::array<double, 2>> probs);

/// Evaluation helpers shared by training, analysis and explanations.
std::array<double, 2> actor_probs(const Mlp& actor, const LocalObservation& obs);
Eigen::MatrixXd actor_probs_batch(const Mlp& actor, const Eigen::MatrixXd& local_features);
Eigen::VectorXd critic_values_batch(const Mlp& critic, const Eigen::MatrixXd& critic_inputs);

std::vector<std::string> critic_feature_names(const std::vector<std::string>& agents,
                                              const std::vector<std::vector<std::string>>& incoming_ids);
std::vector<std::string> actor_feature_names(const std::string& agent, const std::vector<std::string>& incoming_ids);
/// Agent index that owns each critic input feature.
std::vector<std::size_t> critic_feature_owners(std::size_t n_agents);

}  // namespace gridlens
