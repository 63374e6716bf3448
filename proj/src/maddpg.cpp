#include "gridlens/maddpg.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gridlens {

namespace {

constexpr int kObs = LocalObservation::kDim;
constexpr char kCheckpointMagic[4] = {'G', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

Eigen::RowVectorXd local_scale(double queue_scale) {
  Eigen::RowVectorXd s = Eigen::RowVectorXd::Ones(kObs);
  s.head(4).setConstant(queue_scale);
  return s;
}

void clip(MlpGrad& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = g.norm();
  if (n > max_norm) g.scale(max_norm / n);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (buffer_capacity < static_cast<std::size_t>(batch_size)) {
    throw std::invalid_argument("buffer_capacity must be at least batch_size");
  }
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
  if (episodes < 1) throw std::invalid_argument("episodes must be at least 1");
  if (target_update_every < 1) throw std::invalid_argument("target_update_every must be at least 1");
  if (temperature_start <= 0.0 || temperature_end <= 0.0) throw std::invalid_argument("temperatures must be positive");
  if (updates_per_decision < 0) throw std::invalid_argument("updates_per_decision must be non-negative");
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("hidden sizes must be positive");
  }
}

double TrainConfig::temperature(int episode) const {
  if (episodes <= 1) return temperature_start;
  const double frac = std::clamp(static_cast<double>(episode) / static_cast<double>(episodes - 1), 0.0, 1.0);
  return temperature_start + (temperature_end - temperature_start) * frac;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"target_update_every", c.target_update_every},
       {"episodes", c.episodes},
       {"gamma", c.gamma},
       {"buffer_capacity", c.buffer_capacity},
       {"batch_size", c.batch_size},
       {"temperature_start", c.temperature_start},
       {"temperature_end", c.temperature_end},
       {"grad_clip", c.grad_clip},
       {"reward_scale", c.reward_scale},
       {"hidden", c.hidden},
       {"optimizer", c.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"},
       {"updates_per_decision", c.updates_per_decision},
       {"logit_regularization", c.logit_regularization},
       {"straight_through", c.straight_through},
       {"queue_input_scale", c.queue_input_scale},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.target_update_every = j.value("target_update_every", c.target_update_every);
  c.episodes = j.value("episodes", c.episodes);
  c.gamma = j.value("gamma", c.gamma);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.temperature_start = j.value("temperature_start", c.temperature_start);
  c.temperature_end = j.value("temperature_end", c.temperature_end);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.reward_scale = j.value("reward_scale", c.reward_scale);
  c.hidden = j.value("hidden", c.hidden);
  const std::string opt = j.value("optimizer", std::string(c.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"));
  if (opt == "sgd") {
    c.optimizer = OptimizerKind::Sgd;
  } else if (opt == "adam") {
    c.optimizer = OptimizerKind::Adam;
  } else {
    throw std::invalid_argument("unknown optimizer: " + opt);
  }
  c.updates_per_decision = j.value("updates_per_decision", c.updates_per_decision);
  c.logit_regularization = j.value("logit_regularization", c.logit_regularization);
  c.straight_through = j.value("straight_through", c.straight_through);
  c.queue_input_scale = j.value("queue_input_scale", c.queue_input_scale);
  c.seed = j.value("seed", c.seed);
}

GumbelSample gumbel_sample(std::span<const double> probs, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (probs.size() != 2) throw std::invalid_argument("expected a two-action probability vector");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probabilities must lie in [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("probabilities must sum to 1");

  std::array<double, 2> z{};
  for (std::size_t k = 0; k < 2; ++k) {
    const double logp = probs[k] > 0.0 ? std::log(probs[k]) : -1e300;
    z[k] = logp / temperature + rng.gumbel();
  }
  GumbelSample s;
  s.action = z[1] > z[0] ? 1 : 0;
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m);
  const double e1 = std::exp(z[1] - m);
  s.relaxed = {e0 / (e0 + e1), e1 / (e0 + e1)};
  return s;
}

GumbelSample gumbel_sample(std::span<const double> probs, double temperature, std::uint64_t seed) {
  Rng rng(seed);
  return gumbel_sample(probs, temperature, rng);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
    return;
  }
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw std::out_of_range("replay index out of range");
  return data_[(head_ + i) % data_.size()];
}

Eigen::VectorXd td_targets(const Eigen::VectorXd& rewards, const Eigen::VectorXd& q_next,
                           const Eigen::VectorXd& not_done, double gamma) {
  if (rewards.size() != q_next.size() || rewards.size() != not_done.size()) {
    throw std::invalid_argument("td target inputs differ in length");
  }
  if (gamma == 0.0) return rewards;
  return rewards + gamma * not_done.cwiseProduct(q_next);
}

LossResult critic_loss(const Mlp& critic, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets) {
  Mlp::Tape tape;
  const Eigen::MatrixXd q = critic.forward(inputs, &tape);
  const Eigen::VectorXd diff = q.col(0) - targets;
  const double n = static_cast<double>(inputs.rows());
  LossResult r;
  r.loss = diff.squaredNorm() / n;
  Eigen::MatrixXd grad_out = (2.0 / n) * diff;
  r.grad = critic.backward(tape, grad_out);
  return r;
}

LossResult actor_loss(const Mlp& actor, const Mlp& critic, const Eigen::MatrixXd& local_obs,
                      const Eigen::MatrixXd& critic_inputs, int action_offset, const Eigen::MatrixXd& noise,
                      double temperature, bool straight_through, double logit_regularization) {
  const double n = static_cast<double>(local_obs.rows());
  Mlp::Tape actor_tape;
  const Eigen::MatrixXd logits = actor.forward(local_obs, &actor_tape);
  const Eigen::MatrixXd relaxed = softmax_rows((logits + noise) / temperature);

  Eigen::MatrixXd joint = critic_inputs;
  if (straight_through) {
    for (Eigen::Index r = 0; r < relaxed.rows(); ++r) {
      const int a = relaxed(r, 1) > relaxed(r, 0) ? 1 : 0;
      joint(r, action_offset) = a == 0 ? 1.0 : 0.0;
      joint(r, action_offset + 1) = a == 1 ? 1.0 : 0.0;
    }
  } else {
    joint.middleCols(action_offset, 2) = relaxed;
  }

  Mlp::Tape critic_tape;
  const Eigen::MatrixXd q = critic.forward(joint, &critic_tape);
  LossResult r;
  r.loss = -q.mean() + logit_regularization * logits.squaredNorm() / n;

  Eigen::MatrixXd dq = Eigen::MatrixXd::Constant(q.rows(), 1, -1.0 / n);
  Eigen::MatrixXd d_joint;
  critic.backward(critic_tape, dq, &d_joint);
  const Eigen::MatrixXd d_relaxed = d_joint.middleCols(action_offset, 2);
  const Eigen::VectorXd inner = (d_relaxed.array() * relaxed.array()).rowwise().sum();
  Eigen::MatrixXd d_logits = relaxed.array() * (d_relaxed.colwise() - inner).array();
  d_logits /= temperature;
  d_logits += (2.0 * logit_regularization / n) * logits;
  r.grad = actor.backward(actor_tape, d_logits);
  return r;
}

std::vector<double> critic_input(std::span<const LocalObservation> obs, std::span<const std::array<double, 2>> probs) {
  if (obs.size() != probs.size()) throw std::invalid_argument("observation and probability counts differ");
  std::vector<double> out;
  out.reserve(obs.size() * (kObs + 2));
  for (const auto& o : obs) {
    const auto f = o.features();
    out.insert(out.end(), f.begin(), f.end());
  }
  for (const auto& p : probs) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::array<double, 2> actor_probs(const Mlp& actor, const LocalObservation& obs) {
  const auto f = obs.features();
  Eigen::MatrixXd x(1, kObs);
  for (int k = 0; k < kObs; ++k) x(0, k) = f[k];
  const Eigen::MatrixXd p = softmax_rows(actor.forward(x));
  return {p(0, 0), p(0, 1)};
}

Eigen::MatrixXd actor_probs_batch(const Mlp& actor, const Eigen::MatrixXd& local_features) {
  return softmax_rows(actor.forward(local_features));
}

Eigen::VectorXd critic_values_batch(const Mlp& critic, const Eigen::MatrixXd& critic_inputs) {
  return critic.forward(critic_inputs).col(0);
}

Maddpg::Maddpg(std::size_t n_agents, const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (n_agents == 0) throw std::invalid_argument("at least one agent is required");
  Rng rng(cfg.seed ^ 0x5eedf00dULL);
  const int critic_dim = static_cast<int>(n_agents * (kObs + 2));
  Eigen::RowVectorXd critic_scale = Eigen::RowVectorXd::Ones(critic_dim);
  for (std::size_t a = 0; a < n_agents; ++a) critic_scale.segment(a * kObs, 4).setConstant(cfg.queue_input_scale);
  for (std::size_t a = 0; a < n_agents; ++a) {
    std::vector<int> actor_sizes{kObs};
    actor_sizes.insert(actor_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    actor_sizes.push_back(2);
    std::vector<int> critic_sizes{critic_dim};
    critic_sizes.insert(critic_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    critic_sizes.push_back(1);
    AgentNets nets{Mlp(actor_sizes, rng, 0.1), Mlp(critic_sizes, rng)};
    nets.actor.set_input_scale(local_scale(cfg.queue_input_scale));
    nets.critic.set_input_scale(critic_scale);
    agents_.push_back(std::move(nets));
  }
  targets_ = agents_;
  actor_opt_.resize(n_agents);
  critic_opt_.resize(n_agents);
}

std::array<double, 2> Maddpg::actor_probs(std::size_t agent, const LocalObservation& obs) const {
  return gridlens::actor_probs(agents_.at(agent).actor, obs);
}

Eigen::MatrixXd Maddpg::actor_probs_batch(std::size_t agent, const Eigen::MatrixXd& local_features) const {
  return gridlens::actor_probs_batch(agents_.at(agent).actor, local_features);
}

double Maddpg::critic_value(std::size_t agent, std::span<const double> input) const {
  Eigen::MatrixXd x(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t k = 0; k < input.size(); ++k) x(0, static_cast<Eigen::Index>(k)) = input[k];
  return agents_.at(agent).critic.forward(x)(0, 0);
}

Eigen::VectorXd Maddpg::critic_values_batch(std::size_t agent, const Eigen::MatrixXd& inputs) const {
  return gridlens::critic_values_batch(agents_.at(agent).critic, inputs);
}

void Maddpg::apply(Mlp& net, AdamState& opt, MlpGrad grad) {
  clip(grad, cfg_.grad_clip);
  if (cfg_.optimizer == OptimizerKind::Adam) {
    adam_step(net, opt, grad, cfg_.learning_rate);
  } else {
    net.apply_sgd(grad, cfg_.learning_rate);
  }
}

LossReport Maddpg::train_step(const ReplayBuffer& buffer, Rng& rng) {
  if (buffer.size() == 0) throw std::invalid_argument("cannot train on an empty replay buffer");
  if (buffer.size() < static_cast<std::size_t>(cfg_.batch_size)) {
    throw std::invalid_argument("replay buffer holds fewer transitions than one batch");
  }
  const std::size_t n = n_agents();
  const int batch = cfg_.batch_size;
  const int obs_dim = static_cast<int>(n) * kObs;
  const int dim = critic_input_dim();

  Eigen::MatrixXd x(batch, dim);
  Eigen::MatrixXd x_next(batch, dim);
  Eigen::MatrixXd rewards(batch, n);
  Eigen::VectorXd not_done(batch);
  for (int r = 0; r < batch; ++r) {
    const Transition& t = buffer.at(rng.index(buffer.size()));
    for (int k = 0; k < obs_dim; ++k) {
      x(r, k) = t.obs[k];
      x_next(r, k) = t.next_obs[k];
    }
    for (int k = 0; k < static_cast<int>(n) * 2; ++k) x(r, obs_dim + k) = t.actions[k];
    for (std::size_t a = 0; a < n; ++a) rewards(r, a) = t.rewards[a];
    not_done(r) = t.done ? 0.0 : 1.0;
  }
  for (std::size_t a = 0; a < n; ++a) {
    x_next.middleCols(obs_dim + 2 * a, 2) =
        gridlens::actor_probs_batch(targets_[a].actor, x_next.middleCols(a * kObs, kObs));
  }

  LossReport report;
  for (std::size_t a = 0; a < n; ++a) {
    const Eigen::VectorXd q_next = targets_[a].critic.forward(x_next).col(0);
    const Eigen::VectorXd y = td_targets(rewards.col(a), q_next, not_done, cfg_.gamma);
    LossResult c = critic_loss(agents_[a].critic, x, y);
    apply(agents_[a].critic, critic_opt_[a], std::move(c.grad));
    report.critic_loss.push_back(c.loss);

    Eigen::MatrixXd noise(batch, 2);
    for (int r = 0; r < batch; ++r) {
      noise(r, 0) = rng.gumbel();
      noise(r, 1) = rng.gumbel();
    }
    LossResult p = actor_loss(agents_[a].actor, agents_[a].critic, x.middleCols(a * kObs, kObs), x,
                              obs_dim + 2 * static_cast<int>(a), noise, 1.0, cfg_.straight_through,
                              cfg_.logit_regularization);
    apply(agents_[a].actor, actor_opt_[a], std::move(p.grad));
    report.actor_loss.push_back(p.loss);
  }
  return report;
}

bool Maddpg::update_targets(int episode_index) {
  if (episode_index % cfg_.target_update_every != 0) return false;
  targets_ = agents_;
  return true;
}

void Maddpg::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  const std::uint32_t version = kCheckpointVersion;
  const auto count = static_cast<std::uint32_t>(agents_.size());
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& a : agents_) {
    a.actor.write(out);
    a.critic.write(out);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::vector<AgentNets> Maddpg::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  std::uint32_t version = 0;
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  std::vector<AgentNets> out;
  for (std::uint32_t a = 0; a < count; ++a) {
    AgentNets nets;
    nets.actor = Mlp::read(in);
    nets.critic = Mlp::read(in);
    out.push_back(std::move(nets));
  }
  return out;
}

std::vector<std::string> critic_feature_names(const std::vector<std::string>& agents,
                                              const std::vector<std::vector<std::string>>& incoming_ids) {
  std::vector<std::string> names;
  for (std::size_t a = 0; a < agents.size(); ++a) {
    auto local = actor_feature_names(agents[a], incoming_ids.at(a));
    names.insert(names.end(), local.begin(), local.end());
  }
  for (const auto& a : agents) {
    names.push_back(a + " N-S prob");
    names.push_back(a + " W-E prob");
  }
  return names;
}

std::vector<std::string> actor_feature_names(const std::string& agent, const std::vector<std::string>& incoming_ids) {
  if (incoming_ids.size() != 4) throw std::invalid_argument("expected four incoming links");
  std::vector<std::string> names(incoming_ids.begin(), incoming_ids.end());
  names.push_back(agent + " phase N-S");
  names.push_back(agent + " phase W-E");
  names.push_back(agent + " last N-S");
  names.push_back(agent + " last W-E");
  return names;
}

std::vector<std::size_t> critic_feature_owners(std::size_t n_agents) {
  std::vector<std::size_t> owners;
  for (std::size_t a = 0; a < n_agents; ++a) owners.insert(owners.end(), kObs, a);
  for (std::size_t a = 0; a < n_agents; ++a) owners.insert(owners.end(), 2, a);
  return owners;
}

}  // namespace gridlens
