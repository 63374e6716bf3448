#include "gridlens/training.h"

#include <stdexcept>

namespace gridlens {

namespace {

using ChooseFn = std::function<int(std::size_t agent, const std::array<double, 2>& probs)>;
using StepFn = std::function<void(const std::vector<LocalObservation>& obs, const std::vector<int>& actions,
                                  const DecisionResult& result, const std::vector<LocalObservation>& next, bool done)>;

int greedy(const std::array<double, 2>& p) { return p[1] > p[0] ? 1 : 0; }

EpisodeRecord play_episode(const std::vector<AgentNets>& nets, const SimConfig& sim, const RoadNetwork& net,
                           const ChooseFn& choose, const StepFn& on_step, const FrameSink& sink) {
  EpisodeSim episode(net, sim);
  EpisodeRecord rec;
  rec.agents = net.agents();
  for (const auto& l : net.links()) rec.link_ids.push_back(l.id);
  const std::size_t n = net.agents().size();
  if (nets.size() != n) throw std::invalid_argument("one actor/critic pair per agent is required");

  std::vector<LocalObservation> obs = episode.observe();
  while (!episode.finished()) {
    ObservationRecord d;
    d.step = episode.current_step();
    d.observations = obs;
    d.link_vehicle_counts = link_vehicle_counts(episode.state());
    for (std::size_t a = 0; a < n; ++a) d.probabilities.push_back(actor_probs(nets[a].actor, obs[a]));
    const std::vector<double> x = critic_input(obs, d.probabilities);
    Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
    for (std::size_t k = 0; k < x.size(); ++k) row(0, static_cast<Eigen::Index>(k)) = x[k];
    for (std::size_t a = 0; a < n; ++a) d.critic_values.push_back(nets[a].critic.forward(row)(0, 0));
    for (std::size_t a = 0; a < n; ++a) d.actions.push_back(choose(a, d.probabilities[a]));

    DecisionResult r = episode.advance(d.actions, sink);
    std::vector<LocalObservation> next = episode.observe();
    if (on_step) on_step(obs, d.actions, r, next, episode.finished());
    d.switched = r.switched;
    d.rewards = r.rewards;
    d.queues_after = r.queues_after;
    d.interval = r.interval;
    rec.decisions.push_back(std::move(d));
    obs = std::move(next);
  }
  rec.aggregates = recompute_aggregates(rec);
  return rec;
}

void append_features(std::vector<double>& out, const std::vector<LocalObservation>& obs) {
  for (const auto& o : obs) {
    const auto f = o.features();
    out.insert(out.end(), f.begin(), f.end());
  }
}

}  // namespace

EpisodeRecord evaluate_policy(const std::vector<AgentNets>& nets, const SimConfig& sim, const RoadNetwork& net,
                              const FrameSink& sink) {
  return play_episode(
      nets, sim, net, [](std::size_t, const std::array<double, 2>& p) { return greedy(p); }, {}, sink);
}

TrainingResult run_training(const TrainConfig& cfg, const SimConfig& sim, const RoadNetwork& net, RunStore* store,
                            const ProgressFn& progress) {
  cfg.validate();
  sim.validate();
  const std::size_t n = net.agents().size();
  Maddpg model(n, cfg);
  ReplayBuffer buffer(cfg.buffer_capacity);
  Rng rng(cfg.seed);
  TrainingResult result;

  auto finish_episode = [&](EpisodeRecord& rec, EpisodeStats& stats, ReplayWriter* writer) {
    if (store) {
      writer->finish();
      model.save(store->checkpoint_path(rec.index));
      rec.replay_path = "replay/ep" + std::to_string(rec.index) + ".jsonl";
      rec.checkpoint_path = "checkpoints/ep" + std::to_string(rec.index) + ".bin";
      store->append_episode(rec, stats.temperature, stats.critic_loss, stats.actor_loss);
    }
    if (progress) progress(rec, stats);
    result.stats.push_back(stats);
    result.episodes.push_back(std::move(rec));
  };

  for (int e = 0; e < cfg.episodes; ++e) {
    if (model.update_targets(e)) ++result.target_copies;
    EpisodeStats stats;
    stats.index = e;
    stats.temperature = cfg.temperature(e);

    std::optional<ReplayWriter> writer;
    FrameSink sink;
    if (store) {
      writer.emplace(store->replay_path(e));
      sink = [&](const ReplayFrame& f) { writer->write(to_json(f, net)); };
    }

    double critic_sum = 0.0;
    double actor_sum = 0.0;
    auto choose = [&](std::size_t, const std::array<double, 2>& p) {
      return gumbel_sample(p, stats.temperature, rng).action;
    };
    auto on_step = [&](const std::vector<LocalObservation>& obs, const std::vector<int>& actions,
                       const DecisionResult& r, const std::vector<LocalObservation>& next, bool done) {
      Transition t;
      append_features(t.obs, obs);
      append_features(t.next_obs, next);
      for (int a : actions) {
        t.actions.push_back(a == 0 ? 1.0 : 0.0);
        t.actions.push_back(a == 1 ? 1.0 : 0.0);
      }
      for (double rw : r.rewards) t.rewards.push_back(rw * cfg.reward_scale);
      t.done = done;
      buffer.push(std::move(t));
      if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) return;
      for (int u = 0; u < cfg.updates_per_decision; ++u) {
        const LossReport report = model.train_step(buffer, rng);
        for (std::size_t a = 0; a < n; ++a) {
          critic_sum += report.critic_loss[a] / static_cast<double>(n);
          actor_sum += report.actor_loss[a] / static_cast<double>(n);
        }
        ++stats.train_steps;
      }
    };

    EpisodeRecord rec = play_episode(model.agents(), sim, net, choose, on_step, sink);
    rec.index = e;
    rec.kind = EpisodeKind::Train;
    if (stats.train_steps > 0) {
      stats.critic_loss = critic_sum / stats.train_steps;
      stats.actor_loss = actor_sum / stats.train_steps;
    }
    finish_episode(rec, stats, writer ? &*writer : nullptr);
  }

  if (model.update_targets(cfg.episodes)) ++result.target_copies;

  EpisodeStats test_stats;
  test_stats.index = cfg.episodes;
  std::optional<ReplayWriter> writer;
  FrameSink sink;
  if (store) {
    writer.emplace(store->replay_path(cfg.episodes));
    sink = [&](const ReplayFrame& f) { writer->write(to_json(f, net)); };
  }
  EpisodeRecord test = evaluate_policy(model.agents(), sim, net, sink);
  test.index = cfg.episodes;
  test.kind = EpisodeKind::Test;
  finish_episode(test, test_stats, writer ? &*writer : nullptr);

  result.final_nets = model.agents();
  return result;
}

double we_green_fraction(const std::vector<std::vector<Phase>>& phases_by_second, std::size_t agent, int from, int to) {
  if (to <= from) throw std::invalid_argument("empty step range");
  int green = 0;
  for (int t = from; t < to; ++t) {
    if (phases_by_second.at(static_cast<std::size_t>(t)).at(agent) == Phase::WeGreen) ++green;
  }
  return static_cast<double>(green) / static_cast<double>(to - from);
}

}  // namespace gridlens
