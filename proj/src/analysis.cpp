#include "gridlens/analysis.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gridlens {

namespace {

constexpr int kObs = LocalObservation::kDim;

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
  for (std::uint64_t v : {a, b, c}) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 31;
  }
  return h;
}

std::vector<double> row_of(const Eigen::MatrixXd& m, Eigen::Index i) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) out[k] = m(i, k);
  return out;
}

std::vector<double> background_of(const Eigen::MatrixXd& m, const std::string& kind) {
  if (kind == "zero") return std::vector<double>(static_cast<std::size_t>(m.cols()), 0.0);
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) out[k] = m.col(k).mean();
  return out;
}

// Perplexity must stay below n / 3 for short episodes.
explain::TsneParams fit_params(explain::TsneParams p, Eigen::Index n) {
  const double cap = (static_cast<double>(n) - 1.0) / 3.0;
  if (p.perplexity > cap) p.perplexity = std::max(1.0, cap);
  return p;
}

nlohmann::json projection_json(const explain::Embedding& e, const explain::TsneParams& p) {
  return {{"params", p}, {"kl", e.kl}, {"jittered", e.jittered}};
}

}  // namespace

void AnalysisConfig::validate() const {
  if (critic_shap_samples < 100) throw std::invalid_argument("critic_shap_samples must be at least 100");
  if (influence_threshold < 0.0 || influence_threshold > 1.0) throw std::invalid_argument("influence_threshold in [0, 1]");
  if (tree.max_depth < 0 || tree.min_leaf < 1) throw std::invalid_argument("invalid tree parameters");
  if (background != "mean" && background != "zero") throw std::invalid_argument("background must be mean or zero");
}

void to_json(nlohmann::json& j, const AnalysisConfig& c) {
  j = {{"critic_shap_samples", c.critic_shap_samples},
       {"influence_threshold", c.influence_threshold},
       {"tree", c.tree},
       {"tsne", c.tsne},
       {"background", c.background},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AnalysisConfig& c) {
  c.critic_shap_samples = j.value("critic_shap_samples", c.critic_shap_samples);
  c.influence_threshold = j.value("influence_threshold", c.influence_threshold);
  if (j.contains("tree")) j.at("tree").get_to(c.tree);
  if (j.contains("tsne")) j.at("tsne").get_to(c.tsne);
  c.background = j.value("background", c.background);
  c.seed = j.value("seed", c.seed);
}

EpisodeMatrices episode_matrices(const EpisodeRecord& record) {
  const auto d = static_cast<Eigen::Index>(record.decisions.size());
  const std::size_t n = record.agents.size();
  if (d == 0) throw std::invalid_argument("episode has no decisions");
  EpisodeMatrices m;
  m.critic_inputs.resize(d, static_cast<Eigen::Index>(n * (kObs + 2)));
  m.local.assign(n, Eigen::MatrixXd(d, kObs));
  m.link_counts.resize(d, static_cast<Eigen::Index>(record.link_ids.size()));
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto& dec = record.decisions[i];
    m.steps.push_back(dec.step);
    const std::vector<double> x = critic_input(dec.observations, dec.probabilities);
    for (std::size_t k = 0; k < x.size(); ++k) m.critic_inputs(i, static_cast<Eigen::Index>(k)) = x[k];
    for (std::size_t a = 0; a < n; ++a) {
      const auto f = dec.observations[a].features();
      for (int k = 0; k < kObs; ++k) m.local[a](i, k) = f[k];
    }
    for (std::size_t l = 0; l < record.link_ids.size(); ++l) {
      m.link_counts(i, static_cast<Eigen::Index>(l)) = dec.link_vehicle_counts.at(l);
    }
  }
  return m;
}

nlohmann::json analyze_episode(const EpisodeRecord& record, const std::vector<AgentNets>& nets,
                               const RoadNetwork& net, const SimConfig& sim, const AnalysisConfig& cfg) {
  cfg.validate();
  const std::size_t n = record.agents.size();
  if (nets.size() != n) throw std::invalid_argument("checkpoint agent count does not match the episode");
  const EpisodeMatrices m = episode_matrices(record);
  const auto d = m.critic_inputs.rows();

  std::vector<std::vector<std::string>> incoming(n);
  for (std::size_t a = 0; a < n; ++a) {
    for (const Link* l : net.incoming_links(record.agents[a])) incoming[a].push_back(l->id);
  }
  const std::vector<std::string> critic_names = critic_feature_names(record.agents, incoming);
  const std::vector<std::size_t> owners = critic_feature_owners(n);
  const std::vector<double> critic_bg = background_of(m.critic_inputs, cfg.background);

  nlohmann::json out;
  out["episode"] = record.index;
  out["kind"] = to_string(record.kind);
  out["agents"] = record.agents;
  out["steps"] = m.steps;
  out["config"] = cfg;
  out["features"]["critic"] = critic_names;
  out["owners"] = owners;
  out["background"]["critic"] = critic_bg;

  // Traffic-condition projection over per-link vehicle counts.
  {
    const explain::TsneParams p = fit_params(cfg.tsne, d);
    const explain::Embedding e = explain::tsne_project(m.link_counts, p);
    nlohmann::json j = projection_json(e, p);
    nlohmann::json points = nlohmann::json::array();
    for (Eigen::Index i = 0; i < d; ++i) {
      double we = 0.0;
      double ns = 0.0;
      for (std::size_t l = 0; l < record.link_ids.size(); ++l) {
        const double c = m.link_counts(i, static_cast<Eigen::Index>(l));
        (net.link(record.link_ids[l]).axis == Axis::WE ? we : ns) += c;
      }
      points.push_back({{"x", e.coords(i, 0)},
                        {"y", e.coords(i, 1)},
                        {"step", m.steps[i]},
                        {"stage", sim.stage_at(m.steps[i])},
                        {"vehicles", {{"W-E", we}, {"N-S", ns}}}});
    }
    j["points"] = std::move(points);
    out["traffic_projection"] = std::move(j);
  }

  for (std::size_t a = 0; a < n; ++a) {
    const std::string& agent = record.agents[a];
    const AgentNets& nn = nets[a];
    const Eigen::VectorXd critic_values = critic_values_batch(nn.critic, m.critic_inputs);
    const Eigen::MatrixXd probs = actor_probs_batch(nn.actor, m.local[a]);
    const std::vector<std::string> actor_names = actor_feature_names(agent, incoming[a]);
    const std::vector<double> actor_bg = background_of(m.local[a], cfg.background);
    out["features"]["actor"][agent] = actor_names;
    out["background"]["actor"][agent] = actor_bg;

    // Agent-state projection over (4 queues, action, reward, step), z-scored.
    {
      Eigen::MatrixXd s(d, 7);
      double lo = 0.0;
      double hi = 0.0;
      for (Eigen::Index i = 0; i < d; ++i) {
        const auto& dec = record.decisions[i];
        for (int q = 0; q < 4; ++q) s(i, q) = dec.observations[a].queues[q];
        s(i, 4) = dec.actions[a];
        s(i, 5) = dec.rewards[a];
        s(i, 6) = dec.step;
        lo = i == 0 ? dec.rewards[a] : std::min(lo, dec.rewards[a]);
        hi = i == 0 ? dec.rewards[a] : std::max(hi, dec.rewards[a]);
      }
      const explain::TsneParams p = fit_params(cfg.tsne, d);
      const explain::Embedding e = explain::tsne_project(explain::zscore_columns(s), p);
      nlohmann::json j = projection_json(e, p);
      j["reward_range"] = {lo, hi};
      nlohmann::json points = nlohmann::json::array();
      for (Eigen::Index i = 0; i < d; ++i) {
        const auto& dec = record.decisions[i];
        const auto& q = dec.observations[a].queues;
        points.push_back({{"x", e.coords(i, 0)},
                          {"y", e.coords(i, 1)},
                          {"step", dec.step},
                          {"action", dec.actions[a] == 0 ? "N-S" : "W-E"},
                          {"reward", dec.rewards[a]},
                          {"reward_norm", hi > lo ? (dec.rewards[a] - lo) / (hi - lo) : 0.0},
                          {"queues", {{"N", q[0]}, {"S", q[1]}, {"W", q[2]}, {"E", q[3]}}},
                          {"flow", {{"N-S", q[0] + q[1]}, {"W-E", q[2] + q[3]}}},
                          {"critic_value", critic_values(i)},
                          {"probabilities", {{"N-S", probs(i, 0)}, {"W-E", probs(i, 1)}}}});
      }
      j["points"] = std::move(points);
      out["agent_states"][agent] = std::move(j);
    }

    // Surrogate trees.
    {
      const std::vector<double> cv(critic_values.data(), critic_values.data() + d);
      std::vector<double> we(static_cast<std::size_t>(d));
      for (Eigen::Index i = 0; i < d; ++i) we[i] = probs(i, 1);
      explain::TreeParams tp = cfg.tree;
      tp.min_leaf = std::min<int>(tp.min_leaf, static_cast<int>(d));
      const auto critic_tree = explain::RegressionTree::fit(m.critic_inputs, cv, tp, critic_names,
                                                            explain::TreeTarget::CriticValue);
      const auto actor_tree = explain::RegressionTree::fit(m.local[a], we, tp, actor_names,
                                                           explain::TreeTarget::WeProbability);
      out["trees"][agent] = {{"critic", critic_tree},
                             {"actor", actor_tree},
                             {"critic_r2", critic_tree.r_squared(m.critic_inputs, cv)},
                             {"actor_r2", actor_tree.r_squared(m.local[a], we)}};
    }
  }

  // Per-decision attributions: exact for actors, sampled for critics.
  std::vector<InferenceMlp> fast_critics;
  for (const auto& nn : nets) fast_critics.emplace_back(nn.critic);
  nlohmann::json decisions = nlohmann::json::array();
  for (Eigen::Index i = 0; i < d; ++i) {
    nlohmann::json per_agent = nlohmann::json::object();
    const std::vector<double> ci = row_of(m.critic_inputs, i);
    for (std::size_t a = 0; a < n; ++a) {
      const std::string& agent = record.agents[a];
      const AgentNets& nn = nets[a];
      const explain::BatchModel actor_model = [&](const Eigen::MatrixXd& x) -> Eigen::VectorXd {
        return actor_probs_batch(nn.actor, x).col(1);
      };
      const explain::BatchModel critic_model = [&](const Eigen::MatrixXd& x) -> Eigen::VectorXd {
        return fast_critics[a].forward(x).col(0);
      };
      const std::vector<double> li = row_of(m.local[a], i);
      const auto actor_bg = out["background"]["actor"][agent].get<std::vector<double>>();
      explain::ShapAttribution actor = explain::exact_shapley(actor_model, li, actor_bg);
      actor.target = "actor " + agent;
      explain::ShapAttribution critic =
          explain::sampled_shapley(critic_model, ci, critic_bg, cfg.critic_shap_samples,
                                   mix(cfg.seed, static_cast<std::uint64_t>(record.index),
                                       static_cast<std::uint64_t>(m.steps[i]), a));
      critic.target = "critic " + agent;
      // Names live once under "features"; keep per-decision payloads compact.
      per_agent[agent] = {{"actor", {{"values", actor.values}, {"baseline", actor.baseline}, {"output", actor.output}}},
                          {"critic", {{"values", critic.values}, {"baseline", critic.baseline}, {"output", critic.output}}}};
    }
    decisions.push_back({{"step", m.steps[i]}, {"agents", std::move(per_agent)}});
  }
  out["decisions"] = std::move(decisions);
  return out;
}

void analyze_run(const RunStore& store, const RoadNetwork& net, const SimConfig& sim, const AnalysisConfig& cfg,
                 const AnalysisProgress& progress) {
  for (int index : store.episode_indices()) {
    const EpisodeRecord record = store.load_episode(index);
    if (record.decisions.empty()) continue;
    const std::vector<AgentNets> nets = Maddpg::load(store.checkpoint_path(index));
    const nlohmann::json j = analyze_episode(record, nets, net, sim, cfg);
    write_file_atomic(store.analysis_path(index), j.dump() + "\n");
    if (progress) progress(index);
  }
}

int decision_index(const nlohmann::json& analysis, int step) {
  const auto& steps = analysis.at("steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].get<int>() == step) return static_cast<int>(i);
  }
  return -1;
}

explain::InfluenceMatrix compute_influence(const nlohmann::json& analysis, int step, double threshold_fraction) {
  const int i = decision_index(analysis, step);
  if (i < 0) throw std::out_of_range("step " + std::to_string(step) + " is not a decision boundary");
  const auto agents = analysis.at("agents").get<std::vector<std::string>>();
  const auto owners = analysis.at("owners").get<std::vector<std::size_t>>();
  std::vector<std::vector<double>> values;
  const auto& per_agent = analysis.at("decisions").at(static_cast<std::size_t>(i)).at("agents");
  for (const auto& agent : agents) values.push_back(per_agent.at(agent).at("critic").at("values").get<std::vector<double>>());
  return explain::influence_from_attributions(agents, values, owners, threshold_fraction);
}

explain::InfluenceMatrix compute_influence(const RunStore& store, int episode, int step, double threshold_fraction) {
  const auto path = store.analysis_path(episode);
  if (!std::filesystem::exists(path)) throw std::out_of_range("episode " + std::to_string(episode) + " has no analysis");
  return compute_influence(nlohmann::json::parse(read_file(path)), step, threshold_fraction);
}

}  // namespace gridlens
