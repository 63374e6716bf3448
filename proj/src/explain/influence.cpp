#include "gridlens/explain/influence.h"

#include <cmath>
#include <stdexcept>

namespace gridlens::explain {

void to_json(nlohmann::json& j, const InfluenceMatrix& m) {
  j = {{"agents", m.agents}, {"weights", m.weights}, {"threshold_fraction", m.threshold_fraction}};
}

InfluenceMatrix influence_from_attributions(const std::vector<std::string>& agents,
                                            const std::vector<std::vector<double>>& critic_attributions,
                                            const std::vector<std::size_t>& owners, double threshold_fraction) {
  const std::size_t n = agents.size();
  if (critic_attributions.size() != n) throw std::invalid_argument("one critic attribution per agent is required");
  if (threshold_fraction < 0.0 || threshold_fraction > 1.0) throw std::invalid_argument("threshold must lie in [0, 1]");
  InfluenceMatrix m;
  m.agents = agents;
  m.threshold_fraction = threshold_fraction;
  m.weights.assign(n, std::vector<int>(n, 0));
  for (std::size_t b = 0; b < n; ++b) {
    const auto& values = critic_attributions[b];
    if (values.size() != owners.size()) throw std::invalid_argument("attribution length does not match feature owners");
    double total = 0.0;
    for (double v : values) total += std::abs(v);
    for (std::size_t f = 0; f < values.size(); ++f) {
      const double mag = std::abs(values[f]);
      if (mag > 0.0 && mag >= threshold_fraction * total) {
        if (owners[f] >= n) throw std::invalid_argument("feature owner out of range");
        ++m.weights[owners[f]][b];
      }
    }
  }
  return m;
}

void to_json(nlohmann::json& j, const AgentSectors& s) {
  j = {{"agent", s.agent}, {"N", s.north}, {"S", s.south}, {"W", s.west}, {"E", s.east}};
}

void to_json(nlohmann::json& j, const PolicyOverview& o) {
  nlohmann::json links = nlohmann::json::array();
  for (std::size_t i = 0; i < o.link_ids.size(); ++i) {
    links.push_back({{"link", o.link_ids[i]}, {"mean_vehicles", o.link_mean_counts[i]}});
  }
  j = {{"from", o.from}, {"to", o.to}, {"decisions", o.decisions}, {"sectors", o.sectors}, {"links", links}};
}

PolicyOverview policy_overview(const EpisodeRecord& record, int from, int to) {
  if (from > to) throw std::invalid_argument("empty step range");
  PolicyOverview o;
  o.from = from;
  o.to = to;
  o.link_ids = record.link_ids;
  o.link_mean_counts.assign(record.link_ids.size(), 0.0);
  std::vector<std::array<double, 2>> sums(record.agents.size(), {0.0, 0.0});
  for (const auto& d : record.decisions) {
    if (d.step < from || d.step > to) continue;
    ++o.decisions;
    for (std::size_t a = 0; a < sums.size(); ++a) {
      sums[a][0] += d.probabilities.at(a)[0];
      sums[a][1] += d.probabilities.at(a)[1];
    }
    for (std::size_t l = 0; l < o.link_mean_counts.size() && l < d.link_vehicle_counts.size(); ++l) {
      o.link_mean_counts[l] += d.link_vehicle_counts[l];
    }
  }
  if (o.decisions == 0) throw std::invalid_argument("no decisions in step range");
  for (double& c : o.link_mean_counts) c /= o.decisions;
  for (std::size_t a = 0; a < sums.size(); ++a) {
    const double ns = sums[a][0] / o.decisions;
    const double we = sums[a][1] / o.decisions;
    o.sectors.push_back({record.agents[a], ns, ns, we, we});
  }
  return o;
}

}  // namespace gridlens::explain
