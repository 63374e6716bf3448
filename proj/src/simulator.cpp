#include "gridlens/simulator.h"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gridlens {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double hash_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(a ^ splitmix64(b)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

int link_capacity(const Link& link, const SimConfig& cfg) {
  return std::max(1, static_cast<int>(std::floor(link.length_m / cfg.vehicle_spacing_m))) * link.lanes;
}

bool serves(Phase phase, Axis axis) {
  return (phase == Phase::NsGreen && axis == Axis::NS) || (phase == Phase::WeGreen && axis == Axis::WE);
}

}  // namespace

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::NsGreen: return "NS_GREEN";
    case Phase::WeGreen: return "WE_GREEN";
    case Phase::AllRed: return "ALL_RED";
  }
  return "?";
}

std::vector<StageFlow> SimConfig::default_stages() {
  return {{400, 1800.0, 0.0}, {400, 0.0, 1800.0}, {400, 1800.0, 600.0}, {400, 600.0, 1800.0}};
}

void SimConfig::validate() const {
  if (episode_steps <= 0) throw std::invalid_argument("episode_steps must be positive");
  if (decision_interval <= 0) throw std::invalid_argument("decision_interval must be positive");
  if (all_red < 0 || decision_interval <= all_red) {
    throw std::invalid_argument("decision_interval must exceed all_red");
  }
  if (stages.empty()) throw std::invalid_argument("at least one stage is required");
  int total = 0;
  for (const auto& s : stages) {
    if (s.duration <= 0) throw std::invalid_argument("stage duration must be positive");
    if (s.flow_we < 0.0 || s.flow_ns < 0.0) throw std::invalid_argument("stage flows must be non-negative");
    total += s.duration;
  }
  if (total != episode_steps) throw std::invalid_argument("stage durations must sum to episode_steps");
  if (saturation_headway <= 0.0) throw std::invalid_argument("saturation_headway must be positive");
  if (omega_queue < 0.0 || omega_phase < 0.0) throw std::invalid_argument("reward weights must be non-negative");
  if (vehicle_spacing_m <= 0.0) throw std::invalid_argument("vehicle_spacing_m must be positive");
}

int SimConfig::stage_at(int step) const {
  int start = 0;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    if (step < start + stages[k].duration) return static_cast<int>(k);
    start += stages[k].duration;
  }
  return static_cast<int>(stages.size()) - 1;
}

void to_json(nlohmann::json& j, const SimConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) {
    stages.push_back({{"duration", s.duration}, {"flow_we", s.flow_we}, {"flow_ns", s.flow_ns}});
  }
  j = {{"episode_steps", c.episode_steps},
       {"decision_interval", c.decision_interval},
       {"all_red", c.all_red},
       {"stages", stages},
       {"saturation_headway", c.saturation_headway},
       {"queue_speed_threshold", c.queue_speed_threshold},
       {"omega_queue", c.omega_queue},
       {"omega_phase", c.omega_phase},
       {"vehicle_spacing_m", c.vehicle_spacing_m},
       {"flow_split", c.flow_split == FlowSplit::DirectionTotal ? "direction_total" : "per_approach"},
       {"arrivals", c.arrivals == ArrivalProcess::Uniform ? "uniform" : "poisson"},
       {"bidirectional", c.bidirectional},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SimConfig& c) {
  c = SimConfig{};
  c.episode_steps = j.value("episode_steps", c.episode_steps);
  c.decision_interval = j.value("decision_interval", c.decision_interval);
  c.all_red = j.value("all_red", c.all_red);
  if (j.contains("stages")) {
    c.stages.clear();
    for (const auto& s : j.at("stages")) {
      c.stages.push_back({s.at("duration").get<int>(), s.at("flow_we").get<double>(), s.at("flow_ns").get<double>()});
    }
  }
  c.saturation_headway = j.value("saturation_headway", c.saturation_headway);
  c.queue_speed_threshold = j.value("queue_speed_threshold", c.queue_speed_threshold);
  c.omega_queue = j.value("omega_queue", c.omega_queue);
  c.omega_phase = j.value("omega_phase", c.omega_phase);
  c.vehicle_spacing_m = j.value("vehicle_spacing_m", c.vehicle_spacing_m);
  const std::string split = j.value("flow_split", std::string("direction_total"));
  if (split == "direction_total") {
    c.flow_split = FlowSplit::DirectionTotal;
  } else if (split == "per_approach") {
    c.flow_split = FlowSplit::PerApproach;
  } else {
    throw std::invalid_argument("unknown flow_split: " + split);
  }
  const std::string arrivals = j.value("arrivals", std::string("uniform"));
  if (arrivals == "uniform") {
    c.arrivals = ArrivalProcess::Uniform;
  } else if (arrivals == "poisson") {
    c.arrivals = ArrivalProcess::Poisson;
  } else {
    throw std::invalid_argument("unknown arrivals: " + arrivals);
  }
  c.bidirectional = j.value("bidirectional", c.bidirectional);
  c.seed = j.value("seed", c.seed);
}

SimState SimState::initial(const RoadNetwork& net) {
  SimState s;
  s.links.resize(net.links().size());
  s.backlog.resize(net.links().size());
  s.signals.resize(net.agents().size());
  return s;
}

int SimState::in_network() const {
  int n = 0;
  for (const auto& l : links) n += static_cast<int>(l.size());
  return n;
}

int SimState::queued_total() const {
  int n = 0;
  for (const auto& l : links) n += static_cast<int>(l.queued.size());
  return n;
}

int SimState::agent_queue(const RoadNetwork& net, std::size_t agent) const {
  int q = 0;
  for (const Link* l : net.incoming_links(net.agents().at(agent))) {
    q += static_cast<int>(links[net.link_index(l->id)].queued.size());
  }
  return q;
}

nlohmann::json to_json(const ReplayFrame& frame, const RoadNetwork& net) {
  nlohmann::json signals = nlohmann::json::object();
  for (std::size_t i = 0; i < frame.signals.size(); ++i) signals[net.agents()[i]] = to_string(frame.signals[i]);
  nlohmann::json vehicles = nlohmann::json::array();
  for (const auto& v : frame.vehicles) {
    vehicles.push_back({{"id", v.id}, {"link", net.links()[v.link].id}, {"offset_m", v.offset_m}});
  }
  return {{"step", frame.step}, {"signals", signals}, {"vehicles", vehicles}};
}

double compute_reward(double queue, bool switched, const SimConfig& cfg) {
  return -(cfg.omega_queue * queue + cfg.omega_phase * (switched ? 1.0 : 0.0));
}

std::vector<std::size_t> entry_links(const RoadNetwork& net, Axis axis, bool bidirectional) {
  std::vector<std::size_t> out;
  const int rows = net.rows();
  const int cols = net.cols();
  if (axis == Axis::WE) {
    for (int r = 0; r < rows; ++r) {
      out.push_back(net.link_index("left" + std::to_string(r) + "A" + std::to_string(r)));
    }
    if (bidirectional) {
      for (int r = 0; r < rows; ++r) {
        out.push_back(net.link_index(column_letter(cols) + std::to_string(r) + column_letter(cols - 1) + std::to_string(r)));
      }
    }
  } else {
    for (int c = 0; c < cols; ++c) {
      const std::string col = column_letter(c);
      out.push_back(net.link_index(col + std::to_string(rows) + col + std::to_string(rows - 1)));
    }
    if (bidirectional) {
      for (int c = 0; c < cols; ++c) {
        const std::string col = column_letter(c);
        out.push_back(net.link_index(col + "b0" + col + "0"));
      }
    }
  }
  return out;
}

std::vector<std::size_t> straight_route(const RoadNetwork& net, std::size_t entry_link) {
  std::vector<std::size_t> route{entry_link};
  const Link* cur = &net.links().at(entry_link);
  while (const Link* next = net.straight_successor(*cur)) {
    route.push_back(net.link_index(next->id));
    cur = next;
  }
  return route;
}

std::vector<Vehicle> spawn_arrivals(int step, const SimConfig& cfg, const RoadNetwork& net, int first_id) {
  std::vector<Vehicle> out;
  if (step < 0 || step >= cfg.episode_steps) return out;
  const int stage = cfg.stage_at(step);
  int stage_start = 0;
  for (int k = 0; k < stage; ++k) stage_start += cfg.stages[k].duration;
  const StageFlow& flow = cfg.stages[stage];

  for (Axis axis : {Axis::WE, Axis::NS}) {
    const double demand = axis == Axis::WE ? flow.flow_we : flow.flow_ns;
    if (demand <= 0.0) continue;
    const auto entries = entry_links(net, axis, cfg.bidirectional);
    const double per_approach =
        cfg.flow_split == FlowSplit::DirectionTotal ? demand / static_cast<double>(entries.size()) : demand;
    for (std::size_t e = 0; e < entries.size(); ++e) {
      bool arrive = false;
      if (cfg.arrivals == ArrivalProcess::Uniform) {
        const int headway = std::max(1, static_cast<int>(std::floor(3600.0 / per_approach)));
        arrive = (step - stage_start) % headway == 0;
      } else {
        arrive = hash_uniform(cfg.seed, static_cast<std::uint64_t>(step), entries[e]) < per_approach / 3600.0;
      }
      if (!arrive) continue;
      Vehicle v;
      v.id = first_id + static_cast<int>(out.size());
      v.route = straight_route(net, entries[e]);
      out.push_back(std::move(v));
    }
  }
  return out;
}

bool apply_action(SimState& state, std::size_t agent, int action, int step, const SimConfig& cfg) {
  if (step % cfg.decision_interval != 0) {
    throw std::invalid_argument("actions are only accepted at decision boundaries (step " + std::to_string(step) + ")");
  }
  if (action != 0 && action != 1) throw std::invalid_argument("action must be 0 or 1");
  SignalState& sig = state.signals.at(agent);
  bool switched = false;
  if (action != sig.green) {
    sig.green = action;
    sig.switch_step = step;
    ++sig.switch_count;
    sig.phase = cfg.all_red > 0 ? Phase::AllRed : static_cast<Phase>(action);
    switched = true;
  }
  sig.last_action = action;
  return switched;
}

int inject_vehicle(SimState& state, std::vector<std::size_t> route) {
  if (route.empty()) throw std::invalid_argument("vehicle route must not be empty");
  Vehicle v;
  v.id = static_cast<int>(state.vehicles.size());
  v.route = std::move(route);
  state.backlog.at(v.route.front()).push_back(v.id);
  state.vehicles.push_back(std::move(v));
  return state.vehicles.back().id;
}

MetricsSample step(SimState& state, const SimConfig& cfg, const RoadNetwork& net) {
  const int t = state.step;
  const auto& links = net.links();
  MetricsSample m;
  m.step = t;

  for (auto& v : spawn_arrivals(t, cfg, net, static_cast<int>(state.vehicles.size()))) {
    inject_vehicle(state, std::move(v.route));
  }

  for (auto& sig : state.signals) {
    if (sig.phase == Phase::AllRed && t >= sig.switch_step + cfg.all_red) sig.phase = static_cast<Phase>(sig.green);
  }

  for (std::size_t li = 0; li < links.size(); ++li) {
    auto& backlog = state.backlog[li];
    auto& ls = state.links[li];
    const int cap = link_capacity(links[li], cfg);
    while (!backlog.empty() && static_cast<int>(ls.size()) < cap) {
      Vehicle& v = state.vehicles[backlog.front()];
      backlog.pop_front();
      v.entry_step = t;
      v.link_enter_step = t;
      ls.running.push_back(v.id);
      ++state.entered;
    }
  }

  for (std::size_t li = 0; li < links.size(); ++li) {
    auto& ls = state.links[li];
    const Link& link = links[li];
    const bool exit_link = net.node(link.to).role == NodeRole::Boundary;
    while (!ls.running.empty()) {
      Vehicle& v = state.vehicles[ls.running.front()];
      if (static_cast<double>(t - v.link_enter_step) < link.free_flow_time()) break;
      ls.running.pop_front();
      if (exit_link) {
        v.exit_step = t;
        ++state.exited;
        ++m.completed;
        m.travel_time_sum += t - v.entry_step;
      } else {
        v.queued_since = t;
        ls.queued.push_back(v.id);
      }
    }
  }

  for (std::size_t li = 0; li < links.size(); ++li) {
    auto& ls = state.links[li];
    if (ls.queued.empty()) continue;
    const Link& link = links[li];
    const Node& junction = net.node(link.to);
    if (junction.role != NodeRole::Internal) continue;
    const SignalState& sig = state.signals[net.agent_index(junction.label)];
    if (!serves(sig.phase, link.axis)) continue;
    if (static_cast<double>(t - ls.last_discharge) < cfg.saturation_headway) continue;
    int moved = 0;
    while (moved < link.lanes && !ls.queued.empty()) {
      Vehicle& v = state.vehicles[ls.queued.front()];
      const std::size_t next = v.route.at(v.link_index + 1);
      if (static_cast<int>(state.links[next].size()) >= link_capacity(links[next], cfg)) break;
      ls.queued.pop_front();
      v.queued_since.reset();
      ++v.link_index;
      v.link_enter_step = t;
      state.links[next].running.push_back(v.id);
      ++moved;
    }
    if (moved > 0) ls.last_discharge = t;
  }

  m.queue.resize(net.agents().size());
  m.reward.resize(net.agents().size());
  for (std::size_t a = 0; a < net.agents().size(); ++a) {
    m.queue[a] = state.agent_queue(net, a);
    const bool switched_now = state.signals[a].switch_step == t;
    m.reward[a] = compute_reward(m.queue[a], switched_now, cfg);
  }
  for (std::size_t li = 0; li < links.size(); ++li) {
    const auto& ls = state.links[li];
    // Point queue: running vehicles move at free-flow speed (no loss), queued ones are stopped.
    const auto stopped = static_cast<double>(ls.queued.size());
    m.speed_loss += stopped;
    if (cfg.queue_speed_threshold > 0.0) m.delay += stopped;
    m.vehicle_count += static_cast<double>(ls.size());
  }
  if (m.completed > 0) m.avg_travel_time = m.travel_time_sum / m.completed;

  state.delay += m.delay;
  state.speed_loss_sum += m.speed_loss;
  state.vehicle_seconds += m.vehicle_count;
  state.travel_time_sum += m.travel_time_sum;
  ++state.step;
  return m;
}

ReplayFrame make_replay_frame(const SimState& state, const RoadNetwork& net, const SimConfig& cfg) {
  ReplayFrame f;
  f.step = state.step - 1;
  for (const auto& s : state.signals) f.signals.push_back(s.phase);
  for (std::size_t li = 0; li < state.links.size(); ++li) {
    const Link& link = net.links()[li];
    const auto& ls = state.links[li];
    const double queue_tail = link.length_m - cfg.vehicle_spacing_m * static_cast<double>(ls.queued.size());
    for (std::size_t k = 0; k < ls.queued.size(); ++k) {
      f.vehicles.push_back({ls.queued[k], li, link.length_m - cfg.vehicle_spacing_m * static_cast<double>(k)});
    }
    for (int id : ls.running) {
      const Vehicle& v = state.vehicles[id];
      const double progress = static_cast<double>(f.step - v.link_enter_step) * link.free_flow_speed;
      f.vehicles.push_back({id, li, std::max(0.0, std::min(progress, queue_tail))});
    }
  }
  return f;
}

std::vector<LocalObservation> observe(const SimState& state, const RoadNetwork& net) {
  std::vector<LocalObservation> out;
  out.reserve(net.agents().size());
  for (std::size_t a = 0; a < net.agents().size(); ++a) {
    LocalObservation o;
    const auto incoming = net.incoming_links(net.agents()[a]);
    for (std::size_t k = 0; k < 4; ++k) {
      o.queues[k] = static_cast<double>(state.links[net.link_index(incoming[k]->id)].queued.size());
    }
    o.phase = state.signals[a].green;
    o.last_action = state.signals[a].last_action;
    out.push_back(o);
  }
  return out;
}

std::vector<int> link_vehicle_counts(const SimState& state) {
  std::vector<int> out;
  out.reserve(state.links.size());
  for (const auto& l : state.links) out.push_back(static_cast<int>(l.size()));
  return out;
}

EpisodeSim::EpisodeSim(const RoadNetwork& net, SimConfig cfg)
    : net_(net), cfg_(std::move(cfg)), state_(SimState::initial(net)) {
  cfg_.validate();
}

DecisionResult EpisodeSim::advance(std::span<const int> actions, const FrameSink& sink) {
  if (finished()) throw std::logic_error("episode already finished");
  if (actions.size() != net_.agents().size()) throw std::invalid_argument("one action per agent is required");
  DecisionResult r;
  const int t0 = state_.step;
  for (std::size_t a = 0; a < actions.size(); ++a) {
    r.switched.push_back(apply_action(state_, a, actions[a], t0, cfg_) ? 1 : 0);
  }
  const int end = std::min(t0 + cfg_.decision_interval, cfg_.episode_steps);
  while (state_.step < end) {
    MetricsSample m = gridlens::step(state_, cfg_, net_);
    r.interval.queued_vehicle_seconds += m.delay;
    r.interval.speed_loss_sum += m.speed_loss;
    r.interval.vehicle_seconds += m.vehicle_count;
    r.interval.completed_trips += m.completed;
    r.interval.travel_time_sum += m.travel_time_sum;
    if (sink) sink(make_replay_frame(state_, net_, cfg_));
  }
  for (std::size_t a = 0; a < actions.size(); ++a) {
    const double q = state_.agent_queue(net_, a);
    r.queues_after.push_back(q);
    r.rewards.push_back(compute_reward(q, r.switched[a] != 0, cfg_));
  }
  return r;
}

EpisodeRecord run_episode(const Policy& policy, const SimConfig& cfg, const RoadNetwork& net, const FrameSink& sink) {
  EpisodeSim sim(net, cfg);
  EpisodeRecord rec;
  rec.agents = net.agents();
  for (const auto& l : net.links()) rec.link_ids.push_back(l.id);
  const std::size_t n = net.agents().size();
  while (!sim.finished()) {
    ObservationRecord d;
    d.step = sim.current_step();
    d.observations = sim.observe();
    d.link_vehicle_counts = link_vehicle_counts(sim.state());
    PolicyOutput out;
    try {
      out = policy(d.step, d.observations);
      if (out.actions.size() != n) throw std::runtime_error("policy returned wrong number of actions");
    } catch (const std::exception& e) {
      rec.valid = false;
      rec.error = e.what();
      break;
    }
    d.actions = out.actions;
    if (out.probabilities.size() == n) {
      d.probabilities = out.probabilities;
    } else {
      for (int a : out.actions) d.probabilities.push_back({a == 0 ? 1.0 : 0.0, a == 1 ? 1.0 : 0.0});
    }
    d.critic_values = out.critic_values.size() == n ? out.critic_values : std::vector<double>(n, 0.0);
    DecisionResult r = sim.advance(d.actions, sink);
    d.switched = r.switched;
    d.rewards = r.rewards;
    d.queues_after = r.queues_after;
    d.interval = r.interval;
    rec.decisions.push_back(std::move(d));
  }
  rec.aggregates = recompute_aggregates(rec);
  return rec;
}

}  // namespace gridlens
