#include "gridlens/network.h"

#include <map>
#include <stdexcept>

namespace gridlens {

std::string column_letter(int col) {
  if (col < 0 || col >= 26) throw std::invalid_argument("column index out of range: " + std::to_string(col));
  return std::string(1, static_cast<char>('A' + col));
}

const char* to_string(Axis axis) { return axis == Axis::WE ? "WE" : "NS"; }
const char* to_string(NodeRole role) { return role == NodeRole::Internal ? "internal" : "boundary"; }

RoadNetwork RoadNetwork::build_grid(int rows, int cols, const LinkParams& defaults) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("grid dimensions must be at least 1x1");
  // The east boundary borrows the next column letter.
  if (cols > 25) throw std::invalid_argument("grid supports at most 25 columns");
  if (defaults.length_m <= 0.0) throw std::invalid_argument("link length must be positive");
  if (defaults.free_flow_speed <= 0.0) throw std::invalid_argument("free-flow speed must be positive");
  if (defaults.lanes < 1) throw std::invalid_argument("lane count must be at least 1");

  RoadNetwork net;
  net.rows_ = rows;
  net.cols_ = cols;

  std::map<std::pair<int, int>, std::string> at;
  auto add_node = [&](std::string label, NodeRole role, int x, int y) {
    net.node_index_.emplace(label, net.nodes_.size());
    at[{x, y}] = label;
    net.nodes_.push_back(Node{std::move(label), role, x, y});
  };

  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      std::string label = column_letter(c) + std::to_string(r);
      net.agents_.push_back(label);
      add_node(label, NodeRole::Internal, c, r);
    }
  }
  for (int r = 0; r < rows; ++r) add_node("left" + std::to_string(r), NodeRole::Boundary, -1, r);
  for (int r = 0; r < rows; ++r) add_node(column_letter(cols) + std::to_string(r), NodeRole::Boundary, cols, r);
  for (int c = 0; c < cols; ++c) add_node(column_letter(c) + std::to_string(rows), NodeRole::Boundary, c, rows);
  for (int c = 0; c < cols; ++c) add_node(column_letter(c) + "b0", NodeRole::Boundary, c, -1);

  static constexpr int kDx[4] = {0, 0, -1, 1};
  static constexpr int kDy[4] = {1, -1, 0, 0};
  for (const auto& agent : net.agents_) {
    const Node& n = net.nodes_[net.node_index_.at(agent)];
    for (int d = 0; d < 4; ++d) {
      const std::string& other = at.at({n.x + kDx[d], n.y + kDy[d]});
      if (!net.has_link(other + agent)) net.add_link(other, agent, defaults);
      if (!net.has_link(agent + other)) net.add_link(agent, other, defaults);
    }
  }
  return net;
}

void RoadNetwork::add_link(const std::string& from, const std::string& to, const LinkParams& p) {
  const Node& a = node(from);
  const Node& b = node(to);
  Link link;
  link.id = from + to;
  link.from = from;
  link.to = to;
  link.length_m = p.length_m;
  link.free_flow_speed = p.free_flow_speed;
  link.lanes = p.lanes;
  link.axis = a.y == b.y ? Axis::WE : Axis::NS;
  link_index_.emplace(link.id, links_.size());
  links_.push_back(std::move(link));
}

bool RoadNetwork::has_node(const std::string& label) const { return node_index_.count(label) > 0; }

const Node& RoadNetwork::node(const std::string& label) const {
  auto it = node_index_.find(label);
  if (it == node_index_.end()) throw std::out_of_range("unknown node: " + label);
  return nodes_[it->second];
}

bool RoadNetwork::has_link(const std::string& id) const { return link_index_.count(id) > 0; }

const Link& RoadNetwork::link(const std::string& id) const { return links_[link_index(id)]; }

std::size_t RoadNetwork::link_index(const std::string& id) const {
  auto it = link_index_.find(id);
  if (it == link_index_.end()) throw std::out_of_range("unknown link: " + id);
  return it->second;
}

std::size_t RoadNetwork::agent_index(const std::string& label) const {
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    if (agents_[i] == label) return i;
  }
  throw std::out_of_range("unknown agent: " + label);
}

Approach RoadNetwork::approach_of(const Link& link) const {
  const Node& a = node(link.from);
  const Node& b = node(link.to);
  if (a.y > b.y) return Approach::North;
  if (a.y < b.y) return Approach::South;
  if (a.x < b.x) return Approach::West;
  return Approach::East;
}

std::vector<const Link*> RoadNetwork::incoming_links(const std::string& label) const {
  const Node& n = node(label);
  std::vector<const Link*> out;
  if (n.role == NodeRole::Boundary) {
    for (const auto& l : links_) {
      if (l.to == label) out.push_back(&l);
    }
    return out;
  }
  out.assign(4, nullptr);
  for (const auto& l : links_) {
    if (l.to == label) out[static_cast<int>(approach_of(l))] = &l;
  }
  return out;
}

std::vector<const Link*> RoadNetwork::outgoing_links(const std::string& label) const {
  node(label);
  std::vector<const Link*> out;
  for (const auto& l : links_) {
    if (l.from == label) out.push_back(&l);
  }
  return out;
}

const Link* RoadNetwork::straight_successor(const Link& link) const {
  const Node& a = node(link.from);
  const Node& b = node(link.to);
  if (b.role == NodeRole::Boundary) return nullptr;
  const int nx = 2 * b.x - a.x;
  const int ny = 2 * b.y - a.y;
  for (const auto& l : links_) {
    if (l.from != b.label) continue;
    const Node& c = node(l.to);
    if (c.x == nx && c.y == ny) return &l;
  }
  return nullptr;
}

std::optional<std::pair<std::string, std::string>> RoadNetwork::parse_link_id(const std::string& id) const {
  for (std::size_t cut = 1; cut < id.size(); ++cut) {
    std::string from = id.substr(0, cut);
    std::string to = id.substr(cut);
    if (has_node(from) && has_node(to) && has_link(id)) return std::make_pair(from, to);
  }
  return std::nullopt;
}

nlohmann::json RoadNetwork::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : nodes_) {
    nodes.push_back({{"label", n.label}, {"role", to_string(n.role)}, {"x", n.x}, {"y", n.y}});
  }
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : links_) {
    links.push_back({{"id", l.id},
                     {"from", l.from},
                     {"to", l.to},
                     {"length", l.length_m},
                     {"free_flow_speed", l.free_flow_speed},
                     {"lanes", l.lanes},
                     {"axis", to_string(l.axis)}});
  }
  return {{"rows", rows_}, {"cols", cols_}, {"nodes", nodes}, {"links", links}, {"agents", agents_}};
}

}  // namespace gridlens
