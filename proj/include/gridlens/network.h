#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace gridlens {

enum class NodeRole { Internal, Boundary };
enum class Axis { WE, NS };

// Direction a link arrives from, seen from its downstream node.
enum class Approach { North = 0, South = 1, West = 2, East = 3 };

struct Node {
  std::string label;
  NodeRole role = NodeRole::Internal;
  int x = 0;  // column, grows eastward
  int y = 0;  // row, grows northward
};

struct LinkParams {
  double length_m = 300.0;
  double free_flow_speed = 10.0;
  int lanes = 1;

  bool operator==(const LinkParams&) const = default;
};

struct Link {
  std::string id;
  std::string from;
  std::string to;
  double length_m = 300.0;
  double free_flow_speed = 10.0;
  int lanes = 1;
  Axis axis = Axis::WE;

  double free_flow_time() const { return length_m / free_flow_speed; }
};

/// Rectangular signalised grid. Internal nodes are named by column letter
/// and row digit ("A0", "B1"); boundary nodes follow the west "left{r}",
/// east "{next letter}{r}", north "{col}{rows}", south "{col}b0" scheme.
/// Immutable once built.
class RoadNetwork {
 public:
  static RoadNetwork build_grid(int rows, int cols, const LinkParams& defaults = {});

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<std::string>& agents() const { return agents_; }

  bool has_node(const std::string& label) const;
  const Node& node(const std::string& label) const;
  bool has_link(const std::string& id) const;
  const Link& link(const std::string& id) const;
  std::size_t link_index(const std::string& id) const;
  std::size_t agent_index(const std::string& label) const;

  /// Incoming links ordered N, S, W, E. Boundary nodes return their single link.
  std::vector<const Link*> incoming_links(const std::string& label) const;
  std::vector<const Link*> outgoing_links(const std::string& label) const;

  /// Downstream link continuing straight through `link`'s end node, if any.
  const Link* straight_successor(const Link& link) const;

  /// Splits a link id back into its endpoint labels.
  std::optional<std::pair<std::string, std::string>> parse_link_id(const std::string& id) const;

  /// Approach of `link` relative to its downstream node.
  Approach approach_of(const Link& link) const;

  nlohmann::json to_json() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Node> nodes_;
  std::vector<Link> links_;
  std::vector<std::string> agents_;
  std::unordered_map<std::string, std::size_t> node_index_;
  std::unordered_map<std::string, std::size_t> link_index_;

  void add_link(const std::string& from, const std::string& to, const LinkParams& p);
};

std::string column_letter(int col);
const char* to_string(Axis axis);
const char* to_string(NodeRole role);

}  // namespace gridlens
