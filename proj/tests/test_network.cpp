#include <doctest.h>

#include <set>

#include "gridlens/network.h"

using namespace gridlens;

TEST_CASE("2x2 grid has four agents and 24 directed links") {
  const auto net = RoadNetwork::build_grid(2, 2);
  CHECK(net.agents() == std::vector<std::string>{"A0", "A1", "B0", "B1"});
  CHECK(net.links().size() == 24);
  CHECK(net.nodes().size() == 12);
  std::set<std::string> ids;
  for (const auto& l : net.links()) ids.insert(l.id);
  CHECK(ids.size() == 24);
  for (const char* id : {"left0A0", "A2A1", "C1B1", "B0A0", "A1A0", "Ab0A0", "B1B2", "B0Bb0"}) {
    CHECK_MESSAGE(net.has_link(id), id);
  }
}

TEST_CASE("link geometry defaults") {
  const auto net = RoadNetwork::build_grid(2, 2);
  for (const auto& l : net.links()) {
    CHECK(l.length_m == 300.0);
    CHECK(l.free_flow_speed == 10.0);
    CHECK(l.lanes == 1);
    CHECK(l.free_flow_time() == doctest::Approx(30.0));
  }
  CHECK(net.link("left0A0").axis == Axis::WE);
  CHECK(net.link("A2A1").axis == Axis::NS);
}

TEST_CASE("incoming links are ordered north, south, west, east") {
  const auto net = RoadNetwork::build_grid(2, 2);
  auto ids = [&](const std::string& a) {
    std::vector<std::string> out;
    for (const Link* l : net.incoming_links(a)) out.push_back(l->id);
    return out;
  };
  CHECK(ids("A0") == std::vector<std::string>{"A1A0", "Ab0A0", "left0A0", "B0A0"});
  CHECK(ids("B1") == std::vector<std::string>{"B2B1", "B0B1", "A1B1", "C1B1"});
  for (const auto& a : net.agents()) {
    const auto in = net.incoming_links(a);
    REQUIRE(in.size() == 4);
    CHECK(net.approach_of(*in[0]) == Approach::North);
    CHECK(net.approach_of(*in[1]) == Approach::South);
    CHECK(net.approach_of(*in[2]) == Approach::West);
    CHECK(net.approach_of(*in[3]) == Approach::East);
  }
}

TEST_CASE("every internal node has in-degree and out-degree 4") {
  for (int rows = 1; rows <= 3; ++rows) {
    for (int cols = 1; cols <= 3; ++cols) {
      const auto net = RoadNetwork::build_grid(rows, cols);
      CHECK(net.agents().size() == static_cast<std::size_t>(rows * cols));
      for (const auto& a : net.agents()) {
        CHECK(net.incoming_links(a).size() == 4);
        CHECK(net.outgoing_links(a).size() == 4);
      }
      for (const auto& l : net.links()) {
        CHECK(net.has_node(l.from));
        CHECK(net.has_node(l.to));
        CHECK((net.node(l.from).role == NodeRole::Internal || net.node(l.to).role == NodeRole::Internal));
      }
    }
  }
}

TEST_CASE("straight successors continue along the axis") {
  const auto net = RoadNetwork::build_grid(2, 2);
  const Link* next = net.straight_successor(net.link("left0A0"));
  REQUIRE(next != nullptr);
  CHECK(next->id == "A0B0");
  next = net.straight_successor(*next);
  REQUIRE(next != nullptr);
  CHECK(next->id == "B0C0");
  CHECK(net.straight_successor(*next) == nullptr);
  next = net.straight_successor(net.link("A2A1"));
  REQUIRE(next != nullptr);
  CHECK(next->id == "A1A0");
}

TEST_CASE("link ids parse back into endpoints") {
  const auto net = RoadNetwork::build_grid(2, 2);
  for (const auto& l : net.links()) {
    const auto parsed = net.parse_link_id(l.id);
    REQUIRE(parsed.has_value());
    CHECK(parsed->first == l.from);
    CHECK(parsed->second == l.to);
  }
  CHECK_FALSE(net.parse_link_id("Z9Q9").has_value());
}

TEST_CASE("degenerate grids are rejected") {
  CHECK_THROWS_AS(RoadNetwork::build_grid(0, 2), std::invalid_argument);
  CHECK_THROWS_AS(RoadNetwork::build_grid(2, 0), std::invalid_argument);
  CHECK_THROWS_AS(RoadNetwork::build_grid(1, 1, {0.0, 10.0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(RoadNetwork::build_grid(1, 1, {300.0, 0.0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(RoadNetwork::build_grid(1, 1, {300.0, 10.0, 0}), std::invalid_argument);
}

TEST_CASE("unknown lookups throw") {
  const auto net = RoadNetwork::build_grid(2, 2);
  CHECK_THROWS(net.link("nope"));
  CHECK_THROWS(net.node("nope"));
  CHECK_THROWS(net.agent_index("left0"));
}

TEST_CASE("network JSON lists nodes, links and agents") {
  const auto net = RoadNetwork::build_grid(2, 2);
  const auto j = net.to_json();
  CHECK(j.at("rows") == 2);
  CHECK(j.at("cols") == 2);
  CHECK(j.at("links").size() == 24);
  CHECK(j.at("nodes").size() == 12);
  CHECK(j.at("agents").size() == 4);
  const auto& l = j.at("links").at(0);
  for (const char* key : {"id", "from", "to", "length", "free_flow_speed", "lanes", "axis"}) CHECK(l.contains(key));
}
