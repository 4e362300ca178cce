#pragma once

// Radial feeder topology, road graph, energization and capacity screening.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stormdispatch/core/geometry.hpp"

namespace stormdispatch {

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

/// One flag per branch (damage) or per bus (energized).
using Flags = std::vector<bool>;

struct Bus {
    std::string id;
    double load_kw = 0.0;
    bool critical = false;
    Point location{};
};

struct Branch {
    std::string id;
    int from = -1;
    int to = -1;
    double capacity_kw = 0.0;
    bool repairable = true;
    std::string component_class = "pole";
    int road_node = -1;  // where crews work on this branch
    Point site{};        // asset location, branch midpoint by default
};

struct Switch {
    std::string id;
    int branch = -1;
    bool normally_open = false;
};

struct Depot {
    std::string id;
    int road_node = -1;
};

/// Closed flag per switch, indexed like FeederModel::switches().
using SwitchStates = std::vector<bool>;

class FeederModel {
public:
    FeederModel(std::string name, std::vector<Bus> buses, std::vector<Branch> branches, std::vector<Switch> switches,
                std::vector<Depot> depots, int root);

    const std::string& name() const { return name_; }
    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Branch>& branches() const { return branches_; }
    const std::vector<Switch>& switches() const { return switches_; }
    const std::vector<Depot>& depots() const { return depots_; }
    int root() const { return root_; }
    double total_load_kw() const;

    SwitchStates normal_switch_states() const;
    /// Switch index controlling `branch`, or -1.
    int switch_of(int branch) const { return branch_switch_[static_cast<std::size_t>(branch)]; }
    /// (neighbour bus, branch) pairs, sorted by branch index.
    const std::vector<std::pair<int, int>>& incident(int bus) const {
        return adjacency_[static_cast<std::size_t>(bus)];
    }
    std::optional<int> bus_index(const std::string& id) const;
    std::optional<int> branch_index(const std::string& id) const;

    bool conducts(int branch, const Flags& damaged, const SwitchStates& states) const;

private:
    std::string name_;
    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    std::vector<Switch> switches_;
    std::vector<Depot> depots_;
    int root_ = 0;
    std::vector<int> branch_switch_;
    std::vector<std::vector<std::pair<int, int>>> adjacency_;
    std::map<std::string, int> bus_ids_;
    std::map<std::string, int> branch_ids_;
};

struct RoadNode {
    std::string id;
    Point location{};
};

struct RoadSegment {
    std::string id;
    int a = -1;
    int b = -1;
    double length_km = 0.0;
    bool closed = false;
};

class RoadGraph {
public:
    RoadGraph(std::vector<RoadNode> nodes, std::vector<RoadSegment> segments);

    const std::vector<RoadNode>& nodes() const { return nodes_; }
    const std::vector<RoadSegment>& segments() const { return segments_; }
    std::optional<int> node_index(const std::string& id) const;
    std::optional<int> segment_index(const std::string& id) const;
    const std::vector<std::pair<int, int>>& incident(int node) const {
        return adjacency_[static_cast<std::size_t>(node)];
    }

    /// Copy with the listed segment indices closed (all others open).
    RoadGraph with_closures(const std::vector<int>& closed_segments) const;

    /// Dijkstra over open segments from `from`; kUnreachable where cut off.
    std::vector<double> distances_from(int from) const;

private:
    std::vector<RoadNode> nodes_;
    std::vector<RoadSegment> segments_;
    std::vector<std::vector<std::pair<int, int>>> adjacency_;  // (neighbour, segment)
    std::map<std::string, int> node_ids_;
    std::map<std::string, int> segment_ids_;
};

/// Feeder plus road overlay as shipped in one topology file.
struct FeederBundle {
    FeederModel feeder;
    RoadGraph roads;
};

/// Loads a feeder topology file; the road graph comes from the file named in
/// its "road_graph" key (relative to the feeder file) or an inline "roads" block.
FeederBundle load_feeder(const std::string& path);
RoadGraph load_road_graph(const std::string& path);

/// Buses connected to the root through closed, undamaged branches.
Flags energized_set(const FeederModel& feeder, const Flags& damaged, const SwitchStates& states);

struct Unserved {
    double total_kw = 0.0;
    double critical_kw = 0.0;
};

Unserved unserved_power(const FeederModel& feeder, const Flags& energized);

struct ScreenResult {
    bool ok = true;
    bool radial = true;
    std::vector<int> violating;  // branch indices, ascending
};

/// Radial capacity screen: downstream energized load of every conducting
/// branch must not exceed its capacity, and the energized subgraph must be a tree.
ScreenResult capacity_screen(const FeederModel& feeder, const Flags& energized, const SwitchStates& states,
                             const Flags& damaged);

/// Safe re-energization after a topology change: normal switch states, then
/// each normally-open tie (ascending index) is closed when it picks up a
/// de-energized island and the result still passes capacity_screen.
SwitchStates reenergize(const FeederModel& feeder, const Flags& damaged);

std::optional<double> shortest_open_path(const RoadGraph& roads, int from, int to);

/// ρ·d/v in hours; kUnreachable when d is.
double travel_time(double distance_km, double speed_kmh, double rho);

}  // namespace stormdispatch
