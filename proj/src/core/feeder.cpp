#include "stormdispatch/core/feeder.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <queue>
#include <sstream>

#include "json.hpp"
#include "stormdispatch/core/error.hpp"
#include "stormdispatch/core/json_io.hpp"

namespace stormdispatch {

using nlohmann::json;

FeederModel::FeederModel(std::string name, std::vector<Bus> buses, std::vector<Branch> branches,
                         std::vector<Switch> switches, std::vector<Depot> depots, int root)
    : name_(std::move(name)),
      buses_(std::move(buses)),
      branches_(std::move(branches)),
      switches_(std::move(switches)),
      depots_(std::move(depots)),
      root_(root) {
    const auto nb = buses_.size();
    require(nb > 0, ErrorCode::Validation, "feeder has no buses");
    require(root_ >= 0 && static_cast<std::size_t>(root_) < nb, ErrorCode::Validation, "feeder root out of range");
    for (std::size_t i = 0; i < nb; ++i) {
        require(bus_ids_.emplace(buses_[i].id, static_cast<int>(i)).second, ErrorCode::Validation,
                "duplicate bus id '" + buses_[i].id + "'");
        require(buses_[i].load_kw >= 0.0, ErrorCode::Validation, "negative load on bus '" + buses_[i].id + "'");
    }
    adjacency_.assign(nb, {});
    branch_switch_.assign(branches_.size(), -1);
    for (std::size_t e = 0; e < branches_.size(); ++e) {
        const auto& br = branches_[e];
        require(branch_ids_.emplace(br.id, static_cast<int>(e)).second, ErrorCode::Validation,
                "duplicate branch id '" + br.id + "'");
        require(br.from >= 0 && static_cast<std::size_t>(br.from) < nb && br.to >= 0 &&
                    static_cast<std::size_t>(br.to) < nb && br.from != br.to,
                ErrorCode::Validation, "branch '" + br.id + "' has invalid endpoints");
        require(br.capacity_kw > 0.0, ErrorCode::Validation, "branch '" + br.id + "' capacity must be positive");
        adjacency_[static_cast<std::size_t>(br.from)].emplace_back(br.to, static_cast<int>(e));
        adjacency_[static_cast<std::size_t>(br.to)].emplace_back(br.from, static_cast<int>(e));
    }
    for (std::size_t s = 0; s < switches_.size(); ++s) {
        const int b = switches_[s].branch;
        require(b >= 0 && static_cast<std::size_t>(b) < branches_.size(), ErrorCode::Validation,
                "switch '" + switches_[s].id + "' references unknown branch");
        require(branch_switch_[static_cast<std::size_t>(b)] < 0, ErrorCode::Validation,
                "branch '" + branches_[static_cast<std::size_t>(b)].id + "' has two switches");
        branch_switch_[static_cast<std::size_t>(b)] = static_cast<int>(s);
    }

    // Radiality of the intact, normally switched network.
    const Flags intact(branches_.size(), false);
    const auto normal = normal_switch_states();
    std::size_t closed = 0;
    for (std::size_t e = 0; e < branches_.size(); ++e) closed += conducts(static_cast<int>(e), intact, normal) ? 1 : 0;
    const auto energized = energized_set(*this, intact, normal);
    const bool all_reached = std::all_of(energized.begin(), energized.end(), [](bool b) { return b; });
    require(all_reached, ErrorCode::Validation, "feeder '" + name_ + "': not every bus is reachable from the root");
    require(closed == nb - 1, ErrorCode::Validation,
            "feeder '" + name_ + "': closed-switch graph is not radial (loop detected)");
}

double FeederModel::total_load_kw() const {
    double s = 0.0;
    for (const auto& b : buses_) s += b.load_kw;
    return s;
}

SwitchStates FeederModel::normal_switch_states() const {
    SwitchStates st(switches_.size());
    for (std::size_t s = 0; s < switches_.size(); ++s) st[s] = !switches_[s].normally_open;
    return st;
}

std::optional<int> FeederModel::bus_index(const std::string& id) const {
    auto it = bus_ids_.find(id);
    if (it == bus_ids_.end()) return std::nullopt;
    return it->second;
}

std::optional<int> FeederModel::branch_index(const std::string& id) const {
    auto it = branch_ids_.find(id);
    if (it == branch_ids_.end()) return std::nullopt;
    return it->second;
}

bool FeederModel::conducts(int branch, const Flags& damaged, const SwitchStates& states) const {
    const auto b = static_cast<std::size_t>(branch);
    if (b < damaged.size() && damaged[b]) return false;
    const int sw = branch_switch_[b];
    return sw < 0 || states[static_cast<std::size_t>(sw)];
}

RoadGraph::RoadGraph(std::vector<RoadNode> nodes, std::vector<RoadSegment> segments)
    : nodes_(std::move(nodes)), segments_(std::move(segments)) {
    adjacency_.assign(nodes_.size(), {});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        require(node_ids_.emplace(nodes_[i].id, static_cast<int>(i)).second, ErrorCode::Validation,
                "duplicate road node '" + nodes_[i].id + "'");
    for (std::size_t s = 0; s < segments_.size(); ++s) {
        const auto& seg = segments_[s];
        require(segment_ids_.emplace(seg.id, static_cast<int>(s)).second, ErrorCode::Validation,
                "duplicate road segment '" + seg.id + "'");
        require(seg.a >= 0 && static_cast<std::size_t>(seg.a) < nodes_.size() && seg.b >= 0 &&
                    static_cast<std::size_t>(seg.b) < nodes_.size(),
                ErrorCode::Validation, "segment '" + seg.id + "' has invalid endpoints");
        require(seg.length_km > 0.0, ErrorCode::Validation, "segment '" + seg.id + "' length must be positive");
        adjacency_[static_cast<std::size_t>(seg.a)].emplace_back(seg.b, static_cast<int>(s));
        adjacency_[static_cast<std::size_t>(seg.b)].emplace_back(seg.a, static_cast<int>(s));
    }
}

std::optional<int> RoadGraph::node_index(const std::string& id) const {
    auto it = node_ids_.find(id);
    if (it == node_ids_.end()) return std::nullopt;
    return it->second;
}

std::optional<int> RoadGraph::segment_index(const std::string& id) const {
    auto it = segment_ids_.find(id);
    if (it == segment_ids_.end()) return std::nullopt;
    return it->second;
}

RoadGraph RoadGraph::with_closures(const std::vector<int>& closed_segments) const {
    RoadGraph g = *this;
    for (auto& s : g.segments_) s.closed = false;
    for (int s : closed_segments) {
        require(s >= 0 && static_cast<std::size_t>(s) < g.segments_.size(), ErrorCode::Parameter,
                "closure references unknown segment");
        g.segments_[static_cast<std::size_t>(s)].closed = true;
    }
    return g;
}

std::vector<double> RoadGraph::distances_from(int from) const {
    require(from >= 0 && static_cast<std::size_t>(from) < nodes_.size(), ErrorCode::Parameter,
            "unknown road node index");
    std::vector<double> dist(nodes_.size(), kUnreachable);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    dist[static_cast<std::size_t>(from)] = 0.0;
    open.emplace(0.0, from);
    while (!open.empty()) {
        auto [d, u] = open.top();
        open.pop();
        if (d > dist[static_cast<std::size_t>(u)]) continue;
        for (auto [v, s] : adjacency_[static_cast<std::size_t>(u)]) {
            const auto& seg = segments_[static_cast<std::size_t>(s)];
            if (seg.closed) continue;
            const double nd = d + seg.length_km;
            if (nd < dist[static_cast<std::size_t>(v)]) {
                dist[static_cast<std::size_t>(v)] = nd;
                open.emplace(nd, v);
            }
        }
    }
    return dist;
}

std::optional<double> shortest_open_path(const RoadGraph& roads, int from, int to) {
    require(to >= 0 && static_cast<std::size_t>(to) < roads.nodes().size(), ErrorCode::Parameter,
            "unknown road node index");
    const double d = roads.distances_from(from)[static_cast<std::size_t>(to)];
    if (d == kUnreachable) return std::nullopt;
    return d;
}

double travel_time(double distance_km, double speed_kmh, double rho) {
    require(speed_kmh > 0.0, ErrorCode::Parameter, "crew speed must be positive");
    if (distance_km == kUnreachable) return kUnreachable;
    return rho * distance_km / speed_kmh;
}

Flags energized_set(const FeederModel& feeder, const Flags& damaged, const SwitchStates& states) {
    Flags on(feeder.buses().size(), false);
    std::vector<int> stack{feeder.root()};
    on[static_cast<std::size_t>(feeder.root())] = true;
    while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (auto [v, e] : feeder.incident(u)) {
            if (on[static_cast<std::size_t>(v)] || !feeder.conducts(e, damaged, states)) continue;
            on[static_cast<std::size_t>(v)] = true;
            stack.push_back(v);
        }
    }
    return on;
}

Unserved unserved_power(const FeederModel& feeder, const Flags& energized) {
    Unserved u;
    for (std::size_t i = 0; i < feeder.buses().size(); ++i) {
        if (energized[i]) continue;
        u.total_kw += feeder.buses()[i].load_kw;
        if (feeder.buses()[i].critical) u.critical_kw += feeder.buses()[i].load_kw;
    }
    return u;
}

ScreenResult capacity_screen(const FeederModel& feeder, const Flags& energized, const SwitchStates& states,
                             const Flags& damaged) {
    ScreenResult res;
    const auto nb = feeder.buses().size();
    // BFS tree from the root over conducting branches between energized buses.
    std::vector<int> parent_branch(nb, -1);
    std::vector<int> order;
    std::vector<bool> seen(nb, false);
    std::size_t conducting_edges = 0;
    for (std::size_t e = 0; e < feeder.branches().size(); ++e) {
        const auto& br = feeder.branches()[e];
        if (feeder.conducts(static_cast<int>(e), damaged, states) && energized[static_cast<std::size_t>(br.from)] &&
            energized[static_cast<std::size_t>(br.to)])
            ++conducting_edges;
    }
    std::queue<int> q;
    q.push(feeder.root());
    seen[static_cast<std::size_t>(feeder.root())] = true;
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        order.push_back(u);
        for (auto [v, e] : feeder.incident(u)) {
            if (seen[static_cast<std::size_t>(v)] || !energized[static_cast<std::size_t>(v)] ||
                !feeder.conducts(e, damaged, states))
                continue;
            seen[static_cast<std::size_t>(v)] = true;
            parent_branch[static_cast<std::size_t>(v)] = e;
            q.push(v);
        }
    }
    res.radial = conducting_edges + 1 == order.size();
    std::vector<double> downstream(nb, 0.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int u = *it;
        downstream[static_cast<std::size_t>(u)] += feeder.buses()[static_cast<std::size_t>(u)].load_kw;
        const int e = parent_branch[static_cast<std::size_t>(u)];
        if (e < 0) continue;
        const auto& br = feeder.branches()[static_cast<std::size_t>(e)];
        const int up = br.from == u ? br.to : br.from;
        downstream[static_cast<std::size_t>(up)] += downstream[static_cast<std::size_t>(u)];
        if (downstream[static_cast<std::size_t>(u)] > br.capacity_kw) res.violating.push_back(e);
    }
    std::sort(res.violating.begin(), res.violating.end());
    res.ok = res.radial && res.violating.empty();
    return res;
}

SwitchStates reenergize(const FeederModel& feeder, const Flags& damaged) {
    SwitchStates states = feeder.normal_switch_states();
    auto energized = energized_set(feeder, damaged, states);
    // A pickup can expose another tie to a live bus, so sweep to a fixpoint.
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t s = 0; s < feeder.switches().size(); ++s) {
            const auto& sw = feeder.switches()[s];
            if (!sw.normally_open || states[s]) continue;
            if (static_cast<std::size_t>(sw.branch) < damaged.size() && damaged[static_cast<std::size_t>(sw.branch)])
                continue;
            const auto& br = feeder.branches()[static_cast<std::size_t>(sw.branch)];
            const bool a = energized[static_cast<std::size_t>(br.from)];
            const bool b = energized[static_cast<std::size_t>(br.to)];
            if (a == b) continue;  // both live would form a loop; both dead picks up nothing
            auto trial = states;
            trial[s] = true;
            auto trial_on = energized_set(feeder, damaged, trial);
            if (capacity_screen(feeder, trial_on, trial, damaged).ok) {
                states = std::move(trial);
                energized = std::move(trial_on);
                changed = true;
            }
        }
    }
    return states;
}

namespace {

Point read_point(const json& j) { return {j.at("x_km").get<double>(), j.at("y_km").get<double>()}; }

void check_format(const json& doc, const std::string& expected, const std::string& path) {
    require(doc.is_object(), ErrorCode::Parse, path + ": top level must be an object");
    require(doc.value("format", "") == expected, ErrorCode::Parse,
            path + ": expected format '" + expected + "'");
    require(doc.value("version", 0) == 1, ErrorCode::Parse, path + ": unsupported version");
}

RoadGraph roads_from_json(const json& doc, const std::string& path) {
    std::vector<RoadNode> nodes;
    std::map<std::string, int> ids;
    for (const auto& n : doc.at("nodes")) {
        nodes.push_back({n.at("id").get<std::string>(), read_point(n)});
        ids.emplace(nodes.back().id, static_cast<int>(nodes.size() - 1));
    }
    std::vector<RoadSegment> segs;
    for (const auto& s : doc.at("segments")) {
        RoadSegment seg;
        seg.id = s.at("id").get<std::string>();
        const auto a = s.at("a").get<std::string>();
        const auto b = s.at("b").get<std::string>();
        require(ids.count(a) && ids.count(b), ErrorCode::Validation,
                path + ": segment '" + seg.id + "' references unknown node");
        seg.a = ids[a];
        seg.b = ids[b];
        seg.length_km = s.contains("length_km")
                            ? s.at("length_km").get<double>()
                            : distance_km(nodes[static_cast<std::size_t>(seg.a)].location,
                                          nodes[static_cast<std::size_t>(seg.b)].location);
        segs.push_back(seg);
    }
    return RoadGraph(std::move(nodes), std::move(segs));
}

}  // namespace

RoadGraph load_road_graph(const std::string& path) {
    const json doc = read_json_file(path);
    check_format(doc, "stormdispatch-roads", path);
    try {
        return roads_from_json(doc, path);
    } catch (const json::exception& e) {
        fail(ErrorCode::Parse, path + ": " + e.what());
    }
}

FeederBundle load_feeder(const std::string& path) {
    const json doc = read_json_file(path);
    check_format(doc, "stormdispatch-feeder", path);
    try {
        RoadGraph roads = [&] {
            if (doc.contains("roads")) return roads_from_json(doc.at("roads"), path);
            const auto rel = doc.at("road_graph").get<std::string>();
            const auto full = (std::filesystem::path(path).parent_path() / rel).string();
            return load_road_graph(full);
        }();

        std::vector<Bus> buses;
        std::map<std::string, int> bus_ids;
        for (const auto& b : doc.at("buses")) {
            Bus bus;
            bus.id = b.at("id").get<std::string>();
            bus.load_kw = b.value("load_kw", 0.0);
            bus.critical = b.value("critical", false);
            bus.location = read_point(b);
            bus_ids.emplace(bus.id, static_cast<int>(buses.size()));
            buses.push_back(std::move(bus));
        }
        auto bus_ref = [&](const std::string& id, const std::string& ctx) {
            auto it = bus_ids.find(id);
            require(it != bus_ids.end(), ErrorCode::Validation, path + ": " + ctx + " references unknown bus '" + id + "'");
            return it->second;
        };
        auto road_ref = [&](const std::string& id, const std::string& ctx) {
            auto idx = roads.node_index(id);
            require(idx.has_value(), ErrorCode::Validation,
                    path + ": " + ctx + " references unknown road node '" + id + "'");
            return *idx;
        };

        std::vector<Branch> branches;
        std::map<std::string, int> branch_ids;
        for (const auto& j : doc.at("branches")) {
            Branch br;
            br.id = j.at("id").get<std::string>();
            const std::string ctx = "branch '" + br.id + "'";
            br.from = bus_ref(j.at("from").get<std::string>(), ctx);
            br.to = bus_ref(j.at("to").get<std::string>(), ctx);
            br.capacity_kw = j.at("capacity_kw").get<double>();
            br.repairable = j.value("repairable", true);
            br.component_class = j.value("class", std::string("pole"));
            br.site = j.contains("site") ? read_point(j.at("site"))
                                         : midpoint(buses[static_cast<std::size_t>(br.from)].location,
                                                    buses[static_cast<std::size_t>(br.to)].location);
            if (j.contains("road_node")) br.road_node = road_ref(j.at("road_node").get<std::string>(), ctx);
            require(!br.repairable || br.road_node >= 0, ErrorCode::Validation,
                    path + ": repairable " + ctx + " needs a road_node");
            branch_ids.emplace(br.id, static_cast<int>(branches.size()));
            branches.push_back(std::move(br));
        }
        std::vector<Switch> switches;
        for (const auto& j : doc.value("switches", json::array())) {
            Switch sw;
            sw.id = j.at("id").get<std::string>();
            const auto b = j.at("branch").get<std::string>();
            require(branch_ids.count(b), ErrorCode::Validation,
                    path + ": switch '" + sw.id + "' references unknown branch '" + b + "'");
            sw.branch = branch_ids[b];
            sw.normally_open = j.value("normally_open", false);
            switches.push_back(std::move(sw));
        }
        std::vector<Depot> depots;
        for (const auto& j : doc.at("depots")) {
            Depot d;
            d.id = j.at("id").get<std::string>();
            d.road_node = road_ref(j.at("road_node").get<std::string>(), "depot '" + d.id + "'");
            depots.push_back(std::move(d));
        }
        const int root = bus_ref(doc.at("root").get<std::string>(), "root");
        FeederModel feeder(doc.value("name", std::string("feeder")), std::move(buses), std::move(branches),
                           std::move(switches), std::move(depots), root);
        return FeederBundle{std::move(feeder), std::move(roads)};
    } catch (const json::exception& e) {
        fail(ErrorCode::Parse, path + ": " + e.what());
    }
}

}  // namespace stormdispatch
