#pragma once

// Shared fixtures for the unit tests.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "stormdispatch/core/dispatch.hpp"
#include "stormdispatch/core/env.hpp"
#include "stormdispatch/core/feeder.hpp"
#include "stormdispatch/core/hazard.hpp"
#include "stormdispatch/core/hazard_io.hpp"

namespace sdtest {

using namespace stormdispatch;

inline const std::string kData = SD_DATA_DIR;

struct World {
    std::shared_ptr<const FeederModel> feeder;
    std::shared_ptr<const RoadGraph> roads;
    hazard::ScenarioConfig config;
};

inline World bundled(const std::string& hazard_file = "hazard.ieee13.json") {
    World w;
    w.config = hazard::load_scenario_config(kData + "/" + hazard_file);
    auto b = load_feeder(w.config.feeder_path);
    w.feeder = std::make_shared<FeederModel>(b.feeder);
    w.roads = std::make_shared<RoadGraph>(b.roads);
    return w;
}

// Root A feeds B (150 kW) then C (100 kW, critical). The depot sits 20 km
// from both work sites; the sites are 4 km apart.
inline World line_world() {
    std::vector<Bus> buses{{"A", 0.0, false, {0, 0}}, {"B", 150.0, false, {20, 0}}, {"C", 100.0, true, {20, 4}}};
    std::vector<Branch> branches{{"AB", 0, 1, 1000.0, true, "pole", 1, {20, 0}},
                                 {"BC", 1, 2, 1000.0, true, "pole", 2, {20, 4}}};
    World w;
    w.feeder = std::make_shared<FeederModel>("line", buses, branches, std::vector<Switch>{},
                                             std::vector<Depot>{{"D", 0}}, 0);
    w.roads = std::make_shared<RoadGraph>(
        std::vector<RoadNode>{{"depot", {0, 0}}, {"s1", {20, 0}}, {"s2", {20, 4}}},
        std::vector<RoadSegment>{{"d1", 0, 1, 20.0, false}, {"d2", 0, 2, 20.0, false}, {"12", 1, 2, 4.0, false}});
    return w;
}

inline hazard::HazardScenario fixed_scenario(const FeederModel& feeder, std::vector<int> damage,
                                             std::vector<double> repair_h, double horizon = 12.0) {
    hazard::HazardScenario sc;
    sc.feeder_name = feeder.name();
    sc.event_kind = "hurricane";
    sc.horizon_h = horizon;
    sc.initial_damage = damage;
    for (std::size_t i = 0; i < damage.size(); ++i) sc.repair_times[damage[i]] = repair_h[i];
    sc.congestion.block_h = 6.0;
    sc.congestion.lo = 1.0;
    sc.congestion.hi = 1.0;
    sc.congestion.values.assign(static_cast<std::size_t>(horizon / 6.0 + 1), 1.0);
    return sc;
}

struct TinyCase {
    World world;
    hazard::HazardScenario scenario;
};

// A random feeder of `n` loaded buses, each behind its own repairable branch,
// with work sites scattered around a single depot. Every branch starts damaged.
inline TinyCase tiny_case(std::uint64_t seed, int n = 3, double horizon = 8.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> load(40.0, 400.0), xy(-12.0, 12.0), rep(0.5, 3.0);
    std::uniform_int_distribution<int> crit(0, n - 1);
    std::vector<Bus> buses{{"R", 0.0, false, {0, 0}}};
    std::vector<Branch> branches;
    std::vector<RoadNode> nodes{{"depot", {0, 0}}};
    const int critical = crit(rng);
    for (int i = 1; i <= n; ++i) {
        const Point p{xy(rng), xy(rng)};
        buses.push_back({"B" + std::to_string(i), load(rng), i - 1 == critical, p});
        // Buses hang off the root or an earlier bus.
        const int parent = std::uniform_int_distribution<int>(0, i - 1)(rng);
        branches.push_back({"L" + std::to_string(i), parent, i, 5000.0, true, "pole", i, p});
        nodes.push_back({"n" + std::to_string(i), p});
    }
    std::vector<RoadSegment> segs;
    for (int a = 0; a <= n; ++a)
        for (int b = a + 1; b <= n; ++b) {
            const auto& pa = nodes[static_cast<std::size_t>(a)].location;
            const auto& pb = nodes[static_cast<std::size_t>(b)].location;
            segs.push_back({"s" + std::to_string(a) + "_" + std::to_string(b), a, b,
                            std::max(std::hypot(pa.x_km - pb.x_km, pa.y_km - pb.y_km), 0.5), false});
        }
    TinyCase t;
    t.world.feeder =
        std::make_shared<FeederModel>("tiny", buses, branches, std::vector<Switch>{}, std::vector<Depot>{{"D", 0}}, 0);
    t.world.roads = std::make_shared<RoadGraph>(nodes, segs);
    std::vector<int> damage;
    std::vector<double> repair;
    for (int i = 0; i < n; ++i) {
        damage.push_back(i);
        repair.push_back(rep(rng));
    }
    t.scenario = fixed_scenario(*t.world.feeder, damage, repair, horizon);
    t.scenario.seed = seed;
    return t;
}

inline JointAction hold_all(const DispatchState& s) {
    JointAction a;
    for (const auto& c : s.crews)
        if (c.available) a.entries.push_back({c.id, TargetKind::Hold, -1});
    return a;
}

// Uniform choice over each available crew's feasible, not yet claimed entries.
inline JointAction random_masked_action(const DispatchState& s, FeasibilityMask mask, std::mt19937_64& rng) {
    JointAction a;
    for (std::size_t k = 0; k < s.crews.size(); ++k) {
        if (!s.crews[k].available) continue;
        std::vector<std::size_t> ok;
        for (std::size_t e = 0; e < mask.width(); ++e)
            if (mask.allowed[k][e]) ok.push_back(e);
        std::uniform_int_distribution<std::size_t> pick(0, ok.size() - 1);
        const auto e = ok[pick(rng)];
        mask.claim(e, k);
        a.entries.push_back(action_for_entry(mask, s.crews[k].id, e));
    }
    return a;
}

// Time integral of the trace's piecewise-constant unserved load, in MWh.
inline double integrate_trace(const std::vector<env::TraceRecord>& trace, double horizon) {
    long double kwh = 0.0L;
    for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
        const double t1 = std::min(trace[i + 1].time_h, horizon);
        kwh += static_cast<long double>(trace[i].unserved_kw) * static_cast<long double>(t1 - trace[i].time_h);
    }
    return static_cast<double>(kwh / 1000.0L);
}

}  // namespace sdtest
