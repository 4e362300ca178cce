#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "stormdispatch/core/env.hpp"
#include "stormdispatch/core/error.hpp"
#include "support.hpp"

using namespace stormdispatch;
using namespace stormdispatch::env;
using namespace sdtest;

namespace {

EnvConfig one_crew() {
    EnvConfig c;
    c.crews = 1;
    return c;
}

// Runs an episode with seeded random masked actions and returns the environment.
RestorationEnv random_episode(const World& w, const EnvConfig& cfg, const hazard::HazardScenario& sc,
                              std::uint64_t seed, int* decisions = nullptr) {
    RestorationEnv e(w.feeder, w.roads, cfg);
    e.reset(sc, seed);
    std::mt19937_64 rng(seed);
    while (!e.done()) {
        e.step(random_masked_action(e.state(), e.mask(), rng));
        if (decisions) ++*decisions;
    }
    return e;
}

}  // namespace

TEST_CASE("reward arithmetic") {
    RewardWeights w;
    IntervalMetrics m;
    m.ens_mwh = 2.0;
    m.critical_restored = 1;
    RewardWeights only{1.0, 0.0, 0.0, 0.0, 5.0};
    CHECK(compute_reward(m, only) == 3.0);
    CHECK(compute_reward(IntervalMetrics{}, w) == 0.0);
    IntervalMetrics busy{3.0, 7.0, 12.0, 4.0, 2, 3};
    CHECK(compute_reward(busy, RewardWeights{0, 0, 0, 0, 0}) == 0.0);
    CHECK(compute_reward(busy, w) == doctest::Approx(-7.0 - 0.12 - 0.2 - 200.0 + 15.0));
    CHECK_THROWS_AS((RewardWeights{-1, 0, 0, 0, 0}.validate()), Error);
}

TEST_CASE("default reward weights") {
    RewardWeights w;
    CHECK(w.alpha == 1.0);
    CHECK(w.beta == 0.01);
    CHECK(w.gamma_idle == 0.05);
    CHECK(w.eta == 100.0);
    CHECK(w.kappa == 5.0);
}

TEST_CASE("reset") {
    const auto w = bundled();
    RestorationEnv e(w.feeder, w.roads, EnvConfig{});

    SUBCASE("empty scenario") {
        const auto sc = fixed_scenario(*w.feeder, {}, {});
        const auto& s = e.reset(sc, 1);
        CHECK(s.components.empty());
        CHECK(s.unserved_kw == 0.0);
        CHECK(std::all_of(e.energized().begin(), e.energized().end(), [](bool b) { return b; }));
        CHECK(s.clock_h == 0.0);
    }
    SUBCASE("five initial damages") {
        std::vector<int> sites;
        for (std::size_t b = 0; b < w.feeder->branches().size() && sites.size() < 5; ++b)
            if (w.feeder->branches()[b].repairable) sites.push_back(static_cast<int>(b));
        const auto sc = fixed_scenario(*w.feeder, sites, std::vector<double>(5, 2.0));
        const auto& s = e.reset(sc, 1);
        CHECK(s.components.size() == 5);
        for (const auto& c : s.crews) {
            CHECK(c.status == CrewStatus::Idle);
            CHECK(c.at_depot);
        }
    }
    SUBCASE("same seed gives identical initial states") {
        const auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, 31);
        RestorationEnv e2(w.feeder, w.roads, EnvConfig{});
        const auto a = e.reset(sc, 9);
        const auto b = e2.reset(sc, 9);
        CHECK(a.components.size() == b.components.size());
        for (std::size_t i = 0; i < a.components.size(); ++i) CHECK(a.components[i].value == b.components[i].value);
        CHECK(a.travel_h == b.travel_h);
        CHECK(e.mask().allowed == e2.mask().allowed);
    }
    SUBCASE("scenario for another feeder") {
        auto sc = fixed_scenario(*w.feeder, {}, {});
        sc.feeder_name = "ieee123";
        try {
            e.reset(sc, 1);
            FAIL("expected a configuration error");
        } catch (const Error& err) {
            CHECK(err.code() == ErrorCode::Config);
        }
    }
}

TEST_CASE("holding through the horizon integrates a constant") {
    const auto w = line_world();
    RestorationEnv e(w.feeder, w.roads, one_crew());
    e.reset(fixed_scenario(*w.feeder, {0}, {2.0}), 1);
    const double out_kw = e.state().unserved_kw;
    CHECK(out_kw == 250.0);
    while (!e.done()) e.step(hold_all(e.state()));
    CHECK(e.metrics().ens_mwh == doctest::Approx(out_kw * 12.0 / 1000.0).epsilon(1e-12));
    CHECK(e.clock() == 12.0);
}

TEST_CASE("hand-traced single repair") {
    // 20 km at 40 km/h is 0.5 h, then a 1 h repair: 100 kW out for 1.5 h.
    const auto w = line_world();
    RestorationEnv e(w.feeder, w.roads, one_crew());
    e.reset(fixed_scenario(*w.feeder, {1}, {1.0}), 1);
    REQUIRE(e.state().components.size() == 1);
    CHECK(e.state().travel_h[0][0] == doctest::Approx(0.5));
    JointAction go;
    go.entries.push_back({0, TargetKind::Component, 1});
    e.step(go);
    while (!e.done()) e.step(hold_all(e.state()));
    CHECK(e.clock() == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(e.metrics().ens_mwh == doctest::Approx(100.0 * 1.5 / 1000.0).epsilon(1e-12));
    CHECK(e.metrics().travel_km == doctest::Approx(20.0));
    CHECK(std::all_of(e.energized().begin(), e.energized().end(), [](bool b) { return b; }));
    // C is critical and comes back at 1.5 h.
    REQUIRE(e.metrics().critical_restore_min.size() == 1);
    CHECK(e.metrics().critical_restore_min[0] == doctest::Approx(90.0));
    CHECK(e.metrics().violations == 0);
}

TEST_CASE("replan triggers") {
    const auto w = line_world();
    RestorationEnv e(w.feeder, w.roads, one_crew());
    e.reset(fixed_scenario(*w.feeder, {1}, {1.0}), 1);
    Event ev;
    ev.kind = EventKind::TicketArrival;
    CHECK(e.replan_trigger(ev, false));
    ev.kind = EventKind::TravelEnd;
    CHECK_FALSE(e.replan_trigger(ev, false));
    CHECK(e.replan_trigger(ev, true));
    ev.kind = EventKind::RepairEnd;
    CHECK(e.replan_trigger(ev, false));
    ev.kind = EventKind::DutyChange;
    CHECK(e.replan_trigger(ev, false));
    ev.kind = EventKind::Timer;
    CHECK(e.replan_trigger(ev, false));

    SUBCASE("periodic timer fires after an hour of holding") {
        e.step(hold_all(e.state()));
        CHECK(e.clock() == doctest::Approx(1.0));
        CHECK(e.trace().back().kind == "timer");
    }
    SUBCASE("without the periodic timer a hold lasts until the next event") {
        e.disable_periodic_replans();
        e.step(hold_all(e.state()));
        CHECK(e.clock() > 1.0);
        for (const auto& r : e.trace()) CHECK(r.kind != "timer");
    }
    SUBCASE("travel end with a valid assignment does not stop the clock") {
        JointAction go;
        go.entries.push_back({0, TargetKind::Component, 1});
        e.step(go);
        // No crew is free, so no timer is armed: the clock runs past the 0.5 h
        // arrival on site straight to the repair end.
        CHECK(e.clock() == doctest::Approx(1.5));
        bool saw_travel_end = false;
        for (const auto& r : e.trace()) saw_travel_end = saw_travel_end || r.kind == "travel_end";
        CHECK(saw_travel_end);
    }
}

TEST_CASE("infeasible actions are rejected, or counted in audit mode") {
    const auto w = line_world();
    auto sc = fixed_scenario(*w.feeder, {1}, {1.0});
    RestorationEnv strict(w.feeder, w.roads, one_crew());
    strict.reset(sc, 1);
    JointAction bad;
    bad.entries.push_back({0, TargetKind::Component, 0});  // AB is not damaged
    try {
        strict.step(bad);
        FAIL("expected a contract error");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::Contract);
    }
    auto cfg = one_crew();
    cfg.audit_mode = true;
    RestorationEnv audit(w.feeder, w.roads, cfg);
    audit.reset(sc, 1);
    const auto r = audit.step(bad);
    CHECK(r.interval.violations == 1);
    CHECK(r.reward < -99.0);
}

TEST_CASE("episode properties over random masked rollouts") {
    const auto w = bundled();
    EnvConfig cfg;
    cfg.crews = 3;
    cfg.audit_mode = true;  // infeasible entries would execute and be counted
    int decisions = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, 1000 + seed);
        const auto e = random_episode(w, cfg, sc, seed, &decisions);
        const auto m = e.metrics();
        CHECK(m.violations == 0);
        CHECK(m.ens_mwh >= 0.0);
        const double replay = integrate_trace(e.trace(), e.horizon());
        CHECK(std::abs(m.ens_mwh - replay) <= 1e-9 * std::max(1.0, std::abs(replay)));
        CHECK(replay_ens_mwh(e.trace(), e.horizon()) == doctest::Approx(replay).epsilon(1e-12));

        // Clock never runs backwards; every repair end follows a repair start of the same crew and site.
        std::map<int, int> working;
        for (std::size_t i = 1; i < e.trace().size(); ++i) {
            const auto& r = e.trace()[i];
            CHECK(r.time_h >= e.trace()[i - 1].time_h);
            if (r.kind == "travel_end" && r.detail == "repair_start") working[r.crew] = r.site;
            if (r.kind == "repair_end") {
                REQUIRE(working.count(r.crew) == 1);
                CHECK(working[r.crew] == r.site);
                working.erase(r.crew);
            }
        }
    }
    CHECK(decisions > 500);
}

TEST_CASE("mask soundness and hold-liveness over 10^4 masked actions") {
    const auto w = bundled();
    EnvConfig cfg;
    cfg.crews = 6;
    cfg.audit_mode = true;
    std::size_t actions = 0;
    int violations = 0;
    for (std::uint64_t seed = 0; actions < 10000; ++seed) {
        const auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, 2000 + seed);
        RestorationEnv e(w.feeder, w.roads, cfg);
        e.reset(sc, seed);
        std::mt19937_64 rng(seed);
        while (!e.done()) {
            for (std::size_t k = 0; k < e.mask().allowed.size(); ++k) CHECK(e.mask().allowed[k][e.mask().hold_index()]);
            const auto a = random_masked_action(e.state(), e.mask(), rng);
            actions += a.entries.size();
            violations += e.step(a).interval.violations;
        }
        CHECK(e.metrics().violations == 0);
    }
    CHECK(violations == 0);
}

TEST_CASE("mask matches direct predicate evaluation") {
    const auto w = bundled();
    EnvConfig cfg;
    cfg.crews = 4;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, 3000 + seed);
        RestorationEnv e(w.feeder, w.roads, cfg);
        e.reset(sc, seed);
        std::mt19937_64 rng(seed);
        while (!e.done()) {
            const auto& s = e.state();
            const auto& m = e.mask();
            REQUIRE(m.targets.size() == s.components.size());
            for (std::size_t k = 0; k < s.crews.size(); ++k) {
                const auto& c = s.crews[k];
                for (std::size_t i = 0; i < s.components.size(); ++i) {
                    const auto& comp = s.components[i];
                    const bool skill =
                        std::find(c.skills.begin(), c.skills.end(), comp.component_class) != c.skills.end();
                    const double tt = s.travel_h[k][i];
                    double need = tt + comp.repair_est_h;
                    if (!c.break_taken && (c.break_pending || s.clock_h + need >= c.break_start_h))
                        need += c.break_len_h;
                    Flags after = s.known_damage;
                    after[static_cast<std::size_t>(comp.site)] = false;
                    const auto st = reenergize(*w.feeder, after);
                    const bool grid_ok =
                        capacity_screen(*w.feeder, energized_set(*w.feeder, after, st), st, after).ok;
                    const bool want = c.available && comp.assigned_crew < 0 && skill && std::isfinite(tt) &&
                                      c.remaining_shift_h >= need && grid_ok;
                    CHECK(m.allowed[k][i] == want);
                    if (!m.allowed[k][i]) CHECK(m.reason[k][i] != BlockReason::None);
                }
                CHECK(m.allowed[k][m.hold_index()]);
                CHECK(m.allowed[k][m.return_index()] == (c.available && std::isfinite(c.to_depot_h)));
            }
            e.step(random_masked_action(s, m, rng));
        }
    }
}

TEST_CASE("unserved load never rises at repair ends without new tickets") {
    const auto w = bundled();
    EnvConfig cfg;
    cfg.crews = 3;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, 4000 + seed);
        for (const auto& a : sc.arrivals) sc.initial_damage.push_back(a.site);
        sc.arrivals.clear();
        std::sort(sc.initial_damage.begin(), sc.initial_damage.end());
        const auto e = random_episode(w, cfg, sc, seed);
        const auto& tr = e.trace();
        for (std::size_t i = 1; i < tr.size(); ++i)
            if (tr[i].kind == "repair_end") CHECK(tr[i].unserved_kw <= tr[i - 1].unserved_kw + 1e-9);
    }
}

TEST_CASE("trajectory determinism") {
    const auto w = bundled();
    EnvConfig cfg;
    cfg.crews = 3;
    const auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, 77);
    const auto a = random_episode(w, cfg, sc, 5);
    const auto b = random_episode(w, cfg, sc, 5);
    CHECK(a.trace_json_lines() == b.trace_json_lines());
    CHECK(a.metrics().ens_mwh == b.metrics().ens_mwh);
    CHECK(a.metrics().total_reward == b.metrics().total_reward);
}

TEST_CASE("env config round trip") {
    EnvConfig c;
    c.crews = 6;
    c.replan_period_h = 0.5;
    c.weights.kappa = 2.0;
    const auto back = env_config_from_json(env_config_to_json(c));
    CHECK(env_config_to_json(back) == env_config_to_json(c));
    CHECK_THROWS_AS(env_config_from_json(nlohmann::json{{"crews", 0}}), Error);
}

TEST_CASE("t95 of critical restoration times") {
    EpisodeMetrics m;
    CHECK(m.critical_t95_min() == 0.0);
    for (int t = 10; t <= 100; t += 10) m.critical_restore_min.push_back(t);
    CHECK(m.critical_t95_min() == doctest::Approx(95.5).epsilon(1e-12));
}
