#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "stormdispatch/core/error.hpp"
#include "stormdispatch/core/harness.hpp"
#include "support.hpp"

using namespace stormdispatch;
using namespace stormdispatch::harness;
using namespace sdtest;
namespace fs = std::filesystem;

namespace {

const std::string kHazard13 = kData + "/hazard.ieee13.json";

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("sd_test_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::Io;
}

// Percentile with rank p(n-1) interpolated linearly between sorted neighbours.
double percentile_oracle(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const long double rank = static_cast<long double>(p) * static_cast<long double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const long double frac = rank - static_cast<long double>(lo);
    return static_cast<double>(v[lo] + frac * (static_cast<long double>(v[hi]) - v[lo]));
}

DispatcherSpec spec(DispatcherKind k, const std::string& checkpoint = "") {
    DispatcherSpec s;
    s.kind = k;
    s.checkpoint = checkpoint;
    return s;
}

std::string write_checkpoint(const fs::path& dir, const std::string& feeder, int max_crews,
                             std::map<std::string, std::string> extra_meta = {}) {
    fs::create_directories(dir);
    policy::PolicyConfig pc;
    pc.max_crews = max_crews;
    pc.embed = 8;
    pc.hidden = 8;
    policy::Checkpoint ck;
    ck.params = policy::PolicyParams::initialize(pc, 1);
    ck.meta = std::move(extra_meta);
    ck.meta["feeder"] = feeder;
    const auto path = (dir / (feeder + std::to_string(max_crews) + ".ckpt")).string();
    policy::save_checkpoint(path, ck);
    return path;
}

}  // namespace

TEST_CASE("percentile summaries") {
    const auto s = summarize({4.0, 1.0, 3.0, 2.0});
    CHECK(s.median == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(s.p25 == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(s.p75 == doctest::Approx(3.25).epsilon(1e-15));

    const auto one = summarize({7.25});
    CHECK(one.median == 7.25);
    CHECK(one.p25 == 7.25);
    CHECK(one.p75 == 7.25);

    const auto none = summarize({});
    CHECK(none.median == 0.0);
    CHECK(none.p25 == 0.0);
    CHECK(none.p75 == 0.0);

    std::vector<double> restore;
    for (int m = 10; m <= 100; m += 10) restore.push_back(m);
    CHECK(percentile_oracle(restore, 0.95) == doctest::Approx(95.5));
    env::EpisodeMetrics em;
    em.critical_restore_min = restore;
    CHECK(em.critical_t95_min() == doctest::Approx(95.5).epsilon(1e-12));

    std::mt19937_64 rng(4);
    std::lognormal_distribution<double> g(2.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(1 + static_cast<std::size_t>(trial % 37));
        for (auto& x : v) x = g(rng);
        const auto r = summarize(v);
        CHECK(std::abs(r.median - percentile_oracle(v, 0.5)) < 1e-12 * (1.0 + std::abs(r.median)));
        CHECK(std::abs(r.p25 - percentile_oracle(v, 0.25)) < 1e-12 * (1.0 + std::abs(r.p25)));
        CHECK(std::abs(r.p75 - percentile_oracle(v, 0.75)) < 1e-12 * (1.0 + std::abs(r.p75)));
        CHECK(r.p25 <= r.median);
        CHECK(r.median <= r.p75);
    }
}

TEST_CASE("median and interquartile rendering") {
    CHECK(format_median_iqr({28.0, 22.0, 37.0}, 0) == "28 [22–37]");
    CHECK(format_median_iqr({1.234, 1.0, 2.5}, 2) == "1.23 [1.00–2.50]");
}

TEST_CASE("crew counts") {
    CHECK(supported_crew_counts("ieee13") == std::vector<int>{3, 6, 9});
    CHECK(supported_crew_counts("ieee123") == std::vector<int>{6, 12, 18});
    CHECK(supported_crew_counts("tiny").empty());
    CHECK_NOTHROW(validate_crew_count("ieee13", 6));
    CHECK_NOTHROW(validate_crew_count("tiny", 4));
    CHECK(code_of([] { validate_crew_count("ieee13", 4); }) == ErrorCode::Config);
    CHECK(code_of([] { validate_crew_count("ieee123", 3); }) == ErrorCode::Config);
    CHECK(code_of([] { validate_crew_count("tiny", 0); }) == ErrorCode::Config);
}

TEST_CASE("policy configuration files") {
    policy::PolicyConfig c;
    c.max_crews = 6;
    c.hidden = 64;
    c.activation = policy::Activation::Identity;
    c.overflow_keep_top = false;
    const auto back = policy_config_from_json(policy_config_to_json(c));
    CHECK(back.max_crews == 6);
    CHECK(back.hidden == 64);
    CHECK(back.activation == policy::Activation::Identity);
    CHECK_FALSE(back.overflow_keep_top);
    CHECK(code_of([] { policy_config_from_json({{"activation", "relu"}}); }) == ErrorCode::Config);

    const auto t = load_train_config(kData + "/train.ieee13.json");
    CHECK(t.env.crews == 3);
    CHECK(t.policy.max_crews == 3);
    CHECK(t.ppo.epochs == 40);
    CHECK(t.hazard_config == kHazard13);
    const auto dir = scratch("badtrain");
    fs::create_directories(dir);
    std::ofstream(dir / "t.json") << R"({"format": "something-else", "version": 1})";
    CHECK(code_of([&] { load_train_config((dir / "t.json").string()); }) == ErrorCode::Parse);
    fs::remove_all(dir);
}

TEST_CASE("scenario sets") {
    const auto dir = scratch("gen");
    GenScenariosOptions o;
    o.hazard_config = kHazard13;
    o.out_dir = (dir / "zero").string();
    o.count = 0;
    const auto empty = gen_scenarios(o);
    CHECK(empty.seeds.empty());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(o.out_dir)) names.push_back(e.path().filename().string());
    CHECK(names == std::vector<std::string>{"manifest.json"});
    CHECK(empty.config_hash.size() == 16);

    o.out_dir = (dir / "three").string();
    o.count = 3;
    o.seed_base = 4200;
    const auto m = gen_scenarios(o);
    CHECK(m.seeds == std::vector<std::uint64_t>{4200, 4201, 4202});
    CHECK(m.feeder == "ieee13");
    CHECK(m.config_hash == empty.config_hash);
    CHECK(m.files[0] == scenario_file_name(4200));
    const auto first = slurp(fs::path(o.out_dir) / m.files[1]);
    const auto manifest = slurp(fs::path(o.out_dir) / "manifest.json");

    CHECK(code_of([&] { gen_scenarios(o); }) == ErrorCode::Config);
    o.force = true;
    const auto again = gen_scenarios(o);
    CHECK(again.config_hash == m.config_hash);
    CHECK(slurp(fs::path(o.out_dir) / m.files[1]) == first);
    CHECK(slurp(fs::path(o.out_dir) / "manifest.json") == manifest);

    const auto read = read_manifest(o.out_dir);
    CHECK(read.seeds == m.seeds);
    CHECK(read.files == m.files);
    const auto w = bundled();
    const auto set = load_scenario_set(o.out_dir, *w.feeder, *w.roads);
    REQUIRE(set.size() == 3);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto direct = hazard::generate_scenario(w.config, *w.feeder, *w.roads, m.seeds[i]);
        CHECK(set[i].seed == m.seeds[i]);
        CHECK(set[i].initial_damage == direct.initial_damage);
        CHECK(set[i].repair_times == direct.repair_times);
    }
    fs::remove_all(dir);
}

TEST_CASE("episode table round trip") {
    std::vector<EpisodeRow> rows{{"greedy_value", 7, "hurricane", 12.5, 95.5, 40.25, 6, 9, 0.031, 0, -14.75},
                                 {"drl", 8, "flood", 0.1 + 0.2, 0.0, 0.0, 0, 1, 0.0, 0, 1e-17}};
    const auto text = episodes_csv(rows);
    const auto back = parse_episodes_csv(text, "mem");
    REQUIRE(back.size() == 2);
    CHECK(back[1].ens_mwh == rows[1].ens_mwh);
    CHECK(back[1].total_reward == rows[1].total_reward);
    CHECK(back[0].critical_t95_min == 95.5);
    CHECK(back[0].decisions == 9);
    CHECK(episodes_csv(back) == text);
    CHECK(code_of([] { parse_episodes_csv("method,seed\n", "bad"); }) == ErrorCode::Parse);
    auto broken = text;
    broken.insert(broken.find("\ngreedy_value") + 1, "x,");
    CHECK(code_of([&] { parse_episodes_csv(broken, "bad"); }) == ErrorCode::Parse);
}

TEST_CASE("aggregation keeps method order and counts violations") {
    std::vector<EpisodeRow> rows;
    for (int i = 0; i < 4; ++i) rows.push_back({"b", static_cast<std::uint64_t>(i), "flood", 1.0 + i});
    rows.push_back({"a", 9, "flood", 3.0});
    rows.back().violations = 2;
    const auto r = aggregate(rows);
    REQUIRE(r.methods.size() == 2);
    CHECK(r.methods[0].method == "b");
    CHECK(r.methods[0].scenarios == 4);
    CHECK(r.methods[0].ens_mwh.median == doctest::Approx(2.5));
    CHECK(r.methods[1].violations == 2);
    const auto j = report_to_json(r);
    CHECK(j.dump().find(kPercentileMethod) != std::string::npos);
    CHECK(report_to_text(r).find(kPercentileMethod) != std::string::npos);
    CHECK(report_to_text(r, false).find("decision") == std::string::npos);
    CHECK(aggregate({}).methods.empty());
}

TEST_CASE("dispatcher loading") {
    const auto dir = scratch("ckpt");
    const auto w = bundled();
    CHECK(parse_dispatcher("travel_aware") == DispatcherKind::TravelAware);
    CHECK(std::string(to_string(DispatcherKind::Oracle)) == "oracle");
    CHECK_THROWS_AS(parse_dispatcher("milp"), Error);

    const auto ok = write_checkpoint(dir, "ieee13", 3);
    CHECK(make_dispatcher(spec(DispatcherKind::Drl, ok), *w.feeder, 3) != nullptr);
    CHECK(code_of([&] { make_dispatcher(spec(DispatcherKind::Drl, ok), *w.feeder, 6); }) == ErrorCode::Config);
    const auto other = write_checkpoint(dir, "ieee123", 9);
    CHECK(code_of([&] { make_dispatcher(spec(DispatcherKind::Drl, other), *w.feeder, 3); }) == ErrorCode::Config);
    CHECK(code_of([&] { make_dispatcher(spec(DispatcherKind::Drl), *w.feeder, 3); }) == ErrorCode::Config);

    EvaluateOptions o;
    o.hazard_config = kHazard13;
    o.count = 2;
    o.seed_base = 100000;
    o.out_dir = (dir / "eval").string();
    o.dispatchers = {spec(DispatcherKind::Drl, other)};
    CHECK(code_of([&] { evaluate(o); }) == ErrorCode::Config);
    // Scenarios drawn from the checkpoint's training range are refused.
    const auto trained = write_checkpoint(dir, "ieee13", 3, {{"train_seeds_begin", "100000"}, {"train_seeds_end", "100010"}});
    o.dispatchers = {spec(DispatcherKind::Drl, trained)};
    CHECK(code_of([&] { evaluate(o); }) == ErrorCode::Config);
    o.seed_base = 700000;
    CHECK(evaluate(o).rows.size() == 2);
    fs::remove_all(dir);
}

TEST_CASE("evaluation runs") {
    const auto dir = scratch("eval");
    EvaluateOptions o;
    o.hazard_config = kHazard13;
    o.out_dir = (dir / "empty").string();
    o.dispatchers = {spec(DispatcherKind::GreedyValue)};

    SUBCASE("empty scenario set") {
        const auto r = evaluate(o);
        CHECK(r.rows.empty());
        CHECK(r.report.methods.empty());
        CHECK(fs::exists(dir / "empty" / "report.json"));
        CHECK(parse_episodes_csv(slurp(dir / "empty" / "episodes.csv"), "x").empty());
    }
    SUBCASE("bad crew count") {
        o.crews = 4;
        CHECK(code_of([&] { evaluate(o); }) == ErrorCode::Config);
    }
    SUBCASE("deterministic reports and clean masks") {
        o.count = 4;
        o.seed_base = 800000;
        o.timing = false;
        o.dispatchers = {spec(DispatcherKind::GreedyValue), spec(DispatcherKind::TravelAware)};
        o.out_dir = (dir / "a").string();
        const auto a = evaluate(o);
        o.out_dir = (dir / "b").string();
        evaluate(o);
        for (const char* f : {"episodes.csv", "report.json", "report.txt"})
            CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
        REQUIRE(a.rows.size() == 8);
        for (const auto& r : a.rows) CHECK(r.violations == 0);
        CHECK(a.report.methods.size() == 2);
        CHECK(a.report.methods[0].method == "greedy_value");

        const auto merged = report({(dir / "a").string()}, (dir / "merged").string());
        REQUIRE(merged.methods.size() == 2);
        CHECK(merged.methods[1].ens_mwh.median == a.report.methods[1].ens_mwh.median);
        CHECK(code_of([&] { report({(dir / "missing").string()}, (dir / "m2").string()); }) == ErrorCode::Io);
    }
    fs::remove_all(dir);
}

TEST_CASE("reported ENS equals the integrated trace") {
    const auto w = bundled();
    env::EnvConfig cfg;
    for (auto kind : {DispatcherKind::GreedyValue, DispatcherKind::TravelAware}) {
        auto d = make_dispatcher(spec(kind), *w.feeder, 3);
        for (std::uint64_t seed = 810000; seed < 810010; ++seed) {
            const auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, seed);
            const auto run = run_episode(*d, w.feeder, w.roads, cfg, sc, true);
            CHECK(std::abs(run.row.ens_mwh - integrate_trace(run.trace, run.horizon_h)) < 1e-9);
            CHECK(run.row.violations == 0);
            CHECK(run.row.decisions == static_cast<int>(run.metrics.decision_ms.size()));
        }
    }
}

TEST_CASE("oracle dispatcher never loses to greedy on tiny instances") {
    env::EnvConfig cfg;
    cfg.crews = 2;
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const auto t = tiny_case(seed);
        auto oracle = make_dispatcher(spec(DispatcherKind::Oracle), *t.world.feeder, 2);
        auto greedy = make_dispatcher(spec(DispatcherKind::GreedyValue), *t.world.feeder, 2);
        const auto o = run_episode(*oracle, t.world.feeder, t.world.roads, cfg, t.scenario, false);
        const auto g = run_episode(*greedy, t.world.feeder, t.world.roads, cfg, t.scenario, false);
        CHECK(o.row.ens_mwh <= g.row.ens_mwh + 1e-9);
        CHECK(o.row.violations == 0);
    }
}

TEST_CASE("single-episode simulation") {
    const auto dir = scratch("sim");
    SimulateOptions o;
    o.hazard_config = kHazard13;
    o.seed = 812345;
    o.dispatcher = spec(DispatcherKind::TravelAware);
    o.out_dir = dir.string();
    const auto run = simulate(o);
    const auto ep = nlohmann::json::parse(slurp(dir / "episode.json"));
    CHECK(ep.at("ens_mwh").get<double>() == run.metrics.ens_mwh);
    CHECK(ep.at("seed").get<std::uint64_t>() == 812345);

    std::vector<env::TraceRecord> trace;
    std::istringstream lines(slurp(dir / "trace.jsonl"));
    std::string line;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        env::TraceRecord r;
        r.time_h = j.at("t_h").get<double>();
        r.unserved_kw = j.at("unserved_kw").get<double>();
        trace.push_back(r);
    }
    REQUIRE(trace.size() == run.trace.size());
    CHECK(std::abs(integrate_trace(trace, run.horizon_h) - run.metrics.ens_mwh) < 1e-9);
    o.crews = 5;
    CHECK(code_of([&] { simulate(o); }) == ErrorCode::Config);
    fs::remove_all(dir);
}

TEST_CASE("training command") {
    const auto dir = scratch("train");
    TrainCommandOptions o;
    o.config = kData + "/train.smoke.json";
    o.out_dir = dir.string();
    o.epochs = 1;
    const auto r = train(o);
    CHECK(r.epochs_run == 1);
    std::istringstream log(slurp(dir / "train_log.csv"));
    std::string header;
    std::getline(log, header);
    CHECK(header == "epoch,policy_loss,value_loss,entropy,eval_reward");
    const auto ck = policy::load_checkpoint((dir / "best.ckpt").string());
    CHECK(ck.meta.at("feeder") == "ieee13");
    CHECK(ck.meta.at("crews") == "3");

    o.resume = true;
    o.epochs = 2;
    CHECK(train(o).epochs_run == 1);
    o.resume = false;
    o.crews = 6;  // above the smoke policy's crew slate
    CHECK(code_of([&] { train(o); }) == ErrorCode::Config);
    o.crews = 4;
    CHECK(code_of([&] { train(o); }) == ErrorCode::Config);
    fs::remove_all(dir);
}
