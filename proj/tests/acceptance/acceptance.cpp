// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stormdispatch/core/baselines.hpp"
#include "stormdispatch/core/harness.hpp"
#include "stormdispatch/core/trainer.hpp"
#include "../unit/support.hpp"

using namespace stormdispatch;
using namespace sdtest;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Byte equality of every regular file under two directories.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
    files = 0;
    std::vector<std::string> na, nb;
    for (const auto& e : fs::directory_iterator(a)) na.push_back(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(b)) nb.push_back(e.path().filename().string());
    std::sort(na.begin(), na.end());
    std::sort(nb.begin(), nb.end());
    if (na != nb) return false;
    for (const auto& n : na) {
        if (slurp(a / n) != slurp(b / n)) return false;
        ++files;
    }
    return true;
}

double median_of(std::vector<double> v) {
    return harness::summarize(v).median;
}

harness::DispatcherSpec spec(harness::DispatcherKind k, const std::string& checkpoint = "") {
    harness::DispatcherSpec s;
    s.kind = k;
    s.checkpoint = checkpoint;
    return s;
}

const std::string kHazard13 = kData + "/hazard.ieee13.json";
constexpr std::uint64_t kHeldOut = 700000;
constexpr int kHeldOutCount = 50;

struct TrainedRun {
    std::string checkpoint;
    trainer::TrainResult result;
    harness::EvaluateResult eval;
    double train_s = 0.0;
};

TrainedRun train_and_evaluate(const fs::path& work) {
    TrainedRun r;
    harness::TrainCommandOptions o;
    o.config = kData + "/train.ieee13.json";
    o.out_dir = (work / "train").string();
    const auto t0 = Clock::now();
    r.result = harness::train(o);
    r.train_s = seconds_since(t0);
    r.checkpoint = (work / "train" / "best.ckpt").string();

    harness::EvaluateOptions e;
    e.hazard_config = kHazard13;
    e.seed_base = kHeldOut;
    e.count = kHeldOutCount;
    e.crews = 3;
    e.out_dir = (work / "eval").string();
    e.dispatchers = {spec(harness::DispatcherKind::Drl, r.checkpoint), spec(harness::DispatcherKind::TravelAware),
                     spec(harness::DispatcherKind::GreedyValue)};
    r.eval = harness::evaluate(e);
    return r;
}

Verdict mask_safety(const TrainedRun& run) {
    const auto t0 = Clock::now();
    constexpr int kMinDecisions = 10000;
    const auto w = bundled();
    env::EnvConfig cfg;
    std::string detail;
    bool pass = true;

    auto sample_drl = spec(harness::DispatcherKind::Drl, run.checkpoint);
    sample_drl.mode = trainer::EvalMode::Sample;
    sample_drl.seed = 5;
    const std::vector<std::pair<std::string, harness::DispatcherSpec>> feeder_specs{
        {"drl", spec(harness::DispatcherKind::Drl, run.checkpoint)},
        {"drl_sample", sample_drl},
        {"greedy_value", spec(harness::DispatcherKind::GreedyValue)},
        {"travel_aware", spec(harness::DispatcherKind::TravelAware)}};
    for (const auto& [name, s] : feeder_specs) {
        auto d = harness::make_dispatcher(s, *w.feeder, 3);
        long decisions = 0, violations = 0;
        for (std::uint64_t seed = 720000; decisions < kMinDecisions; ++seed) {
            const auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, seed);
            const auto ep = harness::run_episode(*d, w.feeder, w.roads, cfg, sc, false);
            decisions += ep.row.decisions;
            violations += ep.row.violations;
        }
        pass = pass && violations == 0;
        detail += fmt("%s %ld/%ld (%.1f s) ", name.c_str(), violations, decisions, seconds_since(t0));
    }

    // The exact oracle runs on its 2-crew, 3-target instance class.
    long decisions = 0, violations = 0;
    for (std::uint64_t seed = 1; decisions < kMinDecisions; ++seed) {
        env::EnvConfig tiny_cfg;
        tiny_cfg.crews = 2;
        const auto t = tiny_case(seed, 3);
        auto d = harness::make_dispatcher(spec(harness::DispatcherKind::Oracle), *t.world.feeder, tiny_cfg.crews);
        const auto ep = harness::run_episode(*d, t.world.feeder, t.world.roads, tiny_cfg, t.scenario, false);
        decisions += ep.row.decisions;
        violations += ep.row.violations;
    }
    pass = pass && violations == 0;
    const double secs = seconds_since(t0);
    pass = pass && secs < 120.0;
    detail += fmt("oracle %ld/%ld violations/decisions, %.1f s", violations, decisions, secs);
    return {pass, detail};
}

Verdict ordering(const TrainedRun& run) {
    std::vector<double> drl, travel, greedy;
    for (const auto& r : run.eval.rows) {
        if (r.method == "drl") drl.push_back(r.ens_mwh);
        if (r.method == "travel_aware") travel.push_back(r.ens_mwh);
        if (r.method == "greedy_value") greedy.push_back(r.ens_mwh);
    }
    const double a = median_of(drl), b = median_of(travel), c = median_of(greedy);
    const auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    const bool counts = drl.size() == kHeldOutCount && travel.size() == kHeldOutCount && greedy.size() == kHeldOutCount;
    const bool pass = counts && a < b && b < c && run.train_s < 1800.0;
    return {pass, fmt("median ENS drl %.3f, travel_aware %.3f, greedy_value %.3f MWh (means %.3f, %.3f, %.3f) on %d "
                      "held-out scenarios, training %.0f s",
                      a, b, c, mean(drl), mean(travel), mean(greedy), kHeldOutCount, run.train_s)};
}

Verdict decision_runtime(const TrainedRun& run) {
    std::vector<double> ms;
    for (const auto& r : run.eval.rows)
        if (r.method == "drl") ms.push_back(r.decision_ms_median);
    const double worst = ms.empty() ? 0.0 : *std::max_element(ms.begin(), ms.end());
    const double med = median_of(ms);
    return {!ms.empty() && med < 50.0,
            fmt("drl median decision %.3f ms (worst episode median %.3f ms), ceiling 50 ms", med, worst)};
}

Verdict oracle_bound() {
    policy::PolicyConfig pc;
    pc.max_components = 8;
    pc.max_crews = 2;
    pc.embed = 8;
    pc.hidden = 8;
    const auto net = policy::PolicyParams::initialize(pc, 11);
    int exceptions = 0, instances = 0, comparisons = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto t = tiny_case(seed, 3);
        env::EnvConfig cfg;
        cfg.crews = 2;
        env::RestorationEnv e(t.world.feeder, t.world.roads, cfg);
        e.reset(t.scenario, seed);
        const auto best = baselines::exact_short_horizon(e);
        std::vector<baselines::OracleObjective> others;
        others.push_back(baselines::lookahead_objective(
            e, [](const env::RestorationEnv& x) { return baselines::greedy_value(x.state(), x.mask()); }));
        others.push_back(baselines::lookahead_objective(
            e, [](const env::RestorationEnv& x) { return baselines::travel_aware(x.state(), x.mask()); }));
        for (std::uint64_t k = 0; k < 5; ++k) {
            std::mt19937_64 rng(seed * 97 + k);
            others.push_back(baselines::lookahead_objective(
                e, [&](const env::RestorationEnv& x) { return random_masked_action(x.state(), x.mask(), rng); }));
        }
        for (const auto mode : {policy::SelectMode::Greedy, policy::SelectMode::Sample}) {
            policy::Memory mem = policy::initial_memory(pc);
            Rng prng(seed);
            others.push_back(baselines::lookahead_objective(e, [&](const env::RestorationEnv& x) {
                const auto f = policy::encode_state(x.state(), pc);
                const auto fw = policy::forward(net, f, mem);
                mem = fw.memory;
                return policy::select_action(fw.logits, policy::slate_mask(f, x.mask(), x.state()), f, x.state(),
                                             mode, 1.0, prng)
                    .action;
            }));
        }
        for (const auto& o : others) {
            ++comparisons;
            if (o.ens_mwh < best.objective.ens_mwh - 1e-9) ++exceptions;
        }
        ++instances;
    }
    return {exceptions == 0,
            fmt("%d exceptions over %d comparisons on %d tiny instances", exceptions, comparisons, instances)};
}

Verdict gradients() {
    const auto t0 = Clock::now();
    const auto w = bundled();
    trainer::EnvFactory factory{w.feeder, w.roads, {}, w.config};
    factory.env_config.crews = 3;
    const auto train_cfg = harness::load_train_config(kData + "/train.ieee13.json");
    policy::PolicyConfig pc = train_cfg.policy;
    pc.embed = 16;
    pc.hidden = 32;
    trainer::PPOConfig ppo = train_cfg.ppo;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::uint64_t batch = 0; batch < 5; ++batch) {
        const auto params = policy::PolicyParams::initialize(pc, 40 + batch);
        Rng rng(90 + batch);
        const auto traj = trainer::collect_rollouts(params, factory, {910000 + 2 * batch, 910001 + 2 * batch}, rng);
        const auto r = trainer::grad_check(params, traj, ppo, 200, 300 + batch);
        worst = std::max(worst, r.max_relative_error);
        checked += r.checked;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && checked >= 200 && secs < 300.0,
            fmt("max relative error %.3g over %zu weights in 5 batches, %.1f s", worst, checked, secs)};
}

Verdict hazard_statistics() {
    const auto t0 = Clock::now();
    std::string detail;

    double frag_err = 0.0;
    for (const double median : {0.3, 1.0, 38.0, 52.5, 67.0})
        for (const double beta : {0.1, 0.25, 0.6})
            frag_err = std::max(frag_err,
                                std::abs(hazard::fragility_exceedance(median, {"pole", "failed", median, beta}) - 0.5));
    const bool a = frag_err <= 1e-12;
    detail += fmt("(a) |P-0.5| %.2g ", frag_err);

    Rng rng(2024);
    const std::vector<double> p{0.05, 0.2, 0.5, 0.7, 0.93};
    const std::vector<Point> sites{{0, 0}, {0.5, 0}, {1, 0.4}, {3, 2}, {10, 10}};
    std::vector<int> hits(p.size(), 0);
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        const auto d = hazard::sample_correlated_failures(p, sites, 2.0, rng);
        for (std::size_t i = 0; i < p.size(); ++i) hits[i] += d[i].failed;
    }
    double marg_err = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) marg_err = std::max(marg_err, std::abs(hits[i] / double(n) - p[i]));
    const bool b = marg_err <= 0.01;
    detail += fmt("(b) marginal err %.4f ", marg_err);

    hazard::DiscoveryProcess proc;
    proc.breakpoints_h = {0.0, 2.0};
    proc.rates_per_h = {3.0, 1.2};
    proc.horizon_h = 12.0;
    const double expected = proc.integrated_rate(1.5, 2.5);
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += hazard::sample_arrival_counts(proc, 1.5, 1.0, rng);
    const double poisson_err = std::abs(sum / n - expected) / expected;
    const bool c = poisson_err <= 0.02;
    detail += fmt("(c) Poisson mean rel err %.4f ", poisson_err);

    const hazard::RepairPrior prior{"pole", std::log(4.0), 0.6};
    std::vector<double> xs(n);
    for (auto& x : xs) x = hazard::sample_repair_time(prior, rng);
    std::nth_element(xs.begin(), xs.begin() + n / 2, xs.end());
    const double med_err = std::abs(xs[n / 2] - 4.0) / 4.0;
    const bool d = med_err <= 0.03;
    const double secs = seconds_since(t0);
    detail += fmt("(d) lognormal median rel err %.4f, %.1f s", med_err, secs);
    return {a && b && c && d && secs < 180.0, detail};
}

Verdict replay_audit() {
    const auto w = bundled();
    env::EnvConfig cfg;
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::uint64_t> seeds(1000000, 9000000);
    double worst = 0.0;
    int episodes = 0;
    const harness::DispatcherKind kinds[] = {harness::DispatcherKind::GreedyValue,
                                             harness::DispatcherKind::TravelAware};
    for (int i = 0; i < 20; ++i) {
        auto d = harness::make_dispatcher(spec(kinds[i % 2]), *w.feeder, 3);
        const auto sc = hazard::generate_scenario(w.config, *w.feeder, *w.roads, seeds(rng));
        const auto ep = harness::run_episode(*d, w.feeder, w.roads, cfg, sc, false);
        const double replay = integrate_trace(ep.trace, ep.horizon_h);
        const double rel = std::abs(ep.row.ens_mwh - replay) / std::max(std::abs(replay), 1e-12);
        worst = std::max(worst, ep.row.ens_mwh == replay ? 0.0 : rel);
        ++episodes;
    }
    return {worst <= 1e-9, fmt("max relative gap %.3g over %d episodes", worst, episodes)};
}

Verdict determinism(const fs::path& work) {
    std::string detail;
    std::size_t files = 0;

    harness::GenScenariosOptions g;
    g.hazard_config = kHazard13;
    g.seed_base = 730000;
    g.count = 10;
    for (const char* side : {"scen_a", "scen_b"}) {
        g.out_dir = (work / "determinism" / side).string();
        harness::gen_scenarios(g);
    }
    const bool a = same_tree(work / "determinism" / "scen_a", work / "determinism" / "scen_b", files);
    detail += fmt("scenarios %zu files, ", files);

    harness::EvaluateOptions e;
    e.hazard_config = kHazard13;
    e.scenario_dir = (work / "determinism" / "scen_a").string();
    e.crews = 3;
    e.timing = false;
    e.dispatchers = {spec(harness::DispatcherKind::GreedyValue), spec(harness::DispatcherKind::TravelAware)};
    for (const char* side : {"eval_a", "eval_b"}) {
        e.out_dir = (work / "determinism" / side).string();
        harness::evaluate(e);
    }
    const bool b = same_tree(work / "determinism" / "eval_a", work / "determinism" / "eval_b", files);
    detail += fmt("reports %zu files, ", files);

    harness::TrainCommandOptions t;
    t.config = kData + "/train.smoke.json";
    t.seed = 12;
    for (const char* side : {"train_a", "train_b"}) {
        t.out_dir = (work / "determinism" / side).string();
        harness::train(t);
    }
    const bool c = same_tree(work / "determinism" / "train_a", work / "determinism" / "train_b", files);
    detail += fmt("training %zu files", files);
    return {a && b && c, detail};
}

Verdict training_signal(const TrainedRun& run) {
    const auto& r = run.result;
    if (r.eval_rewards.empty()) return {false, "no evaluation rewards"};
    const double first = r.eval_rewards.front();
    return {r.epochs_run == 40 && r.best_eval_reward > first,
            fmt("best eval reward %.3f (epoch %d) vs epoch-1 %.3f over %d epochs", r.best_eval_reward, r.best_epoch,
                first, r.epochs_run)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string work = "acceptance_work";
    std::vector<int> known_red;
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--known-red", known_red, "Criteria whose failure is recorded and does not set the exit code");
    CLI11_PARSE(app, argc, argv);
    const fs::path root(work);
    fs::remove_all(root);
    fs::create_directories(root);

    const char* names[] = {"mask safety",       "DRL < travel_aware < greedy_value", "decision runtime",
                           "oracle lower bound", "gradient correctness",             "hazard statistics",
                           "ENS replay audit",   "determinism",                      "training signal"};
    std::vector<Verdict> verdicts(9);
    try {
        const auto t0 = Clock::now();
        const auto run = train_and_evaluate(root);
        std::fprintf(stderr, "training and held-out evaluation in %.1f s\n", seconds_since(t0));
        const auto stage = [&](std::size_t i, auto&& f) {
            const auto t0 = Clock::now();
            verdicts[i] = f();
            std::fprintf(stderr, "criterion %zu evaluated in %.1f s\n", i + 1, seconds_since(t0));
        };
        stage(0, [&] { return mask_safety(run); });
        stage(1, [&] { return ordering(run); });
        stage(2, [&] { return decision_runtime(run); });
        stage(3, [&] { return oracle_bound(); });
        stage(4, [&] { return gradients(); });
        stage(5, [&] { return hazard_statistics(); });
        stage(6, [&] { return replay_audit(); });
        stage(7, [&] { return determinism(root); });
        stage(8, [&] { return training_signal(run); });
    } catch (const std::exception& e) {
        std::printf("error: %s\n", e.what());
        return 2;
    }
    int failed = 0;
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const bool excused =
            std::find(known_red.begin(), known_red.end(), static_cast<int>(i + 1)) != known_red.end();
        std::printf("%s %zu %s: %s%s\n", verdicts[i].pass ? "PASS" : "FAIL", i + 1, names[i], verdicts[i].detail.c_str(),
                    !verdicts[i].pass && excused ? " [known red]" : "");
        failed += !verdicts[i].pass && !excused;
    }
    std::fflush(stdout);
    return failed == 0 ? 0 : 1;
}
