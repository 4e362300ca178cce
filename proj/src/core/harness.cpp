#include "stormdispatch/core/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "stormdispatch/core/error.hpp"
#include "stormdispatch/core/feeder.hpp"
#include "stormdispatch/core/hazard_io.hpp"
#include "stormdispatch/core/json_io.hpp"
#include "stormdispatch/core/numeric.hpp"

namespace stormdispatch::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> supported_crew_counts(const std::string& feeder_name) {
    if (feeder_name == "ieee13") return {3, 6, 9};
    if (feeder_name == "ieee123") return {6, 12, 18};
    return {};
}

void validate_crew_count(const std::string& feeder_name, int crews) {
    require(crews > 0, ErrorCode::Config, "crew count must be positive");
    const auto allowed = supported_crew_counts(feeder_name);
    if (allowed.empty()) return;
    if (std::find(allowed.begin(), allowed.end(), crews) != allowed.end()) return;
    std::string list;
    for (int k : allowed) list += (list.empty() ? "" : ", ") + std::to_string(k);
    fail(ErrorCode::Config,
         "feeder '" + feeder_name + "' supports crew counts {" + list + "}, got " + std::to_string(crews));
}

policy::PolicyConfig policy_config_from_json(const json& doc) {
    policy::PolicyConfig c;
    try {
        c.max_components = doc.value("max_components", c.max_components);
        c.max_crews = doc.value("max_crews", c.max_crews);
        c.embed = doc.value("embed", c.embed);
        c.hidden = doc.value("hidden", c.hidden);
        const auto act = doc.value("activation", std::string("tanh"));
        require(act == "tanh" || act == "identity", ErrorCode::Config, "policy activation must be tanh or identity");
        c.activation = act == "tanh" ? policy::Activation::Tanh : policy::Activation::Identity;
        c.overflow_keep_top = doc.value("overflow_keep_top", c.overflow_keep_top);
    } catch (const json::exception& e) {
        fail(ErrorCode::Config, std::string("policy config: ") + e.what());
    }
    c.validate();
    return c;
}

json policy_config_to_json(const policy::PolicyConfig& c) {
    return {{"max_components", c.max_components},
            {"max_crews", c.max_crews},
            {"embed", c.embed},
            {"hidden", c.hidden},
            {"activation", c.activation == policy::Activation::Tanh ? "tanh" : "identity"},
            {"overflow_keep_top", c.overflow_keep_top}};
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string parent_dir(const std::string& path) {
    const auto p = fs::path(path).parent_path();
    return p.empty() ? std::string(".") : p.string();
}

std::string resolve(const std::string& base_dir, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

}  // namespace

Workspace load_workspace(const std::string& hazard_config_path, const std::string& feeder_override) {
    require(!hazard_config_path.empty(), ErrorCode::Config, "a hazard config file is required");
    const auto doc = read_json_file(hazard_config_path);
    Workspace ws;
    ws.scenario_config = hazard::scenario_config_from_json(doc, parent_dir(hazard_config_path));
    if (!feeder_override.empty()) ws.scenario_config.feeder_path = feeder_override;
    ws.feeder_path = ws.scenario_config.feeder_path;
    auto bundle = load_feeder(ws.feeder_path);
    ws.feeder = std::make_shared<const FeederModel>(std::move(bundle.feeder));
    ws.roads = std::make_shared<const RoadGraph>(std::move(bundle.roads));

    // Hash file contents, not paths, so relocated inputs hash identically.
    auto hazard_doc = doc;
    hazard_doc.erase("feeder");
    auto feeder_doc = read_json_file(ws.feeder_path);
    const auto roads_path = resolve(parent_dir(ws.feeder_path), feeder_doc.value("road_graph", std::string()));
    feeder_doc.erase("road_graph");
    std::string blob = dump_canonical(hazard_doc) + dump_canonical(feeder_doc);
    if (!roads_path.empty()) blob += dump_canonical(read_json_file(roads_path));
    ws.config_hash = fnv1a(blob);
    return ws;
}

// ---- scenario sets --------------------------------------------------------

std::string scenario_file_name(std::uint64_t seed) { return "scenario_" + std::to_string(seed) + ".json"; }

ScenarioManifest gen_scenarios(const GenScenariosOptions& o) {
    require(o.count >= 0, ErrorCode::Parameter, "scenario count must be non-negative");
    require(!o.out_dir.empty(), ErrorCode::Config, "an output directory is required");
    const auto ws = load_workspace(o.hazard_config, o.feeder);

    if (fs::exists(o.out_dir)) {
        require(fs::is_directory(o.out_dir), ErrorCode::Io, "'" + o.out_dir + "' is not a directory");
        const bool empty = fs::directory_iterator(o.out_dir) == fs::directory_iterator();
        require(empty || o.force, ErrorCode::Config,
                "refusing to write into non-empty directory '" + o.out_dir + "' (use --force)");
        for (const auto& entry : fs::directory_iterator(o.out_dir)) {
            const auto name = entry.path().filename().string();
            if (name == "manifest.json" || (name.rfind("scenario_", 0) == 0 && entry.path().extension() == ".json"))
                fs::remove(entry.path());
        }
    }
    fs::create_directories(o.out_dir);

    ScenarioManifest m;
    m.config_hash = hex64(ws.config_hash);
    m.feeder = ws.feeder->name();
    m.hazard_config = ws.scenario_config.name;
    json entries = json::array();
    for (int i = 0; i < o.count; ++i) {
        const auto seed = o.seed_base + static_cast<std::uint64_t>(i);
        const auto sc = hazard::generate_scenario(ws.scenario_config, *ws.feeder, *ws.roads, seed);
        const auto file = scenario_file_name(seed);
        hazard::save_scenario((fs::path(o.out_dir) / file).string(), sc, *ws.feeder, *ws.roads);
        m.seeds.push_back(seed);
        m.files.push_back(file);
        entries.push_back({{"seed", seed}, {"file", file}});
    }
    const json doc{{"format", "stormdispatch-scenario-set"},
                   {"version", 1},
                   {"config_hash", m.config_hash},
                   {"feeder", m.feeder},
                   {"hazard_config", m.hazard_config},
                   {"seed_base", o.seed_base},
                   {"count", o.count},
                   {"scenarios", entries}};
    write_text_file((fs::path(o.out_dir) / "manifest.json").string(), dump_canonical(doc));
    return m;
}

ScenarioManifest read_manifest(const std::string& dir) {
    const auto path = (fs::path(dir) / "manifest.json").string();
    require(fs::exists(path), ErrorCode::Io, "no manifest.json in '" + dir + "'");
    const auto doc = read_json_file(path);
    require(doc.value("format", "") == "stormdispatch-scenario-set" && doc.value("version", 0) == 1,
            ErrorCode::Parse, path + ": expected format 'stormdispatch-scenario-set' version 1");
    ScenarioManifest m;
    try {
        m.config_hash = doc.at("config_hash").get<std::string>();
        m.feeder = doc.at("feeder").get<std::string>();
        m.hazard_config = doc.value("hazard_config", std::string());
        for (const auto& e : doc.at("scenarios")) {
            m.seeds.push_back(e.at("seed").get<std::uint64_t>());
            m.files.push_back(e.at("file").get<std::string>());
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::Parse, path + ": " + e.what());
    }
    return m;
}

std::vector<hazard::HazardScenario> load_scenario_set(const std::string& dir, const FeederModel& feeder,
                                                      const RoadGraph& roads) {
    const auto m = read_manifest(dir);
    require(m.feeder == feeder.name(), ErrorCode::Config,
            "scenario set '" + dir + "' was generated for feeder '" + m.feeder + "', not '" + feeder.name() + "'");
    std::vector<hazard::HazardScenario> out;
    for (const auto& f : m.files) out.push_back(hazard::load_scenario((fs::path(dir) / f).string(), feeder, roads));
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
    return out;
}

// ---- dispatchers ------------------------------------------------------------

DispatcherKind parse_dispatcher(const std::string& name) {
    if (name == "drl") return DispatcherKind::Drl;
    if (name == "greedy_value") return DispatcherKind::GreedyValue;
    if (name == "travel_aware") return DispatcherKind::TravelAware;
    if (name == "oracle") return DispatcherKind::Oracle;
    fail(ErrorCode::Config, "unknown dispatcher '" + name + "' (drl, greedy_value, travel_aware, oracle)");
}

const char* to_string(DispatcherKind kind) {
    switch (kind) {
        case DispatcherKind::Drl: return "drl";
        case DispatcherKind::GreedyValue: return "greedy_value";
        case DispatcherKind::TravelAware: return "travel_aware";
        case DispatcherKind::Oracle: return "oracle";
    }
    return "?";
}

namespace {

class HeuristicDispatcher final : public Dispatcher {
public:
    explicit HeuristicDispatcher(baselines::HeuristicVariant v) : variant_(v) {}
    std::string name() const override {
        return variant_ == baselines::HeuristicVariant::GreedyValue ? "greedy_value" : "travel_aware";
    }
    JointAction decide(const env::RestorationEnv& env, const FeasibilityMask& mask) override {
        return baselines::heuristic_action(variant_, env.state(), mask);
    }

private:
    baselines::HeuristicVariant variant_;
};

class OracleDispatcher final : public Dispatcher {
public:
    explicit OracleDispatcher(baselines::HeuristicConfig c) : config_(c) { config_.validate(); }
    std::string name() const override { return "oracle"; }
    JointAction decide(const env::RestorationEnv& env, const FeasibilityMask&) override {
        return baselines::exact_short_horizon(env, config_).action;
    }

private:
    baselines::HeuristicConfig config_;
};

class DrlDispatcher final : public Dispatcher {
public:
    DrlDispatcher(policy::Checkpoint ck, const DispatcherSpec& spec)
        : params_(std::move(ck.params)), spec_(spec), memory_(policy::initial_memory(params_.config)), rng_(spec.seed) {}
    std::string name() const override { return "drl"; }
    void begin_episode() override {
        memory_ = policy::initial_memory(params_.config);
        rng_ = Rng(spec_.seed);
    }
    JointAction decide(const env::RestorationEnv& env, const FeasibilityMask& mask) override {
        const auto mode = spec_.mode == trainer::EvalMode::Greedy   ? policy::SelectMode::Greedy
                          : spec_.mode == trainer::EvalMode::Sample ? policy::SelectMode::Sample
                                                                     : policy::SelectMode::Temperature;
        const auto f = policy::encode_state(env.state(), params_.config);
        const auto sm = policy::slate_mask(f, mask, env.state());
        const auto out = policy::forward(params_, f, memory_);
        auto sel = policy::select_action(out.logits, sm, f, env.state(), mode, spec_.temperature, rng_);
        memory_ = out.memory;
        return std::move(sel.action);
    }

private:
    policy::PolicyParams params_;
    DispatcherSpec spec_;
    policy::Memory memory_;
    Rng rng_;
};

}  // namespace

std::unique_ptr<Dispatcher> make_dispatcher(const DispatcherSpec& spec, const FeederModel& feeder, int crews) {
    switch (spec.kind) {
        case DispatcherKind::GreedyValue:
            return std::make_unique<HeuristicDispatcher>(baselines::HeuristicVariant::GreedyValue);
        case DispatcherKind::TravelAware:
            return std::make_unique<HeuristicDispatcher>(baselines::HeuristicVariant::TravelAware);
        case DispatcherKind::Oracle: return std::make_unique<OracleDispatcher>(spec.oracle);
        case DispatcherKind::Drl: {
            require(!spec.checkpoint.empty(), ErrorCode::Config, "the drl dispatcher needs a checkpoint");
            auto ck = policy::load_checkpoint(spec.checkpoint);
            const auto it = ck.meta.find("feeder");
            require(it != ck.meta.end(), ErrorCode::Config, "checkpoint '" + spec.checkpoint + "' names no feeder");
            require(it->second == feeder.name(), ErrorCode::Config,
                    "checkpoint '" + spec.checkpoint + "' was trained on feeder '" + it->second + "', not '" +
                        feeder.name() + "'");
            require(crews <= ck.params.config.max_crews, ErrorCode::Config,
                    "checkpoint supports at most " + std::to_string(ck.params.config.max_crews) + " crews, got " +
                        std::to_string(crews));
            return std::make_unique<DrlDispatcher>(std::move(ck), spec);
        }
    }
    fail(ErrorCode::Config, "unknown dispatcher");
}

namespace {

/// Seed ranges recorded by training; evaluating on them is refused.
void check_held_out(const std::string& checkpoint, const std::vector<hazard::HazardScenario>& scenarios) {
    if (checkpoint.empty()) return;
    const auto ck = policy::load_checkpoint(checkpoint);
    for (const char* prefix : {"train_seeds", "validation_seeds"}) {
        const auto b = ck.meta.find(std::string(prefix) + "_begin");
        const auto e = ck.meta.find(std::string(prefix) + "_end");
        if (b == ck.meta.end() || e == ck.meta.end()) continue;
        const auto lo = std::stoull(b->second), hi = std::stoull(e->second);
        for (const auto& sc : scenarios)
            require(sc.seed < lo || sc.seed >= hi, ErrorCode::Config,
                    "scenario seed " + std::to_string(sc.seed) + " lies in the checkpoint's " + prefix + " range [" +
                        b->second + ", " + e->second + ")");
    }
}

}  // namespace

// ---- episodes ---------------------------------------------------------------

EpisodeRun run_episode(Dispatcher& dispatcher, std::shared_ptr<const FeederModel> feeder,
                       std::shared_ptr<const RoadGraph> roads, const env::EnvConfig& env_config,
                       const hazard::HazardScenario& scenario, bool timing) {
    env::RestorationEnv env(std::move(feeder), std::move(roads), env_config);
    env.reset(scenario, scenario.seed);
    dispatcher.begin_episode();
    std::vector<double> ms;
    int decisions = 0;
    while (!env.done()) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto mask = build_mask(env.state(), env.feeder());
        auto action = dispatcher.decide(env, mask);
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        ++decisions;
        env.step(action);
    }
    EpisodeRun run;
    run.metrics = env.metrics();
    if (timing) run.metrics.decision_ms = ms;
    run.trace = env.trace();
    run.horizon_h = env.horizon();
    auto& r = run.row;
    r.method = dispatcher.name();
    r.seed = scenario.seed;
    r.event_kind = scenario.event_kind;
    r.ens_mwh = run.metrics.ens_mwh;
    r.critical_t95_min = run.metrics.critical_t95_min();
    r.travel_km = run.metrics.travel_km;
    r.replans = run.metrics.replans;
    r.decisions = decisions;
    r.decision_ms_median = timing && !ms.empty() ? percentile_linear(ms, 0.5) : 0.0;
    r.violations = run.metrics.violations;
    r.total_reward = run.metrics.total_reward;
    return run;
}

namespace {

constexpr const char* kCsvHeader =
    "method,seed,event_kind,ens_mwh,critical_t95_min,travel_km,replans,decisions,decision_ms_median,violations,"
    "total_reward";

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::string episodes_csv(const std::vector<EpisodeRow>& rows) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : rows) {
        out += r.method + ',' + std::to_string(r.seed) + ',' + r.event_kind + ',' + num(r.ens_mwh) + ',' +
               num(r.critical_t95_min) + ',' + num(r.travel_km) + ',' + std::to_string(r.replans) + ',' +
               std::to_string(r.decisions) + ',' + num(r.decision_ms_median) + ',' + std::to_string(r.violations) +
               ',' + num(r.total_reward) + '\n';
    }
    return out;
}

std::vector<EpisodeRow> parse_episodes_csv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line == kCsvHeader, ErrorCode::Parse,
            origin + ": unexpected episode table header");
    std::vector<EpisodeRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        const auto where = origin + ":" + std::to_string(lineno);
        require(f.size() == 11, ErrorCode::Parse, where + ": expected 11 fields");
        try {
            EpisodeRow r;
            r.method = f[0];
            r.seed = std::stoull(f[1]);
            r.event_kind = f[2];
            r.ens_mwh = std::stod(f[3]);
            r.critical_t95_min = std::stod(f[4]);
            r.travel_km = std::stod(f[5]);
            r.replans = std::stoi(f[6]);
            r.decisions = std::stoi(f[7]);
            r.decision_ms_median = std::stod(f[8]);
            r.violations = std::stoi(f[9]);
            r.total_reward = std::stod(f[10]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            fail(ErrorCode::Parse, where + ": malformed number");
        }
    }
    return rows;
}

// ---- aggregation ----------------------------------------------------------

Summary summarize(const std::vector<double>& values) {
    if (values.empty()) return {};
    return {percentile_linear(values, 0.5), percentile_linear(values, 0.25), percentile_linear(values, 0.75)};
}

std::string format_median_iqr(const Summary& s, int decimals) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(decimals) << s.median << " [" << s.p25 << "–" << s.p75 << "]";
    return os.str();
}

MetricsReport aggregate(const std::vector<EpisodeRow>& rows) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const EpisodeRow*>> by_method;
    for (const auto& r : rows) {
        if (!by_method.count(r.method)) order.push_back(r.method);
        by_method[r.method].push_back(&r);
    }
    MetricsReport report;
    for (const auto& name : order) {
        const auto& rs = by_method[name];
        std::vector<double> ens, t95, travel, ms, replans;
        MethodReport m;
        m.method = name;
        m.scenarios = rs.size();
        for (const auto* r : rs) {
            ens.push_back(r->ens_mwh);
            t95.push_back(r->critical_t95_min);
            travel.push_back(r->travel_km);
            ms.push_back(r->decision_ms_median);
            replans.push_back(r->replans);
            m.violations += r->violations;
        }
        m.ens_mwh = summarize(ens);
        m.critical_t95_min = summarize(t95);
        m.travel_km = summarize(travel);
        m.decision_ms = summarize(ms);
        m.replans = summarize(replans);
        report.methods.push_back(std::move(m));
    }
    return report;
}

namespace {

json summary_json(const Summary& s) { return {{"median", s.median}, {"p25", s.p25}, {"p75", s.p75}}; }

std::string pad(const std::string& s, std::size_t width) {
    // Width counts code points so the en dash occupies one column.
    std::size_t cols = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++cols;
    return s + std::string(cols < width ? width - cols : 0, ' ');
}

}  // namespace

json report_to_json(const MetricsReport& report, bool timing) {
    json methods = json::array();
    for (const auto& m : report.methods) {
        json j{{"method", m.method},
               {"scenarios", m.scenarios},
               {"ens_mwh", summary_json(m.ens_mwh)},
               {"critical_t95_min", summary_json(m.critical_t95_min)},
               {"travel_km", summary_json(m.travel_km)},
               {"replans", summary_json(m.replans)},
               {"violations", m.violations}};
        if (timing) j["decision_ms"] = summary_json(m.decision_ms);
        methods.push_back(std::move(j));
    }
    return {{"format", "stormdispatch-report"},
            {"version", 1},
            {"percentile_method", kPercentileMethod},
            {"values", "median [25th-75th pct]"},
            {"methods", methods}};
}

std::string report_to_text(const MetricsReport& report, bool timing) {
    std::ostringstream os;
    os << "Values: median [25th–75th pct]; percentiles by " << kPercentileMethod << "\n";
    std::vector<std::string> head{"method", "n", "ENS (MWh)", "crit t95 (min)", "travel (km)"};
    if (timing) head.push_back("decision (ms)");
    head.push_back("replans");
    head.push_back("violations");
    std::vector<std::vector<std::string>> table{head};
    for (const auto& m : report.methods) {
        std::vector<std::string> row{m.method, std::to_string(m.scenarios), format_median_iqr(m.ens_mwh, 2),
                                     format_median_iqr(m.critical_t95_min, 0), format_median_iqr(m.travel_km, 1)};
        if (timing) row.push_back(format_median_iqr(m.decision_ms, 3));
        row.push_back(format_median_iqr(m.replans, 0));
        row.push_back(std::to_string(m.violations));
        table.push_back(std::move(row));
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& row : table)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], pad(row[c], 0).size());
    for (const auto& row : table) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) line += (c ? "  " : "") + pad(row[c], width[c]);
        while (!line.empty() && line.back() == ' ') line.pop_back();
        os << line << "\n";
    }
    if (report.methods.empty()) os << "(no scenarios)\n";
    return os.str();
}

// ---- commands ---------------------------------------------------------------

namespace {

env::EnvConfig load_env_config(const std::string& path, int crews) {
    env::EnvConfig c = path.empty() ? env::EnvConfig{} : env::env_config_from_json(read_json_file(path));
    c.crews = crews;
    c.validate();
    return c;
}

void write_report_files(const std::string& dir, const std::vector<EpisodeRow>& rows, const MetricsReport& report,
                        bool timing) {
    fs::create_directories(dir);
    write_text_file((fs::path(dir) / "episodes.csv").string(), episodes_csv(rows));
    write_text_file((fs::path(dir) / "report.json").string(), dump_canonical(report_to_json(report, timing)));
    write_text_file((fs::path(dir) / "report.txt").string(), report_to_text(report, timing));
}

}  // namespace

EvaluateResult evaluate(const EvaluateOptions& o) {
    require(!o.out_dir.empty(), ErrorCode::Config, "an output directory is required");
    require(!o.dispatchers.empty(), ErrorCode::Config, "at least one dispatcher is required");
    const auto ws = load_workspace(o.hazard_config, o.feeder);
    validate_crew_count(ws.feeder->name(), o.crews);
    const auto env_config = load_env_config(o.env_config, o.crews);

    std::vector<hazard::HazardScenario> scenarios;
    if (!o.scenario_dir.empty()) {
        scenarios = load_scenario_set(o.scenario_dir, *ws.feeder, *ws.roads);
    } else {
        require(o.count >= 0, ErrorCode::Parameter, "scenario count must be non-negative");
        for (int i = 0; i < o.count; ++i)
            scenarios.push_back(hazard::generate_scenario(ws.scenario_config, *ws.feeder, *ws.roads,
                                                          o.seed_base + static_cast<std::uint64_t>(i)));
    }

    EvaluateResult result;
    for (const auto& spec : o.dispatchers) {
        auto d = make_dispatcher(spec, *ws.feeder, o.crews);
        if (spec.kind == DispatcherKind::Drl) check_held_out(spec.checkpoint, scenarios);
        for (const auto& sc : scenarios) {
            try {
                result.rows.push_back(run_episode(*d, ws.feeder, ws.roads, env_config, sc, o.timing).row);
            } catch (const Error& e) {
                throw Error(e.code(), d->name() + " on scenario " + std::to_string(sc.seed) + ": " + e.what());
            }
        }
    }
    result.report = aggregate(result.rows);
    write_report_files(o.out_dir, result.rows, result.report, o.timing);
    return result;
}

EpisodeRun simulate(const SimulateOptions& o) {
    require(!o.out_dir.empty(), ErrorCode::Config, "an output directory is required");
    const auto ws = load_workspace(o.hazard_config, o.feeder);
    validate_crew_count(ws.feeder->name(), o.crews);
    const auto env_config = load_env_config(o.env_config, o.crews);
    const auto sc = hazard::generate_scenario(ws.scenario_config, *ws.feeder, *ws.roads, o.seed);
    auto d = make_dispatcher(o.dispatcher, *ws.feeder, o.crews);
    if (o.dispatcher.kind == DispatcherKind::Drl) check_held_out(o.dispatcher.checkpoint, {sc});
    auto run = run_episode(*d, ws.feeder, ws.roads, env_config, sc, true);

    fs::create_directories(o.out_dir);
    std::string lines;
    for (const auto& r : run.trace)
        lines += json{{"t_h", r.time_h},
                      {"kind", r.kind},
                      {"crew", r.crew},
                      {"site", r.site},
                      {"unserved_kw", r.unserved_kw},
                      {"reward", r.reward},
                      {"detail", r.detail}}
                     .dump() +
                 "\n";
    write_text_file((fs::path(o.out_dir) / "trace.jsonl").string(), lines);
    const json episode{{"dispatcher", run.row.method},
                       {"seed", sc.seed},
                       {"event_kind", sc.event_kind},
                       {"horizon_h", run.horizon_h},
                       {"ens_mwh", run.metrics.ens_mwh},
                       {"replay_ens_mwh", env::replay_ens_mwh(run.trace, run.horizon_h)},
                       {"critical_restore_min", run.metrics.critical_restore_min},
                       {"critical_t95_min", run.row.critical_t95_min},
                       {"travel_km", run.metrics.travel_km},
                       {"replans", run.metrics.replans},
                       {"decisions", run.row.decisions},
                       {"decision_ms", run.metrics.decision_ms},
                       {"violations", run.metrics.violations},
                       {"total_reward", run.metrics.total_reward}};
    write_text_file((fs::path(o.out_dir) / "episode.json").string(), dump_canonical(episode));
    return run;
}

MetricsReport report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    require(!out_dir.empty(), ErrorCode::Config, "an output directory is required");
    std::vector<EpisodeRow> rows;
    for (const auto& dir : run_dirs) {
        const auto path = fs::is_directory(dir) ? (fs::path(dir) / "episodes.csv").string() : dir;
        auto part = parse_episodes_csv(read_text_file(path), path);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    const auto rep = aggregate(rows);
    write_report_files(out_dir, rows, rep, true);
    return rep;
}

TrainConfigFile load_train_config(const std::string& path) {
    const auto doc = read_json_file(path);
    require(doc.value("format", "") == "stormdispatch-train-config" && doc.value("version", 0) == 1,
            ErrorCode::Parse, path + ": expected format 'stormdispatch-train-config' version 1");
    TrainConfigFile c;
    try {
        c.hazard_config = resolve(parent_dir(path), doc.at("hazard_config").get<std::string>());
    } catch (const json::exception& e) {
        fail(ErrorCode::Config, path + ": " + e.what());
    }
    if (doc.contains("env")) c.env = env::env_config_from_json(doc.at("env"));
    if (doc.contains("ppo")) c.ppo = trainer::ppo_config_from_json(doc.at("ppo"));
    if (doc.contains("policy")) c.policy = policy_config_from_json(doc.at("policy"));
    return c;
}

trainer::TrainResult train(const TrainCommandOptions& o,
                           const std::function<void(int, const trainer::UpdateDiagnostics&, double)>& on_epoch) {
    require(!o.out_dir.empty(), ErrorCode::Config, "an output directory is required");
    auto c = load_train_config(o.config);
    if (o.seed) c.ppo.seed = *o.seed;
    if (o.crews) c.env.crews = *o.crews;
    if (o.epochs) c.ppo.epochs = *o.epochs;
    c.ppo.validate();
    c.env.validate();
    const auto ws = load_workspace(c.hazard_config, o.feeder);
    validate_crew_count(ws.feeder->name(), c.env.crews);
    require(c.env.crews <= c.policy.max_crews, ErrorCode::Config,
            "policy max_crews " + std::to_string(c.policy.max_crews) + " is below the crew count " +
                std::to_string(c.env.crews));
    trainer::EnvFactory factory{ws.feeder, ws.roads, c.env, ws.scenario_config};
    trainer::TrainOptions to;
    to.out_dir = o.out_dir;
    to.resume = o.resume;
    to.policy_config = c.policy;
    to.on_epoch = on_epoch;
    return trainer::train(c.ppo, factory, to);
}

}  // namespace stormdispatch::harness
