#include "stormdispatch/core/hazard_io.hpp"

#include <filesystem>

#include "stormdispatch/core/error.hpp"
#include "stormdispatch/core/feeder.hpp"
#include "stormdispatch/core/json_io.hpp"

namespace stormdispatch::hazard {

using nlohmann::json;

namespace {

Range read_range(const json& j) {
    if (j.is_number()) return {j.get<double>(), j.get<double>()};
    require(j.is_array() && j.size() == 2, ErrorCode::Config, "range must be a number or [lo, hi]");
    return {j[0].get<double>(), j[1].get<double>()};
}

std::optional<FragilityCurve> read_curve(const json& j, const std::string& cls, const char* key) {
    if (!j.contains(key)) return std::nullopt;
    FragilityCurve c;
    c.component_class = cls;
    c.damage_state = j.at(key).value("damage_state", std::string("failed"));
    c.median = j.at(key).at("median").get<double>();
    c.dispersion = j.at(key).at("dispersion").get<double>();
    return c;
}

HazardMode parse_mode(const std::string& s) {
    if (s == "hurricane") return HazardMode::Hurricane;
    if (s == "flood") return HazardMode::Flood;
    if (s == "combined") return HazardMode::Combined;
    if (s == "mixed") return HazardMode::Mixed;
    fail(ErrorCode::Config, "unknown hazard mode '" + s + "'");
}

}  // namespace

ScenarioConfig scenario_config_from_json(const json& doc, const std::string& base_dir) {
    require(doc.value("format", "") == "stormdispatch-hazard-config" && doc.value("version", 0) == 1,
            ErrorCode::Parse, "hazard config: expected format 'stormdispatch-hazard-config' version 1");
    try {
        ScenarioConfig c;
        c.name = doc.value("name", std::string("scenario"));
        const auto feeder = doc.at("feeder").get<std::string>();
        c.feeder_path = std::filesystem::path(feeder).is_absolute()
                            ? feeder
                            : (std::filesystem::path(base_dir) / feeder).lexically_normal().string();
        c.mode = parse_mode(doc.value("mode", std::string("combined")));
        c.horizon_h = doc.value("horizon_h", 12.0);
        if (doc.contains("hurricane")) {
            const auto& h = doc.at("hurricane");
            c.hurricane.delta_p_hpa = read_range(h.at("delta_p_hpa"));
            c.hurricane.r_m_km = read_range(h.at("r_m_km"));
            if (h.contains("b_shape")) c.hurricane.b_shape = read_range(h.at("b_shape"));
            c.hurricane.p_env_hpa = h.value("p_env_hpa", 1013.0);
            c.hurricane.rho_air = h.value("rho_air", kDefaultAirDensity);
            if (h.contains("v_bg")) c.hurricane.v_bg = read_range(h.at("v_bg"));
            if (h.contains("center_x_km")) c.hurricane.center_x_km = read_range(h.at("center_x_km"));
            if (h.contains("center_y_km")) c.hurricane.center_y_km = read_range(h.at("center_y_km"));
        }
        if (doc.contains("flood")) {
            const auto& f = doc.at("flood");
            c.flood.base_depth_m = f.value("base_depth_m", 0.0);
            for (const auto& b : f.value("basins", json::array()))
                c.flood.basins.push_back({{b.at("x_km").get<double>(), b.at("y_km").get<double>()},
                                          b.at("radius_km").get<double>(),
                                          b.at("depth_m").get<double>()});
            if (f.contains("depth_scale")) c.flood.depth_scale = read_range(f.at("depth_scale"));
            c.flood.variance = f.value("variance", 0.0);
            c.flood.range_km = f.value("range_km", 1.0);
            c.flood.jitter = f.value("jitter", 1e-10);
        }
        for (const auto& [cls, j] : doc.at("fragility").items())
            c.fragility[cls] = ClassFragility{read_curve(j, cls, "wind"), read_curve(j, cls, "flood")};
        c.copula_range_km = doc.value("copula_range_km", 2.0);
        if (doc.contains("discovery")) {
            c.discovery.breakpoints_h = doc.at("discovery").at("breakpoints_h").get<std::vector<double>>();
            c.discovery.rates_per_h = doc.at("discovery").at("rates_per_h").get<std::vector<double>>();
        }
        c.discovery.horizon_h = c.horizon_h;
        c.initial_confirm_prob = doc.value("initial_confirm_prob", 0.4);
        for (const auto& [cls, j] : doc.at("repair_priors").items()) {
            RepairPrior p;
            p.component_class = cls;
            p.mu = j.at("mu").get<double>();
            p.sigma = j.at("sigma").get<double>();
            p.truncation_h = j.value("truncation_h", std::numeric_limits<double>::infinity());
            c.repair_priors[cls] = p;
        }
        if (doc.contains("congestion")) {
            c.congestion_lo = doc.at("congestion").value("lo", 1.2);
            c.congestion_hi = doc.at("congestion").value("hi", 2.0);
            c.congestion_block_h = doc.at("congestion").value("block_h", 6.0);
        }
        if (doc.contains("shift")) {
            c.delta_p_scale = doc.at("shift").value("delta_p_scale", 1.0);
            c.rate_scale = doc.at("shift").value("rate_scale", 1.0);
        }
        c.validate();
        return c;
    } catch (const json::exception& e) {
        fail(ErrorCode::Config, std::string("hazard config: ") + e.what());
    }
}

ScenarioConfig load_scenario_config(const std::string& path) {
    return scenario_config_from_json(read_json_file(path), std::filesystem::path(path).parent_path().string());
}

json scenario_to_json(const HazardScenario& sc, const FeederModel& feeder, const RoadGraph& roads) {
    auto bid = [&](int b) { return feeder.branches().at(static_cast<std::size_t>(b)).id; };
    json doc;
    doc["format"] = "stormdispatch-scenario";
    doc["version"] = 1;
    doc["seed"] = sc.seed;
    doc["feeder"] = sc.feeder_name;
    doc["event_kind"] = sc.event_kind;
    doc["horizon_h"] = sc.horizon_h;
    doc["initial_damage"] = json::array();
    for (int s : sc.initial_damage) doc["initial_damage"].push_back(bid(s));
    doc["arrivals"] = json::array();
    for (const auto& a : sc.arrivals) doc["arrivals"].push_back({{"t_h", a.time_h}, {"branch", bid(a.site)}});
    doc["undiscovered"] = json::array();
    for (int s : sc.undiscovered) doc["undiscovered"].push_back(bid(s));
    doc["repair_times_h"] = json::object();
    for (const auto& [s, t] : sc.repair_times) doc["repair_times_h"][bid(s)] = t;
    doc["road_closures"] = json::array();
    for (int s : sc.road_closures) doc["road_closures"].push_back(roads.segments().at(static_cast<std::size_t>(s)).id);
    doc["congestion"] = {{"block_h", sc.congestion.block_h},
                         {"lo", sc.congestion.lo},
                         {"hi", sc.congestion.hi},
                         {"values", sc.congestion.values}};
    return doc;
}

HazardScenario scenario_from_json(const json& doc, const FeederModel& feeder, const RoadGraph& roads) {
    require(doc.value("format", "") == "stormdispatch-scenario" && doc.value("version", 0) == 1, ErrorCode::Parse,
            "scenario: expected format 'stormdispatch-scenario' version 1");
    try {
        HazardScenario sc;
        sc.seed = doc.at("seed").get<std::uint64_t>();
        sc.feeder_name = doc.at("feeder").get<std::string>();
        require(sc.feeder_name == feeder.name(), ErrorCode::Config,
                "scenario was generated for feeder '" + sc.feeder_name + "', not '" + feeder.name() + "'");
        sc.event_kind = doc.value("event_kind", std::string("combined"));
        sc.horizon_h = doc.at("horizon_h").get<double>();
        auto branch = [&](const json& j) {
            const auto id = j.get<std::string>();
            auto idx = feeder.branch_index(id);
            require(idx.has_value(), ErrorCode::Config, "scenario references unknown branch '" + id + "'");
            return *idx;
        };
        for (const auto& j : doc.at("initial_damage")) sc.initial_damage.push_back(branch(j));
        for (const auto& j : doc.at("arrivals")) sc.arrivals.push_back({j.at("t_h").get<double>(), branch(j.at("branch"))});
        for (const auto& j : doc.value("undiscovered", json::array())) sc.undiscovered.push_back(branch(j));
        for (const auto& [id, t] : doc.at("repair_times_h").items()) sc.repair_times[branch(json(id))] = t.get<double>();
        for (const auto& j : doc.at("road_closures")) {
            auto idx = roads.segment_index(j.get<std::string>());
            require(idx.has_value(), ErrorCode::Config, "scenario references unknown road segment");
            sc.road_closures.push_back(*idx);
        }
        const auto& c = doc.at("congestion");
        sc.congestion.block_h = c.at("block_h").get<double>();
        sc.congestion.lo = c.at("lo").get<double>();
        sc.congestion.hi = c.at("hi").get<double>();
        sc.congestion.values = c.at("values").get<std::vector<double>>();
        sc.validate();
        return sc;
    } catch (const json::exception& e) {
        fail(ErrorCode::Parse, std::string("scenario: ") + e.what());
    }
}

void save_scenario(const std::string& path, const HazardScenario& scenario, const FeederModel& feeder,
                   const RoadGraph& roads) {
    write_text_file(path, dump_canonical(scenario_to_json(scenario, feeder, roads)));
}

HazardScenario load_scenario(const std::string& path, const FeederModel& feeder, const RoadGraph& roads) {
    return scenario_from_json(read_json_file(path), feeder, roads);
}

}  // namespace stormdispatch::hazard
