#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "stormdispatch/stormdispatch.h"

namespace fs = std::filesystem;

namespace {

const std::string kData = SD_DATA_DIR;
const std::string kHazard13 = kData + "/hazard.ieee13.json";

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("sd_test_capi_" + name);
    fs::remove_all(p);
    return p;
}

struct Workspace {
    sd_workspace* ws = nullptr;
    Workspace() { REQUIRE(sd_workspace_open(kHazard13.c_str(), nullptr, &ws) == SD_OK); }
    ~Workspace() { sd_workspace_free(ws); }
};

sd_dispatcher_options options(const char* kind) {
    sd_dispatcher_options o;
    sd_dispatcher_options_init(&o);
    o.kind = kind;
    return o;
}

}  // namespace

TEST_CASE("status names and version") {
    CHECK(std::strlen(sd_version()) > 0);
    CHECK(std::string(sd_status_name(SD_OK)) == "ok");
    CHECK(std::string(sd_status_name(SD_ERR_CONFIG)) == "configuration error");
    CHECK(std::string(sd_status_name(static_cast<sd_status>(99))) == "unknown status");
}

TEST_CASE("workspace") {
    sd_workspace* ws = nullptr;
    CHECK(sd_workspace_open(nullptr, nullptr, &ws) == SD_ERR_PARAMETER);
    CHECK(std::strlen(sd_last_error()) > 0);
    CHECK(sd_workspace_open((kData + "/nope.json").c_str(), nullptr, &ws) == SD_ERR_IO);
    CHECK(ws == nullptr);

    Workspace w;
    CHECK(std::string(sd_last_error()).empty());
    sd_workspace_info info{};
    REQUIRE(sd_workspace_info_get(w.ws, &info) == SD_OK);
    CHECK(std::string(info.feeder_name) == "ieee13");
    CHECK(info.buses > 0);
    CHECK(info.branches > 0);
    CHECK(info.total_load_kw > 0.0);
    CHECK(sd_workspace_info_get(nullptr, &info) == SD_ERR_PARAMETER);
    sd_workspace_free(nullptr);
}

TEST_CASE("dispatchers and episodes") {
    Workspace w;
    sd_dispatcher* d = nullptr;
    auto bad = options("milp");
    CHECK(sd_dispatcher_create(w.ws, &bad, 3, &d) != SD_OK);
    auto drl = options("drl");
    CHECK(sd_dispatcher_create(w.ws, &drl, 3, &d) == SD_ERR_CONFIG);

    auto greedy = options("greedy_value");
    REQUIRE(sd_dispatcher_create(w.ws, &greedy, 3, &d) == SD_OK);
    sd_episode* ep = nullptr;
    CHECK(sd_episode_run(w.ws, d, nullptr, 4, 7, &ep) == SD_ERR_CONFIG);
    REQUIRE(sd_episode_run(w.ws, d, nullptr, 3, 7, &ep) == SD_OK);
    sd_episode_metrics m{};
    REQUIRE(sd_episode_metrics_get(ep, &m) == SD_OK);
    CHECK(m.seed == 7);
    CHECK(std::abs(m.ens_mwh - m.replay_ens_mwh) < 1e-9);
    CHECK(m.violations == 0);
    const char* text = nullptr;
    size_t records = 0;
    REQUIRE(sd_episode_trace_jsonl(ep, &text, &records) == SD_OK);
    CHECK(records > 0);
    size_t lines = 0;
    for (const char* c = text; *c; ++c) lines += (*c == '\n');
    CHECK(lines == records);

    sd_episode* again = nullptr;
    REQUIRE(sd_episode_run(w.ws, d, nullptr, 3, 7, &again) == SD_OK);
    sd_episode_metrics m2{};
    sd_episode_metrics_get(again, &m2);
    CHECK(m2.ens_mwh == m.ens_mwh);
    sd_episode_free(again);
    sd_episode_free(ep);
    sd_dispatcher_free(d);
}

TEST_CASE("commands") {
    const auto dir = scratch("cmd");
    char hash[17] = {};
    const auto scen = (dir / "scen").string();
    sd_gen_options g{kHazard13.c_str(), nullptr, 600000, 3, scen.c_str(), 0};
    REQUIRE(sd_gen_scenarios(&g, hash) == SD_OK);
    CHECK(std::strlen(hash) == 16);
    CHECK(sd_gen_scenarios(&g, hash) == SD_ERR_CONFIG);
    CHECK(std::string(sd_last_error()).find(scen) != std::string::npos);

    const sd_dispatcher_options ds[2] = {options("greedy_value"), options("travel_aware")};
    const auto eval_dir = (dir / "eval").string();
    sd_evaluate_options e{};
    e.hazard_config = kHazard13.c_str();
    e.scenario_dir = scen.c_str();
    e.crews = 3;
    e.dispatchers = ds;
    e.dispatcher_count = 2;
    e.out_dir = eval_dir.c_str();
    sd_method_summary rows[1];
    size_t count = 0;
    REQUIRE(sd_evaluate(&e, rows, 1, &count) == SD_OK);
    CHECK(count == 2);
    CHECK(std::string(rows[0].method) == "greedy_value");
    CHECK(rows[0].scenarios == 3);
    CHECK(rows[0].ens_p25 <= rows[0].ens_median);
    CHECK(fs::exists(dir / "eval" / "episodes.csv"));

    const char* inputs[] = {eval_dir.c_str()};
    const auto rep = (dir / "rep").string();
    sd_method_summary merged[2];
    REQUIRE(sd_report(inputs, 1, rep.c_str(), merged, 2, &count) == SD_OK);
    CHECK(count == 2);
    CHECK(merged[0].ens_median == rows[0].ens_median);
    CHECK(std::string(merged[1].method) == "travel_aware");
    CHECK(sd_report(nullptr, 1, rep.c_str(), nullptr, 0, &count) == SD_ERR_PARAMETER);

    const auto sim = (dir / "sim").string();
    sd_simulate_options s{};
    s.hazard_config = kHazard13.c_str();
    s.seed = 600001;
    s.crews = 3;
    s.dispatcher = options("travel_aware");
    s.out_dir = sim.c_str();
    sd_episode_metrics m{};
    REQUIRE(sd_simulate(&s, &m) == SD_OK);
    CHECK(std::abs(m.ens_mwh - m.replay_ens_mwh) < 1e-9);
    CHECK(fs::exists(dir / "sim" / "trace.jsonl"));
    fs::remove_all(dir);
}

TEST_CASE("training through the C interface") {
    const auto dir = scratch("train");
    const auto out = dir.string();
    const auto cfg = kData + "/train.smoke.json";
    sd_train_options t{};
    t.config = cfg.c_str();
    t.out_dir = out.c_str();
    t.epochs = 1;
    std::vector<int> epochs;
    auto cb = [](int epoch, double, double, double, double, void* user) {
        static_cast<std::vector<int>*>(user)->push_back(epoch);
    };
    sd_train_summary sum{};
    REQUIRE(sd_train(&t, cb, &epochs, &sum) == SD_OK);
    CHECK(sum.epochs_run == 1);
    CHECK(epochs.size() == 1);
    t.crews = 4;
    CHECK(sd_train(&t, nullptr, nullptr, &sum) == SD_ERR_CONFIG);
    t.crews = 0;
    t.config = "/nonexistent/train.json";
    CHECK(sd_train(&t, nullptr, nullptr, &sum) == SD_ERR_IO);
    fs::remove_all(dir);
}
