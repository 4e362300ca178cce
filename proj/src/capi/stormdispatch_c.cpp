#include "stormdispatch/stormdispatch.h"

#include <cstdio>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include "stormdispatch/core/error.hpp"
#include "stormdispatch/core/harness.hpp"
#include "stormdispatch/core/json_io.hpp"

using namespace stormdispatch;

struct sd_workspace {
    harness::Workspace ws;
};

struct sd_dispatcher {
    std::unique_ptr<harness::Dispatcher> impl;
    int crews = 0;
};

struct sd_episode {
    harness::EpisodeRun run;
    std::string jsonl;
};

namespace {

thread_local std::string g_last_error;

sd_status status_of(ErrorCode c) {
    switch (c) {
        case ErrorCode::Parameter: return SD_ERR_PARAMETER;
        case ErrorCode::Parse: return SD_ERR_PARSE;
        case ErrorCode::Validation: return SD_ERR_VALIDATION;
        case ErrorCode::Numerical: return SD_ERR_NUMERICAL;
        case ErrorCode::Config: return SD_ERR_CONFIG;
        case ErrorCode::Contract: return SD_ERR_CONTRACT;
        case ErrorCode::Io: return SD_ERR_IO;
    }
    return SD_ERR_INTERNAL;
}

template <typename F>
sd_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return SD_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return SD_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SD_ERR_INTERNAL;
    }
}

std::string str(const char* s) { return s ? std::string(s) : std::string(); }

void need(const void* p, const char* what) {
    require(p != nullptr, ErrorCode::Parameter, std::string(what) + " must not be NULL");
}

harness::DispatcherSpec spec_of(const sd_dispatcher_options& o) {
    harness::DispatcherSpec s;
    need(o.kind, "dispatcher kind");
    s.kind = harness::parse_dispatcher(o.kind);
    s.checkpoint = str(o.checkpoint);
    switch (o.mode) {
        case SD_SELECT_GREEDY: s.mode = trainer::EvalMode::Greedy; break;
        case SD_SELECT_SAMPLE: s.mode = trainer::EvalMode::Sample; break;
        case SD_SELECT_TEMPERATURE: s.mode = trainer::EvalMode::Temperature; break;
        default: fail(ErrorCode::Parameter, "unknown selection mode");
    }
    require(o.temperature > 0.0, ErrorCode::Parameter, "temperature must be positive");
    s.temperature = o.temperature;
    s.seed = o.seed;
    if (o.oracle_depth > 0) s.oracle.oracle_depth = o.oracle_depth;
    return s;
}

void fill_metrics(const harness::EpisodeRun& run, sd_episode_metrics* out) {
    out->seed = run.row.seed;
    out->ens_mwh = run.row.ens_mwh;
    out->replay_ens_mwh = env::replay_ens_mwh(run.trace, run.horizon_h);
    out->critical_t95_min = run.row.critical_t95_min;
    out->travel_km = run.row.travel_km;
    out->replans = run.row.replans;
    out->decisions = run.row.decisions;
    out->decision_ms_median = run.row.decision_ms_median;
    out->violations = run.row.violations;
    out->total_reward = run.row.total_reward;
    out->horizon_h = run.horizon_h;
}

void fill_summaries(const harness::MetricsReport& r, sd_method_summary* out, std::size_t capacity,
                    std::size_t* count) {
    if (count) *count = r.methods.size();
    if (!out) return;
    for (std::size_t i = 0; i < r.methods.size() && i < capacity; ++i) {
        const auto& m = r.methods[i];
        auto& s = out[i];
        std::memset(&s, 0, sizeof s);
        std::snprintf(s.method, sizeof s.method, "%s", m.method.c_str());
        s.scenarios = m.scenarios;
        s.ens_median = m.ens_mwh.median;
        s.ens_p25 = m.ens_mwh.p25;
        s.ens_p75 = m.ens_mwh.p75;
        s.t95_median = m.critical_t95_min.median;
        s.t95_p25 = m.critical_t95_min.p25;
        s.t95_p75 = m.critical_t95_min.p75;
        s.travel_median = m.travel_km.median;
        s.travel_p25 = m.travel_km.p25;
        s.travel_p75 = m.travel_km.p75;
        s.decision_ms_median = m.decision_ms.median;
        s.decision_ms_p25 = m.decision_ms.p25;
        s.decision_ms_p75 = m.decision_ms.p75;
        s.violations = m.violations;
    }
}

env::EnvConfig env_config_at(const char* path, int crews) {
    env::EnvConfig c = path && *path ? env::env_config_from_json(read_json_file(path)) : env::EnvConfig{};
    c.crews = crews;
    c.validate();
    return c;
}

}  // namespace

extern "C" {

const char* sd_version(void) { return "1.0.0"; }

const char* sd_status_name(sd_status status) {
    switch (status) {
        case SD_OK: return "ok";
        case SD_ERR_PARAMETER: return "parameter error";
        case SD_ERR_PARSE: return "parse error";
        case SD_ERR_VALIDATION: return "validation error";
        case SD_ERR_NUMERICAL: return "numerical error";
        case SD_ERR_CONFIG: return "configuration error";
        case SD_ERR_CONTRACT: return "contract error";
        case SD_ERR_IO: return "i/o error";
        case SD_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* sd_last_error(void) { return g_last_error.c_str(); }

sd_status sd_workspace_open(const char* hazard_config_path, const char* feeder_path, sd_workspace** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        need(hazard_config_path, "hazard_config_path");
        auto ws = std::make_unique<sd_workspace>();
        ws->ws = harness::load_workspace(hazard_config_path, str(feeder_path));
        *out = ws.release();
    });
}

sd_status sd_workspace_info_get(const sd_workspace* ws, sd_workspace_info* out) {
    return guarded([&] {
        need(ws, "workspace");
        need(out, "out");
        const auto& f = *ws->ws.feeder;
        out->feeder_name = f.name().c_str();
        out->buses = f.buses().size();
        out->branches = f.branches().size();
        out->depots = f.depots().size();
        out->total_load_kw = f.total_load_kw();
        out->config_hash = ws->ws.config_hash;
    });
}

void sd_workspace_free(sd_workspace* ws) { delete ws; }

void sd_dispatcher_options_init(sd_dispatcher_options* options) {
    if (!options) return;
    std::memset(options, 0, sizeof *options);
    options->kind = "greedy_value";
    options->mode = SD_SELECT_GREEDY;
    options->temperature = 1.0;
}

sd_status sd_dispatcher_create(const sd_workspace* ws, const sd_dispatcher_options* options, int crews,
                               sd_dispatcher** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        need(ws, "workspace");
        need(options, "options");
        harness::validate_crew_count(ws->ws.feeder->name(), crews);
        auto d = std::make_unique<sd_dispatcher>();
        d->impl = harness::make_dispatcher(spec_of(*options), *ws->ws.feeder, crews);
        d->crews = crews;
        *out = d.release();
    });
}

void sd_dispatcher_free(sd_dispatcher* d) { delete d; }

sd_status sd_episode_run(const sd_workspace* ws, sd_dispatcher* d, const char* env_config_path, int crews,
                         uint64_t scenario_seed, sd_episode** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        need(ws, "workspace");
        need(d, "dispatcher");
        require(crews <= d->crews, ErrorCode::Config, "dispatcher was created for fewer crews");
        const auto cfg = env_config_at(env_config_path, crews);
        const auto& w = ws->ws;
        const auto sc = hazard::generate_scenario(w.scenario_config, *w.feeder, *w.roads, scenario_seed);
        auto ep = std::make_unique<sd_episode>();
        ep->run = harness::run_episode(*d->impl, w.feeder, w.roads, cfg, sc, true);
        for (const auto& r : ep->run.trace)
            ep->jsonl += nlohmann::json{{"t_h", r.time_h},
                                        {"kind", r.kind},
                                        {"crew", r.crew},
                                        {"site", r.site},
                                        {"unserved_kw", r.unserved_kw},
                                        {"reward", r.reward},
                                        {"detail", r.detail}}
                             .dump() +
                         "\n";
        *out = ep.release();
    });
}

sd_status sd_episode_metrics_get(const sd_episode* ep, sd_episode_metrics* out) {
    return guarded([&] {
        need(ep, "episode");
        need(out, "out");
        fill_metrics(ep->run, out);
    });
}

sd_status sd_episode_trace_jsonl(const sd_episode* ep, const char** text, size_t* records) {
    return guarded([&] {
        need(ep, "episode");
        need(text, "text");
        *text = ep->jsonl.c_str();
        if (records) *records = ep->run.trace.size();
    });
}

void sd_episode_free(sd_episode* ep) { delete ep; }

sd_status sd_gen_scenarios(const sd_gen_options* options, char config_hash_hex[17]) {
    return guarded([&] {
        need(options, "options");
        harness::GenScenariosOptions o;
        o.hazard_config = str(options->hazard_config);
        o.feeder = str(options->feeder);
        o.seed_base = options->seed_base;
        o.count = options->count;
        o.out_dir = str(options->out_dir);
        o.force = options->force != 0;
        const auto m = harness::gen_scenarios(o);
        if (config_hash_hex) std::snprintf(config_hash_hex, 17, "%s", m.config_hash.c_str());
    });
}

sd_status sd_evaluate(const sd_evaluate_options* options, sd_method_summary* summaries, size_t capacity,
                      size_t* count) {
    return guarded([&] {
        need(options, "options");
        harness::EvaluateOptions o;
        o.hazard_config = str(options->hazard_config);
        o.feeder = str(options->feeder);
        o.scenario_dir = str(options->scenario_dir);
        o.seed_base = options->seed_base;
        o.count = options->count;
        o.crews = options->crews;
        o.env_config = str(options->env_config);
        require(options->dispatcher_count == 0 || options->dispatchers, ErrorCode::Parameter,
                "dispatchers must not be NULL");
        for (std::size_t i = 0; i < options->dispatcher_count; ++i) o.dispatchers.push_back(spec_of(options->dispatchers[i]));
        o.out_dir = str(options->out_dir);
        o.timing = options->timing != 0;
        const auto r = harness::evaluate(o);
        fill_summaries(r.report, summaries, capacity, count);
    });
}

sd_status sd_simulate(const sd_simulate_options* options, sd_episode_metrics* out) {
    return guarded([&] {
        need(options, "options");
        harness::SimulateOptions o;
        o.hazard_config = str(options->hazard_config);
        o.feeder = str(options->feeder);
        o.seed = options->seed;
        o.crews = options->crews;
        o.env_config = str(options->env_config);
        o.dispatcher = spec_of(options->dispatcher);
        o.out_dir = str(options->out_dir);
        const auto run = harness::simulate(o);
        if (out) fill_metrics(run, out);
    });
}

sd_status sd_report(const char* const* inputs, size_t input_count, const char* out_dir, sd_method_summary* summaries,
                    size_t capacity, size_t* count) {
    return guarded([&] {
        require(input_count == 0 || inputs, ErrorCode::Parameter, "inputs must not be NULL");
        std::vector<std::string> dirs;
        for (std::size_t i = 0; i < input_count; ++i) {
            need(inputs[i], "input path");
            dirs.emplace_back(inputs[i]);
        }
        const auto r = harness::report(dirs, str(out_dir));
        fill_summaries(r, summaries, capacity, count);
    });
}

sd_status sd_train(const sd_train_options* options, sd_epoch_callback callback, void* user, sd_train_summary* out) {
    return guarded([&] {
        need(options, "options");
        harness::TrainCommandOptions o;
        o.config = str(options->config);
        o.feeder = str(options->feeder);
        o.out_dir = str(options->out_dir);
        o.resume = options->resume != 0;
        if (options->has_seed) o.seed = options->seed;
        if (options->crews > 0) o.crews = options->crews;
        if (options->epochs > 0) o.epochs = options->epochs;
        std::function<void(int, const trainer::UpdateDiagnostics&, double)> hook;
        if (callback)
            hook = [&](int epoch, const trainer::UpdateDiagnostics& d, double r) {
                callback(epoch, d.loss.policy, d.loss.value, d.loss.entropy, r, user);
            };
        const auto res = harness::train(o, hook);
        if (out) {
            out->epochs_run = res.epochs_run;
            out->best_epoch = res.best_epoch;
            out->best_eval_reward = res.best_eval_reward;
            out->first_eval_reward = res.eval_rewards.empty() ? 0.0 : res.eval_rewards.front();
        }
    });
}

}  // extern "C"
