// Command-line front end. Uses the C interface only.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stormdispatch/stormdispatch.h"

namespace {

int report_failure(sd_status s) {
    std::fprintf(stderr, "stormdispatch: %s: %s\n", sd_status_name(s), sd_last_error());
    return static_cast<int>(s);
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

struct DispatcherArgs {
    std::string kinds = "greedy_value";
    std::string checkpoint;
    std::string mode = "greedy";
    double temperature = 1.0;
    int oracle_depth = 0;
};

void add_dispatcher_flags(CLI::App* cmd, DispatcherArgs& d, bool multiple) {
    cmd->add_option("--dispatcher", d.kinds,
                    multiple ? "Comma-separated dispatchers: drl, greedy_value, travel_aware, oracle"
                             : "Dispatcher: drl, greedy_value, travel_aware, oracle")
        ->capture_default_str();
    cmd->add_option("--checkpoint", d.checkpoint, "Policy checkpoint for the drl dispatcher");
    cmd->add_option("--mode", d.mode, "drl action selection: greedy, sample or temperature")
        ->check(CLI::IsMember({"greedy", "sample", "temperature"}))
        ->capture_default_str();
    cmd->add_option("--temperature", d.temperature, "Softmax temperature for --mode temperature")
        ->capture_default_str();
    cmd->add_option("--oracle-depth", d.oracle_depth, "Repairs searched exhaustively by the oracle");
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

sd_dispatcher_options dispatcher_options(const DispatcherArgs& d, const std::string& kind, std::uint64_t seed) {
    sd_dispatcher_options o;
    sd_dispatcher_options_init(&o);
    o.kind = kind.c_str();
    o.checkpoint = opt(d.checkpoint);
    o.mode = d.mode == "sample" ? SD_SELECT_SAMPLE : d.mode == "temperature" ? SD_SELECT_TEMPERATURE : SD_SELECT_GREEDY;
    o.temperature = d.temperature;
    o.seed = seed;
    o.oracle_depth = d.oracle_depth;
    return o;
}

void print_summaries(const std::vector<sd_method_summary>& rows) {
    for (const auto& s : rows)
        std::printf("%-14s n=%zu  ENS %.2f [%.2f-%.2f] MWh  t95 %.0f min  travel %.1f km  decision %.3f ms  "
                    "violations %d\n",
                    s.method, s.scenarios, s.ens_median, s.ens_p25, s.ens_p75, s.t95_median, s.travel_median,
                    s.decision_ms_median, s.violations);
}

void on_epoch(int epoch, double pl, double vl, double ent, double reward, void*) {
    std::printf("epoch %3d  policy %.5f  value %.5f  entropy %.4f  eval_reward %.4f\n", epoch, pl, vl, ent, reward);
    std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Storm restoration crew dispatch: scenarios, simulation, training and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(sd_version()));

    // gen-scenarios
    auto* gen = app.add_subcommand("gen-scenarios", "Generate seeded hazard scenario files and a manifest");
    std::string gen_config, gen_feeder, gen_out;
    std::uint64_t gen_seed = 0;
    int gen_count = 0;
    bool gen_force = false;
    gen->add_option("--config", gen_config, "Hazard configuration file")->required();
    gen->add_option("--feeder", gen_feeder, "Feeder file overriding the one named by the config");
    gen->add_option("--seed", gen_seed, "First scenario seed")->capture_default_str();
    gen->add_option("--count", gen_count, "Number of scenarios")->required()->check(CLI::NonNegativeNumber);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Run one episode and write its event trace");
    std::string sim_config, sim_feeder, sim_env, sim_out;
    std::uint64_t sim_seed = 0;
    int sim_crews = 3;
    DispatcherArgs sim_d;
    sim->add_option("--config", sim_config, "Hazard configuration file")->required();
    sim->add_option("--feeder", sim_feeder, "Feeder file overriding the one named by the config");
    sim->add_option("--seed", sim_seed, "Scenario seed")->capture_default_str();
    sim->add_option("--crews", sim_crews, "Crew count")->capture_default_str();
    sim->add_option("--env", sim_env, "Environment configuration file");
    sim->add_option("--out", sim_out, "Output directory")->required();
    add_dispatcher_flags(sim, sim_d, false);

    // train
    auto* tr = app.add_subcommand("train", "Train the recurrent dispatch policy with masked PPO");
    std::string tr_config, tr_feeder, tr_out;
    std::uint64_t tr_seed = 0;
    int tr_crews = 0, tr_epochs = 0;
    bool tr_resume = false, tr_quiet = false;
    tr->add_option("--config", tr_config, "Training configuration file")->required();
    tr->add_option("--feeder", tr_feeder, "Feeder file overriding the one named by the hazard config");
    auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Training seed (overrides the config)");
    tr->add_option("--crews", tr_crews, "Crew count (overrides the config)");
    tr->add_option("--epochs", tr_epochs, "Epoch count (overrides the config)");
    tr->add_option("--out", tr_out, "Output directory for checkpoints and the training log")->required();
    tr->add_flag("--resume", tr_resume, "Continue from last.ckpt in the output directory");
    tr->add_flag("--quiet", tr_quiet, "Suppress per-epoch progress");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Run dispatchers over a scenario set and aggregate metrics");
    std::string ev_config, ev_feeder, ev_scen, ev_env, ev_out;
    std::uint64_t ev_seed = 0;
    int ev_count = 0, ev_crews = 3;
    bool ev_no_timing = false;
    DispatcherArgs ev_d;
    ev->add_option("--config", ev_config, "Hazard configuration file")->required();
    ev->add_option("--feeder", ev_feeder, "Feeder file overriding the one named by the config");
    ev->add_option("--scenarios", ev_scen, "Scenario directory written by gen-scenarios");
    ev->add_option("--seed", ev_seed, "First scenario seed when generating in memory")->capture_default_str();
    ev->add_option("--count", ev_count, "Scenario count when generating in memory")->check(CLI::NonNegativeNumber);
    ev->add_option("--crews", ev_crews, "Crew count")->capture_default_str();
    ev->add_option("--env", ev_env, "Environment configuration file");
    ev->add_option("--out", ev_out, "Output directory")->required();
    ev->add_flag("--no-timing", ev_no_timing, "Omit wall-clock columns so reports are byte-reproducible");
    add_dispatcher_flags(ev, ev_d, true);

    // report
    auto* rep = app.add_subcommand("report", "Aggregate episodes.csv files from evaluation runs");
    std::vector<std::string> rep_in;
    std::string rep_out;
    rep->add_option("--in", rep_in, "Run directories or episodes.csv files")->required();
    rep->add_option("--out", rep_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (*gen) {
        sd_gen_options o{opt(gen_config), opt(gen_feeder), gen_seed, gen_count, opt(gen_out), gen_force ? 1 : 0};
        char hash[17] = {0};
        if (auto s = sd_gen_scenarios(&o, hash); s != SD_OK) return report_failure(s);
        std::printf("wrote %d scenarios to %s (config hash %s)\n", gen_count, gen_out.c_str(), hash);
        return 0;
    }
    if (*sim) {
        sd_simulate_options o{};
        o.hazard_config = opt(sim_config);
        o.feeder = opt(sim_feeder);
        o.seed = sim_seed;
        o.crews = sim_crews;
        o.env_config = opt(sim_env);
        o.dispatcher = dispatcher_options(sim_d, sim_d.kinds, sim_seed);
        o.out_dir = opt(sim_out);
        sd_episode_metrics m{};
        if (auto s = sd_simulate(&o, &m); s != SD_OK) return report_failure(s);
        std::printf("seed %llu  ENS %.4f MWh (trace replay %.4f)  t95 %.1f min  travel %.2f km  replans %d  "
                    "violations %d  reward %.4f\n",
                    static_cast<unsigned long long>(m.seed), m.ens_mwh, m.replay_ens_mwh, m.critical_t95_min,
                    m.travel_km, m.replans, m.violations, m.total_reward);
        return 0;
    }
    if (*tr) {
        sd_train_options o{};
        o.config = opt(tr_config);
        o.feeder = opt(tr_feeder);
        o.out_dir = opt(tr_out);
        o.resume = tr_resume ? 1 : 0;
        o.has_seed = tr_seed_opt->count() > 0 ? 1 : 0;
        o.seed = tr_seed;
        o.crews = tr_crews;
        o.epochs = tr_epochs;
        sd_train_summary sum{};
        if (auto s = sd_train(&o, tr_quiet ? nullptr : on_epoch, nullptr, &sum); s != SD_OK) return report_failure(s);
        std::printf("trained %d epochs; best epoch %d with eval reward %.4f\n", sum.epochs_run, sum.best_epoch,
                    sum.best_eval_reward);
        return 0;
    }
    if (*ev) {
        const auto kinds = split_commas(ev_d.kinds);
        std::vector<sd_dispatcher_options> ds;
        for (const auto& k : kinds) ds.push_back(dispatcher_options(ev_d, k, ev_seed));
        sd_evaluate_options o{};
        o.hazard_config = opt(ev_config);
        o.feeder = opt(ev_feeder);
        o.scenario_dir = opt(ev_scen);
        o.seed_base = ev_seed;
        o.count = ev_count;
        o.crews = ev_crews;
        o.env_config = opt(ev_env);
        o.dispatchers = ds.data();
        o.dispatcher_count = ds.size();
        o.out_dir = opt(ev_out);
        o.timing = ev_no_timing ? 0 : 1;
        std::vector<sd_method_summary> rows(kinds.size());
        std::size_t n = 0;
        if (auto s = sd_evaluate(&o, rows.data(), rows.size(), &n); s != SD_OK) return report_failure(s);
        rows.resize(std::min(n, rows.size()));
        print_summaries(rows);
        std::printf("report written to %s\n", ev_out.c_str());
        return 0;
    }
    if (*rep) {
        std::vector<const char*> in;
        for (const auto& s : rep_in) in.push_back(s.c_str());
        std::vector<sd_method_summary> rows(64);
        std::size_t n = 0;
        if (auto s = sd_report(in.data(), in.size(), opt(rep_out), rows.data(), rows.size(), &n); s != SD_OK)
            return report_failure(s);
        rows.resize(std::min(n, rows.size()));
        print_summaries(rows);
        std::printf("report written to %s\n", rep_out.c_str());
        return 0;
    }
    return 0;
}
