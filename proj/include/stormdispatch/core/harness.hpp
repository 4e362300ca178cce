#pragma once

// Experiment orchestration: scenario sets, dispatchers, episode runs, metric
// aggregation and the report/CSV artifacts behind the command-line tool.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stormdispatch/core/baselines.hpp"
#include "stormdispatch/core/env.hpp"
#include "stormdispatch/core/hazard.hpp"
#include "stormdispatch/core/policy.hpp"
#include "stormdispatch/core/trainer.hpp"

namespace stormdispatch::harness {

/// Crew counts accepted for the bundled feeders; other feeders accept any positive count.
std::vector<int> supported_crew_counts(const std::string& feeder_name);
void validate_crew_count(const std::string& feeder_name, int crews);

policy::PolicyConfig policy_config_from_json(const nlohmann::json& doc);
nlohmann::json policy_config_to_json(const policy::PolicyConfig& config);

/// Feeder, roads and hazard configuration resolved from a hazard config file
/// (optionally overriding its feeder).
struct Workspace {
    std::shared_ptr<const FeederModel> feeder;
    std::shared_ptr<const RoadGraph> roads;
    hazard::ScenarioConfig scenario_config;
    std::string feeder_path;
    std::uint64_t config_hash = 0;  // FNV-1a of the canonical hazard config and feeder files
};

Workspace load_workspace(const std::string& hazard_config_path, const std::string& feeder_override = "");

// ---- scenario sets --------------------------------------------------------

struct GenScenariosOptions {
    std::string hazard_config;
    std::string feeder;  // optional override
    std::uint64_t seed_base = 0;
    int count = 0;
    std::string out_dir;
    bool force = false;
};

struct ScenarioManifest {
    std::string config_hash;  // 16 hex digits
    std::string feeder;
    std::string hazard_config;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> files;
};

std::string scenario_file_name(std::uint64_t seed);
ScenarioManifest gen_scenarios(const GenScenariosOptions& options);
ScenarioManifest read_manifest(const std::string& dir);
std::vector<hazard::HazardScenario> load_scenario_set(const std::string& dir, const FeederModel& feeder,
                                                      const RoadGraph& roads);

// ---- dispatchers ------------------------------------------------------------

enum class DispatcherKind { Drl, GreedyValue, TravelAware, Oracle };

DispatcherKind parse_dispatcher(const std::string& name);
const char* to_string(DispatcherKind kind);

class Dispatcher {
public:
    virtual ~Dispatcher() = default;
    virtual std::string name() const = 0;
    virtual void begin_episode() {}
    /// Decision for the environment's current state under `mask`.
    virtual JointAction decide(const env::RestorationEnv& env, const FeasibilityMask& mask) = 0;
};

struct DispatcherSpec {
    DispatcherKind kind = DispatcherKind::GreedyValue;
    std::string checkpoint;  // drl only
    trainer::EvalMode mode = trainer::EvalMode::Greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;                  // sampling stream for non-greedy drl
    baselines::HeuristicConfig oracle{};     // oracle caps and depth
};

/// Loads checkpoints and checks them against the feeder and crew count.
std::unique_ptr<Dispatcher> make_dispatcher(const DispatcherSpec& spec, const FeederModel& feeder, int crews);

// ---- episodes ---------------------------------------------------------------

struct EpisodeRow {
    std::string method;
    std::uint64_t seed = 0;
    std::string event_kind;
    double ens_mwh = 0.0;
    double critical_t95_min = 0.0;
    double travel_km = 0.0;
    int replans = 0;
    int decisions = 0;
    double decision_ms_median = 0.0;
    int violations = 0;
    double total_reward = 0.0;
};

struct EpisodeRun {
    EpisodeRow row;
    env::EpisodeMetrics metrics;
    std::vector<env::TraceRecord> trace;
    double horizon_h = 0.0;
};

/// Runs one episode; decision time covers mask build plus the dispatcher call.
EpisodeRun run_episode(Dispatcher& dispatcher, std::shared_ptr<const FeederModel> feeder,
                       std::shared_ptr<const RoadGraph> roads, const env::EnvConfig& env_config,
                       const hazard::HazardScenario& scenario, bool timing = true);

std::string episodes_csv(const std::vector<EpisodeRow>& rows);
std::vector<EpisodeRow> parse_episodes_csv(const std::string& text, const std::string& origin);

// ---- aggregation ----------------------------------------------------------

struct Summary {
    double median = 0.0;
    double p25 = 0.0;
    double p75 = 0.0;
};

/// Linear interpolation between order statistics; an empty set yields zeros.
Summary summarize(const std::vector<double>& values);

/// "28 [22–37]" style rendering with `decimals` digits after the point.
std::string format_median_iqr(const Summary& s, int decimals);

struct MethodReport {
    std::string method;
    std::size_t scenarios = 0;
    Summary ens_mwh;
    Summary critical_t95_min;
    Summary travel_km;
    Summary decision_ms;
    Summary replans;
    int violations = 0;
};

struct MetricsReport {
    std::vector<MethodReport> methods;  // in order of first appearance
};

inline constexpr const char* kPercentileMethod = "linear interpolation between order statistics";

MetricsReport aggregate(const std::vector<EpisodeRow>& rows);
nlohmann::json report_to_json(const MetricsReport& report, bool timing = true);
std::string report_to_text(const MetricsReport& report, bool timing = true);

// ---- commands ---------------------------------------------------------------

struct EvaluateOptions {
    std::string hazard_config;
    std::string feeder;          // optional override
    std::string scenario_dir;    // takes precedence over seed/count generation
    std::uint64_t seed_base = 0;
    int count = 0;
    int crews = 3;
    std::string env_config;      // optional env config file
    std::vector<DispatcherSpec> dispatchers;
    std::string out_dir;
    bool timing = true;
};

struct EvaluateResult {
    std::vector<EpisodeRow> rows;
    MetricsReport report;
};

/// Writes episodes.csv, report.json and report.txt into out_dir.
EvaluateResult evaluate(const EvaluateOptions& options);

struct SimulateOptions {
    std::string hazard_config;
    std::string feeder;
    std::uint64_t seed = 0;
    int crews = 3;
    std::string env_config;
    DispatcherSpec dispatcher;
    std::string out_dir;
};

/// Writes trace.jsonl and episode.json.
EpisodeRun simulate(const SimulateOptions& options);

/// Aggregates episodes.csv files from the given run directories into out_dir.
MetricsReport report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

struct TrainConfigFile {
    std::string hazard_config;
    env::EnvConfig env;
    trainer::PPOConfig ppo;
    policy::PolicyConfig policy;
};

TrainConfigFile load_train_config(const std::string& path);

struct TrainCommandOptions {
    std::string config;
    std::string feeder;
    std::optional<std::uint64_t> seed;
    std::optional<int> crews;
    std::optional<int> epochs;
    std::string out_dir;
    bool resume = false;
};

trainer::TrainResult train(const TrainCommandOptions& options,
                           const std::function<void(int, const trainer::UpdateDiagnostics&, double)>& on_epoch = {});

}  // namespace stormdispatch::harness
