#pragma once

// Event-driven restoration environment: the clock jumps between ticket
// arrivals, travel ends, repair ends, duty changes and periodic replan timers.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "stormdispatch/core/dispatch.hpp"
#include "stormdispatch/core/hazard.hpp"

namespace stormdispatch::env {

struct RewardWeights {
    double alpha = 1.0;        // per MWh not supplied
    double beta = 0.01;        // per km travelled
    double gamma_idle = 0.05;  // per idle crew-hour
    double eta = 100.0;        // per violation
    double kappa = 5.0;        // per critical load restored

    void validate() const;
};

struct CrewTemplate {
    std::vector<double> speeds_kmh{40.0, 35.0};  // cycled over crew ids
    std::vector<std::string> base_skills{"pole", "lateral", "riser"};
    std::vector<std::string> lead_skills{"pole", "lateral", "riser", "substation"};  // every third crew
    double shift_h = 12.0;
    double break_len_h = 0.5;
};

struct EnvConfig {
    int crews = 3;
    double horizon_h = 0.0;  // 0: use the scenario horizon
    double replan_period_h = 1.0;  // 0 disables the periodic trigger
    RewardWeights weights;
    bool audit_mode = false;  // execute infeasible entries and count them instead of rejecting
    CrewTemplate crew_template;

    void validate() const;
};

EnvConfig env_config_from_json(const nlohmann::json& doc);
nlohmann::json env_config_to_json(const EnvConfig& config);

std::vector<Crew> make_crews(const FeederModel& feeder, const EnvConfig& config);

enum class EventKind { TicketArrival, TravelEnd, RepairEnd, DutyChange, Timer };
enum class DutyKind { BreakStart, BreakEnd, ShiftEnd };

const char* to_string(EventKind k);

struct Event {
    double time_h = 0.0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Timer;
    int crew = -1;
    int site = -1;
    DutyKind duty = DutyKind::BreakStart;
    std::uint64_t epoch = 0;  // stale when it no longer matches the owner's epoch
};

/// Terms of the reward for one inter-decision interval.
struct IntervalMetrics {
    double elapsed_h = 0.0;
    double ens_mwh = 0.0;
    double travel_km = 0.0;
    double idle_crew_h = 0.0;
    int violations = 0;
    int critical_restored = 0;
};

/// r = -α ENS - β Travel - γ_idle Idle - η Viol + κ CritRestored
double compute_reward(const IntervalMetrics& m, const RewardWeights& w);

struct EpisodeMetrics {
    double ens_mwh = 0.0;
    std::vector<double> critical_restore_min;  // first restoration per critical load out at t=0 (horizon if never)
    double travel_km = 0.0;
    int replans = 0;
    std::vector<double> decision_ms;  // filled by the caller that times decisions
    int violations = 0;
    double total_reward = 0.0;

    /// 95th percentile of critical_restore_min, or 0 when no critical load was out.
    double critical_t95_min() const;
};

struct TraceRecord {
    double time_h = 0.0;
    std::string kind;  // reset, decision, ticket, travel_end, repair_end, duty, timer, horizon
    int crew = -1;
    int site = -1;
    double unserved_kw = 0.0;  // after the record was applied
    double reward = 0.0;
    std::string detail;
};

struct StepResult {
    double reward = 0.0;
    bool done = false;
    IntervalMetrics interval;
    int events = 0;
};

class RestorationEnv {
public:
    RestorationEnv(std::shared_ptr<const FeederModel> feeder, std::shared_ptr<const RoadGraph> roads, EnvConfig config);

    const DispatchState& reset(const hazard::HazardScenario& scenario, std::uint64_t seed);
    StepResult step(const JointAction& action);

    const DispatchState& state() const { return state_; }
    const FeasibilityMask& mask() const { return mask_; }
    bool done() const { return done_; }
    double clock() const { return clock_; }
    double horizon() const { return horizon_; }
    const EnvConfig& config() const { return config_; }
    const FeederModel& feeder() const { return *feeder_; }
    const std::vector<Crew>& crews() const { return crews_; }
    const std::vector<TraceRecord>& trace() const { return trace_; }
    const Flags& energized() const { return energized_; }
    std::uint64_t seed() const { return seed_; }

    EpisodeMetrics metrics() const;
    /// Removes pending ticket arrivals (certainty-equivalent lookahead copies).
    void drop_pending_arrivals();
    bool has_pending_arrivals() const;
    /// Drops the periodic timer so decisions happen only at events.
    void disable_periodic_replans();
    /// Event-based or periodic replan trigger for an event just processed.
    bool replan_trigger(const Event& event, bool assignment_failed) const;

    nlohmann::json trace_json_lines() const;

private:
    void push_event(Event e);
    bool pop_event(Event& out);
    void integrate_to(double t, IntervalMetrics& acc);
    bool process(const Event& e, IntervalMetrics& acc);
    void refresh_energization(IntervalMetrics& acc);
    void observe();
    void maybe_arm_timer();
    void start_break(Crew& crew);
    void commit(const CrewAction& a, IntervalMetrics& acc);
    const std::vector<double>& distances_from(int node);
    double road_distance(int from, int to);
    void check_guard();

    std::shared_ptr<const FeederModel> feeder_;
    std::shared_ptr<const RoadGraph> base_roads_;
    EnvConfig config_;

    RoadGraph roads_;
    std::vector<std::vector<double>> dist_cache_;
    hazard::CongestionProfile congestion_;
    std::map<int, double> repair_times_;
    std::uint64_t seed_ = 0;
    double horizon_ = 0.0;
    double clock_ = 0.0;
    bool done_ = false;

    Flags damaged_;
    Flags confirmed_;
    Flags energized_;
    SwitchStates switches_;
    std::vector<int> assigned_;  // per branch, crew id or -1
    std::vector<Crew> crews_;
    std::vector<std::uint64_t> crew_epoch_;
    std::vector<double> travel_rate_kmh_;  // km per hour while traveling
    std::vector<double> travel_end_h_;

    std::vector<Event> queue_;  // min-heap on (time, seq)
    std::uint64_t next_seq_ = 0;
    std::uint64_t timer_epoch_ = 0;
    bool timer_pending_ = false;

    double ens_kwh_ = 0.0;
    double travel_km_ = 0.0;
    int replans_ = 0;
    int violations_ = 0;
    double total_reward_ = 0.0;
    std::vector<int> critical_out_;          // critical buses out at reset
    std::vector<double> critical_restored_;  // first restoration time per entry, -1 if not yet
    double unserved_kw_ = 0.0;

    DispatchState state_;
    FeasibilityMask mask_;
    std::vector<TraceRecord> trace_;
};

/// Integrates unserved kW over the trace's piecewise-constant segments (MWh).
double replay_ens_mwh(const std::vector<TraceRecord>& trace, double horizon_h);

}  // namespace stormdispatch::env
