#include "stormdispatch/core/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stormdispatch/core/error.hpp"
#include "stormdispatch/core/numeric.hpp"

namespace stormdispatch::env {

using nlohmann::json;

void RewardWeights::validate() const {
    require(alpha >= 0 && beta >= 0 && gamma_idle >= 0 && eta >= 0 && kappa >= 0, ErrorCode::Config,
            "reward weights must be non-negative");
}

void EnvConfig::validate() const {
    require(crews > 0, ErrorCode::Config, "env: crew count must be positive");
    require(horizon_h >= 0.0, ErrorCode::Config, "env: horizon must be non-negative");
    require(replan_period_h >= 0.0, ErrorCode::Config, "env: replan period must be non-negative");
    require(!crew_template.speeds_kmh.empty(), ErrorCode::Config, "env: crew speeds missing");
    for (double v : crew_template.speeds_kmh) require(v > 0.0, ErrorCode::Config, "env: crew speed must be positive");
    require(crew_template.shift_h > 0.0 && crew_template.break_len_h >= 0.0, ErrorCode::Config,
            "env: invalid shift settings");
    weights.validate();
}

EnvConfig env_config_from_json(const json& doc) {
    EnvConfig c;
    try {
        c.crews = doc.value("crews", c.crews);
        c.horizon_h = doc.value("horizon_h", c.horizon_h);
        c.replan_period_h = doc.value("replan_period_h", c.replan_period_h);
        c.audit_mode = doc.value("audit_mode", c.audit_mode);
        if (doc.contains("weights")) {
            const auto& w = doc.at("weights");
            c.weights.alpha = w.value("alpha", c.weights.alpha);
            c.weights.beta = w.value("beta", c.weights.beta);
            c.weights.gamma_idle = w.value("gamma_idle", c.weights.gamma_idle);
            c.weights.eta = w.value("eta", c.weights.eta);
            c.weights.kappa = w.value("kappa", c.weights.kappa);
        }
        if (doc.contains("crew_template")) {
            const auto& t = doc.at("crew_template");
            auto& ct = c.crew_template;
            ct.speeds_kmh = t.value("speeds_kmh", ct.speeds_kmh);
            ct.base_skills = t.value("base_skills", ct.base_skills);
            ct.lead_skills = t.value("lead_skills", ct.lead_skills);
            ct.shift_h = t.value("shift_h", ct.shift_h);
            ct.break_len_h = t.value("break_len_h", ct.break_len_h);
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::Config, std::string("env config: ") + e.what());
    }
    c.validate();
    return c;
}

json env_config_to_json(const EnvConfig& c) {
    return {{"crews", c.crews},
            {"horizon_h", c.horizon_h},
            {"replan_period_h", c.replan_period_h},
            {"audit_mode", c.audit_mode},
            {"weights",
             {{"alpha", c.weights.alpha},
              {"beta", c.weights.beta},
              {"gamma_idle", c.weights.gamma_idle},
              {"eta", c.weights.eta},
              {"kappa", c.weights.kappa}}},
            {"crew_template",
             {{"speeds_kmh", c.crew_template.speeds_kmh},
              {"base_skills", c.crew_template.base_skills},
              {"lead_skills", c.crew_template.lead_skills},
              {"shift_h", c.crew_template.shift_h},
              {"break_len_h", c.crew_template.break_len_h}}}};
}

std::vector<Crew> make_crews(const FeederModel& feeder, const EnvConfig& config) {
    require(!feeder.depots().empty(), ErrorCode::Config, "feeder has no depots");
    const auto& t = config.crew_template;
    std::vector<Crew> crews;
    for (int k = 0; k < config.crews; ++k) {
        Crew c;
        c.id = k;
        c.home_depot = k % static_cast<int>(feeder.depots().size());
        c.speed_kmh = t.speeds_kmh[static_cast<std::size_t>(k) % t.speeds_kmh.size()];
        c.skills = k % 3 == 0 ? t.lead_skills : t.base_skills;
        c.shift_start_h = 0.0;
        c.shift_end_h = t.shift_h;
        c.break_start_h = 0.5 * t.shift_h;
        c.break_len_h = t.break_len_h;
        c.node = feeder.depots()[static_cast<std::size_t>(c.home_depot)].road_node;
        crews.push_back(std::move(c));
    }
    return crews;
}

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::TicketArrival: return "ticket";
        case EventKind::TravelEnd: return "travel_end";
        case EventKind::RepairEnd: return "repair_end";
        case EventKind::DutyChange: return "duty";
        case EventKind::Timer: return "timer";
    }
    return "?";
}

double compute_reward(const IntervalMetrics& m, const RewardWeights& w) {
    return -w.alpha * m.ens_mwh - w.beta * m.travel_km - w.gamma_idle * m.idle_crew_h -
           w.eta * static_cast<double>(m.violations) + w.kappa * static_cast<double>(m.critical_restored);
}

double EpisodeMetrics::critical_t95_min() const {
    if (critical_restore_min.empty()) return 0.0;
    return percentile_linear(critical_restore_min, 0.95);
}

namespace {

bool event_after(const Event& a, const Event& b) {
    if (a.time_h != b.time_h) return a.time_h > b.time_h;
    return a.seq > b.seq;
}

}  // namespace

RestorationEnv::RestorationEnv(std::shared_ptr<const FeederModel> feeder, std::shared_ptr<const RoadGraph> roads,
                               EnvConfig config)
    : feeder_(std::move(feeder)), base_roads_(std::move(roads)), config_(std::move(config)), roads_(*base_roads_) {
    config_.validate();
}

void RestorationEnv::push_event(Event e) {
    e.seq = next_seq_++;
    queue_.push_back(e);
    std::push_heap(queue_.begin(), queue_.end(), event_after);
}

bool RestorationEnv::pop_event(Event& out) {
    while (!queue_.empty()) {
        std::pop_heap(queue_.begin(), queue_.end(), event_after);
        Event e = queue_.back();
        queue_.pop_back();
        const bool stale = (e.kind == EventKind::Timer && e.epoch != timer_epoch_) ||
                           ((e.kind == EventKind::TravelEnd || e.kind == EventKind::RepairEnd) &&
                            e.epoch != crew_epoch_[static_cast<std::size_t>(e.crew)]);
        if (stale) continue;
        out = e;
        return true;
    }
    return false;
}

const std::vector<double>& RestorationEnv::distances_from(int node) {
    auto& slot = dist_cache_[static_cast<std::size_t>(node)];
    if (slot.empty()) slot = roads_.distances_from(node);
    return slot;
}

double RestorationEnv::road_distance(int from, int to) { return distances_from(from)[static_cast<std::size_t>(to)]; }

const DispatchState& RestorationEnv::reset(const hazard::HazardScenario& scenario, std::uint64_t seed) {
    scenario.validate();
    require(scenario.feeder_name == feeder_->name(), ErrorCode::Config,
            "scenario feeder '" + scenario.feeder_name + "' does not match '" + feeder_->name() + "'");
    const auto nbr = feeder_->branches().size();
    for (int s : scenario.all_damage())
        require(s >= 0 && static_cast<std::size_t>(s) < nbr && feeder_->branches()[static_cast<std::size_t>(s)].repairable,
                ErrorCode::Config, "scenario damages a branch that is not a repairable site of this feeder");

    seed_ = seed;
    horizon_ = config_.horizon_h > 0.0 ? std::min(config_.horizon_h, scenario.horizon_h) : scenario.horizon_h;
    clock_ = 0.0;
    done_ = false;
    roads_ = base_roads_->with_closures(scenario.road_closures);
    dist_cache_.assign(roads_.nodes().size(), {});
    congestion_ = scenario.congestion;
    repair_times_ = scenario.repair_times;

    damaged_.assign(nbr, false);
    confirmed_.assign(nbr, false);
    assigned_.assign(nbr, -1);
    for (int s : scenario.all_damage()) damaged_[static_cast<std::size_t>(s)] = true;
    for (int s : scenario.initial_damage) confirmed_[static_cast<std::size_t>(s)] = true;

    crews_ = make_crews(*feeder_, config_);
    crew_epoch_.assign(crews_.size(), 0);
    travel_rate_kmh_.assign(crews_.size(), 0.0);
    travel_end_h_.assign(crews_.size(), 0.0);

    queue_.clear();
    next_seq_ = 0;
    timer_epoch_ = 0;
    timer_pending_ = false;
    for (const auto& a : scenario.arrivals)
        if (a.time_h <= horizon_) push_event({a.time_h, 0, EventKind::TicketArrival, -1, a.site});
    for (const auto& c : crews_) {
        if (c.break_len_h > 0.0 && c.break_start_h < horizon_)
            push_event({c.break_start_h, 0, EventKind::DutyChange, c.id, -1, DutyKind::BreakStart});
        if (c.shift_end_h < horizon_)
            push_event({c.shift_end_h, 0, EventKind::DutyChange, c.id, -1, DutyKind::ShiftEnd});
    }

    ens_kwh_ = 0.0;
    travel_km_ = 0.0;
    replans_ = 0;
    violations_ = 0;
    total_reward_ = 0.0;
    trace_.clear();

    switches_ = reenergize(*feeder_, damaged_);
    energized_ = energized_set(*feeder_, damaged_, switches_);
    unserved_kw_ = unserved_power(*feeder_, energized_).total_kw;
    critical_out_.clear();
    critical_restored_.clear();
    for (std::size_t b = 0; b < feeder_->buses().size(); ++b) {
        if (feeder_->buses()[b].critical && !energized_[b]) {
            critical_out_.push_back(static_cast<int>(b));
            critical_restored_.push_back(-1.0);
        }
    }
    trace_.push_back({0.0, "reset", -1, -1, unserved_kw_, 0.0, "seed=" + std::to_string(seed)});
    observe();
    return state_;
}

void RestorationEnv::integrate_to(double t, IntervalMetrics& acc) {
    const double dt = t - clock_;
    if (dt <= 0.0) return;
    acc.elapsed_h += dt;
    ens_kwh_ += unserved_kw_ * dt;
    acc.ens_mwh += unserved_kw_ * dt / 1000.0;
    for (std::size_t k = 0; k < crews_.size(); ++k) {
        const auto& c = crews_[k];
        if (c.status == CrewStatus::Traveling) {
            const double moving = std::max(0.0, std::min(t, travel_end_h_[k]) - clock_);
            const double km = moving * travel_rate_kmh_[k];
            acc.travel_km += km;
            travel_km_ += km;
        } else if (c.status == CrewStatus::Idle) {
            acc.idle_crew_h += std::max(0.0, std::min(t, c.shift_end_h) - clock_);
        }
    }
    clock_ = t;
}

void RestorationEnv::refresh_energization(IntervalMetrics& acc) {
    switches_ = reenergize(*feeder_, damaged_);
    energized_ = energized_set(*feeder_, damaged_, switches_);
    unserved_kw_ = unserved_power(*feeder_, energized_).total_kw;
    for (std::size_t j = 0; j < critical_out_.size(); ++j) {
        if (critical_restored_[j] < 0.0 && energized_[static_cast<std::size_t>(critical_out_[j])]) {
            critical_restored_[j] = clock_;
            ++acc.critical_restored;
        }
    }
    const auto screen = capacity_screen(*feeder_, energized_, switches_, damaged_);
    if (!screen.ok) {
        ++violations_;
        ++acc.violations;
    }
}

void RestorationEnv::start_break(Crew& crew) {
    crew.break_pending = false;
    crew.break_taken = true;
    crew.status = CrewStatus::OnBreak;
    push_event({clock_ + crew.break_len_h, 0, EventKind::DutyChange, crew.id, -1, DutyKind::BreakEnd});
}

bool RestorationEnv::replan_trigger(const Event& event, bool assignment_failed) const {
    switch (event.kind) {
        case EventKind::TicketArrival:
        case EventKind::RepairEnd:
        case EventKind::DutyChange:
        case EventKind::Timer: return true;
        case EventKind::TravelEnd: return assignment_failed;
    }
    return false;
}

bool RestorationEnv::process(const Event& e, IntervalMetrics& acc) {
    bool failed = false;
    std::string detail;
    switch (e.kind) {
        case EventKind::TicketArrival:
            confirmed_[static_cast<std::size_t>(e.site)] = true;
            break;
        case EventKind::TravelEnd: {
            auto& c = crews_[static_cast<std::size_t>(e.crew)];
            c.status = CrewStatus::Idle;
            if (c.returning) {
                c.returning = false;
                detail = "at_depot";
            } else {
                const int site = c.target_site;
                const auto& br = feeder_->branches()[static_cast<std::size_t>(site)];
                const double rep = repair_times_.at(site);
                const bool ok = damaged_[static_cast<std::size_t>(site)] && c.can_repair(br.component_class) &&
                                clock_ + rep <= c.shift_end_h + 1e-9;
                if (ok) {
                    c.status = CrewStatus::Repairing;
                    push_event({clock_ + rep, 0, EventKind::RepairEnd, c.id, site, DutyKind::BreakStart,
                                crew_epoch_[static_cast<std::size_t>(c.id)]});
                    detail = "repair_start";
                } else {
                    failed = true;
                    assigned_[static_cast<std::size_t>(site)] = -1;
                    c.target_site = -1;
                    detail = "repair_infeasible";
                    if (c.break_pending) start_break(c);
                }
            }
            if (c.status == CrewStatus::Idle && c.break_pending) start_break(c);
            break;
        }
        case EventKind::RepairEnd: {
            auto& c = crews_[static_cast<std::size_t>(e.crew)];
            damaged_[static_cast<std::size_t>(e.site)] = false;
            assigned_[static_cast<std::size_t>(e.site)] = -1;
            c.target_site = -1;
            c.status = clock_ >= c.shift_end_h ? CrewStatus::OffDuty : CrewStatus::Idle;
            if (clock_ > c.shift_end_h + 1e-9) {
                ++violations_;  // worked past the shift end
                ++acc.violations;
            }
            refresh_energization(acc);
            if (c.status == CrewStatus::Idle && c.break_pending) start_break(c);
            break;
        }
        case EventKind::DutyChange: {
            auto& c = crews_[static_cast<std::size_t>(e.crew)];
            if (e.duty == DutyKind::BreakStart) {
                if (c.status == CrewStatus::Idle)
                    start_break(c);
                else if (c.status != CrewStatus::OffDuty && !c.break_taken)
                    c.break_pending = true;
                detail = "break_start";
            } else if (e.duty == DutyKind::BreakEnd) {
                if (c.status == CrewStatus::OnBreak) c.status = CrewStatus::Idle;
                detail = "break_end";
            } else {
                detail = "shift_end";
                if (c.status == CrewStatus::Repairing) {
                    detail = "shift_end_deferred";
                } else {
                    if (c.status == CrewStatus::Traveling && !c.returning && c.target_site >= 0)
                        assigned_[static_cast<std::size_t>(c.target_site)] = -1;
                    c.status = CrewStatus::OffDuty;
                    c.target_site = -1;
                    c.returning = false;
                    ++crew_epoch_[static_cast<std::size_t>(c.id)];
                }
            }
            break;
        }
        case EventKind::Timer:
            timer_pending_ = false;
            break;
    }
    trace_.push_back({clock_, to_string(e.kind), e.crew, e.site, unserved_kw_, 0.0, detail});
    return replan_trigger(e, failed);
}

void RestorationEnv::observe() {
    const auto& feeder = *feeder_;
    DispatchState s;
    s.clock_h = clock_;
    s.horizon_h = horizon_;
    s.rho = congestion_.at(clock_);
    s.known_damage.assign(damaged_.size(), false);
    for (std::size_t b = 0; b < damaged_.size(); ++b) s.known_damage[b] = damaged_[b] && confirmed_[b];

    const auto base_states = reenergize(feeder, s.known_damage);
    const auto base_unserved = unserved_power(feeder, energized_set(feeder, s.known_damage, base_states));
    for (std::size_t b = 0; b < damaged_.size(); ++b) {
        if (!s.known_damage[b]) continue;
        ComponentInfo ci;
        ci.site = static_cast<int>(b);
        ci.component_class = feeder.branches()[b].component_class;
        ci.repair_est_h = repair_times_.at(static_cast<int>(b));
        ci.assigned_crew = assigned_[b];
        Flags after = s.known_damage;
        after[b] = false;
        const auto st = reenergize(feeder, after);
        const auto un = unserved_power(feeder, energized_set(feeder, after, st));
        ci.restorable_kw = std::max(0.0, base_unserved.total_kw - un.total_kw);
        ci.restores_critical = un.critical_kw < base_unserved.critical_kw - 1e-9;
        Flags only(damaged_.size(), false);
        only[b] = true;
        ci.unlock_kw = unserved_power(feeder, energized_set(feeder, only, reenergize(feeder, only))).total_kw;
        s.components.push_back(std::move(ci));
    }

    const std::size_t nc = s.components.size();
    s.travel_h.assign(crews_.size(), std::vector<double>(nc, kUnreachable));
    s.travel_km.assign(crews_.size(), std::vector<double>(nc, kUnreachable));
    for (std::size_t k = 0; k < crews_.size(); ++k) {
        const auto& c = crews_[k];
        CrewInfo info;
        info.id = c.id;
        info.status = c.status;
        info.available = c.status == CrewStatus::Idle && clock_ < c.shift_end_h;
        info.node = c.node;
        info.position = roads_.nodes()[static_cast<std::size_t>(c.node)].location;
        info.speed_kmh = c.speed_kmh;
        info.skills = c.skills;
        info.remaining_shift_h = std::max(0.0, c.shift_end_h - clock_);
        info.break_taken = c.break_taken;
        info.break_pending = c.break_pending;
        info.break_start_h = c.break_start_h;
        info.break_len_h = c.break_len_h;
        const int depot_node = feeder.depots()[static_cast<std::size_t>(c.home_depot)].road_node;
        info.at_depot = c.node == depot_node;
        info.to_depot_h = travel_time(road_distance(c.node, depot_node), c.speed_kmh, s.rho);
        const auto& dist = distances_from(c.node);
        for (std::size_t i = 0; i < nc; ++i) {
            const int rn = feeder.branches()[static_cast<std::size_t>(s.components[i].site)].road_node;
            const double d = dist[static_cast<std::size_t>(rn)];
            s.travel_km[k][i] = d;
            s.travel_h[k][i] = travel_time(d, c.speed_kmh, s.rho);
        }
        s.crews.push_back(std::move(info));
    }
    for (std::size_t i = 0; i < nc; ++i) {
        auto& ci = s.components[i];
        for (std::size_t k = 0; k < crews_.size(); ++k) {
            const auto& c = crews_[k];
            if (!c.on_duty(clock_) || !c.can_repair(ci.component_class)) continue;
            ci.min_travel_h = std::min(ci.min_travel_h, s.travel_h[k][i]);
        }
        ci.value = ci.min_travel_h == kUnreachable ? 0.0 : ci.restorable_kw / (ci.repair_est_h + ci.min_travel_h);
    }

    const auto actual = unserved_power(feeder, energized_);
    s.unserved_kw = actual.total_kw;
    s.critical_unserved_kw = actual.critical_kw;
    s.total_load_kw = feeder.total_load_kw();
    for (std::size_t b = 0; b < feeder.buses().size(); ++b) {
        if (!feeder.buses()[b].critical) continue;
        ++s.critical_buses;
        if (!energized_[b]) ++s.critical_out;
    }
    state_ = std::move(s);
    mask_ = build_mask(state_, feeder);
}

void RestorationEnv::maybe_arm_timer() {
    if (timer_pending_ || config_.replan_period_h <= 0.0 || done_) return;
    for (std::size_t k = 0; k < mask_.allowed.size(); ++k) {
        if (!state_.crews[k].available || !mask_.any_target(k)) continue;
        ++timer_epoch_;
        timer_pending_ = true;
        push_event({clock_ + config_.replan_period_h, 0, EventKind::Timer, -1, -1, DutyKind::BreakStart,
                    timer_epoch_});
        return;
    }
}

void RestorationEnv::commit(const CrewAction& a, IntervalMetrics& acc) {
    auto& c = crews_[static_cast<std::size_t>(a.crew)];
    if (a.kind == TargetKind::Hold) return;
    const double rho = congestion_.at(clock_);
    int dest;
    if (a.kind == TargetKind::Return) {
        dest = feeder_->depots()[static_cast<std::size_t>(c.home_depot)].road_node;
        if (dest == c.node) return;
        c.returning = true;
        c.target_site = -1;
    } else {
        dest = feeder_->branches()[static_cast<std::size_t>(a.site)].road_node;
        c.returning = false;
        c.target_site = a.site;
        assigned_[static_cast<std::size_t>(a.site)] = c.id;
    }
    const double d = road_distance(c.node, dest);
    if (d == kUnreachable) {
        // Only reachable in audit mode; the crew stays put.
        if (a.kind == TargetKind::Component) assigned_[static_cast<std::size_t>(a.site)] = -1;
        c.target_site = -1;
        c.returning = false;
        ++violations_;
        ++acc.violations;
        return;
    }
    const double tt = travel_time(d, c.speed_kmh, rho);
    const auto k = static_cast<std::size_t>(c.id);
    c.status = CrewStatus::Traveling;
    c.node = dest;
    travel_end_h_[k] = clock_ + tt;
    travel_rate_kmh_[k] = tt > 0.0 ? d / tt : 0.0;
    ++crew_epoch_[k];
    push_event({clock_ + tt, 0, EventKind::TravelEnd, c.id, a.site, DutyKind::BreakStart, crew_epoch_[k]});
}

void RestorationEnv::check_guard() {
    if (unserved_kw_ <= 0.0) done_ = true;
}

StepResult RestorationEnv::step(const JointAction& action) {
    require(!done_, ErrorCode::Contract, "step called on a finished episode");
    IntervalMetrics acc;

    // Audit the joint action against the current mask.
    std::vector<bool> seen(crews_.size(), false);
    std::vector<int> claimed;
    std::vector<CrewAction> to_commit;
    std::ostringstream desc;
    for (const auto& a : action.entries) {
        require(a.crew >= 0 && static_cast<std::size_t>(a.crew) < crews_.size(), ErrorCode::Contract,
                "action references unknown crew");
        const auto k = static_cast<std::size_t>(a.crew);
        require(!seen[k], ErrorCode::Contract, "crew appears twice in joint action");
        seen[k] = true;
        std::size_t entry = mask_.hold_index();
        if (a.kind == TargetKind::Return) entry = mask_.return_index();
        if (a.kind == TargetKind::Component) {
            auto it = std::find(mask_.targets.begin(), mask_.targets.end(), a.site);
            entry = it == mask_.targets.end() ? mask_.width() : static_cast<std::size_t>(it - mask_.targets.begin());
        }
        bool feasible = entry < mask_.width() && mask_.allowed[k][entry];
        if (a.kind == TargetKind::Component) {
            if (std::find(claimed.begin(), claimed.end(), a.site) != claimed.end()) feasible = false;
            claimed.push_back(a.site);
        }
        if (!feasible) {
            const std::string why = entry < mask_.width() ? to_string(mask_.reason[k][entry]) : "not a target";
            if (!config_.audit_mode)
                fail(ErrorCode::Contract, "infeasible action for crew " + std::to_string(a.crew) + " (" + why + ")");
            ++violations_;
            ++acc.violations;
            if (a.kind == TargetKind::Component &&
                (entry >= mask_.width() || a.site < 0 || !damaged_[static_cast<std::size_t>(a.site)] ||
                 assigned_[static_cast<std::size_t>(a.site)] >= 0 ||
                 crews_[k].status != CrewStatus::Idle))
                continue;  // cannot be executed at all
            if (a.kind != TargetKind::Hold && crews_[k].status != CrewStatus::Idle) continue;
        }
        to_commit.push_back(a);
        desc << a.crew << ':'
             << (a.kind == TargetKind::Hold     ? std::string("hold")
                 : a.kind == TargetKind::Return ? std::string("return")
                                                : feeder_->branches()[static_cast<std::size_t>(a.site)].id)
             << ' ';
    }
    for (const auto& a : to_commit) commit(a, acc);
    ++replans_;
    trace_.push_back({clock_, "decision", -1, -1, unserved_kw_, 0.0, desc.str()});

    observe();
    maybe_arm_timer();

    int events = 0;
    bool stop = false;
    check_guard();
    while (!done_ && !stop) {
        Event e;
        if (!pop_event(e) || e.time_h > horizon_) {
            integrate_to(horizon_, acc);
            trace_.push_back({clock_, "horizon", -1, -1, unserved_kw_, 0.0, ""});
            done_ = true;
            break;
        }
        integrate_to(e.time_h, acc);
        stop = process(e, acc);
        ++events;
        check_guard();
        // Drain simultaneous events so a decision sees all of them.
        while (!done_ && !queue_.empty()) {
            Event next;
            const Event& top = queue_.front();
            if (top.time_h != clock_) break;
            if (!pop_event(next)) break;
            if (next.time_h != clock_) {
                push_event(next);
                break;
            }
            stop = process(next, acc) || stop;
            ++events;
            check_guard();
        }
        if (!stop && !done_) {
            observe();
            maybe_arm_timer();
        }
    }

    observe();
    StepResult r;
    r.interval = acc;
    r.events = events;
    r.done = done_;
    r.reward = compute_reward(acc, config_.weights);
    total_reward_ += r.reward;
    trace_.back().reward = r.reward;
    return r;
}

EpisodeMetrics RestorationEnv::metrics() const {
    EpisodeMetrics m;
    m.ens_mwh = ens_kwh_ / 1000.0;
    m.travel_km = travel_km_;
    m.replans = replans_;
    m.violations = violations_;
    m.total_reward = total_reward_;
    for (double t : critical_restored_) m.critical_restore_min.push_back(60.0 * (t < 0.0 ? horizon_ : t));
    return m;
}

void RestorationEnv::drop_pending_arrivals() {
    std::vector<Event> keep;
    for (const auto& e : queue_)
        if (e.kind != EventKind::TicketArrival) keep.push_back(e);
    queue_ = std::move(keep);
    std::make_heap(queue_.begin(), queue_.end(), event_after);
}

void RestorationEnv::disable_periodic_replans() {
    config_.replan_period_h = 0.0;
    timer_pending_ = false;
    std::erase_if(queue_, [](const Event& e) { return e.kind == EventKind::Timer; });
    std::make_heap(queue_.begin(), queue_.end(), event_after);
}

bool RestorationEnv::has_pending_arrivals() const {
    return std::any_of(queue_.begin(), queue_.end(), [](const Event& e) { return e.kind == EventKind::TicketArrival; });
}

json RestorationEnv::trace_json_lines() const {
    json rows = json::array();
    for (const auto& r : trace_)
        rows.push_back({{"t_h", r.time_h},
                        {"kind", r.kind},
                        {"crew", r.crew},
                        {"site", r.site},
                        {"unserved_kw", r.unserved_kw},
                        {"reward", r.reward},
                        {"detail", r.detail}});
    return rows;
}

double replay_ens_mwh(const std::vector<TraceRecord>& trace, double horizon_h) {
    double kwh = 0.0;
    for (std::size_t i = 0; i + 1 < trace.size(); ++i)
        kwh += trace[i].unserved_kw * (std::min(trace[i + 1].time_h, horizon_h) - trace[i].time_h);
    return kwh / 1000.0;
}

}  // namespace stormdispatch::env
