#pragma once

// Crews, the observed dispatch state, joint actions and the feasibility mask.

#include <cstdint>
#include <string>
#include <vector>

#include "stormdispatch/core/feeder.hpp"

namespace stormdispatch {

enum class CrewStatus { Idle, Traveling, Repairing, OnBreak, OffDuty };

const char* to_string(CrewStatus s);

struct Crew {
    int id = 0;
    int home_depot = 0;
    double speed_kmh = 40.0;
    std::vector<std::string> skills;  // servable component classes
    double shift_start_h = 0.0;
    double shift_end_h = 12.0;
    double break_start_h = 6.0;
    double break_len_h = 0.5;

    CrewStatus status = CrewStatus::Idle;
    int node = -1;         // road node; the destination while traveling
    int target_site = -1;  // branch being travelled to or repaired
    bool returning = false;
    bool break_taken = false;
    bool break_pending = false;

    bool can_repair(const std::string& component_class) const;
    bool on_duty(double t_h) const { return status != CrewStatus::OffDuty && t_h < shift_end_h; }
};

/// Confirmed, unrepaired component as seen by the dispatcher.
struct ComponentInfo {
    int site = -1;  // branch index
    std::string component_class;
    double repair_est_h = 0.0;
    int assigned_crew = -1;
    double restorable_kw = 0.0;  // kW re-energized if this component alone were repaired now
    double unlock_kw = 0.0;      // kW out if this were the only fault on the feeder
    bool restores_critical = false;
    double min_travel_h = kUnreachable;
    double value = 0.0;  // restorable_kw / (repair_est + min_travel), kW/h
};

struct CrewInfo {
    int id = 0;
    CrewStatus status = CrewStatus::Idle;
    bool available = false;
    int node = -1;
    Point position{};
    double speed_kmh = 0.0;
    std::vector<std::string> skills;
    double remaining_shift_h = 0.0;
    bool break_taken = false;
    bool break_pending = false;
    double break_start_h = 0.0;
    double break_len_h = 0.0;
    bool at_depot = false;
    double to_depot_h = kUnreachable;
};

/// Observation s_t: component, crew and global blocks plus the clock.
struct DispatchState {
    double clock_h = 0.0;
    double horizon_h = 0.0;
    double rho = 1.0;
    std::vector<ComponentInfo> components;  // ascending site id
    std::vector<CrewInfo> crews;            // ascending crew id
    std::vector<std::vector<double>> travel_h;   // [crew][component]
    std::vector<std::vector<double>> travel_km;  // [crew][component]
    Flags known_damage;                          // confirmed and unrepaired, per branch
    double unserved_kw = 0.0;
    double critical_unserved_kw = 0.0;
    double total_load_kw = 0.0;
    int critical_buses = 0;
    int critical_out = 0;
};

enum class TargetKind { Component, Hold, Return };

struct CrewAction {
    int crew = 0;
    TargetKind kind = TargetKind::Hold;
    int site = -1;
};

struct JointAction {
    std::vector<CrewAction> entries;  // available crews only
};

enum class BlockReason : std::uint8_t { None, Unavailable, Assigned, Skill, Unreachable, Shift, Capacity };

const char* to_string(BlockReason r);

/// Per-crew feasibility over [components..., hold, return].
struct FeasibilityMask {
    std::vector<int> targets;  // site ids in slate order
    std::vector<std::vector<bool>> allowed;
    std::vector<std::vector<BlockReason>> reason;

    std::size_t hold_index() const { return targets.size(); }
    std::size_t return_index() const { return targets.size() + 1; }
    std::size_t width() const { return targets.size() + 2; }
    bool any_target(std::size_t crew) const;
    /// Blocks component entry `entry` for every crew other than `owner`.
    void claim(std::size_t entry, std::size_t owner);
};

/// Time a crew needs before it could take on this job, including a break
/// that would fall due before the job ends.
double required_shift_time(const CrewInfo& crew, double clock_h, double travel_h, double repair_h);

/// Feasibility screen: skill, reachability, crew-time and post-repair
/// capacity/radiality rules. `hold` is always allowed.
FeasibilityMask build_mask(const DispatchState& state, const FeederModel& feeder);

/// Maps a mask entry to an action for `crew`.
CrewAction action_for_entry(const FeasibilityMask& mask, int crew, std::size_t entry);

}  // namespace stormdispatch
