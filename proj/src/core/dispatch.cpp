#include "stormdispatch/core/dispatch.hpp"

#include <algorithm>

#include "stormdispatch/core/error.hpp"

namespace stormdispatch {

const char* to_string(CrewStatus s) {
    switch (s) {
        case CrewStatus::Idle: return "idle";
        case CrewStatus::Traveling: return "traveling";
        case CrewStatus::Repairing: return "repairing";
        case CrewStatus::OnBreak: return "on_break";
        case CrewStatus::OffDuty: return "off_duty";
    }
    return "?";
}

const char* to_string(BlockReason r) {
    switch (r) {
        case BlockReason::None: return "none";
        case BlockReason::Unavailable: return "unavailable";
        case BlockReason::Assigned: return "assigned";
        case BlockReason::Skill: return "skill";
        case BlockReason::Unreachable: return "unreachable";
        case BlockReason::Shift: return "shift";
        case BlockReason::Capacity: return "capacity";
    }
    return "?";
}

bool Crew::can_repair(const std::string& component_class) const {
    return std::find(skills.begin(), skills.end(), component_class) != skills.end();
}

bool FeasibilityMask::any_target(std::size_t crew) const {
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (allowed[crew][i]) return true;
    return false;
}

void FeasibilityMask::claim(std::size_t entry, std::size_t owner) {
    if (entry >= targets.size()) return;
    for (std::size_t k = 0; k < allowed.size(); ++k) {
        if (k == owner || !allowed[k][entry]) continue;
        allowed[k][entry] = false;
        reason[k][entry] = BlockReason::Assigned;
    }
}

double required_shift_time(const CrewInfo& crew, double clock_h, double travel_h, double repair_h) {
    double need = travel_h + repair_h;
    const bool break_due = !crew.break_taken && (crew.break_pending || clock_h + need >= crew.break_start_h);
    if (break_due) need += crew.break_len_h;
    return need;
}

FeasibilityMask build_mask(const DispatchState& state, const FeederModel& feeder) {
    FeasibilityMask mask;
    const std::size_t nt = state.components.size();
    for (const auto& c : state.components) mask.targets.push_back(c.site);

    // Post-repair screen depends on the target only.
    std::vector<bool> screen_ok(nt, true);
    for (std::size_t i = 0; i < nt; ++i) {
        Flags after = state.known_damage;
        after[static_cast<std::size_t>(state.components[i].site)] = false;
        const auto states = reenergize(feeder, after);
        const auto on = energized_set(feeder, after, states);
        screen_ok[i] = capacity_screen(feeder, on, states, after).ok;
    }

    mask.allowed.assign(state.crews.size(), std::vector<bool>(nt + 2, false));
    mask.reason.assign(state.crews.size(), std::vector<BlockReason>(nt + 2, BlockReason::None));
    for (std::size_t k = 0; k < state.crews.size(); ++k) {
        const auto& crew = state.crews[k];
        auto& allow = mask.allowed[k];
        auto& why = mask.reason[k];
        allow[nt] = true;  // hold
        if (!crew.available) {
            for (std::size_t i = 0; i < nt; ++i) why[i] = BlockReason::Unavailable;
            why[nt + 1] = BlockReason::Unavailable;
            continue;
        }
        for (std::size_t i = 0; i < nt; ++i) {
            const auto& comp = state.components[i];
            const double tt = state.travel_h[k][i];
            BlockReason r = BlockReason::None;
            if (comp.assigned_crew >= 0)
                r = BlockReason::Assigned;
            else if (std::find(crew.skills.begin(), crew.skills.end(), comp.component_class) == crew.skills.end())
                r = BlockReason::Skill;
            else if (tt == kUnreachable)
                r = BlockReason::Unreachable;
            else if (crew.remaining_shift_h < required_shift_time(crew, state.clock_h, tt, comp.repair_est_h))
                r = BlockReason::Shift;
            else if (!screen_ok[i])
                r = BlockReason::Capacity;
            allow[i] = r == BlockReason::None;
            why[i] = r;
        }
        allow[nt + 1] = crew.to_depot_h != kUnreachable;
        why[nt + 1] = allow[nt + 1] ? BlockReason::None : BlockReason::Unreachable;
    }
    return mask;
}

CrewAction action_for_entry(const FeasibilityMask& mask, int crew, std::size_t entry) {
    require(entry < mask.width(), ErrorCode::Contract, "mask entry out of range");
    if (entry == mask.hold_index()) return {crew, TargetKind::Hold, -1};
    if (entry == mask.return_index()) return {crew, TargetKind::Return, -1};
    return {crew, TargetKind::Component, mask.targets[entry]};
}

}  // namespace stormdispatch
