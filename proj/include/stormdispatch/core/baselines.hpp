#pragma once

// Heuristic dispatchers and the short-horizon exact-search oracle.

#include <cstddef>
#include <string>

#include "stormdispatch/core/dispatch.hpp"
#include "stormdispatch/core/env.hpp"

namespace stormdispatch::baselines {

enum class HeuristicVariant { GreedyValue, TravelAware };

struct HeuristicConfig {
    HeuristicVariant variant = HeuristicVariant::GreedyValue;
    int oracle_depth = 4;  // repairs searched exhaustively before a greedy completion
    int max_oracle_depth = 4;
    std::size_t max_targets = 6;
    std::size_t max_crews = 3;
    std::size_t node_budget = 2000000;

    void validate() const;
};

/// Ascending crew id; each available crew takes the feasible unclaimed target
/// with the largest value, otherwise holds.
JointAction greedy_value(const DispatchState& state, const FeasibilityMask& mask);

/// Scores v_i / (1 + tau_ki) per feasible pair and matches greedily by
/// descending score (ties: lower crew id, then lower slate index).
JointAction travel_aware(const DispatchState& state, const FeasibilityMask& mask);

JointAction heuristic_action(HeuristicVariant variant, const DispatchState& state, const FeasibilityMask& mask);

struct OracleObjective {
    double ens_mwh = 0.0;    // ENS from the decision point to the end of the episode
    double travel_km = 0.0;  // tie-breaker
};

struct OracleResult {
    JointAction action;
    OracleObjective objective;
    std::size_t nodes = 0;
};

/// Certainty-equivalent search on a copy of `env` with pending arrivals
/// dropped. Refuses instances above the target/crew caps.
OracleResult exact_short_horizon(const env::RestorationEnv& env, const HeuristicConfig& config = {});

/// Lookahead objective of following `dispatcher` from the current decision of
/// a certainty-equivalent copy of `env` until the episode ends.
template <typename Dispatcher>
OracleObjective lookahead_objective(const env::RestorationEnv& env, Dispatcher&& dispatcher) {
    env::RestorationEnv sim = env;
    sim.drop_pending_arrivals();
    const double ens0 = sim.metrics().ens_mwh;
    const double km0 = sim.metrics().travel_km;
    while (!sim.done()) sim.step(dispatcher(sim));
    return {sim.metrics().ens_mwh - ens0, sim.metrics().travel_km - km0};
}

}  // namespace stormdispatch::baselines
