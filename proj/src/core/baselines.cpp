#include "stormdispatch/core/baselines.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

#include "stormdispatch/core/error.hpp"

namespace stormdispatch::baselines {

namespace {

constexpr double kTol = 1e-9;

JointAction all_hold(const DispatchState& state) {
    JointAction a;
    for (const auto& c : state.crews)
        if (c.available) a.entries.push_back({c.id, TargetKind::Hold, -1});
    return a;
}

bool better(const OracleObjective& a, const OracleObjective& b) {
    if (a.ens_mwh < b.ens_mwh - kTol) return true;
    if (a.ens_mwh > b.ens_mwh + kTol) return false;
    return a.travel_km < b.travel_km - kTol;
}

struct Search {
    explicit Search(const HeuristicConfig& c) : config(c) {}

    const HeuristicConfig& config;
    double ens0 = 0.0;
    double km0 = 0.0;
    OracleObjective bound;
    bool have_best = false;
    OracleObjective best;
    JointAction best_first;
    std::size_t nodes = 0;

    OracleObjective objective(const env::RestorationEnv& e) const {
        return {e.metrics().ens_mwh - ens0, e.metrics().travel_km - km0};
    }

    static OracleObjective finish_greedy(env::RestorationEnv e, double ens0, double km0) {
        while (!e.done()) e.step(greedy_value(e.state(), e.mask()));
        return {e.metrics().ens_mwh - ens0, e.metrics().travel_km - km0};
    }

    // Joint actions in lexicographic order of (crew ascending, entry ascending).
    void enumerate(const DispatchState& state, const FeasibilityMask& mask, std::size_t k,
                   std::vector<bool>& claimed, JointAction& cur, std::vector<JointAction>& out) const {
        if (k == state.crews.size()) {
            out.push_back(cur);
            return;
        }
        if (!state.crews[k].available) {
            enumerate(state, mask, k + 1, claimed, cur, out);
            return;
        }
        const int id = state.crews[k].id;
        for (std::size_t i = 0; i < mask.width(); ++i) {
            if (!mask.allowed[k][i]) continue;
            const bool is_target = i < mask.targets.size();
            if (is_target && claimed[i]) continue;
            if (is_target) claimed[i] = true;
            cur.entries.push_back(action_for_entry(mask, id, i));
            enumerate(state, mask, k + 1, claimed, cur, out);
            cur.entries.pop_back();
            if (is_target) claimed[i] = false;
        }
    }

    void dfs(const env::RestorationEnv& e, int repairs_left, const JointAction* first) {
        require(++nodes <= config.node_budget, ErrorCode::Numerical, "oracle node budget exhausted");
        const auto acc = objective(e);
        if (e.done() || repairs_left <= 0) {
            const auto total = e.done() ? acc : finish_greedy(e, ens0, km0);
            if (!have_best || better(total, best)) {
                have_best = true;
                best = total;
                best_first = *first;
            }
            return;
        }
        // Accumulated ENS only grows; prune branches already worse than the bound.
        if (acc.ens_mwh > bound.ens_mwh + kTol) return;
        if (have_best && acc.ens_mwh > best.ens_mwh + kTol) return;

        std::vector<JointAction> options;
        std::vector<bool> claimed(e.mask().targets.size(), false);
        JointAction cur;
        enumerate(e.state(), e.mask(), 0, claimed, cur, options);
        const auto damaged_before = e.state().known_damage;
        for (const auto& a : options) {
            env::RestorationEnv next = e;
            next.step(a);
            int done_repairs = 0;
            for (std::size_t b = 0; b < damaged_before.size(); ++b)
                if (damaged_before[b] && !next.state().known_damage[b]) ++done_repairs;
            dfs(next, repairs_left - done_repairs, first ? first : &a);
        }
    }
};

}  // namespace

void HeuristicConfig::validate() const {
    require(oracle_depth >= 1 && oracle_depth <= max_oracle_depth, ErrorCode::Config,
            "oracle depth must be in [1, " + std::to_string(max_oracle_depth) + "]");
}

JointAction greedy_value(const DispatchState& state, const FeasibilityMask& mask) {
    JointAction out;
    std::vector<bool> claimed(mask.targets.size(), false);
    for (std::size_t k = 0; k < state.crews.size(); ++k) {
        if (!state.crews[k].available) continue;
        std::size_t pick = mask.hold_index();
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < mask.targets.size(); ++i) {
            if (!mask.allowed[k][i] || claimed[i]) continue;
            if (state.components[i].value > best) {
                best = state.components[i].value;
                pick = i;
            }
        }
        if (pick < mask.targets.size()) claimed[pick] = true;
        out.entries.push_back(action_for_entry(mask, state.crews[k].id, pick));
    }
    return out;
}

JointAction travel_aware(const DispatchState& state, const FeasibilityMask& mask) {
    struct Pair {
        double score;
        std::size_t crew;
        std::size_t target;
    };
    std::vector<Pair> pairs;
    for (std::size_t k = 0; k < state.crews.size(); ++k) {
        if (!state.crews[k].available) continue;
        for (std::size_t i = 0; i < mask.targets.size(); ++i)
            if (mask.allowed[k][i])
                pairs.push_back({state.components[i].value / (1.0 + state.travel_h[k][i]), k, i});
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        return std::tie(b.score, a.crew, a.target) < std::tie(a.score, b.crew, b.target);
    });
    std::vector<std::size_t> choice(state.crews.size(), mask.hold_index());
    std::vector<bool> crew_done(state.crews.size(), false);
    std::vector<bool> claimed(mask.targets.size(), false);
    for (const auto& p : pairs) {
        if (crew_done[p.crew] || claimed[p.target]) continue;
        crew_done[p.crew] = true;
        claimed[p.target] = true;
        choice[p.crew] = p.target;
    }
    JointAction out;
    for (std::size_t k = 0; k < state.crews.size(); ++k)
        if (state.crews[k].available) out.entries.push_back(action_for_entry(mask, state.crews[k].id, choice[k]));
    return out;
}

JointAction heuristic_action(HeuristicVariant variant, const DispatchState& state, const FeasibilityMask& mask) {
    return variant == HeuristicVariant::GreedyValue ? greedy_value(state, mask) : travel_aware(state, mask);
}

OracleResult exact_short_horizon(const env::RestorationEnv& env, const HeuristicConfig& config) {
    config.validate();
    require(!env.done(), ErrorCode::Contract, "oracle called on a finished episode");
    const auto& state = env.state();
    require(state.components.size() <= config.max_targets && state.crews.size() <= config.max_crews,
            ErrorCode::Config,
            "oracle is limited to " + std::to_string(config.max_targets) + " confirmed targets and " +
                std::to_string(config.max_crews) + " crews");

    env::RestorationEnv root = env;
    root.drop_pending_arrivals();
    // Between events only the clock moves, so timer replans add no plans worth searching.
    root.disable_periodic_replans();
    Search s(config);
    s.ens0 = root.metrics().ens_mwh;
    s.km0 = root.metrics().travel_km;
    // Bound from the two heuristics; equal plans are still explored.
    s.bound = Search::finish_greedy(root, s.ens0, s.km0);
    {
        env::RestorationEnv t = root;
        while (!t.done()) t.step(travel_aware(t.state(), t.mask()));
        const OracleObjective ta{t.metrics().ens_mwh - s.ens0, t.metrics().travel_km - s.km0};
        if (better(ta, s.bound)) s.bound = ta;
    }
    s.dfs(root, config.oracle_depth, nullptr);
    OracleResult r;
    r.action = s.have_best ? s.best_first : all_hold(state);
    r.objective = s.best;
    r.nodes = s.nodes;
    return r;
}

}  // namespace stormdispatch::baselines
