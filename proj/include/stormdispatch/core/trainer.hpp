#pragma once

// Masked PPO: rollouts, GAE, clipped surrogate with value and entropy terms,
// full-episode backpropagation through time, Adam, and gradient checks.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "stormdispatch/core/env.hpp"
#include "stormdispatch/core/hazard.hpp"
#include "stormdispatch/core/policy.hpp"

namespace stormdispatch::trainer {

struct PPOConfig {
    double gamma = 0.99;
    double lambda = 0.95;
    double clip_eps = 0.2;
    double c_value = 0.5;
    double c_entropy = 0.01;
    double learning_rate = 3e-4;
    int rollouts_per_epoch = 16;
    int update_iters = 4;  // U
    int epochs = 40;       // E
    double grad_clip = 0.5;
    int minibatch_episodes = 4;
    int eval_scenarios = 10;
    std::uint64_t seed = 1;
    bool normalize_advantages = true;
    bool per_hour_discount = false;  // gamma^(elapsed h) instead of gamma per decision
    double reward_scale = 1.0;       // rewards are multiplied by this before GAE
    std::uint64_t train_seed_base = 100000;
    std::uint64_t eval_seed_base = 500000;

    void validate() const;
};

PPOConfig ppo_config_from_json(const nlohmann::json& doc);
nlohmann::json ppo_config_to_json(const PPOConfig& config);

/// Builds fresh environments on generated scenarios.
struct EnvFactory {
    std::shared_ptr<const FeederModel> feeder;
    std::shared_ptr<const RoadGraph> roads;
    env::EnvConfig env_config;
    hazard::ScenarioConfig scenario_config;

    hazard::HazardScenario scenario(std::uint64_t seed) const;
    env::RestorationEnv make(const hazard::HazardScenario& scenario, std::uint64_t seed) const;
};

struct Step {
    policy::Features features;
    std::vector<std::vector<bool>> masks;  // effective per-crew masks at selection time
    std::vector<int> entries;              // chosen slate entry per crew, -1 if not acting
    double reward = 0.0;                   // unscaled environment reward
    double elapsed_h = 0.0;
    bool done = false;
    double log_prob = 0.0;  // behaviour log-probability
    double value = 0.0;
    policy::Memory memory;  // input memory snapshot
};

struct Trajectory {
    std::uint64_t scenario_seed = 0;
    std::vector<Step> steps;
    env::EpisodeMetrics metrics;
};

std::vector<Trajectory> collect_rollouts(const policy::PolicyParams& params, const EnvFactory& factory,
                                         const std::vector<std::uint64_t>& scenario_seeds, Rng& rng);

struct AdvantageEstimate {
    std::vector<double> advantages;
    std::vector<double> returns;
};

/// values has length T+1 (bootstrap last, 0 at true termination);
/// discounts[t] multiplies V(s_{t+1}) and the carried advantage.
AdvantageEstimate compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                              const std::vector<double>& discounts, double lambda);
AdvantageEstimate compute_gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
                              double lambda);

/// Training batch entry: a trajectory with its advantages and return targets.
struct BatchEpisode {
    const Trajectory* trajectory = nullptr;
    std::vector<double> advantages;
    std::vector<double> returns;
};

std::vector<BatchEpisode> prepare_batch(const std::vector<Trajectory>& trajectories, const PPOConfig& config);

struct LossTerms {
    double total = 0.0;
    double policy = 0.0;
    double value = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;
    double clip_fraction = 0.0;
};

/// Loss over a minibatch of episodes; accumulates gradients when `grads` is non-null.
LossTerms ppo_loss(const policy::PolicyParams& params, const std::vector<const BatchEpisode*>& batch,
                   const PPOConfig& config, policy::PolicyParams* grads);

struct AdamState {
    policy::PolicyParams m;
    policy::PolicyParams v;
    std::int64_t step = 0;

    static AdamState zeros(const policy::PolicyConfig& config);
};

struct UpdateDiagnostics {
    LossTerms loss;  // averaged over minibatches
    double grad_norm = 0.0;
};

UpdateDiagnostics ppo_update(policy::PolicyParams& params, AdamState& adam, const std::vector<Trajectory>& trajectories,
                             const PPOConfig& config, Rng& rng);

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    double max_abs_policy_grad = 0.0;  // policy-loss-only gradient magnitude
};

/// Denominator floor of the relative error: gradients below it are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-6;

/// Reverse-mode gradient of the total loss against Richardson-extrapolated
/// central differences of an extended-precision reference loss, over
/// `samples` random weights. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const policy::PolicyParams& params, const std::vector<Trajectory>& trajectories,
                           const PPOConfig& config, std::size_t samples, std::uint64_t seed, double h = 1e-3);

enum class EvalMode { Greedy, Sample, Temperature };

struct EvalOptions {
    EvalMode mode = EvalMode::Greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    bool timing = true;
};

/// One episode per scenario; decision_ms covers encode + mask + forward + select.
std::vector<env::EpisodeMetrics> evaluate_policy(const policy::PolicyParams& params, const EnvFactory& factory,
                                                 const std::vector<hazard::HazardScenario>& scenarios,
                                                 const EvalOptions& options = {});

struct TrainResult {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_eval_reward = 0.0;
    std::vector<double> eval_rewards;
};

struct TrainOptions {
    std::string out_dir;
    bool resume = false;
    policy::PolicyConfig policy_config;
    std::function<void(int, const UpdateDiagnostics&, double)> on_epoch;  // progress hook
};

/// Epoch loop: collect -> GAE -> update -> held-out greedy evaluation. Writes
/// train_log.csv, last.ckpt (with optimizer state) and best.ckpt.
TrainResult train(const PPOConfig& config, const EnvFactory& factory, const TrainOptions& options);

}  // namespace stormdispatch::trainer
