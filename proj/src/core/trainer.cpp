#include "stormdispatch/core/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "stormdispatch/core/error.hpp"

namespace stormdispatch::trainer {

using nlohmann::json;
namespace fs = std::filesystem;

void PPOConfig::validate() const {
    require(gamma > 0.0 && gamma <= 1.0, ErrorCode::Config, "ppo: gamma must be in (0, 1]");
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::Config, "ppo: lambda must be in [0, 1]");
    require(clip_eps > 0.0, ErrorCode::Config, "ppo: clip epsilon must be positive");
    require(c_value >= 0.0 && c_entropy >= 0.0, ErrorCode::Config, "ppo: loss coefficients must be non-negative");
    require(learning_rate >= 0.0, ErrorCode::Config, "ppo: learning rate must be non-negative");
    require(rollouts_per_epoch > 0 && update_iters > 0 && epochs > 0 && minibatch_episodes > 0, ErrorCode::Config,
            "ppo: rollouts, iterations, epochs and minibatch size must be positive");
    require(grad_clip > 0.0, ErrorCode::Config, "ppo: gradient clip norm must be positive");
    require(eval_scenarios >= 0, ErrorCode::Config, "ppo: evaluation count must be non-negative");
    require(reward_scale > 0.0, ErrorCode::Config, "ppo: reward scale must be positive");
    const auto train_end = train_seed_base + static_cast<std::uint64_t>(epochs) * rollouts_per_epoch;
    const auto eval_end = eval_seed_base + static_cast<std::uint64_t>(eval_scenarios);
    require(train_end <= eval_seed_base || eval_end <= train_seed_base, ErrorCode::Config,
            "ppo: training and evaluation seed ranges overlap");
}

PPOConfig ppo_config_from_json(const json& doc) {
    PPOConfig c;
    try {
        c.gamma = doc.value("gamma", c.gamma);
        c.lambda = doc.value("lambda", c.lambda);
        c.clip_eps = doc.value("clip_eps", c.clip_eps);
        c.c_value = doc.value("c_value", c.c_value);
        c.c_entropy = doc.value("c_entropy", c.c_entropy);
        c.learning_rate = doc.value("learning_rate", c.learning_rate);
        c.rollouts_per_epoch = doc.value("rollouts_per_epoch", c.rollouts_per_epoch);
        c.update_iters = doc.value("update_iters", c.update_iters);
        c.epochs = doc.value("epochs", c.epochs);
        c.grad_clip = doc.value("grad_clip", c.grad_clip);
        c.minibatch_episodes = doc.value("minibatch_episodes", c.minibatch_episodes);
        c.eval_scenarios = doc.value("eval_scenarios", c.eval_scenarios);
        c.seed = doc.value("seed", c.seed);
        c.normalize_advantages = doc.value("normalize_advantages", c.normalize_advantages);
        c.per_hour_discount = doc.value("per_hour_discount", c.per_hour_discount);
        c.reward_scale = doc.value("reward_scale", c.reward_scale);
        c.train_seed_base = doc.value("train_seed_base", c.train_seed_base);
        c.eval_seed_base = doc.value("eval_seed_base", c.eval_seed_base);
    } catch (const json::exception& e) {
        fail(ErrorCode::Config, std::string("ppo config: ") + e.what());
    }
    c.validate();
    return c;
}

json ppo_config_to_json(const PPOConfig& c) {
    return {{"gamma", c.gamma},
            {"lambda", c.lambda},
            {"clip_eps", c.clip_eps},
            {"c_value", c.c_value},
            {"c_entropy", c.c_entropy},
            {"learning_rate", c.learning_rate},
            {"rollouts_per_epoch", c.rollouts_per_epoch},
            {"update_iters", c.update_iters},
            {"epochs", c.epochs},
            {"grad_clip", c.grad_clip},
            {"minibatch_episodes", c.minibatch_episodes},
            {"eval_scenarios", c.eval_scenarios},
            {"seed", c.seed},
            {"normalize_advantages", c.normalize_advantages},
            {"per_hour_discount", c.per_hour_discount},
            {"reward_scale", c.reward_scale},
            {"train_seed_base", c.train_seed_base},
            {"eval_seed_base", c.eval_seed_base}};
}

hazard::HazardScenario EnvFactory::scenario(std::uint64_t seed) const {
    return hazard::generate_scenario(scenario_config, *feeder, *roads, seed);
}

env::RestorationEnv EnvFactory::make(const hazard::HazardScenario& scenario, std::uint64_t seed) const {
    env::RestorationEnv e(feeder, roads, env_config);
    e.reset(scenario, seed);
    return e;
}

std::vector<Trajectory> collect_rollouts(const policy::PolicyParams& params, const EnvFactory& factory,
                                         const std::vector<std::uint64_t>& scenario_seeds, Rng& rng) {
    std::vector<Trajectory> out;
    for (auto seed : scenario_seeds) {
        Trajectory traj;
        traj.scenario_seed = seed;
        try {
            auto env = factory.make(factory.scenario(seed), seed);
            policy::Memory mem = policy::initial_memory(params.config);
            while (!env.done()) {
                Step st;
                st.features = policy::encode_state(env.state(), params.config);
                const auto smask = policy::slate_mask(st.features, env.mask(), env.state());
                const auto fw = policy::forward(params, st.features, mem);
                const auto sel = policy::select_action(fw.logits, smask, st.features, env.state(),
                                                       policy::SelectMode::Sample, 1.0, rng);
                st.masks = sel.masks;
                st.entries = sel.entries;
                st.log_prob = sel.log_prob;
                st.value = fw.value;
                st.memory = mem;
                const double t0 = env.clock();
                const auto r = env.step(sel.action);
                st.reward = r.reward;
                st.elapsed_h = env.clock() - t0;
                st.done = r.done;
                require(std::isfinite(st.reward), ErrorCode::Numerical, "non-finite reward");
                traj.steps.push_back(std::move(st));
                mem = fw.memory;
            }
            traj.metrics = env.metrics();
        } catch (const Error& e) {
            throw Error(e.code(), "rollout on scenario seed " + std::to_string(seed) + ": " + e.what());
        }
        out.push_back(std::move(traj));
    }
    return out;
}

AdvantageEstimate compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                              const std::vector<double>& discounts, double lambda) {
    const std::size_t n = rewards.size();
    require(values.size() == n + 1 && discounts.size() == n, ErrorCode::Contract,
            "compute_gae: values must have length T+1 and discounts length T");
    AdvantageEstimate est;
    est.advantages.assign(n, 0.0);
    est.returns.assign(n, 0.0);
    double carry = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        const double delta = rewards[i] + discounts[i] * values[i + 1] - values[i];
        carry = delta + discounts[i] * lambda * carry;
        est.advantages[i] = carry;
        est.returns[i] = carry + values[i];
    }
    return est;
}

AdvantageEstimate compute_gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
                              double lambda) {
    return compute_gae(rewards, values, std::vector<double>(rewards.size(), gamma), lambda);
}

std::vector<BatchEpisode> prepare_batch(const std::vector<Trajectory>& trajectories, const PPOConfig& config) {
    std::vector<BatchEpisode> batch;
    for (const auto& t : trajectories) {
        std::vector<double> rewards, values, discounts;
        for (const auto& s : t.steps) {
            rewards.push_back(config.reward_scale * s.reward);
            values.push_back(s.value);
            discounts.push_back(config.per_hour_discount ? std::pow(config.gamma, s.elapsed_h) : config.gamma);
        }
        // Episodes end at the horizon or when no load is unserved: true termination.
        values.push_back(0.0);
        auto est = compute_gae(rewards, values, discounts, config.lambda);
        batch.push_back({&t, std::move(est.advantages), std::move(est.returns)});
    }
    if (config.normalize_advantages) {
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (const auto& b : batch)
            for (double a : b.advantages) {
                sum += a;
                ++n;
            }
        const double mean = n ? sum / static_cast<double>(n) : 0.0;
        for (const auto& b : batch)
            for (double a : b.advantages) sq += (a - mean) * (a - mean);
        const double sd = std::max(n ? std::sqrt(sq / static_cast<double>(n)) : 0.0, 1e-8);
        for (auto& b : batch)
            for (double& a : b.advantages) a = (a - mean) / sd;
    }
    return batch;
}

LossTerms ppo_loss(const policy::PolicyParams& params, const std::vector<const BatchEpisode*>& batch,
                   const PPOConfig& config, policy::PolicyParams* grads) {
    std::size_t total_steps = 0;
    for (const auto* b : batch) total_steps += b->trajectory->steps.size();
    LossTerms terms;
    if (total_steps == 0) return terms;
    const double inv_n = 1.0 / static_cast<double>(total_steps);
    std::size_t clipped = 0;

    for (const auto* b : batch) {
        const auto& steps = b->trajectory->steps;
        const std::size_t T = steps.size();
        std::vector<policy::StepCache> caches(grads ? T : 0);
        std::vector<Eigen::MatrixXd> dlogits(grads ? T : 0);
        std::vector<double> dvalues(grads ? T : 0, 0.0);
        policy::Memory mem = policy::initial_memory(params.config);
        for (std::size_t t = 0; t < T; ++t) {
            const auto& st = steps[t];
            const auto fw = policy::forward(params, st.features, mem, grads ? &caches[t] : nullptr);
            mem = fw.memory;
            const auto lp = policy::evaluate_entries(fw.logits, st.masks, st.entries);
            const double adv = b->advantages[t];
            const double ratio = std::exp(lp.log_prob - st.log_prob);
            const double clipped_ratio = std::clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps);
            const double unclipped_term = ratio * adv;
            const double clipped_term = clipped_ratio * adv;
            const bool use_unclipped = unclipped_term <= clipped_term;
            if (!use_unclipped) ++clipped;
            const double surrogate = std::min(unclipped_term, clipped_term);
            const double verr = fw.value - b->returns[t];
            terms.policy += -surrogate * inv_n;
            terms.value += verr * verr * inv_n;
            terms.entropy += lp.entropy * inv_n;
            terms.approx_kl += (st.log_prob - lp.log_prob) * inv_n;
            if (!grads) continue;

            const double d_logp = use_unclipped ? -adv * ratio * inv_n : 0.0;
            Eigen::MatrixXd dl = Eigen::MatrixXd::Zero(fw.logits.rows(), fw.logits.cols());
            for (std::size_t k = 0; k < st.entries.size(); ++k) {
                if (st.entries[k] < 0) continue;
                const auto& d = lp.crews[k];
                const double h = d.entropy();
                for (std::size_t j = 0; j < d.probs.size(); ++j) {
                    if (!st.masks[k][j]) continue;
                    const double p = d.probs[j];
                    const double onehot = static_cast<int>(j) == st.entries[k] ? 1.0 : 0.0;
                    double g = d_logp * (onehot - p);
                    // d(-c_e * H)/dz_j = c_e * p_j (log p_j + H)
                    g += config.c_entropy * inv_n * p * (d.log_probs[j] + h);
                    dl(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = g;
                }
            }
            dlogits[t] = std::move(dl);
            dvalues[t] = 2.0 * config.c_value * verr * inv_n;
        }
        if (grads) {
            policy::Memory dmem = policy::Memory::Zero(params.config.hidden);
            for (std::size_t t = T; t-- > 0;)
                dmem = policy::backward(params, caches[t], dlogits[t], dvalues[t], dmem, *grads);
        }
    }
    terms.clip_fraction = static_cast<double>(clipped) * inv_n;
    terms.total = terms.policy + config.c_value * terms.value - config.c_entropy * terms.entropy;
    require(std::isfinite(terms.total), ErrorCode::Numerical,
            "non-finite PPO loss (policy " + std::to_string(terms.policy) + ", value " + std::to_string(terms.value) +
                ", entropy " + std::to_string(terms.entropy) + ")");
    return terms;
}

AdamState AdamState::zeros(const policy::PolicyConfig& config) {
    return {policy::PolicyParams::zeros(config), policy::PolicyParams::zeros(config), 0};
}

namespace {

void adam_step(policy::PolicyParams& params, const policy::PolicyParams& grads, AdamState& adam, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++adam.step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
    std::vector<const Eigen::MatrixXd*> g;
    grads.visit([&](const char*, const Eigen::MatrixXd& m) { g.push_back(&m); });
    std::vector<Eigen::MatrixXd*> m, v;
    adam.m.visit([&](const char*, Eigen::MatrixXd& x) { m.push_back(&x); });
    adam.v.visit([&](const char*, Eigen::MatrixXd& x) { v.push_back(&x); });
    std::size_t i = 0;
    params.visit([&](const char*, Eigen::MatrixXd& p) {
        *m[i] = b1 * *m[i] + (1.0 - b1) * *g[i];
        *v[i] = b2 * *v[i] + (1.0 - b2) * g[i]->cwiseProduct(*g[i]);
        p.array() -= lr * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + eps);
        ++i;
    });
}

}  // namespace

UpdateDiagnostics ppo_update(policy::PolicyParams& params, AdamState& adam, const std::vector<Trajectory>& trajectories,
                             const PPOConfig& config, Rng& rng) {
    config.validate();
    const auto batch = prepare_batch(trajectories, config);
    UpdateDiagnostics diag;
    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    int updates = 0;
    for (int it = 0; it < config.update_iters; ++it) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.minibatch_episodes)) {
            std::vector<const BatchEpisode*> mb;
            for (std::size_t i = start; i < std::min(order.size(), start + config.minibatch_episodes); ++i)
                mb.push_back(&batch[order[i]]);
            auto grads = policy::PolicyParams::zeros(params.config);
            const auto terms = ppo_loss(params, mb, config, &grads);
            const double norm = std::sqrt(grads.squared_norm());
            require(std::isfinite(norm), ErrorCode::Numerical, "non-finite gradient norm");
            if (norm > config.grad_clip) grads.add_scaled(grads, config.grad_clip / norm - 1.0);
            adam_step(params, grads, adam, config.learning_rate);
            diag.loss.total += terms.total;
            diag.loss.policy += terms.policy;
            diag.loss.value += terms.value;
            diag.loss.entropy += terms.entropy;
            diag.loss.approx_kl += terms.approx_kl;
            diag.loss.clip_fraction += terms.clip_fraction;
            diag.grad_norm += norm;
            ++updates;
        }
    }
    if (updates > 0) {
        const double inv = 1.0 / updates;
        diag.loss.total *= inv;
        diag.loss.policy *= inv;
        diag.loss.value *= inv;
        diag.loss.entropy *= inv;
        diag.loss.approx_kl *= inv;
        diag.loss.clip_fraction *= inv;
        diag.grad_norm *= inv;
    }
    require(params.all_finite(), ErrorCode::Numerical, "parameters became non-finite");
    return diag;
}

namespace {

// Independent extended-precision evaluation of the PPO loss, used only as the
// finite-difference reference in grad_check.
using LD = long double;
using MatL = Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic>;
using VecL = Eigen::Matrix<LD, Eigen::Dynamic, 1>;

struct ParamsL {
    std::vector<MatL> t;  // same order as PolicyParams::visit
};

ParamsL to_long(const policy::PolicyParams& p) {
    ParamsL out;
    p.visit([&](const char*, const Eigen::MatrixXd& m) { out.t.push_back(m.cast<LD>()); });
    return out;
}

LD& entry(ParamsL& p, std::size_t flat) {
    for (auto& m : p.t) {
        if (flat < static_cast<std::size_t>(m.size())) return m.data()[flat];
        flat -= static_cast<std::size_t>(m.size());
    }
    fail(ErrorCode::Contract, "parameter index out of range");
}

MatL act_l(const MatL& a, policy::Activation act) {
    if (act == policy::Activation::Identity) return a;
    MatL out = a;
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(a.data()[i]);
    return out;
}

VecL sigmoid_l(const VecL& a) {
    VecL out(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) out(i) = 1.0L / (1.0L + std::exp(-a(i)));
    return out;
}

LD reference_loss(const ParamsL& P, const policy::PolicyConfig& c, const std::vector<const BatchEpisode*>& batch,
                  const PPOConfig& config) {
    enum { Wc1, bc1, Wc2, bc2, Wk1, bk1, Wk2, bk2, Wz, Uz, bz, Wr, Ur, br, Wn, Un, bn, wv, bv, Wq, bq, wp, bp, wh, bh,
           wret, bret };
    const auto& t = P.t;
    const int e = c.embed;
    std::size_t total_steps = 0;
    for (const auto* b : batch) total_steps += b->trajectory->steps.size();
    if (total_steps == 0) return 0.0L;
    const LD inv_n = 1.0L / static_cast<LD>(total_steps);
    const LD inv_sqrt = 1.0L / std::sqrt(static_cast<LD>(e));
    LD pol = 0, val = 0, ent = 0;
    for (const auto* b : batch) {
        VecL h = VecL::Zero(c.hidden);
        const auto& steps = b->trajectory->steps;
        for (std::size_t s = 0; s < steps.size(); ++s) {
            const auto& st = steps[s];
            const auto& f = st.features;
            const int nc = f.n_comp, nk = f.n_crew;
            const MatL xc = f.comp.topRows(nc).cast<LD>();
            const MatL xk = f.crew.topRows(nk).cast<LD>();
            const MatL ec = act_l((act_l((xc * t[Wc1].transpose()).rowwise() + t[bc1].col(0).transpose(), c.activation) *
                                   t[Wc2].transpose()).rowwise() + t[bc2].col(0).transpose(), c.activation);
            const MatL ek = act_l((act_l((xk * t[Wk1].transpose()).rowwise() + t[bk1].col(0).transpose(), c.activation) *
                                   t[Wk2].transpose()).rowwise() + t[bk2].col(0).transpose(), c.activation);
            VecL x = VecL::Zero(c.context_dim());
            if (nc > 0) x.segment(0, e) = ec.colwise().mean().transpose();
            if (nk > 0) x.segment(e, e) = ek.colwise().mean().transpose();
            x.segment(2 * e, policy::kGlobalFeatures) = f.global.cast<LD>();
            const VecL z = sigmoid_l(t[Wz] * x + t[Uz] * h + t[bz].col(0));
            const VecL r = sigmoid_l(t[Wr] * x + t[Ur] * h + t[br].col(0));
            VecL n = t[Wn] * x + r.cwiseProduct(t[Un] * h) + t[bn].col(0);
            for (Eigen::Index i = 0; i < n.size(); ++i) n(i) = std::tanh(n(i));
            h = (VecL::Ones(c.hidden) - z).cwiseProduct(n) + z.cwiseProduct(h);
            const LD value = (t[wv] * h)(0) + t[bv](0, 0);

            LD logp = 0, entropy = 0;
            for (int k = 0; k < nk; ++k) {
                const int chosen = st.entries[static_cast<std::size_t>(k)];
                if (chosen < 0) continue;
                VecL u(c.hidden + e);
                u.head(c.hidden) = h;
                u.tail(e) = ek.row(k).transpose();
                const VecL q = t[Wq] * u + t[bq].col(0);
                std::vector<LD> z_row(static_cast<std::size_t>(nc + 2));
                for (int j = 0; j < nc; ++j)
                    z_row[static_cast<std::size_t>(j)] =
                        inv_sqrt * ec.row(j).dot(q) +
                        (t[wp] * f.pair.row(k * c.max_components + j).transpose().cast<LD>())(0) + t[bp](0, 0);
                z_row[static_cast<std::size_t>(nc)] = (t[wh] * u)(0) + t[bh](0, 0);
                z_row[static_cast<std::size_t>(nc + 1)] = (t[wret] * u)(0) + t[bret](0, 0);
                const auto& allowed = st.masks[static_cast<std::size_t>(k)];
                LD mx = -std::numeric_limits<LD>::infinity();
                for (std::size_t j = 0; j < z_row.size(); ++j)
                    if (allowed[j]) mx = std::max(mx, z_row[j]);
                LD sum = 0;
                for (std::size_t j = 0; j < z_row.size(); ++j)
                    if (allowed[j]) sum += std::exp(z_row[j] - mx);
                const LD lse = mx + std::log(sum);
                logp += z_row[static_cast<std::size_t>(chosen)] - lse;
                for (std::size_t j = 0; j < z_row.size(); ++j)
                    if (allowed[j]) {
                        const LD lp = z_row[j] - lse;
                        entropy -= std::exp(lp) * lp;
                    }
            }
            const LD adv = b->advantages[s];
            const LD ratio = std::exp(logp - static_cast<LD>(st.log_prob));
            const LD lo = 1.0L - static_cast<LD>(config.clip_eps), hi = 1.0L + static_cast<LD>(config.clip_eps);
            const LD clipped = std::min(std::max(ratio, lo), hi);
            pol += -std::min(ratio * adv, clipped * adv) * inv_n;
            const LD verr = value - static_cast<LD>(b->returns[s]);
            val += verr * verr * inv_n;
            ent += entropy * inv_n;
        }
    }
    return pol + static_cast<LD>(config.c_value) * val - static_cast<LD>(config.c_entropy) * ent;
}

}  // namespace

GradCheckResult grad_check(const policy::PolicyParams& params, const std::vector<Trajectory>& trajectories,
                           const PPOConfig& config, std::size_t samples, std::uint64_t seed, double h) {
    const auto batch = prepare_batch(trajectories, config);
    std::vector<const BatchEpisode*> mb;
    for (const auto& b : batch) mb.push_back(&b);
    auto grads = policy::PolicyParams::zeros(params.config);
    ppo_loss(params, mb, config, &grads);

    GradCheckResult res;
    {
        PPOConfig only_policy = config;
        only_policy.c_value = 0.0;
        only_policy.c_entropy = 0.0;
        auto pg = policy::PolicyParams::zeros(params.config);
        ppo_loss(params, mb, only_policy, &pg);
        pg.visit([&](const char*, const Eigen::MatrixXd& m) {
            if (m.size()) res.max_abs_policy_grad = std::max(res.max_abs_policy_grad, m.cwiseAbs().maxCoeff());
        });
    }
    Rng rng(seed);
    const std::size_t n = params.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    ParamsL probe = to_long(params);
    auto central = [&](std::size_t idx, LD step) {
        LD& w = entry(probe, idx);
        const LD w0 = w;
        w = w0 + step;
        const LD up = reference_loss(probe, params.config, mb, config);
        w = w0 - step;
        const LD down = reference_loss(probe, params.config, mb, config);
        w = w0;
        return (up - down) / (2.0L * step);
    };
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t idx = pick(rng);
        // Two Richardson levels remove the O(h^2) and O(h^4) terms of the central difference.
        const LD d1 = central(idx, static_cast<LD>(h));
        const LD d2 = central(idx, static_cast<LD>(h) / 2.0L);
        const LD d3 = central(idx, static_cast<LD>(h) / 4.0L);
        const LD r1 = (4.0L * d2 - d1) / 3.0L;
        const LD r2 = (4.0L * d3 - d2) / 3.0L;
        const double numeric = static_cast<double>((16.0L * r2 - r1) / 15.0L);
        const double analytic = const_cast<policy::PolicyParams&>(grads).at(idx);
        const double scale = std::max({std::abs(numeric), std::abs(analytic), kGradCheckFloor});
        res.max_relative_error = std::max(res.max_relative_error, std::abs(numeric - analytic) / scale);
        ++res.checked;
    }
    return res;
}

std::vector<env::EpisodeMetrics> evaluate_policy(const policy::PolicyParams& params, const EnvFactory& factory,
                                                 const std::vector<hazard::HazardScenario>& scenarios,
                                                 const EvalOptions& options) {
    std::vector<env::EpisodeMetrics> out;
    Rng rng(options.seed);
    const auto mode = options.mode == EvalMode::Greedy   ? policy::SelectMode::Greedy
                      : options.mode == EvalMode::Sample ? policy::SelectMode::Sample
                                                         : policy::SelectMode::Temperature;
    for (const auto& sc : scenarios) {
        auto env = factory.make(sc, sc.seed);
        policy::Memory mem = policy::initial_memory(params.config);
        std::vector<double> ms;
        while (!env.done()) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto f = policy::encode_state(env.state(), params.config);
            const auto sm = policy::slate_mask(f, env.mask(), env.state());
            const auto fw = policy::forward(params, f, mem);
            const auto sel = policy::select_action(fw.logits, sm, f, env.state(), mode, options.temperature, rng);
            const auto t1 = std::chrono::steady_clock::now();
            ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            mem = fw.memory;
            env.step(sel.action);
        }
        auto m = env.metrics();
        if (options.timing) m.decision_ms = std::move(ms);
        out.push_back(std::move(m));
    }
    return out;
}

namespace {

Eigen::MatrixXd flat_matrix(const policy::PolicyParams& p) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(p.size()), 1);
    Eigen::Index i = 0;
    p.visit([&](const char*, const Eigen::MatrixXd& m) {
        for (Eigen::Index k = 0; k < m.size(); ++k) out(i++, 0) = m.data()[k];
    });
    return out;
}

void unflatten(policy::PolicyParams& p, const Eigen::MatrixXd& flat) {
    require(static_cast<std::size_t>(flat.size()) == p.size(), ErrorCode::Config, "optimizer state has wrong size");
    Eigen::Index i = 0;
    p.visit([&](const char*, Eigen::MatrixXd& m) {
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = flat(i++, 0);
    });
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

TrainResult train(const PPOConfig& config, const EnvFactory& factory, const TrainOptions& options) {
    config.validate();
    require(!options.out_dir.empty(), ErrorCode::Config, "train: output directory required");
    fs::create_directories(options.out_dir);
    const auto last_path = (fs::path(options.out_dir) / "last.ckpt").string();
    const auto best_path = (fs::path(options.out_dir) / "best.ckpt").string();
    const auto log_path = (fs::path(options.out_dir) / "train_log.csv").string();

    policy::PolicyParams params = policy::PolicyParams::initialize(options.policy_config, config.seed);
    AdamState adam = AdamState::zeros(options.policy_config);
    TrainResult result;
    result.best_eval_reward = -std::numeric_limits<double>::infinity();
    int start_epoch = 1;
    std::map<std::string, std::string> base_meta{{"feeder", factory.feeder->name()},
                                                 {"crews", std::to_string(factory.env_config.crews)}};
    const auto train_end = config.train_seed_base + static_cast<std::uint64_t>(config.epochs) *
                                                        static_cast<std::uint64_t>(config.rollouts_per_epoch);
    base_meta["train_seeds_begin"] = std::to_string(config.train_seed_base);
    base_meta["train_seeds_end"] = std::to_string(train_end);
    base_meta["validation_seeds_begin"] = std::to_string(config.eval_seed_base);
    base_meta["validation_seeds_end"] =
        std::to_string(config.eval_seed_base + static_cast<std::uint64_t>(config.eval_scenarios));

    if (options.resume) {
        require(fs::exists(last_path), ErrorCode::Config, "train: nothing to resume in '" + options.out_dir + "'");
        auto ck = policy::load_checkpoint(last_path);
        require(ck.meta["feeder"] == factory.feeder->name(), ErrorCode::Config,
                "train: checkpoint was trained on feeder '" + ck.meta["feeder"] + "'");
        params = ck.params;
        adam = AdamState::zeros(params.config);
        for (auto& [n, m] : ck.extra) {
            if (n == "adam.m") unflatten(adam.m, m);
            if (n == "adam.v") unflatten(adam.v, m);
        }
        adam.step = std::stoll(ck.meta.at("adam_step"));
        start_epoch = std::stoi(ck.meta.at("epoch")) + 1;
        result.best_epoch = std::stoi(ck.meta.at("best_epoch"));
        result.best_eval_reward = std::stod(ck.meta.at("best_eval_reward"));
    } else {
        std::ofstream log(log_path, std::ios::trunc);
        require(static_cast<bool>(log), ErrorCode::Io, "cannot write '" + log_path + "'");
        log << "epoch,policy_loss,value_loss,entropy,eval_reward\n";
    }

    std::vector<hazard::HazardScenario> eval_set;
    for (int i = 0; i < config.eval_scenarios; ++i)
        eval_set.push_back(factory.scenario(config.eval_seed_base + static_cast<std::uint64_t>(i)));

    for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
        try {
            Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
            std::vector<std::uint64_t> seeds;
            for (int i = 0; i < config.rollouts_per_epoch; ++i)
                seeds.push_back(config.train_seed_base +
                                static_cast<std::uint64_t>((epoch - 1) * config.rollouts_per_epoch + i));
            const auto trajs = collect_rollouts(params, factory, seeds, rng);
            const auto diag = ppo_update(params, adam, trajs, config, rng);

            double eval_reward = 0.0;
            if (!eval_set.empty()) {
                const auto ms = evaluate_policy(params, factory, eval_set, {EvalMode::Greedy, 1.0, 0, false});
                for (const auto& m : ms) eval_reward += m.total_reward;
                eval_reward /= static_cast<double>(ms.size());
            }
            result.eval_rewards.push_back(eval_reward);
            ++result.epochs_run;

            {
                std::ofstream log(log_path, std::ios::app);
                log << epoch << ',' << fmt(diag.loss.policy) << ',' << fmt(diag.loss.value) << ','
                    << fmt(diag.loss.entropy) << ',' << fmt(eval_reward) << '\n';
            }
            const bool improved = eval_reward > result.best_eval_reward;
            if (improved) {
                result.best_eval_reward = eval_reward;
                result.best_epoch = epoch;
            }
            policy::Checkpoint ck;
            ck.params = params;
            ck.meta = base_meta;
            ck.meta["epoch"] = std::to_string(epoch);
            ck.meta["eval_reward"] = fmt(eval_reward);
            if (improved) policy::save_checkpoint(best_path, ck);
            ck.meta["adam_step"] = std::to_string(adam.step);
            ck.meta["best_epoch"] = std::to_string(result.best_epoch);
            ck.meta["best_eval_reward"] = fmt(result.best_eval_reward);
            ck.extra.emplace_back("adam.m", flat_matrix(adam.m));
            ck.extra.emplace_back("adam.v", flat_matrix(adam.v));
            policy::save_checkpoint(last_path, ck);
            if (options.on_epoch) options.on_epoch(epoch, diag, eval_reward);
        } catch (const Error& e) {
            throw Error(e.code(), "epoch " + std::to_string(epoch) + ": " + e.what());
        }
    }
    return result;
}

}  // namespace stormdispatch::trainer
