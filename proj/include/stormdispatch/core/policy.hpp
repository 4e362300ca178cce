#pragma once

// Recurrent actor-critic over a fixed target slate: per-entity encoders,
// mean pooling, a GRU memory, a value head and per-crew masked logits.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stormdispatch/core/dispatch.hpp"
#include "stormdispatch/core/numeric.hpp"

namespace stormdispatch::policy {

enum class Activation { Tanh, Identity };

inline constexpr int kCompFeatures = 13;
inline constexpr int kCrewFeatures = 14;
inline constexpr int kGlobalFeatures = 8;
inline constexpr int kPairFeatures = 4;

struct PolicyConfig {
    int max_components = 32;  // K_c
    int max_crews = 9;        // K_k
    int embed = 32;
    int hidden = 128;
    Activation activation = Activation::Tanh;
    bool overflow_keep_top = true;  // keep the K_c highest-value components instead of failing

    void validate() const;
    int context_dim() const { return 2 * embed + kGlobalFeatures; }
};

/// Fixed-shape encoding of a DispatchState. Rows past n_comp / n_crew are zero padding.
struct Features {
    Eigen::MatrixXd comp;    // K_c x kCompFeatures
    Eigen::MatrixXd crew;    // K_k x kCrewFeatures
    Eigen::VectorXd global;  // kGlobalFeatures
    Eigen::MatrixXd pair;    // (K_k * K_c) x kPairFeatures, row = crew * K_c + slot
    int n_comp = 0;
    int n_crew = 0;
    std::vector<int> slate;  // mask entry (state component index) per slot
};

Features encode_state(const DispatchState& state, const PolicyConfig& config);

/// Actor and critic weights as named tensors.
struct PolicyParams {
    PolicyConfig config;
    Eigen::MatrixXd Wc1, bc1, Wc2, bc2;  // component encoder
    Eigen::MatrixXd Wk1, bk1, Wk2, bk2;  // crew encoder
    Eigen::MatrixXd Wz, Uz, bz, Wr, Ur, br, Wn, Un, bn;  // GRU
    Eigen::MatrixXd wv, bv;  // value head
    Eigen::MatrixXd Wq, bq, wp, bp, wh, bh, wret, bret;  // actor head

    static PolicyParams zeros(const PolicyConfig& config);
    static PolicyParams initialize(const PolicyConfig& config, std::uint64_t seed);

    template <typename F>
    void visit(F&& f) {
        f("enc.comp.W1", Wc1); f("enc.comp.b1", bc1); f("enc.comp.W2", Wc2); f("enc.comp.b2", bc2);
        f("enc.crew.W1", Wk1); f("enc.crew.b1", bk1); f("enc.crew.W2", Wk2); f("enc.crew.b2", bk2);
        f("gru.Wz", Wz); f("gru.Uz", Uz); f("gru.bz", bz);
        f("gru.Wr", Wr); f("gru.Ur", Ur); f("gru.br", br);
        f("gru.Wn", Wn); f("gru.Un", Un); f("gru.bn", bn);
        f("value.w", wv); f("value.b", bv);
        f("actor.Wq", Wq); f("actor.bq", bq); f("actor.wp", wp); f("actor.bp", bp);
        f("actor.wh", wh); f("actor.bh", bh); f("actor.wret", wret); f("actor.bret", bret);
    }
    template <typename F>
    void visit(F&& f) const {
        const_cast<PolicyParams*>(this)->visit([&](const char* n, Eigen::MatrixXd& m) { f(n, static_cast<const Eigen::MatrixXd&>(m)); });
    }

    std::size_t size() const;
    bool all_finite() const;
    void set_zero();
    /// this += scale * other
    void add_scaled(const PolicyParams& other, double scale);
    double squared_norm() const;
    /// Flat views used by the optimizer and gradient checks.
    double& at(std::size_t flat_index);
};

using Memory = Eigen::VectorXd;

Memory initial_memory(const PolicyConfig& config);

/// Activations kept for reverse-mode differentiation.
struct StepCache {
    Features features;
    Memory h_prev;
    Eigen::MatrixXd a1c, h1c, a2c, ec;  // n_comp x E
    Eigen::MatrixXd a1k, h1k, a2k, ek;  // n_crew x E
    Eigen::VectorXd x, z, r, hn, n, h;
    Eigen::MatrixXd q;  // n_crew x E
    Eigen::MatrixXd u;  // n_crew x (H + E)
};

struct ForwardOutput {
    Eigen::MatrixXd logits;  // n_crew x (n_comp + 2): slots, hold, return
    double value = 0.0;
    Memory memory;
};

ForwardOutput forward(const PolicyParams& params, const Features& features, const Memory& memory,
                      StepCache* cache = nullptr);

/// Accumulates parameter gradients for one step. `d_logits` and `d_value` are
/// loss derivatives of this step's outputs, `d_memory_out` the derivative
/// w.r.t. the emitted memory; returns the derivative w.r.t. the input memory.
Memory backward(const PolicyParams& params, const StepCache& cache, const Eigen::MatrixXd& d_logits, double d_value,
                const Memory& d_memory_out, PolicyParams& grads);

/// Per-crew feasibility in slate coordinates ([slots..., hold, return]).
struct SlateMask {
    std::vector<std::vector<bool>> allowed;  // n_crew rows
    std::vector<bool> acting;                // available crews choose an action
};

SlateMask slate_mask(const Features& features, const FeasibilityMask& mask, const DispatchState& state);

/// Lowest finite double: the masked-logit sentinel.
inline constexpr double kMaskedLogit = -1.7976931348623157e308;

/// Blocked entries set to kMaskedLogit. An all-blocked row is a contract error.
std::vector<double> apply_mask(const std::vector<double>& logits, const std::vector<bool>& allowed);

struct CrewDistribution {
    std::vector<double> masked_logits;
    std::vector<double> probs;
    std::vector<double> log_probs;  // kMaskedLogit where blocked

    double entropy() const;
};

CrewDistribution crew_distribution(const std::vector<double>& logits, const std::vector<bool>& allowed,
                                   double temperature = 1.0);

enum class SelectMode { Sample, Greedy, Temperature };

struct Selection {
    JointAction action;
    std::vector<int> entries;               // chosen slate entry per crew, -1 if not acting
    std::vector<std::vector<bool>> masks;   // effective mask per crew after earlier claims
    double log_prob = 0.0;
    double entropy = 0.0;
};

/// Crews choose in ascending id; a claimed slot is blocked for later crews.
Selection select_action(const Eigen::MatrixXd& logits, const SlateMask& mask, const Features& features,
                        const DispatchState& state, SelectMode mode, double temperature, Rng& rng);

/// Joint log-probability and entropy of recorded entries under `logits`.
struct LogProbResult {
    double log_prob = 0.0;
    double entropy = 0.0;
    std::vector<CrewDistribution> crews;
};
LogProbResult evaluate_entries(const Eigen::MatrixXd& logits, const std::vector<std::vector<bool>>& masks,
                               const std::vector<int>& entries);

struct Checkpoint {
    PolicyParams params;
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Eigen::MatrixXd>> extra;  // optimizer state and the like
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stormdispatch::policy
