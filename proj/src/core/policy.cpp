#include "stormdispatch/core/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "stormdispatch/core/error.hpp"

namespace stormdispatch::policy {

namespace {

constexpr double kTravelScale = 4.0;  // h
constexpr double kTravelCap = 2.5;    // normalized sentinel for unreachable targets
constexpr double kShiftScale = 12.0;  // h
constexpr double kLogScoreFloor = 5.0;  // pair score log-ratios are clipped at -5

double norm_travel(double h) { return h == kUnreachable ? kTravelCap : std::min(h / kTravelScale, kTravelCap); }

Eigen::MatrixXd activate(const Eigen::MatrixXd& a, Activation act) {
    return act == Activation::Tanh ? Eigen::MatrixXd(a.array().tanh()) : a;
}

// Derivative expressed through the activation output.
Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& out, Activation act) {
    if (act == Activation::Identity) return Eigen::MatrixXd::Ones(out.rows(), out.cols());
    return (1.0 - out.array().square()).matrix();
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

Eigen::MatrixXd orthogonal(int rows, int cols, double gain, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const int big = std::max(rows, cols);
    const int small = std::min(rows, cols);
    Eigen::MatrixXd g(big, small);
    for (int j = 0; j < small; ++j)
        for (int i = 0; i < big; ++i) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    // Sign fix so the draw is a proper Haar sample.
    const Eigen::MatrixXd rr = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
    for (int j = 0; j < small; ++j)
        if (rr(j, j) < 0) q.col(j) *= -1.0;
    Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
    return gain * w;
}

}  // namespace

void PolicyConfig::validate() const {
    require(max_components > 0 && max_crews > 0, ErrorCode::Config, "policy: slate sizes must be positive");
    require(embed > 0 && hidden > 0, ErrorCode::Config, "policy: embed and hidden sizes must be positive");
}

Features encode_state(const DispatchState& state, const PolicyConfig& config) {
    config.validate();
    const int kc = config.max_components;
    const int kk = config.max_crews;
    require(static_cast<int>(state.crews.size()) <= kk, ErrorCode::Config,
            "policy: " + std::to_string(state.crews.size()) + " crews exceed the crew slate of " + std::to_string(kk));
    Features f;
    f.comp = Eigen::MatrixXd::Zero(kc, kCompFeatures);
    f.crew = Eigen::MatrixXd::Zero(kk, kCrewFeatures);
    f.global = Eigen::VectorXd::Zero(kGlobalFeatures);
    f.pair = Eigen::MatrixXd::Zero(kk * kc, kPairFeatures);

    const int n_all = static_cast<int>(state.components.size());
    std::vector<int> order(static_cast<std::size_t>(n_all));
    for (int i = 0; i < n_all; ++i) order[static_cast<std::size_t>(i)] = i;
    if (n_all > kc) {
        require(config.overflow_keep_top, ErrorCode::Contract,
                "policy: " + std::to_string(n_all) + " confirmed components overflow the slate of " + std::to_string(kc));
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return state.components[static_cast<std::size_t>(a)].value > state.components[static_cast<std::size_t>(b)].value;
        });
        order.resize(static_cast<std::size_t>(kc));
        std::sort(order.begin(), order.end());
    }
    f.slate = order;
    f.n_comp = static_cast<int>(order.size());
    f.n_crew = static_cast<int>(state.crews.size());

    const double total = state.total_load_kw > 0.0 ? state.total_load_kw : 1.0;
    double max_v = 0.0;
    for (int idx : order) max_v = std::max(max_v, state.components[static_cast<std::size_t>(idx)].value);
    double max_ta = 0.0;
    for (std::size_t k = 0; k < state.crews.size(); ++k)
        for (int idx : order) {
            const double tt = state.travel_h[k][static_cast<std::size_t>(idx)];
            if (tt != kUnreachable)
                max_ta = std::max(max_ta, state.components[static_cast<std::size_t>(idx)].value / (1.0 + tt));
        }

    static const char* kClasses[] = {"substation", "pole", "lateral", "riser"};
    for (int s = 0; s < f.n_comp; ++s) {
        const auto& c = state.components[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])];
        auto row = f.comp.row(s);
        row(0) = 1.0;
        row(1) = state.known_damage[static_cast<std::size_t>(c.site)] ? 1.0 : 0.0;
        row(2) = c.repair_est_h / kShiftScale;
        row(3) = norm_travel(c.min_travel_h);
        row(4) = max_v > 0.0 ? c.value / max_v : 0.0;
        row(5) = c.restorable_kw / total;
        row(6) = c.unlock_kw / total;
        row(7) = c.restores_critical ? 1.0 : 0.0;
        row(8) = c.assigned_crew >= 0 ? 1.0 : 0.0;
        for (int j = 0; j < 4; ++j) row(9 + j) = c.component_class == kClasses[j] ? 1.0 : 0.0;
    }
    for (int k = 0; k < f.n_crew; ++k) {
        const auto& c = state.crews[static_cast<std::size_t>(k)];
        auto row = f.crew.row(k);
        row(0) = 1.0;
        row(1) = c.available ? 1.0 : 0.0;
        row(2) = c.status == CrewStatus::Traveling ? 1.0 : 0.0;
        row(3) = c.status == CrewStatus::Repairing ? 1.0 : 0.0;
        row(4) = c.status == CrewStatus::OnBreak ? 1.0 : 0.0;
        row(5) = c.status == CrewStatus::OffDuty ? 1.0 : 0.0;
        row(6) = c.remaining_shift_h / kShiftScale;
        row(7) = c.speed_kmh / 40.0;
        row(8) = c.break_taken ? 0.0 : 1.0;
        row(9) = norm_travel(c.to_depot_h);
        row(10) = c.at_depot ? 1.0 : 0.0;
        row(11) = std::find(c.skills.begin(), c.skills.end(), "substation") != c.skills.end() ? 1.0 : 0.0;
        row(12) = c.position.x_km / 20.0;
        row(13) = c.position.y_km / 20.0;
        for (int s = 0; s < f.n_comp; ++s) {
            const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(s)]);
            const auto& comp = state.components[idx];
            const double tt = state.travel_h[static_cast<std::size_t>(k)][idx];
            auto p = f.pair.row(k * kc + s);
            p(0) = norm_travel(tt);
            p(1) = (tt != kUnreachable && max_ta > 0.0) ? comp.value / (1.0 + tt) / max_ta : 0.0;
            p(2) = p(1) > 0.0 ? std::max(std::log(p(1)), -kLogScoreFloor) / kLogScoreFloor + 1.0 : 0.0;
            const double need = tt == kUnreachable ? kUnreachable : tt + comp.repair_est_h;
            p(3) = c.remaining_shift_h > 0.0 ? std::min(need / c.remaining_shift_h, 2.0) : 2.0;
        }
    }
    int available = 0;
    for (const auto& c : state.crews) available += c.available ? 1 : 0;
    const double day = 2.0 * std::numbers::pi * std::fmod(state.clock_h, 24.0) / 24.0;
    f.global(0) = state.horizon_h > 0.0 ? state.clock_h / state.horizon_h : 0.0;
    f.global(1) = std::sin(day);
    f.global(2) = std::cos(day);
    f.global(3) = state.unserved_kw / total;
    f.global(4) = state.critical_buses > 0 ? static_cast<double>(state.critical_out) / state.critical_buses : 0.0;
    f.global(5) = state.rho / 2.0;
    f.global(6) = static_cast<double>(n_all) / kc;
    f.global(7) = static_cast<double>(available) / kk;
    return f;
}

PolicyParams PolicyParams::zeros(const PolicyConfig& c) {
    c.validate();
    const int e = c.embed, h = c.hidden, d = c.context_dim(), u = h + e;
    PolicyParams p;
    p.config = c;
    auto z = [](int r, int k) { return Eigen::MatrixXd::Zero(r, k); };
    p.Wc1 = z(e, kCompFeatures); p.bc1 = z(e, 1); p.Wc2 = z(e, e); p.bc2 = z(e, 1);
    p.Wk1 = z(e, kCrewFeatures); p.bk1 = z(e, 1); p.Wk2 = z(e, e); p.bk2 = z(e, 1);
    p.Wz = z(h, d); p.Uz = z(h, h); p.bz = z(h, 1);
    p.Wr = z(h, d); p.Ur = z(h, h); p.br = z(h, 1);
    p.Wn = z(h, d); p.Un = z(h, h); p.bn = z(h, 1);
    p.wv = z(1, h); p.bv = z(1, 1);
    p.Wq = z(e, u); p.bq = z(e, 1); p.wp = z(1, kPairFeatures); p.bp = z(1, 1);
    p.wh = z(1, u); p.bh = z(1, 1); p.wret = z(1, u); p.bret = z(1, 1);
    return p;
}

PolicyParams PolicyParams::initialize(const PolicyConfig& c, std::uint64_t seed) {
    PolicyParams p = zeros(c);
    Rng rng(derive_seed(seed, 0x5EED));
    const double g = c.activation == Activation::Tanh ? 5.0 / 3.0 : 1.0;
    const int e = c.embed, h = c.hidden, d = c.context_dim(), u = h + e;
    p.Wc1 = orthogonal(e, kCompFeatures, g, rng);
    p.Wc2 = orthogonal(e, e, g, rng);
    p.Wk1 = orthogonal(e, kCrewFeatures, g, rng);
    p.Wk2 = orthogonal(e, e, g, rng);
    p.Wz = orthogonal(h, d, 1.0, rng); p.Uz = orthogonal(h, h, 1.0, rng);
    p.Wr = orthogonal(h, d, 1.0, rng); p.Ur = orthogonal(h, h, 1.0, rng);
    p.Wn = orthogonal(h, d, 1.0, rng); p.Un = orthogonal(h, h, 1.0, rng);
    p.wv = orthogonal(1, h, 0.01, rng);
    p.Wq = orthogonal(e, u, 0.1, rng);
    p.wp = orthogonal(1, kPairFeatures, 0.01, rng);
    p.wh = orthogonal(1, u, 0.01, rng);
    p.wret = orthogonal(1, u, 0.01, rng);
    return p;
}

std::size_t PolicyParams::size() const {
    std::size_t n = 0;
    visit([&](const char*, const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

bool PolicyParams::all_finite() const {
    bool ok = true;
    visit([&](const char*, const Eigen::MatrixXd& m) { ok = ok && m.allFinite(); });
    return ok;
}

void PolicyParams::set_zero() {
    visit([](const char*, Eigen::MatrixXd& m) { m.setZero(); });
}

void PolicyParams::add_scaled(const PolicyParams& other, double scale) {
    std::vector<const Eigen::MatrixXd*> src;
    other.visit([&](const char*, const Eigen::MatrixXd& m) { src.push_back(&m); });
    std::size_t i = 0;
    visit([&](const char*, Eigen::MatrixXd& m) { m += scale * *src[i++]; });
}

double PolicyParams::squared_norm() const {
    double s = 0.0;
    visit([&](const char*, const Eigen::MatrixXd& m) { s += m.squaredNorm(); });
    return s;
}

double& PolicyParams::at(std::size_t flat_index) {
    double* out = nullptr;
    std::size_t offset = 0;
    visit([&](const char*, Eigen::MatrixXd& m) {
        const auto n = static_cast<std::size_t>(m.size());
        if (!out && flat_index < offset + n) out = m.data() + (flat_index - offset);
        offset += n;
    });
    require(out != nullptr, ErrorCode::Contract, "parameter index out of range");
    return *out;
}

Memory initial_memory(const PolicyConfig& config) { return Memory::Zero(config.hidden); }

ForwardOutput forward(const PolicyParams& p, const Features& f, const Memory& memory, StepCache* cache) {
    const auto& c = p.config;
    const int e = c.embed;
    require(memory.size() == c.hidden, ErrorCode::Contract, "policy: memory size mismatch");
    require(f.comp.rows() == c.max_components && f.crew.rows() == c.max_crews &&
                f.global.size() == kGlobalFeatures,
            ErrorCode::Contract, "policy: feature shape mismatch");
    const int nc = f.n_comp, nk = f.n_crew;
    const Activation act = c.activation;

    StepCache local;
    StepCache& s = cache ? *cache : local;
    s.h_prev = memory;
    s.a1c = (f.comp.topRows(nc) * p.Wc1.transpose()).rowwise() + p.bc1.col(0).transpose();
    s.h1c = activate(s.a1c, act);
    s.a2c = (s.h1c * p.Wc2.transpose()).rowwise() + p.bc2.col(0).transpose();
    s.ec = activate(s.a2c, act);
    s.a1k = (f.crew.topRows(nk) * p.Wk1.transpose()).rowwise() + p.bk1.col(0).transpose();
    s.h1k = activate(s.a1k, act);
    s.a2k = (s.h1k * p.Wk2.transpose()).rowwise() + p.bk2.col(0).transpose();
    s.ek = activate(s.a2k, act);

    s.x = Eigen::VectorXd::Zero(c.context_dim());
    if (nc > 0) s.x.segment(0, e) = s.ec.colwise().mean().transpose();
    if (nk > 0) s.x.segment(e, e) = s.ek.colwise().mean().transpose();
    s.x.segment(2 * e, kGlobalFeatures) = f.global;

    s.z = sigmoid(p.Wz * s.x + p.Uz * memory + p.bz.col(0));
    s.r = sigmoid(p.Wr * s.x + p.Ur * memory + p.br.col(0));
    s.hn = p.Un * memory;
    s.n = (p.Wn * s.x + s.r.cwiseProduct(s.hn) + p.bn.col(0)).array().tanh().matrix();
    s.h = (1.0 - s.z.array()).matrix().cwiseProduct(s.n) + s.z.cwiseProduct(memory);

    ForwardOutput out;
    out.value = (p.wv * s.h)(0) + p.bv(0, 0);
    out.memory = s.h;
    out.logits = Eigen::MatrixXd::Zero(nk, nc + 2);
    s.u.resize(nk, c.hidden + e);
    s.q.resize(nk, e);
    const double inv = 1.0 / std::sqrt(static_cast<double>(e));
    for (int k = 0; k < nk; ++k) {
        s.u.row(k).head(c.hidden) = s.h.transpose();
        s.u.row(k).tail(e) = s.ek.row(k);
        const Eigen::VectorXd u = s.u.row(k).transpose();
        const Eigen::VectorXd q = p.Wq * u + p.bq.col(0);
        s.q.row(k) = q.transpose();
        for (int j = 0; j < nc; ++j)
            out.logits(k, j) = inv * s.ec.row(j).dot(q) +
                               (p.wp * f.pair.row(k * c.max_components + j).transpose())(0) + p.bp(0, 0);
        out.logits(k, nc) = (p.wh * u)(0) + p.bh(0, 0);
        out.logits(k, nc + 1) = (p.wret * u)(0) + p.bret(0, 0);
    }
    if (cache) s.features = f;
    return out;
}

Memory backward(const PolicyParams& p, const StepCache& s, const Eigen::MatrixXd& dlogits, double dvalue,
                const Memory& dmem_out, PolicyParams& g) {
    const auto& c = p.config;
    const int e = c.embed, hsz = c.hidden;
    const auto& f = s.features;
    const int nc = f.n_comp, nk = f.n_crew;
    require(dlogits.rows() == nk && dlogits.cols() == nc + 2, ErrorCode::Contract, "policy: logit gradient shape");
    const double inv = 1.0 / std::sqrt(static_cast<double>(e));

    Eigen::VectorXd dh = dmem_out + dvalue * p.wv.row(0).transpose();
    g.wv.row(0) += dvalue * s.h.transpose();
    g.bv(0, 0) += dvalue;

    Eigen::MatrixXd dec = Eigen::MatrixXd::Zero(nc, e);
    Eigen::MatrixXd dek = Eigen::MatrixXd::Zero(nk, e);
    for (int k = 0; k < nk; ++k) {
        const Eigen::VectorXd dzc = dlogits.row(k).head(nc).transpose();
        const double dzh = dlogits(k, nc), dzr = dlogits(k, nc + 1);
        const Eigen::VectorXd q = s.q.row(k).transpose();
        const Eigen::VectorXd u = s.u.row(k).transpose();
        Eigen::VectorXd dq = Eigen::VectorXd::Zero(e);
        if (nc > 0) {
            dq = inv * (s.ec.transpose() * dzc);
            dec += inv * dzc * q.transpose();
            for (int j = 0; j < nc; ++j) g.wp.row(0) += dzc(j) * f.pair.row(k * c.max_components + j);
            g.bp(0, 0) += dzc.sum();
        }
        Eigen::VectorXd du = p.Wq.transpose() * dq + dzh * p.wh.row(0).transpose() + dzr * p.wret.row(0).transpose();
        g.Wq += dq * u.transpose();
        g.bq.col(0) += dq;
        g.wh.row(0) += dzh * u.transpose();
        g.bh(0, 0) += dzh;
        g.wret.row(0) += dzr * u.transpose();
        g.bret(0, 0) += dzr;
        dh += du.head(hsz);
        dek.row(k) += du.tail(e).transpose();
    }

    // GRU: h = (1 - z) * n + z * h_prev
    const Eigen::VectorXd& hp = s.h_prev;
    const Eigen::VectorXd dn = dh.cwiseProduct((1.0 - s.z.array()).matrix());
    const Eigen::VectorXd dz = dh.cwiseProduct(hp - s.n);
    Eigen::VectorXd dhp = dh.cwiseProduct(s.z);
    const Eigen::VectorXd dan = dn.cwiseProduct((1.0 - s.n.array().square()).matrix());
    g.Wn += dan * s.x.transpose();
    g.bn.col(0) += dan;
    Eigen::VectorXd dx = p.Wn.transpose() * dan;
    const Eigen::VectorXd dr = dan.cwiseProduct(s.hn);
    const Eigen::VectorXd dhn = dan.cwiseProduct(s.r);
    g.Un += dhn * hp.transpose();
    dhp += p.Un.transpose() * dhn;
    const Eigen::VectorXd daz = dz.cwiseProduct((s.z.array() * (1.0 - s.z.array())).matrix());
    g.Wz += daz * s.x.transpose();
    g.Uz += daz * hp.transpose();
    g.bz.col(0) += daz;
    dx += p.Wz.transpose() * daz;
    dhp += p.Uz.transpose() * daz;
    const Eigen::VectorXd dar = dr.cwiseProduct((s.r.array() * (1.0 - s.r.array())).matrix());
    g.Wr += dar * s.x.transpose();
    g.Ur += dar * hp.transpose();
    g.br.col(0) += dar;
    dx += p.Wr.transpose() * dar;
    dhp += p.Ur.transpose() * dar;

    if (nc > 0) dec.rowwise() += dx.segment(0, e).transpose() / nc;
    if (nk > 0) dek.rowwise() += dx.segment(e, e).transpose() / nk;

    auto encoder_back = [&](const Eigen::MatrixXd& de, const Eigen::MatrixXd& out2, const Eigen::MatrixXd& h1,
                            const Eigen::MatrixXd& x, const Eigen::MatrixXd& W2, Eigen::MatrixXd& gW1,
                            Eigen::MatrixXd& gb1, Eigen::MatrixXd& gW2, Eigen::MatrixXd& gb2) {
        if (de.rows() == 0) return;
        const Eigen::MatrixXd da2 = de.cwiseProduct(activate_grad(out2, c.activation));
        gW2 += da2.transpose() * h1;
        gb2.col(0) += da2.colwise().sum().transpose();
        const Eigen::MatrixXd da1 = (da2 * W2).cwiseProduct(activate_grad(h1, c.activation));
        gW1 += da1.transpose() * x;
        gb1.col(0) += da1.colwise().sum().transpose();
    };
    encoder_back(dec, s.ec, s.h1c, f.comp.topRows(nc), p.Wc2, g.Wc1, g.bc1, g.Wc2, g.bc2);
    encoder_back(dek, s.ek, s.h1k, f.crew.topRows(nk), p.Wk2, g.Wk1, g.bk1, g.Wk2, g.bk2);
    return dhp;
}

SlateMask slate_mask(const Features& f, const FeasibilityMask& mask, const DispatchState& state) {
    require(static_cast<int>(mask.allowed.size()) == f.n_crew, ErrorCode::Contract, "policy: mask/crew mismatch");
    SlateMask m;
    for (int k = 0; k < f.n_crew; ++k) {
        const auto& row = mask.allowed[static_cast<std::size_t>(k)];
        std::vector<bool> a(static_cast<std::size_t>(f.n_comp + 2), false);
        for (int s = 0; s < f.n_comp; ++s) a[static_cast<std::size_t>(s)] = row[static_cast<std::size_t>(f.slate[static_cast<std::size_t>(s)])];
        a[static_cast<std::size_t>(f.n_comp)] = row[mask.hold_index()];
        a[static_cast<std::size_t>(f.n_comp + 1)] = row[mask.return_index()];
        m.allowed.push_back(std::move(a));
        m.acting.push_back(state.crews[static_cast<std::size_t>(k)].available);
    }
    return m;
}

std::vector<double> apply_mask(const std::vector<double>& logits, const std::vector<bool>& allowed) {
    require(logits.size() == allowed.size(), ErrorCode::Contract, "apply_mask: size mismatch");
    require(std::find(allowed.begin(), allowed.end(), true) != allowed.end(), ErrorCode::Contract,
            "apply_mask: every entry of a crew row is blocked");
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = allowed[i] ? logits[i] : kMaskedLogit;
    return out;
}

double CrewDistribution::entropy() const {
    double h = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (probs[i] > 0.0) h -= probs[i] * log_probs[i];
    return h;
}

CrewDistribution crew_distribution(const std::vector<double>& logits, const std::vector<bool>& allowed,
                                   double temperature) {
    require(temperature > 0.0, ErrorCode::Parameter, "temperature must be positive");
    CrewDistribution d;
    d.masked_logits = apply_mask(logits, allowed);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (allowed[i]) mx = std::max(mx, logits[i] / temperature);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (allowed[i]) sum += std::exp(logits[i] / temperature - mx);
    const double lse = mx + std::log(sum);
    d.probs.assign(logits.size(), 0.0);
    d.log_probs.assign(logits.size(), kMaskedLogit);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!allowed[i]) continue;
        d.log_probs[i] = logits[i] / temperature - lse;
        d.probs[i] = std::exp(d.log_probs[i]);
    }
    return d;
}

Selection select_action(const Eigen::MatrixXd& logits, const SlateMask& mask, const Features& f,
                        const DispatchState& state, SelectMode mode, double temperature, Rng& rng) {
    require(mode != SelectMode::Temperature || temperature > 0.0, ErrorCode::Parameter,
            "temperature must be positive");
    const double t = mode == SelectMode::Temperature ? temperature : 1.0;
    Selection sel;
    sel.entries.assign(static_cast<std::size_t>(f.n_crew), -1);
    sel.masks = mask.allowed;
    std::vector<bool> claimed(static_cast<std::size_t>(f.n_comp), false);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int k = 0; k < f.n_crew; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        if (!mask.acting[ku]) continue;
        auto& allowed = sel.masks[ku];
        for (int s = 0; s < f.n_comp; ++s)
            if (claimed[static_cast<std::size_t>(s)]) allowed[static_cast<std::size_t>(s)] = false;
        std::vector<double> row(logits.cols());
        for (Eigen::Index j = 0; j < logits.cols(); ++j) row[static_cast<std::size_t>(j)] = logits(k, j);
        const auto d = crew_distribution(row, allowed, t);
        std::size_t pick = 0;
        if (mode == SelectMode::Greedy) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < d.probs.size(); ++i)
                if (allowed[i] && d.masked_logits[i] > best) {
                    best = d.masked_logits[i];
                    pick = i;
                }
        } else {
            const double u = unif(rng);
            double acc = 0.0;
            pick = d.probs.size();
            for (std::size_t i = 0; i < d.probs.size(); ++i) {
                if (!allowed[i]) continue;
                acc += d.probs[i];
                pick = i;
                if (u < acc) break;
            }
        }
        sel.entries[ku] = static_cast<int>(pick);
        sel.log_prob += d.log_probs[pick];
        sel.entropy += d.entropy();
        const int crew_id = state.crews[ku].id;
        if (static_cast<int>(pick) < f.n_comp) {
            claimed[pick] = true;
            sel.action.entries.push_back(
                {crew_id, TargetKind::Component, state.components[static_cast<std::size_t>(f.slate[pick])].site});
        } else if (static_cast<int>(pick) == f.n_comp) {
            sel.action.entries.push_back({crew_id, TargetKind::Hold, -1});
        } else {
            sel.action.entries.push_back({crew_id, TargetKind::Return, -1});
        }
    }
    return sel;
}

LogProbResult evaluate_entries(const Eigen::MatrixXd& logits, const std::vector<std::vector<bool>>& masks,
                               const std::vector<int>& entries) {
    LogProbResult r;
    for (std::size_t k = 0; k < entries.size(); ++k) {
        if (entries[k] < 0) {
            r.crews.emplace_back();
            continue;
        }
        std::vector<double> row(logits.cols());
        for (Eigen::Index j = 0; j < logits.cols(); ++j) row[static_cast<std::size_t>(j)] = logits(static_cast<Eigen::Index>(k), j);
        auto d = crew_distribution(row, masks[k]);
        require(masks[k][static_cast<std::size_t>(entries[k])], ErrorCode::Contract, "recorded entry is masked");
        r.log_prob += d.log_probs[static_cast<std::size_t>(entries[k])];
        r.entropy += d.entropy();
        r.crews.push_back(std::move(d));
    }
    return r;
}

namespace {

constexpr const char* kMagic = "STORMDISPATCH-CKPT 1";

void write_payload(std::ostream& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            char bytes[8];
            for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
            out.write(bytes, 8);
        }
}

void read_payload(std::istream& in, Eigen::MatrixXd& m, const std::string& path) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            unsigned char bytes[8];
            in.read(reinterpret_cast<char*>(bytes), 8);
            require(static_cast<bool>(in), ErrorCode::Parse, path + ": truncated tensor payload");
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
            double v;
            std::memcpy(&v, &bits, sizeof v);
            m(i, j) = v;
        }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write checkpoint '" + path + "'");
    auto meta = ck.meta;
    const auto& c = ck.params.config;
    meta["policy.max_components"] = std::to_string(c.max_components);
    meta["policy.max_crews"] = std::to_string(c.max_crews);
    meta["policy.embed"] = std::to_string(c.embed);
    meta["policy.hidden"] = std::to_string(c.hidden);
    meta["policy.activation"] = c.activation == Activation::Tanh ? "tanh" : "identity";
    meta["policy.overflow_keep_top"] = c.overflow_keep_top ? "1" : "0";
    out << kMagic << '\n';
    for (const auto& [k, v] : meta) {
        require(k.find_first_of(" \n") == std::string::npos && v.find('\n') == std::string::npos,
                ErrorCode::Contract, "checkpoint meta keys must not contain spaces or newlines");
        out << "meta " << k << ' ' << v << '\n';
    }
    ck.params.visit([&](const char* n, const Eigen::MatrixXd& m) {
        out << "tensor " << n << ' ' << m.rows() << ' ' << m.cols() << '\n';
    });
    for (const auto& [n, m] : ck.extra) out << "tensor " << n << ' ' << m.rows() << ' ' << m.cols() << '\n';
    out << "end\n";
    ck.params.visit([&](const char*, const Eigen::MatrixXd& m) { write_payload(out, m); });
    for (const auto& [n, m] : ck.extra) write_payload(out, m);
    require(static_cast<bool>(out), ErrorCode::Io, "failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open checkpoint '" + path + "'");
    std::string line;
    std::getline(in, line);
    require(line == kMagic, ErrorCode::Parse, path + ": not a stormdispatch checkpoint");
    Checkpoint ck;
    std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> shapes;
    int lineno = 1;
    bool ended = false;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "end") {
            ended = true;
            break;
        }
        if (kind == "meta") {
            std::string key, value;
            ss >> key;
            std::getline(ss, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            ck.meta[key] = value;
        } else if (kind == "tensor") {
            std::string name;
            Eigen::Index r = -1, c = -1;
            ss >> name >> r >> c;
            require(!ss.fail() && r >= 0 && c >= 0, ErrorCode::Parse,
                    path + ":" + std::to_string(lineno) + ": malformed tensor line");
            shapes.emplace_back(name, r, c);
        } else {
            fail(ErrorCode::Parse, path + ":" + std::to_string(lineno) + ": unexpected header line");
        }
    }
    require(ended, ErrorCode::Parse, path + ": missing end of header");
    PolicyConfig cfg;
    try {
        cfg.max_components = std::stoi(ck.meta.at("policy.max_components"));
        cfg.max_crews = std::stoi(ck.meta.at("policy.max_crews"));
        cfg.embed = std::stoi(ck.meta.at("policy.embed"));
        cfg.hidden = std::stoi(ck.meta.at("policy.hidden"));
        cfg.activation = ck.meta.at("policy.activation") == "identity" ? Activation::Identity : Activation::Tanh;
        cfg.overflow_keep_top = ck.meta.at("policy.overflow_keep_top") == "1";
    } catch (const std::exception&) {
        fail(ErrorCode::Parse, path + ": missing or malformed policy configuration");
    }
    ck.params = PolicyParams::zeros(cfg);
    std::size_t i = 0;
    ck.params.visit([&](const char* n, Eigen::MatrixXd& m) {
        require(i < shapes.size() && std::get<0>(shapes[i]) == n && std::get<1>(shapes[i]) == m.rows() &&
                    std::get<2>(shapes[i]) == m.cols(),
                ErrorCode::Config, path + ": tensor '" + std::string(n) + "' missing or has the wrong shape");
        ++i;
    });
    for (; i < shapes.size(); ++i)
        ck.extra.emplace_back(std::get<0>(shapes[i]),
                              Eigen::MatrixXd::Zero(std::get<1>(shapes[i]), std::get<2>(shapes[i])));
    ck.params.visit([&](const char*, Eigen::MatrixXd& m) { read_payload(in, m, path); });
    for (auto& [n, m] : ck.extra) read_payload(in, m, path);
    in.peek();
    require(in.eof(), ErrorCode::Parse, path + ": trailing bytes after tensor payload");
    for (const char* key : {"policy.max_components", "policy.max_crews", "policy.embed", "policy.hidden",
                            "policy.activation", "policy.overflow_keep_top"})
        ck.meta.erase(key);
    return ck;
}

}  // namespace stormdispatch::policy
