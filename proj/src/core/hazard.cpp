#include "stormdispatch/core/hazard.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "stormdispatch/core/error.hpp"
#include "stormdispatch/core/feeder.hpp"

namespace stormdispatch::hazard {

void HurricaneParams::validate() const {
    require(delta_p_hpa > 0.0, ErrorCode::Parameter, "hurricane: delta_p must be positive");
    require(r_m_km > 0.0, ErrorCode::Parameter, "hurricane: r_m must be positive");
    require(b_shape >= 1.0 && b_shape <= 3.0, ErrorCode::Parameter, "hurricane: B must lie in [1, 3]");
    require(rho_air > 0.0, ErrorCode::Parameter, "hurricane: air density must be positive");
    require(v_bg >= 0.0, ErrorCode::Parameter, "hurricane: background wind must be non-negative");
}

double wind_speed_at(const HurricaneParams& params, double r_km) {
    params.validate();
    require(r_km > 0.0, ErrorCode::Parameter, "wind_speed_at: distance must be positive");
    const double delta_p_pa = params.delta_p_hpa * 100.0;
    const double scaled = std::pow(params.r_m_km / r_km, params.b_shape);
    const double gradient = (params.b_shape * delta_p_pa / params.rho_air) * scaled * std::exp(-scaled);
    return std::sqrt(gradient) + params.v_bg;
}

double holland_b_estimate(double p_env_hpa, double p_c_hpa) {
    require(p_env_hpa > p_c_hpa, ErrorCode::Parameter, "holland_b_estimate: p_env must exceed p_c");
    return std::clamp(2.0 - (p_env_hpa - p_c_hpa) / 160.0, 1.0, 3.0);
}

double FloodFieldParams::baseline_at(Point x) const {
    double extra = 0.0;
    for (const auto& b : basins) {
        const double d = distance_km(x, b.center);
        if (d < b.radius_km) extra = std::max(extra, b.depth_m * (1.0 - d / b.radius_km));
    }
    return base_depth_m + extra;
}

void FloodFieldParams::validate() const {
    require(variance >= 0.0, ErrorCode::Parameter, "flood: variance must be non-negative");
    require(range_km > 0.0, ErrorCode::Parameter, "flood: range must be positive");
    require(jitter > 0.0, ErrorCode::Parameter, "flood: jitter must be positive");
    require(base_depth_m >= 0.0, ErrorCode::Parameter, "flood: baseline depth must be non-negative");
    for (const auto& b : basins)
        require(b.depth_m >= 0.0 && b.radius_km > 0.0, ErrorCode::Parameter, "flood: invalid basin");
}

void FragilityCurve::validate() const {
    require(median > 0.0, ErrorCode::Parameter, "fragility '" + component_class + "': median must be positive");
    require(dispersion > 0.0, ErrorCode::Parameter,
            "fragility '" + component_class + "': dispersion must be positive");
}

double fragility_exceedance(double intensity, const FragilityCurve& curve) {
    curve.validate();
    require(intensity >= 0.0, ErrorCode::Parameter, "fragility: intensity must be non-negative");
    if (intensity == 0.0) return 0.0;
    return normal_cdf(std::log(intensity / curve.median) / curve.dispersion);
}

std::vector<double> cholesky_with_jitter(std::vector<double> cov, std::size_t n, double jitter) {
    require(cov.size() == n * n, ErrorCode::Parameter, "covariance size mismatch");
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> base(
        cov.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (double eps = jitter; eps <= 1e-6 * (1.0 + 1e-9); eps *= 10.0) {
        Eigen::MatrixXd a = base;
        a.diagonal().array() += eps;
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() == Eigen::Success) {
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> l = llt.matrixL();
            return {l.data(), l.data() + l.size()};
        }
    }
    fail(ErrorCode::Numerical, "covariance factorization failed after jitter escalation to 1e-6");
}

namespace {

// Correlated standard-normal-scaled draw: L·w with w ~ N(0, I).
std::vector<double> correlated_normals(std::span<const Point> sites, double variance, double range_km, double jitter,
                                       Rng& rng) {
    const std::size_t n = sites.size();
    std::vector<double> cov(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            cov[i * n + j] = variance * std::exp(-distance_km(sites[i], sites[j]) / range_km);
    const auto l = cholesky_with_jitter(std::move(cov), n, jitter);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w(n);
    for (auto& x : w) x = normal(rng);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) out[i] += l[i * n + j] * w[j];
    return out;
}

}  // namespace

std::vector<double> sample_flood_depths(const FloodFieldParams& params, std::span<const Point> sites, Rng& rng) {
    params.validate();
    require(!sites.empty(), ErrorCode::Parameter, "sample_flood_depths: no sites");
    std::vector<double> depth(sites.size());
    if (params.variance == 0.0) {
        for (std::size_t i = 0; i < sites.size(); ++i) depth[i] = params.baseline_at(sites[i]);
        return depth;
    }
    const auto eps = correlated_normals(sites, params.variance, params.range_km, params.jitter, rng);
    for (std::size_t i = 0; i < sites.size(); ++i) depth[i] = std::max(0.0, params.baseline_at(sites[i]) + eps[i]);
    return depth;
}

double combine_hazards(double p_wind, double p_flood) {
    require(p_wind >= 0.0 && p_wind <= 1.0 && p_flood >= 0.0 && p_flood <= 1.0, ErrorCode::Parameter,
            "combine_hazards: probabilities must lie in [0, 1]");
    return 1.0 - (1.0 - p_wind) * (1.0 - p_flood);
}

std::vector<DamageDraw> sample_correlated_failures(std::span<const HazardProbability> probabilities,
                                                   std::span<const Point> sites, double range_km, Rng& rng) {
    require(probabilities.size() == sites.size(), ErrorCode::Parameter, "copula: probability/site count mismatch");
    require(range_km > 0.0, ErrorCode::Parameter, "copula: range must be positive");
    std::vector<DamageDraw> out(sites.size());
    if (sites.empty()) return out;
    const auto z = correlated_normals(sites, 1.0, range_km, 1e-10, rng);
    for (std::size_t i = 0; i < sites.size(); ++i) {
        auto& d = out[i];
        d.p_wind = probabilities[i].p_wind;
        d.p_flood = probabilities[i].p_flood;
        d.p_combined = combine_hazards(d.p_wind, d.p_flood);
        d.z_latent = z[i];
        d.u_uniform = normal_cdf(z[i]);
        d.failed = d.u_uniform < d.p_combined;
    }
    return out;
}

std::vector<DamageDraw> sample_correlated_failures(std::span<const double> probabilities,
                                                   std::span<const Point> sites, double range_km, Rng& rng) {
    std::vector<HazardProbability> p(probabilities.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i].p_wind = probabilities[i];
    return sample_correlated_failures(std::span<const HazardProbability>(p), sites, range_km, rng);
}

void DiscoveryProcess::validate() const {
    require(!breakpoints_h.empty() && breakpoints_h.size() == rates_per_h.size(), ErrorCode::Parameter,
            "discovery: breakpoints and rates must be non-empty and the same length");
    require(breakpoints_h.front() == 0.0, ErrorCode::Parameter, "discovery: first breakpoint must be 0");
    for (std::size_t i = 1; i < breakpoints_h.size(); ++i)
        require(breakpoints_h[i] > breakpoints_h[i - 1], ErrorCode::Parameter,
                "discovery: breakpoints must be strictly increasing");
    for (double r : rates_per_h) require(r >= 0.0, ErrorCode::Parameter, "discovery: rates must be non-negative");
    require(horizon_h > 0.0, ErrorCode::Parameter, "discovery: horizon must be positive");
}

double DiscoveryProcess::rate_at(double t_h) const {
    auto it = std::upper_bound(breakpoints_h.begin(), breakpoints_h.end(), t_h);
    if (it == breakpoints_h.begin()) return rates_per_h.front();
    return rates_per_h[static_cast<std::size_t>(std::distance(breakpoints_h.begin(), it) - 1)];
}

double DiscoveryProcess::integrated_rate(double t0_h, double t1_h) const {
    t0_h = std::max(t0_h, 0.0);
    t1_h = std::min(t1_h, horizon_h);
    double total = 0.0;
    for (std::size_t i = 0; i < breakpoints_h.size(); ++i) {
        const double a = breakpoints_h[i];
        const double b = i + 1 < breakpoints_h.size() ? breakpoints_h[i + 1] : horizon_h;
        const double lo = std::max(a, t0_h);
        const double hi = std::min(b, t1_h);
        if (hi > lo) total += rates_per_h[i] * (hi - lo);
    }
    return total;
}

int sample_arrival_counts(const DiscoveryProcess& process, double t_h, double dt_h, Rng& rng) {
    process.validate();
    require(dt_h > 0.0, ErrorCode::Parameter, "sample_arrival_counts: dt must be positive");
    const double mean = process.integrated_rate(t_h, t_h + dt_h);
    if (mean <= 0.0) return 0;
    std::poisson_distribution<int> poisson(mean);
    return poisson(rng);
}

std::vector<double> sample_arrival_times(const DiscoveryProcess& process, Rng& rng) {
    process.validate();
    std::vector<double> times;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < process.breakpoints_h.size(); ++i) {
        const double a = process.breakpoints_h[i];
        const double b = std::min(i + 1 < process.breakpoints_h.size() ? process.breakpoints_h[i + 1]
                                                                         : process.horizon_h,
                                  process.horizon_h);
        if (b <= a) continue;
        const int n = sample_arrival_counts(process, a, b - a, rng);
        for (int k = 0; k < n; ++k) times.push_back(a + (b - a) * unif(rng));
    }
    std::sort(times.begin(), times.end());
    return times;
}

void RepairPrior::validate() const {
    require(sigma > 0.0, ErrorCode::Parameter, "repair prior '" + component_class + "': sigma must be positive");
    require(truncation_h > 0.0, ErrorCode::Parameter,
            "repair prior '" + component_class + "': truncation must be positive");
    if (std::isfinite(truncation_h)) {
        const double q001 = std::exp(mu + sigma * normal_quantile(0.001));
        require(truncation_h >= q001, ErrorCode::Config,
                "repair prior '" + component_class + "': truncation below the 0.1% quantile");
    }
}

double sample_repair_time(const RepairPrior& prior, Rng& rng) {
    prior.validate();
    std::normal_distribution<double> normal(prior.mu, prior.sigma);
    constexpr int kMaxRetries = 64;
    for (int i = 0; i < kMaxRetries; ++i) {
        const double t = std::exp(normal(rng));
        if (t <= prior.truncation_h && t > 0.0) return t;
    }
    // Inverse-CDF draw restricted to (0, truncation]; same conditional law.
    const double f_max = normal_cdf((std::log(prior.truncation_h) - prior.mu) / prior.sigma);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng) * f_max;
    u = std::clamp(u, 1e-300, std::nextafter(1.0, 0.0));
    return std::min(prior.truncation_h, std::exp(prior.mu + prior.sigma * normal_quantile(u)));
}

double Range::draw(Rng& rng) const {
    require(hi >= lo, ErrorCode::Config, "range upper bound below lower bound");
    if (hi == lo) return lo;
    std::uniform_real_distribution<double> unif(lo, hi);
    return unif(rng);
}

void ScenarioConfig::validate() const {
    require(horizon_h > 0.0, ErrorCode::Config, "scenario config: horizon must be positive");
    require(initial_confirm_prob >= 0.0 && initial_confirm_prob <= 1.0, ErrorCode::Config,
            "scenario config: initial_confirm_prob must lie in [0, 1]");
    require(congestion_lo > 0.0 && congestion_hi >= congestion_lo, ErrorCode::Config,
            "scenario config: congestion bounds invalid");
    require(congestion_block_h > 0.0, ErrorCode::Config, "scenario config: congestion block must be positive");
    require(copula_range_km > 0.0, ErrorCode::Config, "scenario config: copula range must be positive");
    require(delta_p_scale > 0.0 && rate_scale >= 0.0, ErrorCode::Config, "scenario config: invalid scale knobs");
    discovery.validate();
    for (const auto& [cls, prior] : repair_priors) prior.validate();
    for (const auto& [cls, f] : fragility) {
        if (f.wind) f.wind->validate();
        if (f.flood) f.flood->validate();
    }
}

double CongestionProfile::at(double t_h) const {
    if (values.empty()) return lo;
    const auto idx = static_cast<std::size_t>(std::max(0.0, std::floor(t_h / block_h)));
    return values[std::min(idx, values.size() - 1)];
}

std::vector<int> HazardScenario::all_damage() const {
    std::vector<int> all = initial_damage;
    for (const auto& a : arrivals) all.push_back(a.site);
    all.insert(all.end(), undiscovered.begin(), undiscovered.end());
    std::sort(all.begin(), all.end());
    return all;
}

void HazardScenario::validate() const {
    require(horizon_h > 0.0, ErrorCode::Validation, "scenario: horizon must be positive");
    std::vector<int> seen = all_damage();
    require(std::adjacent_find(seen.begin(), seen.end()) == seen.end(), ErrorCode::Validation,
            "scenario: a site is listed twice across initial/arrival/undiscovered damage");
    double last = 0.0;
    for (const auto& a : arrivals) {
        require(a.time_h >= last && a.time_h <= horizon_h, ErrorCode::Validation,
                "scenario: arrival times must be non-decreasing and within the horizon");
        last = a.time_h;
    }
    for (int s : seen) {
        auto it = repair_times.find(s);
        require(it != repair_times.end() && it->second > 0.0, ErrorCode::Validation,
                "scenario: every damaged site needs a positive repair time");
    }
    for (double r : congestion.values)
        require(r >= congestion.lo && r <= congestion.hi, ErrorCode::Validation,
                "scenario: congestion outside its bounds");
}

namespace {

double class_probability(const std::optional<FragilityCurve>& curve, double intensity, bool active) {
    if (!active || !curve) return 0.0;
    return fragility_exceedance(intensity, *curve);
}

}  // namespace

HazardScenario generate_scenario(const ScenarioConfig& config, const FeederModel& feeder, const RoadGraph& roads,
                                 std::uint64_t seed) {
    config.validate();
    Rng rng_event(derive_seed(seed, 1));
    Rng rng_flood(derive_seed(seed, 2));
    Rng rng_copula(derive_seed(seed, 3));
    Rng rng_roads(derive_seed(seed, 4));
    Rng rng_discovery(derive_seed(seed, 5));
    Rng rng_repair(derive_seed(seed, 6));
    Rng rng_congestion(derive_seed(seed, 7));

    HazardScenario sc;
    sc.seed = seed;
    sc.feeder_name = feeder.name();
    sc.horizon_h = config.horizon_h;

    HazardMode mode = config.mode;
    if (mode == HazardMode::Mixed) {
        std::uniform_int_distribution<int> pick(0, 2);
        mode = static_cast<HazardMode>(pick(rng_event));
    }
    const bool wind_on = mode == HazardMode::Hurricane || mode == HazardMode::Combined;
    const bool flood_on = mode == HazardMode::Flood || mode == HazardMode::Combined;
    sc.event_kind = mode == HazardMode::Hurricane ? "hurricane" : mode == HazardMode::Flood ? "flood" : "combined";

    // Step 1: site intensities for assets and road-segment midpoints.
    std::vector<int> site_branch;
    std::vector<Point> points;
    for (std::size_t e = 0; e < feeder.branches().size(); ++e) {
        if (!feeder.branches()[e].repairable) continue;
        site_branch.push_back(static_cast<int>(e));
        points.push_back(feeder.branches()[e].site);
    }
    const std::size_t n_sites = points.size();
    for (const auto& seg : roads.segments())
        points.push_back(midpoint(roads.nodes()[static_cast<std::size_t>(seg.a)].location,
                                  roads.nodes()[static_cast<std::size_t>(seg.b)].location));

    HurricaneParams storm;
    {
        const auto& h = config.hurricane;
        storm.delta_p_hpa = h.delta_p_hpa.draw(rng_event) * config.delta_p_scale;
        storm.r_m_km = h.r_m_km.draw(rng_event);
        storm.rho_air = h.rho_air;
        storm.v_bg = h.v_bg.draw(rng_event);
        storm.center = {h.center_x_km.draw(rng_event), h.center_y_km.draw(rng_event)};
        storm.p_env_hpa = h.p_env_hpa;
        storm.p_c_hpa = h.p_env_hpa - storm.delta_p_hpa;
        storm.b_shape = h.b_shape ? h.b_shape->draw(rng_event) : holland_b_estimate(h.p_env_hpa, *storm.p_c_hpa);
    }
    std::vector<double> wind(points.size(), 0.0);
    if (wind_on)
        for (std::size_t i = 0; i < points.size(); ++i)
            wind[i] = wind_speed_at(storm, std::max(distance_km(points[i], storm.center), 1e-3));

    std::vector<double> depth(points.size(), 0.0);
    if (flood_on && !points.empty()) {
        FloodFieldParams fp;
        fp.base_depth_m = config.flood.base_depth_m;
        fp.basins = config.flood.basins;
        const double scale = config.flood.depth_scale.draw(rng_event);
        for (auto& b : fp.basins) b.depth_m *= scale;
        fp.variance = config.flood.variance;
        fp.range_km = config.flood.range_km;
        fp.jitter = config.flood.jitter;
        depth = sample_flood_depths(fp, points, rng_flood);
    }

    // Steps 2-3: fragility, union rule, copula draw.
    auto curves_for = [&](const std::string& cls) -> const ClassFragility& {
        auto it = config.fragility.find(cls);
        require(it != config.fragility.end(), ErrorCode::Config, "no fragility curves for class '" + cls + "'");
        return it->second;
    };
    std::vector<HazardProbability> probs(n_sites);
    for (std::size_t i = 0; i < n_sites; ++i) {
        const auto& cf = curves_for(feeder.branches()[static_cast<std::size_t>(site_branch[i])].component_class);
        probs[i].p_wind = class_probability(cf.wind, wind[i], wind_on);
        probs[i].p_flood = class_probability(cf.flood, depth[i], flood_on);
    }
    const std::span<const Point> site_points(points.data(), n_sites);
    const auto draws = sample_correlated_failures(probs, site_points, config.copula_range_km, rng_copula);

    // Road impairment, independent per segment.
    if (!roads.segments().empty()) {
        const auto& road = curves_for("road");
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (std::size_t s = 0; s < roads.segments().size(); ++s) {
            const std::size_t k = n_sites + s;
            const double q = combine_hazards(class_probability(road.wind, wind[k], wind_on),
                                             class_probability(road.flood, depth[k], flood_on));
            if (unif(rng_roads) < q) sc.road_closures.push_back(static_cast<int>(s));
        }
    }

    // Step 4: initial confirmation split and NHPP discovery of the rest.
    std::vector<int> pending;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < n_sites; ++i) {
        if (!draws[i].failed) continue;
        if (unif(rng_discovery) < config.initial_confirm_prob)
            sc.initial_damage.push_back(site_branch[i]);
        else
            pending.push_back(site_branch[i]);
    }
    std::shuffle(pending.begin(), pending.end(), rng_discovery);
    DiscoveryProcess discovery = config.discovery;
    discovery.horizon_h = config.horizon_h;
    for (auto& r : discovery.rates_per_h) r *= config.rate_scale;
    const auto times = pending.empty() ? std::vector<double>{} : sample_arrival_times(discovery, rng_discovery);
    for (std::size_t k = 0; k < pending.size(); ++k) {
        if (k < times.size())
            sc.arrivals.push_back({times[k], pending[k]});
        else
            sc.undiscovered.push_back(pending[k]);
    }
    std::sort(sc.undiscovered.begin(), sc.undiscovered.end());

    // Step 5: repair durations by class.
    for (int site : sc.all_damage()) {
        const auto& cls = feeder.branches()[static_cast<std::size_t>(site)].component_class;
        auto it = config.repair_priors.find(cls);
        require(it != config.repair_priors.end(), ErrorCode::Config, "no repair prior for class '" + cls + "'");
        sc.repair_times[site] = sample_repair_time(it->second, rng_repair);
    }

    sc.congestion.block_h = config.congestion_block_h;
    sc.congestion.lo = config.congestion_lo;
    sc.congestion.hi = config.congestion_hi;
    const auto blocks = static_cast<std::size_t>(std::ceil(config.horizon_h / config.congestion_block_h));
    std::uniform_real_distribution<double> rho(config.congestion_lo, config.congestion_hi);
    for (std::size_t b = 0; b < blocks; ++b)
        sc.congestion.values.push_back(config.congestion_hi > config.congestion_lo ? rho(rng_congestion)
                                                                                   : config.congestion_lo);
    sc.validate();
    return sc;
}

}  // namespace stormdispatch::hazard
