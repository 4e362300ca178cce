#pragma once

// Hazard surrogates: Holland wind field, Gaussian-process flood depths,
// lognormal fragility, copula-coupled failures, ticket discovery and repair
// durations, and the scenario pipeline that chains them.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stormdispatch/core/geometry.hpp"
#include "stormdispatch/core/numeric.hpp"

namespace stormdispatch {
class FeederModel;
class RoadGraph;
}  // namespace stormdispatch

namespace stormdispatch::hazard {

inline constexpr double kDefaultAirDensity = 1.15;  // kg/m^3

struct HurricaneParams {
    double delta_p_hpa = 0.0;  // central pressure deficit
    double r_m_km = 0.0;       // radius of maximum winds
    double b_shape = 1.5;      // Holland B
    double rho_air = kDefaultAirDensity;
    double v_bg = 0.0;  // background/translation wind, m/s
    Point center{};
    std::optional<double> p_env_hpa;
    std::optional<double> p_c_hpa;

    void validate() const;
};

/// Symmetric Holland gradient wind at distance r (km) from the storm center, m/s.
double wind_speed_at(const HurricaneParams& params, double r_km);

/// B ~ 2 - (p_env - p_c)/160, clamped to [1, 3].
double holland_b_estimate(double p_env_hpa, double p_c_hpa);

/// Circular inundation basin with linear falloff from `depth_m` at the center
/// to zero at `radius_km`.
struct FloodBasin {
    Point center{};
    double radius_km = 1.0;
    double depth_m = 0.0;
};

struct FloodFieldParams {
    double base_depth_m = 0.0;
    std::vector<FloodBasin> basins;
    double variance = 0.0;  // sigma^2 of the perturbation, m^2
    double range_km = 1.0;  // correlation length
    double jitter = 1e-10;  // initial diagonal stabilizer

    /// Baseline depth D̄(x): base depth plus the deepest basin contribution.
    double baseline_at(Point x) const;
    void validate() const;
};

struct FragilityCurve {
    std::string component_class;
    std::string damage_state = "failed";
    double median = 1.0;
    double dispersion = 0.5;

    void validate() const;
};

/// Lognormal fragility Φ(ln(intensity/median)/dispersion); 0 at zero intensity.
double fragility_exceedance(double intensity, const FragilityCurve& curve);

/// Dense Cholesky factor of `cov` (row-major n×n), adding diagonal jitter
/// starting at `jitter` and escalating ×10 up to 1e-6. Throws Numerical on failure.
std::vector<double> cholesky_with_jitter(std::vector<double> cov, std::size_t n, double jitter);

/// One joint draw of D(x) = D̄(x) + ε(x) with exponential covariance
/// σ² exp(-h/ℓ); negative totals floored at 0.
std::vector<double> sample_flood_depths(const FloodFieldParams& params, std::span<const Point> sites, Rng& rng);

/// Union rule for two independent hazards.
double combine_hazards(double p_wind, double p_flood);

struct HazardProbability {
    double p_wind = 0.0;
    double p_flood = 0.0;
};

struct DamageDraw {
    double p_wind = 0.0;
    double p_flood = 0.0;
    double p_combined = 0.0;
    double z_latent = 0.0;
    double u_uniform = 0.0;
    bool failed = false;
};

/// Gaussian-copula Bernoulli draw with unit-variance correlation exp(-h/ℓ).
std::vector<DamageDraw> sample_correlated_failures(std::span<const HazardProbability> probabilities,
                                                   std::span<const Point> sites, double range_km, Rng& rng);
std::vector<DamageDraw> sample_correlated_failures(std::span<const double> probabilities,
                                                   std::span<const Point> sites, double range_km, Rng& rng);

/// Piecewise-constant ticket confirmation rate λ(t) on [0, horizon_h].
struct DiscoveryProcess {
    std::vector<double> breakpoints_h{0.0};  // piece start times, first = 0
    std::vector<double> rates_per_h{0.0};
    double horizon_h = 12.0;

    void validate() const;
    double rate_at(double t_h) const;
    /// ∫ λ(u) du over [t0, t1] ∩ [0, horizon].
    double integrated_rate(double t0_h, double t1_h) const;
};

/// Poisson count of confirmations on [t, t+dt). Pieces of λ are integrated
/// exactly when the interval straddles a breakpoint.
int sample_arrival_counts(const DiscoveryProcess& process, double t_h, double dt_h, Rng& rng);

/// Event times of one NHPP realisation on [0, horizon], sorted.
std::vector<double> sample_arrival_times(const DiscoveryProcess& process, Rng& rng);

struct RepairPrior {
    std::string component_class;
    double mu = 0.0;     // log-mean
    double sigma = 0.5;  // log-std
    double truncation_h = std::numeric_limits<double>::infinity();

    void validate() const;
};

double sample_repair_time(const RepairPrior& prior, Rng& rng);

/// Uniform range drawn once per scenario; lo == hi pins a value.
struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double draw(Rng& rng) const;
};

enum class HazardMode { Hurricane, Flood, Combined, Mixed };

struct HurricaneConfig {
    Range delta_p_hpa{50.0, 50.0};
    Range r_m_km{30.0, 30.0};
    std::optional<Range> b_shape;  // when absent B comes from p_env/p_c
    double p_env_hpa = 1013.0;
    double rho_air = kDefaultAirDensity;
    Range v_bg{5.0, 5.0};
    Range center_x_km{0.0, 0.0};
    Range center_y_km{0.0, 0.0};
};

struct FloodConfig {
    double base_depth_m = 0.0;
    std::vector<FloodBasin> basins;
    Range depth_scale{1.0, 1.0};  // multiplies every basin depth
    double variance = 0.0;
    double range_km = 1.0;
    double jitter = 1e-10;
};

struct ClassFragility {
    std::optional<FragilityCurve> wind;
    std::optional<FragilityCurve> flood;
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::string feeder_path;
    HazardMode mode = HazardMode::Combined;
    HurricaneConfig hurricane;
    FloodConfig flood;
    std::map<std::string, ClassFragility> fragility;  // includes the "road" class
    double copula_range_km = 2.0;
    DiscoveryProcess discovery;
    double initial_confirm_prob = 0.4;
    std::map<std::string, RepairPrior> repair_priors;
    double congestion_lo = 1.2;
    double congestion_hi = 2.0;
    double congestion_block_h = 6.0;
    double horizon_h = 12.0;
    double delta_p_scale = 1.0;  // "shifted" preset knobs
    double rate_scale = 1.0;

    void validate() const;
};

struct Arrival {
    double time_h = 0.0;
    int site = -1;  // feeder branch index
};

struct CongestionProfile {
    double block_h = 6.0;
    std::vector<double> values;
    double lo = 1.0;
    double hi = 1.0;

    double at(double t_h) const;
};

/// Fully materialised stochastic event. Site ids are feeder branch indices.
struct HazardScenario {
    std::uint64_t seed = 0;
    std::string feeder_name;
    std::string event_kind;  // hurricane | flood | combined
    double horizon_h = 12.0;
    std::vector<int> initial_damage;
    std::vector<Arrival> arrivals;
    std::vector<int> undiscovered;  // damaged but never confirmed within the horizon
    std::map<int, double> repair_times;
    std::vector<int> road_closures;
    CongestionProfile congestion;

    std::vector<int> all_damage() const;
    void validate() const;
};

HazardScenario generate_scenario(const ScenarioConfig& config, const FeederModel& feeder, const RoadGraph& roads,
                                 std::uint64_t seed);

}  // namespace stormdispatch::hazard
