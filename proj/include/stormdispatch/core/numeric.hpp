#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace stormdispatch {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent stream seeds from (base, stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a(std::string_view bytes);

double normal_pdf(double x);

/// Standard normal CDF, evaluated through erfc so that the tails keep
/// relative precision and normal_cdf(0) is exactly 0.5.
double normal_cdf(double x);

/// Inverse standard normal CDF. Acklam's rational approximation followed by
/// one Halley step against normal_cdf; absolute error below 1e-13 on (0, 1).
double normal_quantile(double p);

/// Percentile with linear interpolation between order statistics
/// (position (n-1)*q, the "type 7" convention). q in [0, 1].
double percentile_linear(std::vector<double> values, double q);

}  // namespace stormdispatch
