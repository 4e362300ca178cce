#pragma once

#include <cmath>

namespace stormdispatch {

/// Planar coordinates in km.
struct Point {
    double x_km = 0.0;
    double y_km = 0.0;
};

inline double distance_km(Point a, Point b) { return std::hypot(a.x_km - b.x_km, a.y_km - b.y_km); }

inline Point midpoint(Point a, Point b) { return {0.5 * (a.x_km + b.x_km), 0.5 * (a.y_km + b.y_km)}; }

}  // namespace stormdispatch
