#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace cellscape {

// Linear-interpolation quantile (h = (n-1)q) over sorted, NaN-free values.
// This is the single quantile definition used throughout the engine.
template <typename T>
double quantile_sorted(std::span<const T> sorted, double q) {
    if (sorted.empty()) return std::nan("");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    const double a = static_cast<double>(sorted[lo]);
    const double b = static_cast<double>(sorted[hi]);
    return frac == 0.0 ? a : a + frac * (b - a);
}

}  // namespace cellscape
