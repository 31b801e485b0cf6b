#pragma once

// Central finite-difference helpers.

#include <algorithm>
#include <cmath>
#include <vector>

namespace gradcheck {

/// max_i |g_i - fd_i| / max(|g_i|, |fd_i|, floor) over all coordinates.
template <class F>
double max_rel_error(const std::vector<double>& x, const std::vector<double>& g, F&& f, double h,
                     double floor = 1e-6) {
    double worst = 0.0;
    std::vector<double> y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] + h;
        const double up = f(y);
        y[i] = x[i] - h;
        const double down = f(y);
        y[i] = x[i];
        const double fd = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(fd), std::abs(g[i]), floor});
        worst = std::max(worst, std::abs(fd - g[i]) / scale);
    }
    return worst;
}

}  // namespace gradcheck
