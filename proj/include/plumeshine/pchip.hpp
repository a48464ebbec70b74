#ifndef PLUMESHINE_PCHIP_HPP
#define PLUMESHINE_PCHIP_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "plumeshine/error.hpp"
#include "plumeshine/text.hpp"

namespace plumeshine {

/// Piecewise cubic Hermite interpolant with Fritsch-Carlson slopes.
struct PchipCurve {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> d;  ///< dy/dx at each knot

    double x_min() const { return x.front(); }
    double x_max() const { return x.back(); }
};

namespace detail {

inline int sign(double v) { return (v > 0.0) - (v < 0.0); }

// Three-point one-sided endpoint slope, clamped so the end interval stays
// shape-preserving.
inline double pchip_end_slope(double h0, double h1, double m0, double m1) {
    double d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (sign(d) != sign(m0)) {
        d = 0.0;
    } else if (sign(m0) != sign(m1) && std::abs(d) > std::abs(3.0 * m0)) {
        d = 3.0 * m0;
    }
    return d;
}

}  // namespace detail

inline PchipCurve pchip_fit(std::vector<double> xs, std::vector<double> ys) {
    const std::size_t n = xs.size();
    if (n < 2) throw DomainError("pchip needs at least 2 knots");
    if (ys.size() != n) throw DomainError("pchip knot arrays differ in length");
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw DomainError("pchip knots must be finite");
        if (i > 0 && !(xs[i] > xs[i - 1])) throw DomainError("pchip abscissae must be strictly ascending");
    }
    std::vector<double> h(n - 1), m(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        h[k] = xs[k + 1] - xs[k];
        m[k] = (ys[k + 1] - ys[k]) / h[k];
    }
    std::vector<double> d(n, 0.0);
    if (n == 2) {
        d[0] = d[1] = m[0];
    } else {
        for (std::size_t k = 1; k + 1 < n; ++k) {
            if (detail::sign(m[k - 1]) * detail::sign(m[k]) <= 0) continue;
            const double w1 = 2.0 * h[k] + h[k - 1];
            const double w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
        }
        d[0] = detail::pchip_end_slope(h[0], h[1], m[0], m[1]);
        d[n - 1] = detail::pchip_end_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
    }
    return PchipCurve{std::move(xs), std::move(ys), std::move(d)};
}

inline double pchip_eval(const PchipCurve& c, double x) {
    if (!(x >= c.x_min() && x <= c.x_max())) {
        throw DomainError("pchip evaluation at " + text::format_double(x) + " outside [" +
                          text::format_double(c.x_min()) + ", " + text::format_double(c.x_max()) + "]");
    }
    const auto it = std::upper_bound(c.x.begin(), c.x.end(), x);
    std::size_t k = static_cast<std::size_t>(it - c.x.begin());
    if (k > 0 && c.x[k - 1] == x) return c.y[k - 1];
    k = std::min(k, c.x.size() - 1) - 1;
    const double h = c.x[k + 1] - c.x[k];
    const double t = (x - c.x[k]) / h;
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    const double h10 = t3 - 2.0 * t2 + t;
    const double h01 = -2.0 * t3 + 3.0 * t2;
    const double h11 = t3 - t2;
    return h00 * c.y[k] + h01 * c.y[k + 1] + h * (h10 * c.d[k] + h11 * c.d[k + 1]);
}

inline std::vector<double> pchip_eval(const PchipCurve& c, const std::vector<double>& xs) {
    std::vector<double> out;
    out.reserve(xs.size());
    for (const double x : xs) out.push_back(pchip_eval(c, x));
    return out;
}

}  // namespace plumeshine

#endif
