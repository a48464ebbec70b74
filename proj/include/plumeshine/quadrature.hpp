#ifndef PLUMESHINE_QUADRATURE_HPP
#define PLUMESHINE_QUADRATURE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <type_traits>
#include <vector>

namespace plumeshine::quadrature {

/// Integral value with an absolute error estimate. Nested integrations return
/// this from the inner level so the outer rule can carry the inner error
/// forward.
struct Estimate {
    double value = 0.0;
    double error = 0.0;
    std::size_t evaluations = 0;
    bool converged = true;
};

struct Options {
    double rel_tol = 1e-4;
    double abs_tol = 0.0;
    std::size_t max_intervals = 200;
};

namespace detail {

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
inline constexpr std::array<double, 8> kKronrodNodes{
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrodWeights{
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for Kronrod nodes 1, 3, 5, 7.
inline constexpr std::array<double, 4> kGaussWeights{
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Interval {
    double a;
    double b;
    double value;
    double error;          // rule error, reducible by bisection
    double carried_error;  // error carried up from nested integrals
};

template <typename F>
inline Estimate as_estimate(F& f, double x) {
    if constexpr (std::is_same_v<std::invoke_result_t<F&, double>, Estimate>) {
        return f(x);
    } else {
        return Estimate{f(x), 0.0, 1, true};
    }
}

template <typename F>
Interval gauss_kronrod15(F& f, double a, double b, std::size_t& evaluations, bool& converged) {
    const double center = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    std::array<double, 15> fv{};
    double carried = 0.0;
    auto eval = [&](std::size_t slot, double x, double weight) {
        const Estimate e = as_estimate(f, x);
        evaluations += e.evaluations;
        converged = converged && e.converged;
        carried += weight * e.error;
        fv[slot] = e.value;
    };
    eval(7, center, kKronrodWeights[7]);
    for (std::size_t j = 0; j < 7; ++j) {
        const double dx = half * kKronrodNodes[j];
        eval(j, center - dx, kKronrodWeights[j]);
        eval(14 - j, center + dx, kKronrodWeights[j]);
    }
    double kronrod = fv[7] * kKronrodWeights[7];
    double gauss = fv[7] * kGaussWeights[3];
    double abs_sum = std::abs(fv[7]) * kKronrodWeights[7];
    for (std::size_t j = 0; j < 7; ++j) {
        const double pair = fv[j] + fv[14 - j];
        kronrod += kKronrodWeights[j] * pair;
        abs_sum += kKronrodWeights[j] * (std::abs(fv[j]) + std::abs(fv[14 - j]));
        if (j % 2 == 1) gauss += kGaussWeights[j / 2] * pair;
    }
    const double hl = std::abs(half);
    double err = std::abs((kronrod - gauss) * half);
    constexpr double eps = std::numeric_limits<double>::epsilon();
    abs_sum *= hl;
    if (abs_sum > std::numeric_limits<double>::min() / (50.0 * eps)) {
        err = std::max(50.0 * eps * abs_sum, err);
    }
    return Interval{a, b, kronrod * half, err, carried * hl};
}

}  // namespace detail

/// Globally adaptive 15-point Gauss-Kronrod quadrature of `f` over [a, b].
///
/// The error estimate of each interval is |K15 - G7|, floored at rounding level.
/// `breakpoints` inside (a, b) seed the initial partition; points outside are
/// ignored. The interval with the largest rule error is bisected until the
/// summed rule error meets max(abs_tol, rel_tol * |I|) or `max_intervals` is
/// reached. `f` may itself return an Estimate (nested integration), whose
/// errors are integrated alongside the values and added to the result's error.
/// Evaluation order is fixed, so results are bit-reproducible.
template <typename F>
Estimate integrate(F&& f, double a, double b, const Options& opt,
                   const std::vector<double>& breakpoints = {}) {
    Estimate result;
    if (!(b > a)) return result;
    std::vector<double> cuts{a};
    for (const double p : breakpoints) {
        if (p > a && p < b) cuts.push_back(p);
    }
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    bool inner_converged = true;
    std::vector<detail::Interval> intervals;
    intervals.reserve(opt.max_intervals + cuts.size());
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        intervals.push_back(
            detail::gauss_kronrod15(f, cuts[i], cuts[i + 1], result.evaluations, inner_converged));
    }

    auto totals = [&](double& value, double& rule_error) {
        value = 0.0;
        rule_error = 0.0;
        for (const auto& iv : intervals) {
            value += iv.value;
            rule_error += iv.error;
        }
    };

    double value = 0.0;
    double rule_error = 0.0;
    totals(value, rule_error);
    bool converged = false;
    while (true) {
        if (rule_error <= std::max(opt.abs_tol, opt.rel_tol * std::abs(value))) {
            converged = true;
            break;
        }
        if (intervals.size() >= opt.max_intervals) break;
        std::size_t worst = 0;
        for (std::size_t i = 1; i < intervals.size(); ++i) {
            if (intervals[i].error > intervals[worst].error) worst = i;
        }
        const auto iv = intervals[worst];
        const double mid = 0.5 * (iv.a + iv.b);
        if (!(mid > iv.a && mid < iv.b)) break;  // interval at floating-point resolution
        intervals[worst] = detail::gauss_kronrod15(f, iv.a, mid, result.evaluations, inner_converged);
        intervals.push_back(detail::gauss_kronrod15(f, mid, iv.b, result.evaluations, inner_converged));
        totals(value, rule_error);
    }

    double carried = 0.0;
    for (const auto& iv : intervals) carried += iv.carried_error;
    result.value = value;
    result.error = rule_error + carried;
    result.converged = converged && inner_converged;
    return result;
}

}  // namespace plumeshine::quadrature

#endif
