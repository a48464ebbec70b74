#ifndef PLUMESHINE_DOSE_KERNEL_HPP
#define PLUMESHINE_DOSE_KERNEL_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "plumeshine/dispersion.hpp"
#include "plumeshine/error.hpp"
#include "plumeshine/nuclide_db.hpp"
#include "plumeshine/parallel.hpp"
#include "plumeshine/quadrature.hpp"
#include "plumeshine/text.hpp"

namespace plumeshine {

/// MeV kg^-1 s^-1 (air kerma rate) to uSv/h, taking 1 Gy of air energy
/// deposition as 1 Sv: 1.602176634e-13 J/MeV * 3600 s/h * 1e6 uSv/Sv.
inline constexpr double kMeVPerKgSecondToMicroSvPerHour = 1.602176634e-13 * 3600.0 * 1e6;

inline constexpr double kTableMinDistance = 25.0;    // m
inline constexpr double kTableMaxDistance = 2000.0;  // m

struct Receptor {
    double x1 = 0.0;
    double y1 = 0.0;
    double z1 = 1.0;
};

struct KernelConfig {
    double mfp_multiple = 5.0;
    double sigma_multiple = 4.0;
    double rel_tol = 1e-4;
    double near_field_epsilon = 0.5;  ///< m
    double alpha = kMeVPerKgSecondToMicroSvPerHour;
    std::size_t max_intervals = 200;  ///< per integration level
    /// MeV; the x extent uses the mean free path at this energy instead of the
    /// nuclide's highest line when positive. Lets per-line sums share one box.
    double truncation_energy = 0.0;

    void validate() const {
        if (!(mfp_multiple >= 2.0)) throw ValidationError("mfp_multiple must be >= 2");
        if (!(sigma_multiple >= 3.0)) throw ValidationError("sigma_multiple must be >= 3");
        if (!(rel_tol > 0.0 && rel_tol <= 1e-2)) throw ValidationError("rel_tol must lie in (0, 1e-2]");
        if (!(near_field_epsilon > 0.0)) throw ValidationError("near_field_epsilon must be positive");
        if (!(alpha > 0.0)) throw ValidationError("alpha must be positive");
        if (max_intervals < 2) throw ValidationError("max_intervals must be >= 2");
        if (!(truncation_energy >= 0.0)) throw ValidationError("truncation_energy must be >= 0");
    }

    /// Reads `kernel.<field>` keys; absent keys keep their defaults.
    static KernelConfig from(const text::KeyValue& kv, const std::string& prefix = "kernel.") {
        KernelConfig c;
        c.mfp_multiple = kv.get_double_or(prefix + "mfp_multiple", c.mfp_multiple);
        c.sigma_multiple = kv.get_double_or(prefix + "sigma_multiple", c.sigma_multiple);
        c.rel_tol = kv.get_double_or(prefix + "rel_tol", c.rel_tol);
        c.near_field_epsilon = kv.get_double_or(prefix + "near_field_epsilon", c.near_field_epsilon);
        c.alpha = kv.get_double_or(prefix + "alpha", c.alpha);
        c.max_intervals = static_cast<std::size_t>(kv.get_u64_or(prefix + "max_intervals", c.max_intervals));
        c.truncation_energy = kv.get_double_or(prefix + "truncation_energy", c.truncation_energy);
        c.validate();
        return c;
    }

    std::string canonical() const {
        using text::format_double;
        return "mfp_multiple=" + format_double(mfp_multiple) +
               ";sigma_multiple=" + format_double(sigma_multiple) + ";rel_tol=" + format_double(rel_tol) +
               ";near_field_epsilon=" + format_double(near_field_epsilon) +
               ";alpha=" + format_double(alpha) + ";max_intervals=" + std::to_string(max_intervals) +
               (truncation_energy > 0.0 ? ";truncation_energy=" + format_double(truncation_energy) : "");
    }

    /// Stable identifier recorded in dataset metadata.
    std::string hash() const { return text::hex64(text::fnv1a64(canonical())); }
};

namespace kernel {

/// Per-line constants of the point kernel, looked up once per integration.
struct LineKernel {
    double mu;
    double scale;  ///< alpha * E * yield * mu_a/rho
    BergerCoefficients berger;
    double r_min;

    LineKernel(const NuclideDB& db, const GammaLine& line, const KernelConfig& cfg) {
        const auto att = attenuation(db, line.energy);
        mu = att.mu;
        scale = cfg.alpha * line.energy * line.yield * att.mu_a_over_rho;
        berger = berger_coefficients(db, line.energy);
        r_min = cfg.near_field_epsilon;
    }

    /// Dose-rate density per unit concentration at source-receptor distance r.
    double operator()(double r2) const {
        const double r = std::max(std::sqrt(r2), r_min);
        const double mu_r = mu * r;
        return scale * berger_buildup(berger, mu_r) * std::exp(-mu_r) /
               (4.0 * std::numbers::pi * r * r);
    }
};

}  // namespace kernel

/// Integrand of the plume-shine point-kernel integral at source point (x,y,z).
inline double integrand(const NuclideDB& db, const ReleaseSpec& release, const Receptor& receptor,
                        const GammaLine& line, double x, double y, double z,
                        const KernelConfig& cfg = {}) {
    const kernel::LineKernel k(db, line, cfg);
    const double dx = x - receptor.x1;
    const double dy = y - receptor.y1;
    const double dz = z - receptor.z1;
    return k(dx * dx + dy * dy + dz * dz) * concentration(release, x, y, z);
}

struct DoseResult {
    double dose = 0.0;            ///< uSv/h
    double error_estimate = 0.0;  ///< uSv/h, absolute
    std::size_t evaluations = 0;
    bool outside_table_range = false;  ///< x1 outside [25, 2000] m
};

/// Truncated integration box for one nuclide.
struct IntegrationDomain {
    double x_lo;
    double x_hi;
    double mean_free_path;
    double reach;  ///< half-width about x1
};

/// The box extends mfp_multiple mean free paths past the vertical clearance
/// between the receptor and the plume core, so an elevated plume over a
/// soft emitter is not cut off before its nearest approach.
inline IntegrationDomain integration_domain(const NuclideDB& db, const NuclideRecord& nuclide,
                                            const ReleaseSpec& release, const Receptor& receptor,
                                            const KernelConfig& cfg) {
    const double e = cfg.truncation_energy > 0.0 ? cfg.truncation_energy : nuclide.max_energy();
    const double mfp = 1.0 / attenuation(db, e).mu;
    const double clearance = std::abs(release.H - receptor.z1) -
                             cfg.sigma_multiple * dispersion::sigma_z(release.stability, receptor.x1);
    const double reach = std::max(0.0, clearance) + cfg.mfp_multiple * mfp;
    return {std::max(cfg.near_field_epsilon, receptor.x1 - reach), receptor.x1 + reach, mfp, reach};
}

namespace kernel {

inline constexpr double kGradingRatio = 4.0;

/// Breakpoints center +/- scale * 4^j inside (lo, hi), stopping at `reach`.
/// The point kernel varies on the scale of the distance to the receptor, so
/// geometric spacing keeps every interval a few kernel widths long.
inline void add_graded_breakpoints(std::vector<double>& out, double center, double scale,
                                   double reach, double lo, double hi) {
    for (double s = scale; s < reach && (center - s > lo || center + s < hi); s *= kGradingRatio) {
        out.push_back(center - s);
        out.push_back(center + s);
    }
}

inline quadrature::Estimate integrate_line(const LineKernel& k, const ReleaseSpec& release,
                                           const Receptor& rc, const IntegrationDomain& dom,
                                           const KernelConfig& cfg) {
    const quadrature::Options opt{cfg.rel_tol, 0.0, cfg.max_intervals};
    const double m = cfg.sigma_multiple;
    const double eps = cfg.near_field_epsilon;
    const double reach = dom.reach;

    // Vertical clearance between the receptor and the bulk of the plume above it.
    const double clearance =
        std::abs(release.H - rc.z1) - m * dispersion::sigma_z(release.stability, rc.x1);
    std::vector<double> x_breaks{rc.x1};
    add_graded_breakpoints(x_breaks, rc.x1, std::max(eps, clearance), reach, dom.x_lo, dom.x_hi);

    auto over_x = [&](double x) {
        const dispersion::PlumeSlice plume(release, x);
        const double dx = x - rc.x1;
        // On the centreline the y integrand is even, so integrate y >= 0 and double.
        const bool fold = rc.y1 == 0.0;
        const double y_lo = fold ? 0.0 : std::min(0.0, rc.y1) - m * plume.sigma_y;
        const double y_hi = std::max(0.0, rc.y1) + m * plume.sigma_y;
        const double z_lo_plume = release.H - m * plume.sigma_z;
        const double z_hi = release.H + m * plume.sigma_z;
        std::vector<double> y_breaks{0.0, rc.y1};
        add_graded_breakpoints(y_breaks, rc.y1, std::max(eps, std::abs(dx)), reach, y_lo, y_hi);
        std::vector<double> z_breaks;
        z_breaks.reserve(16);
        auto over_y = [&](double y) {
            const double lateral = plume.prefactor * plume.lateral(y);
            const double dy = y - rc.y1;
            const double dxy2 = dx * dx + dy * dy;
            z_breaks.assign({z_lo_plume, rc.z1});
            add_graded_breakpoints(z_breaks, rc.z1, std::max(eps, std::sqrt(dxy2)), reach, 0.0, z_hi);
            auto over_z = [&](double z) {
                const double dz = z - rc.z1;
                return k(dxy2 + dz * dz) * lateral * plume.vertical(z);
            };
            return quadrature::integrate(over_z, 0.0, z_hi, opt, z_breaks);
        };
        auto est = quadrature::integrate(over_y, y_lo, y_hi, opt, y_breaks);
        if (fold) {
            est.value *= 2.0;
            est.error *= 2.0;
        }
        return est;
    };
    return quadrature::integrate(over_x, dom.x_lo, dom.x_hi, opt, x_breaks);
}

}  // namespace kernel

/// Plume-shine dose rate (uSv/h) at `receptor`: the point-kernel integral over
/// the truncated plume volume, one nested adaptive Gauss-Kronrod integration
/// (x outermost, z innermost) per gamma line, summed over lines.
inline DoseResult dose_rate_detailed(const NuclideDB& db, const NuclideRecord& nuclide,
                                     const ReleaseSpec& release, const Receptor& receptor,
                                     const KernelConfig& cfg = {}) {
    cfg.validate();
    release.validate();
    if (!(receptor.z1 >= 0.0)) throw DomainError("receptor height must be non-negative");
    if (!(receptor.x1 > 0.0)) throw DomainError("receptor must lie downwind (x1 > 0)");
    const auto dom = integration_domain(db, nuclide, release, receptor, cfg);
    DoseResult out;
    out.outside_table_range = receptor.x1 < kTableMinDistance || receptor.x1 > kTableMaxDistance;
    bool converged = true;
    for (const auto& line : nuclide.lines) {
        const kernel::LineKernel k(db, line, cfg);
        const auto est = kernel::integrate_line(k, release, receptor, dom, cfg);
        out.dose += est.value;
        out.error_estimate += est.error;
        out.evaluations += est.evaluations;
        converged = converged && est.converged;
    }
    if (!converged && out.error_estimate > cfg.rel_tol * std::abs(out.dose)) {
        throw QuadratureError("dose quadrature for " + nuclide.name + " at x1=" +
                                  text::format_double(receptor.x1) +
                                  " m did not converge; achieved error estimate " +
                                  text::format_sci(out.error_estimate, 3) + " on " +
                                  text::format_sci(out.dose, 6),
                              out.dose, out.error_estimate);
    }
    return out;
}

inline double dose_rate(const NuclideDB& db, const NuclideRecord& nuclide, const ReleaseSpec& release,
                        const Receptor& receptor, const KernelConfig& cfg = {}) {
    return dose_rate_detailed(db, nuclide, release, receptor, cfg).dose;
}

/// Ground-level centreline dose for a unit release (Q = 1 Bq/s, U = 1 m/s)
/// at each of `distances`.
inline std::vector<std::pair<double, double>> dose_profile(const NuclideDB& db,
                                                           const NuclideRecord& nuclide,
                                                           StabilityClass stability, double H,
                                                           const std::vector<double>& distances,
                                                           const KernelConfig& cfg = {},
                                                           std::size_t jobs = 1) {
    if (!std::is_sorted(distances.begin(), distances.end())) {
        throw DomainError("profile distances must be ascending");
    }
    const ReleaseSpec release{1.0, 1.0, H, stability};
    std::vector<std::pair<double, double>> out(distances.size());
    parallel_for(distances.size(), jobs, [&](std::size_t i) {
        out[i] = {distances[i], dose_rate(db, nuclide, release, Receptor{distances[i], 0.0, 1.0}, cfg)};
    });
    return out;
}

}  // namespace plumeshine

#endif
