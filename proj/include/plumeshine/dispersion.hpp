#ifndef PLUMESHINE_DISPERSION_HPP
#define PLUMESHINE_DISPERSION_HPP

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "plumeshine/error.hpp"
#include "plumeshine/text.hpp"

namespace plumeshine {

/// Pasquill-Gifford class, A (very unstable) through F (very stable).
enum class StabilityClass : int { A = 0, B, C, D, E, F };

inline constexpr std::array<StabilityClass, 6> kAllStabilityClasses{
    StabilityClass::A, StabilityClass::B, StabilityClass::C,
    StabilityClass::D, StabilityClass::E, StabilityClass::F};

inline char to_char(StabilityClass s) { return static_cast<char>('A' + static_cast<int>(s)); }

inline std::string to_string(StabilityClass s) { return std::string(1, to_char(s)); }

inline StabilityClass parse_stability(std::string_view raw) {
    const auto s = text::trim(raw);
    if (s.size() == 1) {
        const char c = static_cast<char>(s[0] & ~0x20);  // upper-case ASCII letter
        if (c >= 'A' && c <= 'F') return static_cast<StabilityClass>(c - 'A');
    }
    throw ValidationError("stability class must be one of A-F, got '" + std::string(raw) + "'");
}

namespace dispersion {

/// Briggs (1973) open-country curves:
///   sigma_y = ay * x * (1 + by*x)^-1/2
///   sigma_z = az * x * (1 + bz*x)^pz
struct BriggsCoefficients {
    double ay, by;
    double az, bz, pz;
};

inline constexpr std::array<BriggsCoefficients, 6> kBriggsOpenCountry{{
    {0.22, 0.0001, 0.20, 0.0, 0.0},
    {0.16, 0.0001, 0.12, 0.0, 0.0},
    {0.11, 0.0001, 0.08, 0.0002, -0.5},
    {0.08, 0.0001, 0.06, 0.0015, -0.5},
    {0.06, 0.0001, 0.03, 0.0003, -1.0},
    {0.04, 0.0001, 0.016, 0.0003, -1.0},
}};

inline void require_positive_x(double x) {
    if (!(x > 0.0)) throw DomainError("downwind distance must be positive");
}

inline double sigma_y(StabilityClass s, double x) {
    require_positive_x(x);
    const auto& c = kBriggsOpenCountry[static_cast<int>(s)];
    return c.ay * x / std::sqrt(1.0 + c.by * x);
}

inline double sigma_z(StabilityClass s, double x) {
    require_positive_x(x);
    const auto& c = kBriggsOpenCountry[static_cast<int>(s)];
    if (c.pz == 0.0) return c.az * x;
    if (c.pz == -0.5) return c.az * x / std::sqrt(1.0 + c.bz * x);
    return c.az * x / (1.0 + c.bz * x);
}

}  // namespace dispersion

struct ReleaseSpec {
    double Q = 1.0;  ///< Bq/s
    double U = 1.0;  ///< m/s
    double H = 0.0;  ///< release height, m
    StabilityClass stability = StabilityClass::D;

    void validate() const {
        if (!(Q > 0.0)) throw DomainError("source term Q must be positive");
        if (!(U > 0.0)) throw DomainError("wind speed U must be positive");
        if (!(H >= 0.0 && H <= 500.0)) throw DomainError("release height must lie in [0, 500] m");
    }
};

namespace dispersion {

/// Plume cross-section at a fixed downwind distance. The kernel integrates
/// over y and z with x held fixed, so the sigmas are evaluated once per x.
struct PlumeSlice {
    double sigma_y;
    double sigma_z;
    double prefactor;  ///< Q / (2 pi U sigma_y sigma_z)
    double H;

    PlumeSlice(const ReleaseSpec& r, double x)
        : sigma_y(dispersion::sigma_y(r.stability, x)),
          sigma_z(dispersion::sigma_z(r.stability, x)),
          prefactor(r.Q / (2.0 * std::numbers::pi * r.U * sigma_y * sigma_z)),
          H(r.H) {}

    double lateral(double y) const { return std::exp(-0.5 * (y * y) / (sigma_y * sigma_y)); }

    /// Direct plus ground-reflected vertical term.
    double vertical(double z) const {
        const double s2 = sigma_z * sigma_z;
        const double below = z - H;
        const double direct = std::exp(-0.5 * below * below / s2);
        // reflected / direct = exp(-2zH / s2)
        const double log_ratio = 2.0 * z * H / s2;
        return log_ratio > 40.0 ? direct : direct + std::exp(-0.5 * (z + H) * (z + H) / s2);
    }

    double operator()(double y, double z) const { return prefactor * lateral(y) * vertical(z); }
};

}  // namespace dispersion

/// Gaussian plume with total ground reflection, Bq/m^3.
inline double concentration(const ReleaseSpec& release, double x, double y, double z) {
    release.validate();
    if (!(z >= 0.0)) throw DomainError("z must be non-negative");
    return dispersion::PlumeSlice(release, x)(y, z);
}

}  // namespace plumeshine

#endif
