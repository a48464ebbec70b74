#ifndef PLUMESHINE_NUCLIDE_DB_HPP
#define PLUMESHINE_NUCLIDE_DB_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "plumeshine/error.hpp"
#include "plumeshine/text.hpp"

#ifndef PLUMESHINE_DEFAULT_DB
#define PLUMESHINE_DEFAULT_DB "data/air_gamma.dat"
#endif

namespace plumeshine {

inline constexpr double kMinLineEnergy = 0.01;  // MeV
inline constexpr double kMaxLineEnergy = 10.0;  // MeV
inline constexpr double kMaxLineYield = 3.0;

struct GammaLine {
    double energy;  ///< MeV
    double yield;   ///< photons per decay

    bool operator==(const GammaLine&) const = default;
};

struct NuclideRecord {
    std::string name;
    double half_life;  ///< s
    std::vector<GammaLine> lines;

    double max_energy() const { return lines.back().energy; }

    bool operator==(const NuclideRecord&) const = default;
};

/// Photon-interaction data for air on an ascending energy grid.
struct AirPhotonTable {
    std::vector<double> energies;       ///< MeV
    std::vector<double> mu;             ///< linear attenuation, 1/m
    std::vector<double> mu_a_over_rho;  ///< mass energy absorption, m^2/kg
    double rho_air = 1.205;             ///< kg/m^3
    std::vector<double> buildup_a;
    std::vector<double> buildup_b;

    bool operator==(const AirPhotonTable&) const = default;
};

struct NuclideDB {
    std::map<std::string, NuclideRecord> nuclides;
    AirPhotonTable photon;

    /// Lookup accepting any spelling `canonical_nuclide_name` understands.
    const NuclideRecord* find(std::string_view name) const;
    const NuclideRecord& at(std::string_view name) const;

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(nuclides.size());
        for (const auto& [name, rec] : nuclides) out.push_back(name);
        return out;
    }

    bool operator==(const NuclideDB&) const = default;
};

/// "Cs-137", "137Cs", "cs137" and "CS 137" all map to "Cs-137".
inline std::string canonical_nuclide_name(std::string_view raw) {
    std::string compact;
    for (const char c : text::trim(raw)) {
        if (c != '-' && c != ' ' && c != '_') compact.push_back(c);
    }
    std::string letters;
    std::string digits;
    const auto is_alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
    const auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    std::size_t i = 0;
    if (!compact.empty() && is_digit(compact[0])) {
        while (i < compact.size() && is_digit(compact[i])) digits.push_back(compact[i++]);
        while (i < compact.size() && is_alpha(compact[i])) letters.push_back(compact[i++]);
    } else {
        while (i < compact.size() && is_alpha(compact[i])) letters.push_back(compact[i++]);
        while (i < compact.size() && is_digit(compact[i])) digits.push_back(compact[i++]);
    }
    if (i != compact.size() || letters.empty() || letters.size() > 2 || digits.empty() ||
        digits.size() > 3 || digits[0] == '0') {
        throw ValidationError("unrecognised nuclide name '" + std::string(raw) + "'");
    }
    letters[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(letters[0])));
    if (letters.size() == 2) {
        letters[1] = static_cast<char>(std::tolower(static_cast<unsigned char>(letters[1])));
    }
    return letters + "-" + digits;
}

inline const NuclideRecord* NuclideDB::find(std::string_view name) const {
    std::string key;
    try {
        key = canonical_nuclide_name(name);
    } catch (const ValidationError&) {
        return nullptr;
    }
    const auto it = nuclides.find(key);
    return it == nuclides.end() ? nullptr : &it->second;
}

inline const NuclideRecord& NuclideDB::at(std::string_view name) const {
    if (const auto* rec = find(name)) return *rec;
    throw DomainError("unknown nuclide '" + std::string(name) + "'");
}

namespace detail {

inline double require_number(std::string_view token, std::size_t lineno) {
    if (const auto v = text::parse_double(token)) {
        if (std::isfinite(*v)) return *v;
    }
    throw ParseError("expected a number, got '" + std::string(token) + "'", lineno);
}

inline void validate_db(NuclideDB& db) {
    auto& ph = db.photon;
    if (ph.energies.size() < 2) throw ValidationError("[photon] needs at least two energy rows");
    if (ph.energies.front() < kMinLineEnergy) {
        throw ValidationError("[photon] grid starts below 0.01 MeV");
    }
    for (std::size_t i = 0; i < ph.energies.size(); ++i) {
        if (i > 0 && !(ph.energies[i] > ph.energies[i - 1])) {
            throw ValidationError("[photon] energies must be strictly ascending");
        }
        if (!(ph.mu[i] > 0.0) || !(ph.mu_a_over_rho[i] > 0.0)) {
            throw ValidationError("[photon] mu and mu_a_over_rho must be positive at " +
                                  text::format_double(ph.energies[i]) + " MeV");
        }
        if (!(ph.buildup_a[i] > 0.0)) {
            throw ValidationError("[photon] berger_a must be positive at " +
                                  text::format_double(ph.energies[i]) + " MeV");
        }
    }
    if (!(ph.rho_air >= 1.0 && ph.rho_air <= 1.4)) {
        throw ValidationError("[air] rho_kg_m3 outside [1.0, 1.4]");
    }
    if (db.nuclides.empty()) throw ValidationError("no [nuclide] sections");
    for (auto& [name, rec] : db.nuclides) {
        if (!(rec.half_life > 0.0)) throw ValidationError(name + ": half_life_s must be positive");
        if (rec.lines.empty()) throw ValidationError(name + ": no gamma lines");
        std::stable_sort(rec.lines.begin(), rec.lines.end(),
                         [](const GammaLine& a, const GammaLine& b) { return a.energy < b.energy; });
        for (const auto& line : rec.lines) {
            if (!(line.energy >= kMinLineEnergy && line.energy <= kMaxLineEnergy)) {
                throw ValidationError(name + ": line energy " + text::format_double(line.energy) +
                                      " MeV outside [0.01, 10]");
            }
            if (!(line.yield > 0.0 && line.yield <= kMaxLineYield)) {
                throw ValidationError(name + ": line yield " + text::format_double(line.yield) +
                                      " outside (0, 3]");
            }
        }
        if (rec.max_energy() > ph.energies.back()) {
            throw ValidationError(name + ": line energy " + text::format_double(rec.max_energy()) +
                                  " MeV exceeds the photon grid (coverage)");
        }
    }
}

}  // namespace detail

/// Parses the sectioned text format (`[air]`, `[photon]`, `[nuclide Name]`).
inline NuclideDB load_db(std::istream& in) {
    enum class Section { None, Air, Photon, Nuclide };
    NuclideDB db;
    Section section = Section::None;
    NuclideRecord* current = nullptr;
    bool have_air = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto body = text::trim(text::strip_comment(line));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']') throw ParseError("unterminated section header", lineno);
            const auto inner = text::trim(body.substr(1, body.size() - 2));
            const auto words = text::split_ws(inner);
            if (words.size() == 1 && words[0] == "air") {
                section = Section::Air;
            } else if (words.size() == 1 && words[0] == "photon") {
                section = Section::Photon;
            } else if (words.size() == 2 && words[0] == "nuclide") {
                std::string name;
                try {
                    name = canonical_nuclide_name(words[1]);
                } catch (const ValidationError& e) {
                    throw ParseError(e.what(), lineno);
                }
                if (db.nuclides.count(name) != 0) {
                    throw ValidationError("duplicate nuclide '" + name + "'");
                }
                current = &db.nuclides.emplace(name, NuclideRecord{name, 0.0, {}}).first->second;
                section = Section::Nuclide;
            } else {
                throw ParseError("unknown section '" + std::string(inner) + "'", lineno);
            }
            continue;
        }
        const auto tok = text::split_ws(body);
        switch (section) {
            case Section::None:
                throw ParseError("data outside of any section", lineno);
            case Section::Air:
                if (tok.size() != 2 || tok[0] != "rho_kg_m3") {
                    throw ParseError("[air] expects 'rho_kg_m3 <value>'", lineno);
                }
                db.photon.rho_air = detail::require_number(tok[1], lineno);
                have_air = true;
                break;
            case Section::Photon:
                if (tok.size() != 5) throw ParseError("[photon] rows need 5 columns", lineno);
                db.photon.energies.push_back(detail::require_number(tok[0], lineno));
                db.photon.mu.push_back(detail::require_number(tok[1], lineno));
                db.photon.mu_a_over_rho.push_back(detail::require_number(tok[2], lineno));
                db.photon.buildup_a.push_back(detail::require_number(tok[3], lineno));
                db.photon.buildup_b.push_back(detail::require_number(tok[4], lineno));
                break;
            case Section::Nuclide:
                if (tok.size() == 2 && tok[0] == "half_life_s") {
                    current->half_life = detail::require_number(tok[1], lineno);
                } else if (tok.size() == 2) {
                    current->lines.push_back({detail::require_number(tok[0], lineno),
                                              detail::require_number(tok[1], lineno)});
                } else {
                    throw ParseError("[nuclide] rows are 'energy_MeV yield' or 'half_life_s <value>'",
                                     lineno);
                }
                break;
        }
    }
    if (!have_air) throw ValidationError("missing [air] section");
    detail::validate_db(db);
    return db;
}

inline NuclideDB load_db_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open nuclide database '" + path + "'");
    return load_db(in);
}

inline NuclideDB load_default_db() { return load_db_file(PLUMESHINE_DEFAULT_DB); }

inline void serialize_db(const NuclideDB& db, std::ostream& out) {
    using text::format_double;
    out << "[air]\nrho_kg_m3 " << format_double(db.photon.rho_air) << "\n\n[photon]\n";
    const auto& ph = db.photon;
    for (std::size_t i = 0; i < ph.energies.size(); ++i) {
        out << format_double(ph.energies[i]) << ' ' << format_double(ph.mu[i]) << ' '
            << format_double(ph.mu_a_over_rho[i]) << ' ' << format_double(ph.buildup_a[i]) << ' '
            << format_double(ph.buildup_b[i]) << '\n';
    }
    for (const auto& [name, rec] : db.nuclides) {
        out << "\n[nuclide " << name << "]\nhalf_life_s " << format_double(rec.half_life) << '\n';
        for (const auto& line : rec.lines) {
            out << format_double(line.energy) << ' ' << format_double(line.yield) << '\n';
        }
    }
}

inline std::string serialize_db(const NuclideDB& db) {
    std::ostringstream out;
    serialize_db(db, out);
    return out.str();
}

struct AttenuationCoefficients {
    double mu;             ///< 1/m
    double mu_a_over_rho;  ///< m^2/kg
};

struct BergerCoefficients {
    double a;
    double b;
};

namespace detail {

/// Bracketing interval [i, i+1] and the log-energy weight of `energy` in it.
/// A weight of exactly 0 means `energy` sits on knot i.
struct GridPosition {
    std::size_t index;
    double weight;
};

inline GridPosition locate(const AirPhotonTable& ph, double energy) {
    const auto& e = ph.energies;
    if (!(energy >= e.front() && energy <= e.back())) {
        throw DomainError("photon energy " + text::format_double(energy) +
                          " MeV outside the tabulated range");
    }
    auto it = std::upper_bound(e.begin(), e.end(), energy);
    std::size_t hi = static_cast<std::size_t>(it - e.begin());
    if (hi == e.size()) return {e.size() - 1, 0.0};
    const std::size_t lo = hi - 1;
    if (energy == e[lo]) return {lo, 0.0};
    const double w = (std::log(energy) - std::log(e[lo])) / (std::log(e[hi]) - std::log(e[lo]));
    return {lo, w};
}

inline double loglog(const std::vector<double>& v, const GridPosition& p) {
    if (p.weight == 0.0) return v[p.index];
    return std::exp((1.0 - p.weight) * std::log(v[p.index]) + p.weight * std::log(v[p.index + 1]));
}

inline double linlog(const std::vector<double>& v, const GridPosition& p) {
    if (p.weight == 0.0) return v[p.index];
    return (1.0 - p.weight) * v[p.index] + p.weight * v[p.index + 1];
}

}  // namespace detail

/// Log-log interpolation of the air attenuation data; exact at grid knots.
inline AttenuationCoefficients attenuation(const NuclideDB& db, double energy) {
    const auto pos = detail::locate(db.photon, energy);
    return {detail::loglog(db.photon.mu, pos), detail::loglog(db.photon.mu_a_over_rho, pos)};
}

/// `a` interpolates log-log; `b` changes sign near 5 MeV so it interpolates
/// linearly in log E.
inline BergerCoefficients berger_coefficients(const NuclideDB& db, double energy) {
    const auto pos = detail::locate(db.photon, energy);
    return {detail::loglog(db.photon.buildup_a, pos), detail::linlog(db.photon.buildup_b, pos)};
}

inline double berger_buildup(const BergerCoefficients& c, double mu_r) {
    if (mu_r == 0.0) return 1.0;
    return 1.0 + c.a * mu_r * std::exp(c.b * mu_r);
}

/// Berger-form buildup factor B(mu r) at `energy` MeV.
inline double buildup(const NuclideDB& db, double energy, double mu_r) {
    if (!(mu_r >= 0.0)) throw DomainError("mu_r must be non-negative");
    return berger_buildup(berger_coefficients(db, energy), mu_r);
}

}  // namespace plumeshine

#endif
