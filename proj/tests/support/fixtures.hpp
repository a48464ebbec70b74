#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include "plumeshine/dataset.hpp"

namespace fixtures {

// Smooth table shaped like a dose field; no kernel calls.
inline plumeshine::DoseTable synthetic(std::size_t distances = 45) {
    using plumeshine::StabilityClass;
    plumeshine::DoseTable t;
    const auto xs = plumeshine::log_spaced(25.0, 2000.0, distances);
    int n = 0;
    for (const char* nuc : {"Co-60", "Cs-137", "Xe-135"}) {
        ++n;
        for (const auto s : {StabilityClass::A, StabilityClass::D, StabilityClass::F}) {
            for (double h : {10.0, 100.0, 200.0}) {
                for (double x : xs) {
                    const double peak = h * (1.0 + static_cast<int>(s));
                    const double v = 1e-9 * n * std::exp(-std::pow(std::log(x / peak), 2) / 4.0) / (1.0 + x / 500.0);
                    t.rows.push_back({{nuc, s, h, x}, plumeshine::persisted(v)});
                }
            }
        }
    }
    t.sort();
    return t;
}

inline std::string csv(const plumeshine::DoseTable& t) {
    std::ostringstream s;
    plumeshine::write_csv(t, s);
    return s.str();
}

}  // namespace fixtures
