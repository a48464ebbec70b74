#!/usr/bin/env python3
"""Regenerates the [photon] section of data/air_gamma.dat.

Attenuation and energy-absorption coefficients are the NIST (Hubbell &
Seltzer) values for dry air near sea level. Berger buildup coefficients are
least-squares fits of B = 1 + a*t*exp(b*t) to the point-isotropic dose
buildup factors of Goldstein & Wilkins (water, low-Z equivalent of air) over
t = mu*r in {1, 2, 4, 7, 10}.
"""
import math

RHO_AIR = 1.205  # kg/m^3

# E [MeV], mu/rho [cm^2/g], mu_en/rho [cm^2/g]
NIST_AIR = [
    (0.010, 5.120, 4.742), (0.015, 1.614, 1.334), (0.020, 0.7779, 0.5389),
    (0.030, 0.3538, 0.1537), (0.040, 0.2485, 0.06833), (0.050, 0.2080, 0.04098),
    (0.060, 0.1875, 0.03041), (0.080, 0.1662, 0.02407), (0.100, 0.1541, 0.02325),
    (0.150, 0.1356, 0.02496), (0.200, 0.1233, 0.02672), (0.300, 0.1067, 0.02872),
    (0.400, 0.09549, 0.02949), (0.500, 0.08712, 0.02966), (0.600, 0.08055, 0.02953),
    (0.800, 0.07074, 0.02882), (1.000, 0.06358, 0.02789), (1.250, 0.05687, 0.02666),
    (1.500, 0.05175, 0.02547), (2.000, 0.04447, 0.02345), (3.000, 0.03581, 0.02057),
    (4.000, 0.03079, 0.01870), (5.000, 0.02751, 0.01740), (6.000, 0.02522, 0.01647),
    (8.000, 0.02225, 0.01525), (10.00, 0.02045, 0.01450),
]

MU_R = [1.0, 2.0, 4.0, 7.0, 10.0]
BUILDUP = {
    0.255: [3.09, 7.14, 23.0, 72.9, 166.0],
    0.5: [2.52, 5.14, 14.3, 38.8, 77.6],
    1.0: [2.13, 3.71, 7.68, 16.2, 27.1],
    2.0: [1.83, 2.77, 4.88, 8.46, 12.4],
    3.0: [1.69, 2.42, 3.91, 6.23, 8.63],
    4.0: [1.58, 2.17, 3.34, 5.13, 6.94],
    6.0: [1.46, 1.91, 2.76, 3.99, 5.18],
    8.0: [1.38, 1.74, 2.40, 3.34, 4.25],
    10.0: [1.33, 1.63, 2.19, 2.97, 3.72],
}


def fit(bs):
    # ln((B-1)/t) = ln a + b t, ordinary least squares
    xs = MU_R
    ys = [math.log((b - 1.0) / t) for b, t in zip(bs, xs)]
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    b = sxy / sxx
    return math.exp(my - b * mx), b


def coeffs_at(e, fitted):
    es = sorted(fitted)
    if e <= es[0]:
        return fitted[es[0]]
    if e >= es[-1]:
        return fitted[es[-1]]
    for lo, hi in zip(es, es[1:]):
        if lo <= e <= hi:
            w = (math.log(e) - math.log(lo)) / (math.log(hi) - math.log(lo))
            a = math.exp((1 - w) * math.log(fitted[lo][0]) + w * math.log(fitted[hi][0]))
            b = (1 - w) * fitted[lo][1] + w * fitted[hi][1]
            return a, b


def main():
    fitted = {e: fit(v) for e, v in BUILDUP.items()}
    for e in sorted(fitted):
        a, b = fitted[e]
        worst = max(abs(1 + a * t * math.exp(b * t) - bv) / bv for t, bv in zip(MU_R, BUILDUP[e]))
        print(f"# fit E={e:6.3f} a={a:.4f} b={b:+.5f} max rel dev {worst:.3f}")
    for e, mu_rho, muen_rho in NIST_AIR:
        a, b = coeffs_at(e, fitted)
        mu = mu_rho * 0.1 * RHO_AIR  # cm^2/g -> m^2/kg, times kg/m^3
        print(f"{e:<7.3f} {mu:.6e} {muen_rho * 0.1:.6e} {a:.5f} {b:+.5f}")


if __name__ == "__main__":
    main()
