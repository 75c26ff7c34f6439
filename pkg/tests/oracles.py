"""Independent reference values frozen into the unit tests.

Run ``python3 tests/oracles.py`` to regenerate. Everything here uses scipy's
adaptive quadrature or closed forms, never the package's own quadrature.
"""

import math

from scipy import integrate
from scipy.special import gamma
from scipy.stats import norm


def ex1_values(rate=30.0, mean=0.1, std=1 / 24):
    lo, hi = mean - 3 * std, mean + 3 * std
    opts = dict(epsabs=1e-14, epsrel=1e-14)
    comp = integrate.quad(lambda r: rate * r * norm.pdf(r, mean, std), lo, hi, **opts)[0]
    mass = integrate.quad(lambda r: rate * norm.pdf(r, mean, std), lo, hi, **opts)[0]
    out = {"compensator": comp, "window_mass": mass}
    # r * int_0^1 p(x - l r) dl = Phi(x) - Phi(x - r) for the standard normal p
    for x in (0.0, 1.0):
        val = integrate.quad(lambda r: norm.pdf(r, mean, std) * (norm.cdf(x) - norm.cdf(x - r)), lo, hi,
                             epsabs=1e-15, epsrel=1e-14)[0]
        out[f"levy_score_x{x:g}"] = -rate * val / norm.pdf(x)
    return out


def stable_values(alpha=1.5, inner=0.01, outer=5.0):
    c = alpha * gamma((1 + alpha) / 2) / (2 ** (1 - alpha) * math.sqrt(math.pi) * gamma(1 - alpha / 2))
    return {
        "c_alpha": c,
        "branch_mass": c * (inner ** -alpha - outer ** -alpha) / alpha,
        "tail_prob_10": 2 * c / alpha * 10.0 ** -alpha,
    }


if __name__ == "__main__":
    for k, v in {**ex1_values(), **stable_values()}.items():
        print(k, repr(v))
