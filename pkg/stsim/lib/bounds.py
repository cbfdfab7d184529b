# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Analytic inequalities and the exact references they are checked against."""

import math
from collections import namedtuple
from fractions import Fraction

import numpy as np
from scipy import integrate, special, stats

import logging
log = logging.getLogger(__name__)


class PreconditionError(Exception):
    pass


# direction "upper": bound >= value is claimed, margin = bound - value.
# direction "lower": bound <= value is claimed, margin = value - bound.
BoundReport = namedtuple("BoundReport", "name inputs bound value direction margin passed")

Estimate = namedtuple("Estimate", "name value ci_low ci_high n")


def _report(name, inputs, bound, value, direction, tol=0.0):
    if direction == "upper":
        margin = bound - value
    else:
        margin = value - bound
    return BoundReport(name, inputs, bound, value, direction, margin, margin >= -tol)


def poisson_chernoff(lam, eps, side):
    """Chernoff bound on a Poisson(lam) variable leaving [(1-eps)lam, (1+eps)lam].

    >>> round(poisson_chernoff(100, 0.5, "lower"), 9)
    3.727e-06
    """
    if not 0 < eps < 1:
        raise PreconditionError("eps must lie in (0, 1), got %r" % eps)
    if lam <= 0:
        raise PreconditionError("lam must be positive, got %r" % lam)
    if side == "upper":
        return math.exp(-lam * eps ** 2 * (1 - eps / 3.0) / 2.0)
    if side == "lower":
        return math.exp(-lam * eps ** 2 / 2.0)
    raise ValueError("side must be 'upper' or 'lower', got %r" % side)


def poisson_tail_exact(lam, eps, side):
    """P(X >= (1+eps)lam) or P(X <= (1-eps)lam) for X ~ Poisson(lam)."""
    lam_q = Fraction(repr(float(lam)))
    eps_q = Fraction(repr(float(eps)))
    if side == "upper":
        k = math.ceil(lam_q * (1 + eps_q))
        return float(stats.poisson.sf(k - 1, lam))
    if side == "lower":
        k = math.floor(lam_q * (1 - eps_q))
        return float(stats.poisson.cdf(k, lam))
    raise ValueError("side must be 'upper' or 'lower', got %r" % side)


def gaussian_tail(sigma, R):
    """Upper bound on P(N(0, sigma^2) > R) for R >= sigma.

    >>> round(gaussian_tail(1.0, 2.0), 4)
    0.027
    """
    if sigma <= 0 or R < sigma:
        raise PreconditionError("need R >= sigma > 0, got sigma=%r R=%r" % (sigma, R))
    return sigma / (math.sqrt(2 * math.pi) * R) * math.exp(-R ** 2 / (2.0 * sigma ** 2))


def gaussian_tail_exact(sigma, R):
    value, _ = integrate.quad(lambda x: stats.norm.pdf(x, scale=sigma), R, np.inf,
                              epsabs=1e-14, epsrel=1e-12)
    return value


def confinement_bound(d, delta, z):
    """Lower bound on the probability that d-dimensional Brownian motion
    stays in the cube Q_z (side z, centred at the start) during [0, delta].

    >>> round(confinement_bound(1, 1.0, 3.0), 4)
    0.3935
    """
    if delta <= 0 or z < 3 * math.sqrt(delta) * (1 - 1e-12):
        raise PreconditionError("need z >= 3*sqrt(delta), got z=%r delta=%r" % (z, delta))
    return 1 - d * math.exp(-z ** 2 / (18.0 * delta))


def _image_range(delta, a):
    return int(math.ceil(math.sqrt(delta) / a)) + 6


def killed_density(y, delta, a):
    """Density at y of one-dimensional Brownian motion started at 0, run for
    time delta and killed on leaving (-a, a). Method of images."""
    y = np.asarray(y, dtype=float)
    sd = math.sqrt(delta)
    total = np.zeros_like(y)
    K = _image_range(delta, a)
    for k in range(-K, K + 1):
        total += (-1) ** (k % 2) * stats.norm.pdf(y - 2 * k * a, scale=sd)
    return np.where(np.abs(y) < a, np.maximum(total, 0.0), 0.0)


def escape_free_probability(delta, a):
    """Probability that one-dimensional Brownian motion stays in (-a, a) on [0, delta]."""
    sd = math.sqrt(delta)
    K = _image_range(delta, a)
    total = 0.0
    for k in range(-K, K + 1):
        sign = -1.0 if k % 2 else 1.0
        total += sign * (stats.norm.cdf((a - 2 * k * a) / sd) - stats.norm.cdf((-a - 2 * k * a) / sd))
    return min(max(total, 0.0), 1.0)


def confinement_series(d, delta, z):
    """Exact probability of staying in Q_z during [0, delta], coordinates independent."""
    return escape_free_probability(delta, z / 2.0) ** d


def wilson(successes, trials, level=0.95):
    """Wilson score interval.

    >>> lo, hi = wilson(50, 100)
    >>> round(lo, 3), round(hi, 3)
    (0.404, 0.596)
    """
    if trials < 1 or not 0 <= successes <= trials:
        raise PreconditionError("need 0 <= successes <= trials, trials >= 1")
    z = stats.norm.ppf(1 - (1 - level) / 2.0)
    n = float(trials)
    p = successes / n
    denom = 1 + z ** 2 / n
    center = (p + z ** 2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


def estimate(name, successes, trials, level=0.95):
    lo, hi = wilson(successes, trials, level)
    return Estimate(name, successes / float(trials), lo, hi, trials)


def ball_volume(d):
    return math.pi ** (d / 2.0) / special.gamma(d / 2.0 + 1)


def void_probability(lam, r, d):
    """Probability that no node of a lam-PPP lies within r of a fixed point."""
    return math.exp(-lam * ball_volume(d) * r ** d)


def verify_bounds(lams=(10, 100, 1000), epss=(0.1, 0.3, 0.5, 0.9),
                  ratios=(1, 1.5, 2, 3), confinement_grid=None):
    """Evaluate every bound against its exact reference; returns BoundReports."""
    reports = []
    for lam in lams:
        for eps in epss:
            for side in ("upper", "lower"):
                reports.append(_report(
                    "poisson_chernoff_%s" % side, {"lam": lam, "eps": eps},
                    poisson_chernoff(lam, eps, side), poisson_tail_exact(lam, eps, side), "upper"))
    for ratio in ratios:
        reports.append(_report(
            "gaussian_tail", {"sigma": 1.0, "R": float(ratio)},
            gaussian_tail(1.0, float(ratio)), gaussian_tail_exact(1.0, float(ratio)), "upper"))
    if confinement_grid is None:
        confinement_grid = [(d, delta, k * math.sqrt(delta))
                            for d in (1, 2) for delta in (0.5, 1.0, 2.0) for k in (3, 4, 5)]
    for d, delta, z in confinement_grid:
        reports.append(_report(
            "confinement", {"d": d, "delta": delta, "z": z},
            confinement_bound(d, delta, z), confinement_series(d, delta, z), "lower"))
    failed = [r for r in reports if not r.passed]
    for r in failed:
        log.warning("%s failed at %s: bound %g value %g", r.name, r.inputs, r.bound, r.value)
    return reports
