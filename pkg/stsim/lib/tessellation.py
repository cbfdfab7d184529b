# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Multi-scale space-time tessellation.

Every region is held as an integer box in lattice units: space is measured in
units of ell_0 = ell/m and time in units of beta_1, so containment and
intersection tests are exact.  The real-valued box is available through the
``unit`` carried by each region.
"""

import itertools
import math
from collections import namedtuple
from fractions import Fraction

import numpy as np

import logging
log = logging.getLogger(__name__)

# lgamma(k + 1) overflows a double near k = 170
MAX_SCALE = 160
EXACT_WEIGHT_LIMIT = 400


class GeometryError(Exception):
    pass


class ScaleRangeError(Exception):
    pass


class WindowError(Exception):
    pass


Cell = namedtuple("Cell", "k i tau")
Relation = namedtuple("Relation", "adjacent well_separated support_adjacent")
TildeWeight = namedtuple("TildeWeight", "b psi2 log_value exact")
Check = namedtuple("Check", "name passed checked failures")


class ScaleParams(object):
    """The global parameter bundle.

    Either ``c_mix`` or ``beta`` may be given; the other is derived from
    beta = c_mix * (ell/m)^2 / eps^2.

    >>> p = ScaleParams(d=2)
    >>> p.m, p.n
    (28, 2)
    """
    fields = ("d", "ell", "beta", "eps", "eta", "m", "n", "w", "kappa", "lam", "r", "c_mix")

    def __init__(self, d=2, ell=1.0, eps=0.5, eta=1, m=None, w=1.0, kappa=2,
                 lam=1.0, r=1.0, c_mix=None, beta=None, n=None):
        self.d = int(d)
        self.ell = float(ell)
        self.eps = float(eps)
        self.eta = int(eta)
        self.m = int(m) if m is not None else 7 * self.eta * 2 ** self.d
        self.w = float(w)
        self.kappa = int(kappa)
        self.lam = float(lam)
        self.r = float(r)

        if self.d < 1:
            raise GeometryError("d must be a positive integer, got %r" % d)
        if not 0 < self.eps < 1:
            raise GeometryError("eps must lie in (0, 1), got %r" % eps)
        if self.eta < 1:
            raise GeometryError("eta must be a positive integer, got %r" % eta)
        if self.ell <= 0:
            raise GeometryError("ell must be positive, got %r" % ell)
        if not 1 <= self.kappa <= MAX_SCALE:
            raise ScaleRangeError("kappa must lie in [1, %d], got %r" % (MAX_SCALE, kappa))
        if self.lam < 0:
            raise GeometryError("lam must be non-negative, got %r" % lam)

        self.n = self._solve_n()
        if n is not None and int(n) != self.n:
            raise GeometryError("n=%r does not satisfy n^d = m/(7 eta) for m=%d, eta=%d, d=%d (n=%d)"
                                % (n, self.m, self.eta, self.d, self.n))

        scale = (self.ell / self.m) ** 2 / self.eps ** 2
        if c_mix is None and beta is None:
            c_mix = 1.0
        if c_mix is None:
            c_mix = float(beta) / scale
        elif beta is not None and not math.isclose(float(beta), float(c_mix) * scale, rel_tol=1e-9):
            raise GeometryError("beta=%r disagrees with c_mix=%r (expected %r)"
                                % (beta, c_mix, float(c_mix) * scale))
        self.c_mix = float(c_mix)
        if self.c_mix <= 0:
            raise GeometryError("c_mix must be positive, got %r" % c_mix)
        self.beta = self.c_mix * scale

        if max(self.eta, 2) * self.beta > self.beta * time_ratio(self, 1):
            raise GeometryError("max(eta, 2) * beta exceeds beta_2")
        if self.n < 2:
            log.warning("n=%d: m=%d is below 7*eta*2^d", self.n, self.m)

    def _solve_n(self):
        target = Fraction(self.m, 7 * self.eta)
        if target.denominator == 1:
            n = int(round(float(target) ** (1.0 / self.d)))
            for cand in (n - 1, n, n + 1):
                if cand >= 1 and cand ** self.d == target:
                    return cand
        raise GeometryError("n^d = m/(7 eta) has no integer solution n for m=%d, eta=%d, d=%d"
                            % (self.m, self.eta, self.d))

    def replace(self, **kwargs):
        values = dict((f, getattr(self, f)) for f in self.fields if f not in ("n", "beta"))
        if "beta" in kwargs and "c_mix" not in kwargs:
            values.pop("c_mix")
        values.update(kwargs)
        return ScaleParams(**values)

    def as_dict(self):
        return dict((f, getattr(self, f)) for f in self.fields)

    def __eq__(self, other):
        return isinstance(other, ScaleParams) and self.as_dict() == other.as_dict()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "ScaleParams(%s)" % ", ".join("%s=%r" % (f, getattr(self, f)) for f in self.fields)


def w_floor(p):
    """Smallest displacement-window multiplier the fractal argument admits."""
    return math.sqrt(18 * p.eta * (p.beta / p.ell ** 2) * math.log(8 * p.d / p.eps))


def check_w(p):
    floor = w_floor(p)
    if p.w < floor:
        log.warning("w=%g is below its floor %g", p.w, floor)
        return False
    return True


def _check_scale(p, k, lowest=0):
    if k < lowest or k > MAX_SCALE:
        raise ScaleRangeError("scale %r outside [%d, %d]" % (k, lowest, MAX_SCALE))


def _check_kappa(p, k):
    if k > p.kappa:
        raise ScaleRangeError("scale %d exceeds kappa=%d" % (k, p.kappa))


def space_ratio(p, k):
    """ell_{k+1} / ell_k, an integer for k >= 0."""
    return p.m * (k + 1) ** 3


def time_ratio(p, k):
    """beta_{k+1} / beta_k = m^2 k^2 (k+1)^4 for k >= 1.

    >>> time_ratio(ScaleParams(d=2), 1)
    12544
    """
    return p.m ** 2 * k ** 2 * (k + 1) ** 4


def space_unit(p, k):
    """ell_k in units of ell_0: m^k (k!)^3."""
    return p.m ** k * math.factorial(k) ** 3


def time_unit(p, k):
    """beta_k in units of beta_1."""
    unit = 1
    for j in range(1, k):
        unit *= time_ratio(p, j)
    return unit


def scale_ratios(p, k):
    return space_unit(p, k), time_unit(p, k)


def epsilon_k(p, k):
    if k < 0:
        raise ScaleRangeError("eps_k needs k >= 0, got %r" % k)
    total = 2 * p.eps
    for j in range(1, k + 1):
        total -= p.eps / j ** 2
    return total


def log_ell(p, k):
    if k == 0:
        return math.log(p.ell) - math.log(p.m)
    return math.log(p.ell) + (k - 1) * math.log(p.m) + 3 * math.lgamma(k + 1)


def log_beta(p, k):
    return math.log(p.c_mix) + 2 * log_ell(p, k - 1) + 4 * math.log(k) - 2 * math.log(p.eps)


def _finite_exp(value, what, k):
    try:
        result = math.exp(value)
    except OverflowError:
        raise ScaleRangeError("%s overflows at k=%d" % (what, k))
    if math.isinf(result):
        raise ScaleRangeError("%s overflows at k=%d" % (what, k))
    return result


def scale_tables(p, k):
    """(ell_k, beta_k, eps_k); beta_k is None for k = 0.

    >>> p = ScaleParams(d=2, eps=0.5, kappa=3)
    >>> round(scale_tables(p, 3)[0])
    169344
    >>> scale_tables(p, 2)[2]
    0.375
    """
    _check_scale(p, k)
    _check_kappa(p, k)
    ell_k = _finite_exp(log_ell(p, k), "ell_k", k)
    beta_k = _finite_exp(log_beta(p, k), "beta_k", k) if k >= 1 else None
    return ell_k, beta_k, epsilon_k(p, k)


def pi(p, k, j, i):
    """Index of the scale-(k+j) cube containing cube i of scale k.

    Works component-wise on tuples, ints and integer arrays.

    >>> p = ScaleParams(d=2)
    >>> pi(p, 1, 1, (224, 0))
    (1, 0)
    """
    _check_scale(p, k)
    if j < 0:
        raise ScaleRangeError("lift must be non-negative, got %r" % j)
    _check_kappa(p, k + j)
    ratio = space_unit(p, k + j) // space_unit(p, k)
    if isinstance(i, tuple):
        return tuple(a // ratio for a in i)
    return i // ratio


def gamma(p, k, j, tau):
    """Time index of the scale-(k+j) ancestor of time index tau at scale k.

    Intervals are taken half-open, so tau' + 1 = floor(tau beta_k / beta_{k+1}).

    >>> p = ScaleParams(d=2)
    >>> gamma(p, 1, 1, 0)
    -1
    >>> gamma(p, 1, 0, 5)
    5
    """
    _check_scale(p, k, lowest=1)
    if j < 0:
        raise ScaleRangeError("lift must be non-negative, got %r" % j)
    _check_kappa(p, k + j)
    for s in range(k, k + j):
        tau = tau // time_ratio(p, s) - 1
    return tau


def descendant_range(p, c, k2):
    """Index ranges (inclusive) of the scale-k2 descendants of cell c.

    Returns (per-axis spatial ranges, time range).
    """
    if k2 > c.k or k2 < 1:
        raise ScaleRangeError("descendant scale %r must lie in [1, %d]" % (k2, c.k))
    ratio = space_unit(p, c.k) // space_unit(p, k2)
    spatial = tuple((a * ratio, (a + 1) * ratio - 1) for a in c.i)
    lo = hi = c.tau
    for s in range(c.k - 1, k2 - 1, -1):
        R = time_ratio(p, s)
        lo, hi = (lo + 1) * R, (hi + 2) * R - 1
    return spatial, (lo, hi)


# Per-axis interval arithmetic.  Every function takes an index that may be an
# int or an integer (object) array and returns (lo, hi) in lattice units.

def _base_radius(p, k):
    return p.eta * p.m * p.n * (k + 1) ** 3


def _axis_cube(p, k, a):
    u = space_unit(p, k)
    return a * u, (a + 1) * u


def _axis_base(p, k, a, mult=1):
    u = space_unit(p, k)
    b = mult * _base_radius(p, k)
    return (a - b) * u, (a + 1 + b) * u


def _axis_extended(p, k, a):
    if k < 1:
        raise ScaleRangeError("extended cubes need k >= 1")
    u = space_unit(p, k)
    reach = _base_radius(p, k - 1) * space_unit(p, k - 1)
    return a * u - reach, (a + 1) * u + reach


def _axis_super(p, k, a):
    if k != 1:
        raise GeometryError("super cubes exist at scale 1 only")
    u = space_unit(p, 1)
    return a * u, (a + p.eta) * u


def _axis_support(p, k, a, extended=False):
    q = a // space_ratio(p, k)
    U = space_unit(p, k + 1)
    if extended:
        return (q - 3 * p.m - 1) * U, (q + 3 * p.m + 2) * U
    return (q - p.m) * U, (q + p.m + 1) * U


SPACE_KINDS = {
    "cube": _axis_cube,
    "base": _axis_base,
    "influence": lambda p, k, a: _axis_base(p, k, a, mult=2),
    "extended": _axis_extended,
    "super": _axis_super,
}


def _time_interval(p, k, tau):
    v = time_unit(p, k)
    return tau * v, (tau + 1) * v


def _time_influence(p, k, tau):
    g = tau // time_ratio(p, k) - 1
    upper = max(p.eta, 2) if k == 1 else 2
    return g * time_unit(p, k + 1), (tau + upper) * time_unit(p, k)


def _time_support(p, k, tau):
    g = tau // time_ratio(p, k) - 1
    V = time_unit(p, k + 1)
    return (g - 3) * V, (g + 6) * V


def _time_extended_support(p, k, tau):
    g = tau // time_ratio(p, k) - 1
    V = time_unit(p, k + 1)
    return (g - 12) * V, (g + 15) * V


TIME_KINDS = {
    "interval": _time_interval,
    "influence": _time_influence,
    "support": _time_support,
    "extended_support": _time_extended_support,
}


class Box(object):
    """Closed integer box; ``unit`` converts lattice units to lengths or times."""

    def __init__(self, lo, hi, unit=1.0):
        self.lo = tuple(lo)
        self.hi = tuple(hi)
        self.unit = unit
        if len(self.lo) != len(self.hi) or any(a > b for a, b in zip(self.lo, self.hi)):
            raise GeometryError("malformed box %r, %r" % (self.lo, self.hi))

    def contains(self, other):
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def intersects(self, other):
        return all(a <= d and c <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def sides(self):
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    def real(self):
        return (np.array(self.lo, dtype=float) * self.unit,
                np.array(self.hi, dtype=float) * self.unit)

    def __eq__(self, other):
        return isinstance(other, Box) and (self.lo, self.hi) == (other.lo, other.hi)

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "%s(%r, %r)" % (self.__class__.__name__, self.lo, self.hi)


class TimeInterval(Box):
    def __init__(self, lo, hi, unit=1.0):
        Box.__init__(self, (lo,), (hi,), unit)

    @property
    def start(self):
        return self.lo[0]

    @property
    def end(self):
        return self.hi[0]


class SpaceTimeRegion(Box):
    """Box x TimeInterval as one (d+1)-dimensional box; the last axis is time."""

    def __init__(self, box, interval):
        self.box = box
        self.interval = interval
        Box.__init__(self, box.lo + interval.lo, box.hi + interval.hi)


def region(p, c, kind="cube"):
    """Spatial region of cell c in units of ell_0.

    >>> p = ScaleParams(d=2)
    >>> region(p, Cell(1, (0, 0), 0))
    Box((0, 0), (28, 28))
    """
    if kind not in SPACE_KINDS:
        raise GeometryError("unknown region kind %r" % kind)
    _check_scale(p, c.k)
    if len(c.i) != p.d:
        raise GeometryError("cube index %r is not %d-dimensional" % (c.i, p.d))
    bounds = [SPACE_KINDS[kind](p, c.k, a) for a in c.i]
    return Box([b[0] for b in bounds], [b[1] for b in bounds], p.ell / p.m)


def time_region(p, c, kind="interval"):
    if kind not in TIME_KINDS:
        raise GeometryError("unknown time region kind %r" % kind)
    _check_scale(p, c.k, lowest=1)
    if kind != "interval":
        _check_kappa(p, c.k + 1)
    lo, hi = TIME_KINDS[kind](p, c.k, c.tau)
    return TimeInterval(lo, hi, p.beta)


def cell_region(p, c):
    return SpaceTimeRegion(region(p, c), time_region(p, c))


def influence_region(p, c):
    return SpaceTimeRegion(region(p, c, "influence"), time_region(p, c, "influence"))


def support(p, c, extended=False):
    _check_scale(p, c.k, lowest=1)
    _check_kappa(p, c.k + 1)
    bounds = [_axis_support(p, c.k, a, extended) for a in c.i]
    box = Box([b[0] for b in bounds], [b[1] for b in bounds], p.ell / p.m)
    return SpaceTimeRegion(box, time_region(p, c, "extended_support" if extended else "support"))


def lift(p, c, k):
    """The scale-k ancestor of c."""
    if k < c.k:
        raise ScaleRangeError("cannot lift scale %d to %d" % (c.k, k))
    return Cell(k, pi(p, c.k, k - c.k, c.i), gamma(p, c.k, k - c.k, c.tau))


def adjacent(p, a, b):
    if a.k < b.k:
        a, b = b, a
    if a.k == b.k and a == b:
        return False
    b = lift(p, b, a.k)
    return (max(abs(x - y) for x, y in zip(a.i, b.i)) <= 1
            and abs(a.tau - b.tau) <= 1)


def well_separated(p, a, b):
    return (not support(p, b).contains(cell_region(p, a))
            and not support(p, a).contains(cell_region(p, b)))


def support_adjacent(p, a, b):
    return support(p, a, extended=True).intersects(support(p, b, extended=True))


def relation(p, a, b):
    """Adjacency, well separation and support adjacency of two cells.

    >>> p = ScaleParams(d=2, kappa=3)
    >>> relation(p, Cell(1, (0, 0), 0), Cell(1, (1, 0), 0))
    Relation(adjacent=True, well_separated=False, support_adjacent=True)
    """
    return Relation(adjacent(p, a, b), well_separated(p, a, b), support_adjacent(p, a, b))


def neighbors(c):
    """The 3^(d+1) - 1 same-scale neighbours of c."""
    for delta in itertools.product((-1, 0, 1), repeat=len(c.i) + 1):
        if any(delta):
            yield Cell(c.k, tuple(a + e for a, e in zip(c.i, delta[:-1])), c.tau + delta[-1])


def log_psi(p, k, nu_term=None):
    if k < 1:
        raise ScaleRangeError("psi needs k >= 1")
    if k == 1:
        value = 2 * math.log(p.eps) + math.log(p.lam) + p.d * math.log(p.ell) if p.lam > 0 else -math.inf
        if nu_term is not None:
            if nu_term < 0:
                raise GeometryError("nu_term must be non-negative")
            value = min(value, math.log(nu_term) if nu_term > 0 else -math.inf)
        return value
    if p.lam == 0:
        return -math.inf
    return (2 * math.log(p.eps) + math.log(p.lam) + p.d * log_ell(p, k - 1)
            - 4 * math.log(k + 1))


def psi(p, k, nu_term=None):
    """Per-scale weight eps^2 lam ell_{k-1}^d / (k+1)^4; psi_1 takes the smaller branch.

    >>> p = ScaleParams(d=2, eps=0.5, lam=4, ell=1)
    >>> abs(psi(p, 2) - 4.0 / 81) < 1e-15
    True
    """
    return _finite_exp(log_psi(p, k, nu_term), "psi", k)


def weight_ratio(p, j):
    """psi_j / psi~_2 as an exact rational, j >= 2."""
    if j < 2:
        raise ScaleRangeError("weight_ratio needs j >= 2")
    return Fraction(81 * p.m ** ((j - 2) * p.d) * math.factorial(j - 1) ** (3 * p.d), (j + 1) ** 4)


def _weight_integer(p, j):
    if j == 2:
        return 1
    return (2 * p.m ** ((j - 2) * p.d) * math.factorial(j - 1) ** (3 * p.d - 3)
            * math.factorial(j - 2) ** 2 * math.factorial(j - 3))


def _log_weight_integer(p, j):
    if j == 2:
        return 0.0
    return (math.log(2) + (j - 2) * p.d * math.log(p.m) + (3 * p.d - 3) * math.lgamma(j)
            + 2 * math.lgamma(j - 1) + math.lgamma(j - 2))


def psi_tilde(p, j):
    """psi~_j = b_j psi~_2 with b_j a positive integer.

    >>> p = ScaleParams(d=2)
    >>> psi_tilde(p, 4).b == 1728 * p.m ** 4
    True
    """
    if j < 2:
        raise ScaleRangeError("psi_tilde needs j >= 2")
    psi2 = psi(p, 2) if p.lam > 0 else 0.0
    log_psi2 = log_psi(p, 2)
    log_value = _log_weight_integer(p, j) + log_psi2
    if j > EXACT_WEIGHT_LIMIT:
        log.debug("b_%d not formed exactly", j)
        return TildeWeight(None, psi2, log_value, False)
    return TildeWeight(_weight_integer(p, j), psi2, log_value, True)


def support_diameter(p, k):
    ell_next = math.exp(log_ell(p, k + 1))
    beta_next = math.exp(log_beta(p, k + 1))
    return 3 * (2 * p.m + 1) * ell_next * math.sqrt(p.d) + 27 * beta_next


def phi_shape(p, j, j2):
    """Growth shape the support-adjacent count is compared against (j >= j2)."""
    return p.m ** ((p.d + 2) * (j - j2 + 2)) * j ** (4 * p.d + 7)


def chi_formula(p, j):
    return (27 * 3 ** p.d * p.m ** (p.d + 2) * (2 * p.m + 1) ** p.d
            * j ** 2 * (j + 1) ** (3 * p.d + 4))


def _count_parents(ok, lo, hi):
    return sum(1 for q in range(lo, hi + 1) if ok(q))


def count_chi(p, j):
    """Number of scale-j cells whose extended support contains R_1(0, 0)."""
    _check_kappa(p, j + 1)
    cube = _axis_cube(p, 1, 0)
    U = space_unit(p, j + 1)
    reach = 3 * p.m + 4 + (cube[1] // U)

    def space_ok(q):
        return (q - 3 * p.m - 1) * U <= cube[0] and cube[1] <= (q + 3 * p.m + 2) * U

    V = time_unit(p, j + 1)

    def time_ok(g):
        return (g - 12) * V <= 0 and 1 <= (g + 15) * V

    per_space = _count_parents(space_ok, -reach, reach) * space_ratio(p, j)
    per_time = _count_parents(time_ok, -20, 20) * time_ratio(p, j)
    return per_space ** p.d * per_time


def _default_reach(p, j, j2):
    u2 = space_unit(p, j2)
    span = (3 * p.m + 2) * (space_unit(p, j + 1) + space_unit(p, j2 + 1))
    space = 2 * span // u2 + 2 * space_ratio(p, j2) + 2
    v2 = time_unit(p, j2)
    tspan = 30 * (time_unit(p, j + 1) + time_unit(p, j2 + 1))
    time = 2 * tspan // v2 + 2 * time_ratio(p, j2) + 2
    return space, time


def count_support_adjacent(p, j, j2, window=None, anchor=None, max_axis=10 ** 7):
    """Count scale-j2 cells that are support adjacent to and well separated
    from a fixed scale-j cell.

    ``window`` is ((lo, hi), (lo, hi)): scale-j2 index offsets on every spatial
    axis and on time, measured from the scale-j2 cell holding the anchor's
    corner.  By default it covers the full extended-support reach.
    The count factorises over axes by inclusion-exclusion.
    """
    _check_kappa(p, j + 1)
    _check_kappa(p, j2 + 1)
    if anchor is None:
        anchor = Cell(j, (0,) * p.d, 0)
    if window is None:
        space, time = _default_reach(p, j, j2)
        window = ((-space, space), (-time, time))
    (slo, shi), (tlo, thi) = window
    if (shi - slo + 1) > max_axis or (thi - tlo + 1) > max_axis:
        raise WindowError("window %r is too large to enumerate" % (window,))
    if shi < slo or thi < tlo:
        return 0

    totals = [1, 1, 1, 1]
    su = space_unit(p, j) // space_unit(p, min(j, j2))
    sd = space_unit(p, j2) // space_unit(p, min(j, j2))
    tu = time_unit(p, j) // time_unit(p, min(j, j2))
    td = time_unit(p, j2) // time_unit(p, min(j, j2))
    axes = []
    for a in anchor.i:
        c = a * su // sd
        axes.append((a, np.arange(c + slo, c + shi + 1, dtype=object), "space"))
    c = anchor.tau * tu // td
    axes.append((anchor.tau, np.arange(c + tlo, c + thi + 1, dtype=object), "time"))
    for a, idx, what in axes:
        if what == "space":
            cube_a = _axis_cube(p, j, a)
            sup_a = _axis_support(p, j, a)
            ext_a = _axis_support(p, j, a, extended=True)
            cube_b = _axis_cube(p, j2, idx)
            sup_b = _axis_support(p, j2, idx)
            ext_b = _axis_support(p, j2, idx, extended=True)
        else:
            cube_a = _time_interval(p, j, a)
            sup_a = _time_support(p, j, a)
            ext_a = _time_extended_support(p, j, a)
            cube_b = _time_interval(p, j2, idx)
            sup_b = _time_support(p, j2, idx)
            ext_b = _time_extended_support(p, j2, idx)
        sa = (ext_a[0] <= ext_b[1]) & (ext_b[0] <= ext_a[1])
        c1 = (sup_b[0] <= cube_a[0]) & (cube_a[1] <= sup_b[1])
        c2 = (sup_a[0] <= cube_b[0]) & (cube_b[1] <= sup_a[1])
        totals[0] *= int(np.count_nonzero(sa))
        totals[1] *= int(np.count_nonzero(sa & c1))
        totals[2] *= int(np.count_nonzero(sa & c2))
        totals[3] *= int(np.count_nonzero(sa & c1 & c2))
    return totals[0] - totals[1] - totals[2] + totals[3]


# Exhaustive geometry checks.  Cells at one scale are held as object arrays so
# the lattice arithmetic stays exact at every magnitude.

def _window_cells(p, k, half_i, half_tau):
    rng = range(-half_i, half_i + 1)
    cells = [Cell(k, i, tau) for i in itertools.product(rng, repeat=p.d)
             for tau in range(-half_tau, half_tau + 1)]
    idx = np.array([c.i for c in cells], dtype=object).reshape(len(cells), p.d)
    tau = np.array([c.tau for c in cells], dtype=object)
    return cells, idx, tau


def _boxes(p, k, idx, tau, space_fn, time_fn):
    """(lo, hi) object arrays of shape (N, d+1)."""
    lo = np.empty((idx.shape[0], p.d + 1), dtype=object)
    hi = np.empty_like(lo)
    for a in range(p.d):
        lo[:, a], hi[:, a] = space_fn(p, k, idx[:, a])
    lo[:, p.d], hi[:, p.d] = time_fn(p, k, tau)
    return lo, hi


def _contains(outer, inner):
    (olo, ohi), (ilo, ihi) = outer, inner
    ok = (olo[:, None, :] <= ilo[None, :, :]) & (ihi[None, :, :] <= ohi[:, None, :])
    return ok.all(axis=2).astype(bool)


def _intersects(first, second):
    (alo, ahi), (blo, bhi) = first, second
    ok = (alo[:, None, :] <= bhi[None, :, :]) & (blo[None, :, :] <= ahi[:, None, :])
    return ok.all(axis=2).astype(bool)


def _region_tables(p, k, idx, tau):
    tables = {
        "R": _boxes(p, k, idx, tau, _axis_cube, _time_interval),
        "inf": _boxes(p, k, idx, tau, lambda p, k, a: _axis_base(p, k, a, 2), _time_influence),
        "sup": _boxes(p, k, idx, tau, _axis_support, _time_support),
        "ext": _boxes(p, k, idx, tau, lambda p, k, a: _axis_support(p, k, a, True),
                      _time_extended_support),
    }
    return tables


def _check(name, ok):
    ok = np.asarray(ok, dtype=bool)
    failures = int(ok.size - np.count_nonzero(ok))
    if failures:
        log.warning("%s: %d of %d cases failed", name, failures, ok.size)
    return Check(name, failures == 0, int(ok.size), failures)


def check_nested_cubes(p, k_max, half_i):
    oks = []
    rng = np.arange(-half_i, half_i + 1, dtype=object)
    for k in range(0, k_max):
        lo, hi = _axis_base(p, k, rng)
        elo, ehi = _axis_extended(p, k + 1, pi(p, k, 1, rng))
        oks.append((elo <= lo) & (hi <= ehi))
    return _check("nested_cubes", np.concatenate(oks))


def check_super_cube(p, half_i):
    rng = np.arange(-half_i, half_i + 1, dtype=object)
    slo, shi = _axis_super(p, 1, rng)
    elo, ehi = _axis_extended(p, 1, rng)
    return _check("extended_contains_super", (elo <= slo) & (shi <= ehi))


def check_influence_in_support(p, k_max, half_tau):
    oks = []
    rng = np.arange(-half_tau, half_tau + 1, dtype=object)
    for k in range(1, k_max + 1):
        ilo, ihi = _time_influence(p, k, rng)
        slo, shi = _time_support(p, k, rng)
        oks.append((slo <= ilo) & (ihi <= shi))
    return _check("time_influence_in_support", np.concatenate(oks))


def check_pairs(p, k_max, half_i, half_tau):
    """Disjoint-influence and support-propagation laws over all cell pairs."""
    tables = {}
    for k in range(1, k_max + 1):
        cells, idx, tau = _window_cells(p, k, half_i, half_tau)
        tables[k] = _region_tables(p, k, idx, tau)
    disjoint, propagate = [], []
    for k in range(1, k_max + 1):
        for k2 in range(1, k + 1):
            big, small = tables[k], tables[k2]
            inside = _contains(big["sup"], small["inf"])
            meets = _intersects(big["inf"], small["inf"])
            disjoint.append((inside | ~meets).ravel())
            sup_meet = _intersects(big["sup"], small["sup"])
            sup_in_ext = _contains(big["ext"], small["sup"])
            propagate.append((~sup_meet | sup_in_ext).ravel())
    return [_check("influence_disjoint_outside_support", np.concatenate(disjoint)),
            _check("support_propagation", np.concatenate(propagate))]


def check_descendants(p, k_max, half_i, half_tau):
    """Descendants of a cell, and their neighbours, lie in its support."""
    oks = []
    for k in range(1, k_max + 1):
        cells, _, _ = _window_cells(p, k, half_i, half_tau)
        for c in cells:
            sup = support(p, c)
            for k2 in range(1, k + 1):
                spatial, (tlo, thi) = descendant_range(p, c, k2)
                u, v = space_unit(p, k2), time_unit(p, k2)
                for grow in (0, 1):
                    lo = tuple((a - grow) * u for a, _ in spatial) + ((tlo - grow) * v,)
                    hi = tuple((b + 1 + grow) * u for _, b in spatial) + ((thi + 1 + grow) * v,)
                    oks.append(sup.contains(Box(lo, hi)))
    return _check("descendants_in_support", oks)


def check_composition(p, k_max, half):
    oks = []
    rng = np.arange(-half, half + 1, dtype=object)
    for k in range(0, k_max + 1):
        for j in range(0, k_max - k + 1):
            direct = pi(p, k, j, rng)
            for j1 in range(0, j + 1):
                oks.append(direct == pi(p, k + j1, j - j1, pi(p, k, j1, rng)))
            if k >= 1:
                direct = gamma(p, k, j, rng)
                for j1 in range(0, j + 1):
                    oks.append(direct == gamma(p, k + j1, j - j1, gamma(p, k, j1, rng)))
    return _check("hierarchy_composition", np.concatenate(oks))


def check_scale_laws(p, k_max=60):
    oks = []
    for k in range(1, k_max + 1):
        oks.append(time_unit(p, k + 1) == time_unit(p, k) * p.m ** 2 * k ** 2 * (k + 1) ** 4)
        oks.append(space_unit(p, k + 1) == space_unit(p, k) * p.m * (k + 1) ** 3)
        if k >= 2:
            oks.append(sum(time_unit(p, i) for i in range(2, k + 1)) <= 2 * time_unit(p, k))
        oks.append(Fraction(repr(epsilon_k(p, k))) >= Fraction(repr(p.eps)) / 4)
    return _check("scale_laws", oks)


def check_weights(p, j_max=60):
    oks = []
    for j in range(2, j_max + 1):
        ratio = weight_ratio(p, j)
        b = _weight_integer(p, j)
        oks.append(b <= ratio <= 41 * b)
    return _check("weight_bracket", oks)


def check_chi(p, j_max):
    return _check("chi_count", [count_chi(p, j) == chi_formula(p, j) for j in range(1, j_max + 1)])


def verify_tessellation(p, k_max=3, half_i=3, half_tau=3, composition_half=100):
    """Run the deterministic geometry suite; returns a list of Check results."""
    q = p.replace(kappa=max(p.kappa, k_max + 1))
    log.info("verifying tessellation d=%d m=%d up to k=%d", q.d, q.m, k_max)
    checks = [
        check_nested_cubes(q, k_max, half_i),
        check_super_cube(q, half_i),
        check_influence_in_support(q, k_max, half_tau),
    ]
    checks.extend(check_pairs(q, k_max, half_i, half_tau))
    checks.append(check_descendants(q, k_max, half_i, half_tau))
    checks.append(check_composition(q, k_max, composition_half))
    checks.append(check_scale_laws(q))
    checks.append(check_weights(q))
    checks.append(check_chi(q, k_max))
    return checks
