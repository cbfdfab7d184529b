# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Coupling a sparser Poisson process into the nodes of a dense, moving one.

Nodes move for time ``delta`` as Brownian motions conditioned to stay in the
cube of side ``3 M`` around their start.  ``g_subdensity`` is a translation
invariant subdensity below that law for every start perturbed inside
``Q_{m_sep}``; ``couple`` uses it to let paired nodes land on the same spot.
"""

import math
from collections import namedtuple

import numpy as np
from scipy import integrate, stats

from . import bounds
from .bounds import PreconditionError
from .mobility import sample_confined, sample_ppp
from .rng import stream
from .tessellation import GeometryError
from .utils import run_replicas, write_json

import logging
log = logging.getLogger(__name__)

CouplingResult = namedtuple("CouplingResult", "xi phi_delta success transcript")

CouplingReport = namedtuple(
    "CouplingReport", "estimate subset_ok xi_counts phi0_counts rows dispersion independence")


def reflection_factor(d, delta, M):
    """(max(1 - 2d exp(-3M^2 / 2 delta), 0), clamped).

    >>> reflection_factor(1, 1.0, 4.0)[1]
    False
    >>> reflection_factor(3, 1.0, 0.5)
    (0.0, True)
    """
    f = 1.0 - 2 * d * math.exp(-3.0 * M ** 2 / (2.0 * delta))
    if f < 0:
        return 0.0, True
    return f, False


def _gauss(sq, delta, d):
    return np.exp(-sq / (2.0 * delta)) / (2 * math.pi * delta) ** (d / 2.0)


def f_delta_lower(y, delta, M):
    """Lower bound on f_delta(y) P(F_delta(3M)) from the reflection principle."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    factor, clamped = reflection_factor(d, delta, M)
    if clamped:
        log.debug("reflection factor clamped at 0 (d=%d, delta=%g, M=%g)", d, delta, M)
    return _gauss(np.sum(y ** 2, axis=-1), delta, d) * factor


def f_delta_product_lower(y, delta, M):
    """The per-coordinate form of the reflection bound, each factor floored at 0."""
    y = np.asarray(y, dtype=float)
    sd = math.sqrt(delta)
    pdf = stats.norm.pdf
    factors = pdf(y, scale=sd) - pdf(3 * M - y, scale=sd) - pdf(3 * M + y, scale=sd)
    return np.prod(np.maximum(factors, 0.0), axis=-1)


def f_delta_exact(y, delta, z):
    """Density at y of B(delta) given that B never leaves Q_z on [0, delta]."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    a = z / 2.0
    survive = bounds.escape_free_probability(delta, a) ** d
    if survive <= 0:
        raise PreconditionError("confinement in Q_%g over %g has zero probability" % (z, delta))
    return np.prod(bounds.killed_density(y, delta, a), axis=-1) / survive


def indistinguishable_regime(d, m_sep, xi):
    """Smallest (delta, M) for which g is (xi, m_sep)-indistinguishable.

    >>> indistinguishable_regime(1, 1.0, 0.25)[0]
    16.0
    """
    delta = d ** 3 * m_sep ** 2 / float(xi) ** 2
    return delta, math.sqrt(8 * delta * math.log(8.0 * d / xi))


def check_regime(d, delta, M, m_sep, xi):
    if not 0 < xi < 1:
        raise PreconditionError("xi must lie in (0, 1), got %r" % xi)
    need_delta, need_M = indistinguishable_regime(d, m_sep, xi)
    if delta < need_delta * (1 - 1e-12):
        raise PreconditionError("delta=%g below d^3 m^2 / xi^2 = %g" % (delta, need_delta))
    if M < need_M * (1 - 1e-12):
        raise PreconditionError("M=%g below sqrt(8 delta log(8d/xi)) = %g" % (M, need_M))


def g_subdensity(z, delta, M, m_sep, xi=None, check=True):
    """The indistinguishable subdensity, zero outside Q_M.

    With ``check`` and a slack ``xi`` the parameters must lie in the regime
    where the mass bound holds.
    """
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    if check and xi is not None:
        check_regime(d, delta, M, m_sep, xi)
    rho = m_sep * math.sqrt(d) / 2.0
    factor, _ = reflection_factor(d, delta, M)
    norm = np.sqrt(np.sum(z ** 2, axis=-1))
    inside = np.all(np.abs(z) <= M / 2.0, axis=-1)
    return np.where(inside, _gauss((norm + rho) ** 2, delta, d) * factor, 0.0)


def g_mass(d, delta, M, m_sep, side):
    """Integral of g over Q_side by quadrature on one orthant."""
    if d > 3:
        raise PreconditionError("quadrature is limited to d <= 3, got d=%d" % d)
    h = min(side, M) / 2.0
    if h <= 0:
        return 0.0

    def density(*z):
        return float(g_subdensity(np.array(z), delta, M, m_sep, check=False))
    value, _ = integrate.nquad(density, [(0.0, h)] * d, opts={"epsabs": 1e-9})
    return 2 ** d * value


def verify_indistinguishable(d, delta, M, m_sep, xi, n_x=5, n_z=None,
                             normalization="unit", g=None):
    """Check both clauses of indistinguishability on a grid and by quadrature.

    The domination clause compares g(z) with a lower bound on f_delta(z - x)
    for x on an ``n_x``-point grid of Q_{m_sep} and z on an ``n_z``-point grid
    of Q_M.  ``unit`` normalization uses the reflection bound with P(F) <= 1,
    ``exact`` the exact conditioned density.  ``g`` replaces the subdensity
    (a callable on arrays of shape (..., d)).  Returns (passed, reports).
    """
    if n_z is None:
        n_z = 41 if d == 1 else 21
    if g is None:
        def g(z):
            return g_subdensity(z, delta, M, m_sep, check=False)
    try:
        check_regime(d, delta, M, m_sep, xi)
    except PreconditionError as e:
        log.warning("outside the indistinguishable regime: %s", e)
    xs = np.linspace(-m_sep / 2.0, m_sep / 2.0, n_x)
    zs = np.linspace(-M / 2.0, M / 2.0, n_z)
    x = np.stack(np.meshgrid(*[xs] * d, indexing="ij"), axis=-1).reshape(-1, d)
    z = np.stack(np.meshgrid(*[zs] * d, indexing="ij"), axis=-1).reshape(-1, d)
    diff = z[:, None, :] - x[None, :, :]
    if normalization == "unit":
        lower = f_delta_lower(diff, delta, M)
    elif normalization == "exact":
        lower = f_delta_exact(diff, delta, 3 * M)
    else:
        raise ValueError("unknown normalization %r" % normalization)
    values = np.broadcast_to(np.asarray(g(z), dtype=float)[:, None], lower.shape)
    gaps = lower - values
    worst = int(np.argmin(gaps))
    zi, xi_ = np.unravel_index(worst, gaps.shape)
    inputs = {"d": d, "delta": delta, "M": M, "m_sep": m_sep, "xi": xi}
    domination = bounds._report("domination", dict(inputs, z=z[zi].tolist(), x=x[xi_].tolist()),
                                float(lower[zi, xi_]), float(values[zi, xi_]), "upper",
                                tol=1e-12 * float(np.max(values)))
    side = M - m_sep
    if side <= 0:
        mass = 0.0
    elif d == 1:
        mass = 2 * integrate.quad(lambda t: float(g(np.array([t]))), 0.0, side / 2.0,
                                  epsabs=1e-9)[0]
    else:
        mass = 2 ** d * integrate.nquad(lambda *t: float(g(np.array(t))),
                                        [(0.0, side / 2.0)] * d, opts={"epsabs": 1e-9})[0]
    integral = bounds._report("integral", inputs, 1.0 - xi, mass, "lower")
    reports = [domination, integral]
    for r in reports:
        if not r.passed:
            log.warning("%s clause fails: margin %g", r.name, r.margin)
    return all(r.passed for r in reports), reports


class CouplingParams(object):
    """Geometry and intensities of one coupling.

    S = Q_K is tessellated into subcubes of side ``ell`` each holding at
    least ``beta ell^d`` nodes; the coupled process lives on S' = Q_{K_inner}.
    ``M`` and ``m_sep`` default to K - K_inner + 2 sqrt(d) ell and
    2 sqrt(d) ell, and nodes are confined to Q_{3M} around their start.
    """

    def __init__(self, d=1, delta=16.0, ell=1.0, K=29.0, K_inner=3.0, eps=0.5, beta=150.0,
                 M=None, m_sep=None, xi=None, c1=1.0, c2=1.0):
        self.d = int(d)
        self.delta = float(delta)
        self.ell = float(ell)
        self.K = float(K)
        self.K_inner = float(K_inner)
        self.eps = float(eps)
        self.beta = float(beta)
        self.c1 = float(c1)
        self.c2 = float(c2)
        if not self.K > self.K_inner > 0:
            raise GeometryError("need K > K_inner > 0, got K=%g, K_inner=%g" % (self.K, self.K_inner))
        if self.ell <= 0 or self.delta <= 0:
            raise GeometryError("ell and delta must be positive")
        if not 0 < self.eps < 1:
            raise PreconditionError("eps must lie in (0, 1), got %r" % eps)
        cells = self.K / self.ell
        if abs(cells - round(cells)) > 1e-9:
            raise GeometryError("K=%g is not a multiple of ell=%g" % (self.K, self.ell))
        self.cells_per_side = int(round(cells))
        self.gamma = math.sqrt(self.d) * self.ell
        self.M = float(M) if M is not None else self.R + 2 * self.gamma
        self.m_sep = float(m_sep) if m_sep is not None else 2 * self.gamma
        self.xi = float(xi) if xi is not None else self.eps / 2.0
        self._psi = None

    @property
    def R(self):
        return self.K - self.K_inner

    @property
    def confinement(self):
        return 3 * self.M

    @property
    def psi(self):
        """Mass of g on Q_R."""
        if self._psi is None:
            self._psi = g_mass(self.d, self.delta, self.M, self.m_sep, self.R)
        return self._psi

    @property
    def theta(self):
        """Final thinning probability; above 1 the target intensity is out of reach."""
        if self.psi <= 0:
            return math.inf
        return (1 - self.eps) / ((1 - self.eps / 2.0) * self.psi)

    def check_applied(self):
        """Preconditions of the grid experiment, with c1 and c2 as knobs."""
        problems = []
        if self.delta < self.c1 * self.ell ** 2 / self.eps ** 2:
            problems.append("delta=%g below c1 ell^2 / eps^2 = %g"
                            % (self.delta, self.c1 * self.ell ** 2 / self.eps ** 2))
        reach = self.K - self.c2 * math.sqrt(self.delta * math.log(16.0 * self.d / self.eps))
        if reach <= 0 or self.K_inner > reach:
            problems.append("K_inner=%g exceeds K - c2 sqrt(delta log(16d/eps)) = %g"
                            % (self.K_inner, reach))
        if problems:
            raise PreconditionError("; ".join(problems))

    def as_dict(self):
        return {"d": self.d, "delta": self.delta, "ell": self.ell, "K": self.K,
                "K_inner": self.K_inner, "eps": self.eps, "beta": self.beta, "M": self.M,
                "m_sep": self.m_sep, "xi": self.xi, "c1": self.c1, "c2": self.c2}


def _cell_index(p, x):
    local = np.floor((x + p.K / 2.0) / p.ell).astype(np.int64)
    local = np.clip(local, 0, p.cells_per_side - 1)
    return np.ravel_multi_index(tuple(local.T), (p.cells_per_side,) * p.d) if len(x) else \
        np.zeros(0, np.int64)


def _sample_shared(p, n, rng):
    """n draws from g restricted to Q_R, renormalized."""
    h = p.R / 2.0
    sd = math.sqrt(p.delta)
    rho = p.m_sep * math.sqrt(p.d) / 2.0
    out = np.empty((n, p.d))
    filled = 0
    while filled < n:
        want = 2 * (n - filled) + 16
        x = stats.truncnorm.rvs(-h / sd, h / sd, scale=sd, size=(want, p.d), random_state=rng)
        norm = np.sqrt(np.sum(x ** 2, axis=1))
        keep = x[rng.random(want) < np.exp(-(2 * rho * norm + rho ** 2) / (2 * p.delta))]
        keep = keep[:n - filled]
        out[filled:filled + len(keep)] = keep
        filled += len(keep)
    return out


def _g_tilde(p, x):
    inside = np.all(np.abs(x) <= p.R / 2.0, axis=-1)
    return np.where(inside, g_subdensity(x, p.delta, p.M, p.m_sep, check=False), 0.0)


def couple(phi0, p, rng, transcript_path=None):
    """Construct Xi on S' together with the motion of phi0 over [0, delta].

    On success every row of ``xi`` is literally a row of ``phi_delta``.  The
    transcript records each step and names the step that failed.
    """
    phi0 = np.asarray(phi0, dtype=float).reshape(-1, p.d)
    if len(phi0) and np.any(np.abs(phi0) > p.K / 2.0):
        raise GeometryError("phi0 has nodes outside Q_%g" % p.K)
    n_cells = p.cells_per_side ** p.d
    need = p.beta * p.ell ** p.d
    t = {"params": p.as_dict(), "psi": p.psi, "theta": p.theta, "n_phi0": len(phi0),
         "failed_step": None, "success": False}
    phi_cell = _cell_index(p, phi0)
    phi_counts = np.bincount(phi_cell, minlength=n_cells)
    short = np.flatnonzero(phi_counts < need - 1e-9)
    t["hypothesis"] = not len(short)
    if len(short):
        t["failed_step"] = "hypothesis"
        t["short_cells"] = short.tolist()
        return _finish(CouplingResult(np.zeros((0, p.d)), phi0.copy(), False, t), transcript_path)
    if p.theta > 1:
        t["failed_step"] = "intensity"
        log.warning("psi=%g too small: thinning would need theta=%g > 1", p.psi, p.theta)
        return _finish(CouplingResult(np.zeros((0, p.d)), phi0.copy(), False, t), transcript_path)

    xi0 = sample_ppp(-p.K / 2.0 * np.ones(p.d), p.K / 2.0 * np.ones(p.d),
                     (1 - p.eps / 2.0) * p.beta, rng)
    xi_cell = _cell_index(p, xi0)
    xi_counts = np.bincount(xi_cell, minlength=n_cells)
    t["n_xi0"] = len(xi0)
    over = np.flatnonzero(xi_counts > phi_counts)
    t["domination"] = not len(over)
    if len(over):
        t["failed_step"] = "domination"
        t["failed_cells"] = over.tolist()
        return _finish(CouplingResult(np.zeros((0, p.d)), phi0.copy(), False, t), transcript_path)

    # pair each xi0 node with a distinct phi0 node of its cell, uniformly
    phi_order = np.lexsort((rng.random(len(phi0)), phi_cell))
    phi_start = np.searchsorted(phi_cell[phi_order], np.arange(n_cells))
    xi_order = np.argsort(xi_cell, kind="stable")
    xi_sorted = xi_cell[xi_order]
    rank = np.arange(len(xi0)) - np.searchsorted(xi_sorted, xi_sorted)
    partner = np.empty(len(xi0), dtype=np.int64)
    partner[xi_order] = phi_order[phi_start[xi_sorted] + rank]
    t["pairs"] = len(partner)

    phi_delta = np.empty_like(phi0)
    moved = np.zeros(len(phi0), dtype=bool)
    shared = rng.random(len(xi0)) < p.psi
    t["shared"] = int(shared.sum())

    jump = _sample_shared(p, int(shared.sum()), rng)
    src = partner[shared]
    phi_delta[src] = xi0[shared] + jump
    moved[src] = True
    margin = f_delta_exact(phi_delta[src] - phi0[src], p.delta, p.confinement) - _g_tilde(p, jump)
    violations = int(np.sum(margin < 0))

    rest = partner[~shared]
    anchor = xi0[~shared]
    pending = np.arange(len(rest))
    while len(pending):
        y = phi0[rest[pending]]
        w = y + sample_confined(p.delta, p.confinement, len(pending), rng, p.d)
        f = f_delta_exact(w - y, p.delta, p.confinement)
        g = _g_tilde(p, w - anchor[pending])
        violations += int(np.sum(g > f))
        accept = rng.random(len(pending)) < 1.0 - np.where(f > 0, g / np.where(f > 0, f, 1.0), 1.0)
        phi_delta[rest[pending[accept]]] = w[accept]
        pending = pending[~accept]
    moved[rest] = True

    alone = np.flatnonzero(~moved)
    phi_delta[alone] = phi0[alone] + sample_confined(p.delta, p.confinement, len(alone), rng, p.d)
    t["residual"] = int(len(rest))
    t["unpaired"] = int(len(alone))
    t["domination_violations"] = violations
    t["min_domination_margin"] = float(margin.min()) if len(margin) else None
    if violations:
        t["failed_step"] = "domination_check"
        log.warning("g exceeded the conditioned density at %d points", violations)
        return _finish(CouplingResult(np.zeros((0, p.d)), phi_delta, False, t), transcript_path)

    landed = phi_delta[src]
    inner = np.all(np.abs(landed) <= p.K_inner / 2.0, axis=1)
    keep = inner & (rng.random(len(src)) < p.theta)
    xi = phi_delta[src[keep]]
    t["n_xi"] = len(xi)
    t["subset"] = is_subset(xi, phi_delta)
    t["success"] = t["subset"]
    if not t["subset"]:
        t["failed_step"] = "subset"
    return _finish(CouplingResult(xi, phi_delta, t["success"], t), transcript_path)


def _finish(result, path):
    if path is not None:
        write_json(path, result.transcript)
    return result


def is_subset(xi, phi):
    """Whether every row of xi is bit-for-bit a row of phi."""
    rows = set(map(bytes, np.ascontiguousarray(phi, dtype=float)))
    return all(bytes(row) in rows for row in np.ascontiguousarray(xi, dtype=float))


def grid_phi0(p, rng, extra=0.0):
    """ceil(beta ell^d) uniform nodes per subcube plus Poisson(extra beta ell^d) more."""
    base = int(math.ceil(p.beta * p.ell ** p.d - 1e-9))
    corners = np.stack(np.meshgrid(*[np.arange(p.cells_per_side)] * p.d, indexing="ij"),
                       axis=-1).reshape(-1, p.d)
    counts = base + (rng.poisson(extra * p.beta * p.ell ** p.d, len(corners)) if extra > 0 else 0)
    counts = np.broadcast_to(counts, (len(corners),))
    origin = np.repeat(corners, counts, axis=0) * p.ell - p.K / 2.0
    return origin + p.ell * rng.random(origin.shape)


def _inner_counts(p, x):
    side = int(round(p.K_inner / p.ell)) or 1
    local = np.floor((x + p.K_inner / 2.0) / (p.K_inner / side)).astype(np.int64)
    local = local[np.all((local >= 0) & (local < side), axis=1)]
    flat = np.ravel_multi_index(tuple(local.T), (side,) * p.d) if len(local) else np.zeros(0, np.int64)
    return np.bincount(flat, minlength=side ** p.d)


def dispersion(counts):
    """(mean, variance / mean) of a count sample."""
    counts = np.asarray(counts, dtype=float)
    mean = float(counts.mean()) if len(counts) else 0.0
    if mean <= 0 or len(counts) < 2:
        return mean, math.nan
    return mean, float(counts.var(ddof=1)) / mean


def independence(a, b):
    """Sample correlation of two count vectors; 0 when either is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def couple_grid_experiment(p, replicas, seed=0, threads=None, extra=0.0, transcripts=None):
    """Run ``couple`` on fresh grid-filled phi0 per replica.

    Reports the success rate with a Wilson interval, whether every success
    was an exact subset, the per-replica Xi count in S' and phi0 count there,
    the dispersion of those Xi counts and the binned Xi/phi0 correlation.
    """
    p.check_applied()

    def one(replica):
        phi0 = grid_phi0(p, stream(seed, replica, "phi0"), extra)
        path = None
        if transcripts is not None:
            path = "%s/coupling-%05d.json" % (transcripts, replica)
        result = couple(phi0, p, stream(seed, replica, "couple"), path)
        return phi0, result

    outcomes = run_replicas(one, replicas, threads)
    rows = []
    xi_counts, phi_counts, xi_bins, phi_bins = [], [], [], []
    successes = 0
    subset_ok = True
    for replica, (phi0, result) in enumerate(outcomes):
        t = result.transcript
        rows.append([replica, int(result.success), t["failed_step"] or "", t["n_phi0"],
                     t.get("n_xi0", ""), t.get("n_xi", ""), t["psi"], t["theta"]])
        if not result.success:
            continue
        successes += 1
        subset_ok = subset_ok and is_subset(result.xi, result.phi_delta)
        xi_counts.append(len(result.xi))
        phi_counts.append(int(np.sum(np.all(np.abs(phi0) <= p.K_inner / 2.0, axis=1))))
        xi_bins.extend(_inner_counts(p, result.xi))
        phi_bins.extend(_inner_counts(p, phi0))
    est = bounds.estimate("coupling_success", successes, replicas)
    log.info("coupling success %d/%d (%.3f, CI [%.3f, %.3f])", successes, replicas,
             est.value, est.ci_low, est.ci_high)
    return CouplingReport(est, subset_ok, xi_counts, phi_counts, rows,
                          dispersion(xi_counts), independence(xi_bins, phi_bins))


REPLICA_HEADER = ["replica", "success", "failed_step", "n_phi0", "n_xi0", "n_xi", "psi", "theta"]
