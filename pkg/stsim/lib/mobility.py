# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Poisson node systems moving as independent Brownian motions."""

import math

import numpy as np

from . import bounds
from .rng import stream
from .utils import run_replicas, write_csv

import logging
log = logging.getLogger(__name__)

CHECKED = "checked"
CONSERVATIVE = "conservative"
MODES = (CHECKED, CONSERVATIVE)


class PointProcessError(Exception):
    pass


class HorizonError(Exception):
    pass


class ConfinementError(Exception):
    def __init__(self, message, acceptance):
        Exception.__init__(self, message)
        self.acceptance = acceptance


class SimConfig(object):
    """Simulation box, horizon and sub-stepping of one realization.

    Slices are numbered from ``first_slice`` (negative when the system is
    pre-evolved so that ancestor times exist) and there are ``n_slices`` of
    them, each of length ``beta`` split into ``s`` sub-steps.
    """

    def __init__(self, d=2, lam=1.0, r=1.0, L=5.0, beta=1.0, n_slices=1, s=32,
                 P=None, boundary="padded", seed=0, first_slice=0,
                 variance_rate=1.0, q=3.0, max_nodes=5 * 10 ** 6):
        self.d = int(d)
        self.lam = float(lam)
        self.r = float(r)
        self.L = float(L)
        self.beta = float(beta)
        self.n_slices = int(n_slices)
        self.s = int(s)
        self.boundary = boundary
        self.seed = int(seed)
        self.first_slice = int(first_slice)
        self.variance_rate = float(variance_rate)
        self.q = float(q)
        self.max_nodes = int(max_nodes)
        if self.L <= 0:
            raise PointProcessError("L must be positive, got %r" % L)
        if self.s < 1:
            raise PointProcessError("s must be a positive integer, got %r" % s)
        if self.n_slices < 0:
            raise PointProcessError("n_slices must be non-negative, got %r" % n_slices)
        if boundary not in ("padded", "torus"):
            raise PointProcessError("boundary must be 'padded' or 'torus', got %r" % boundary)
        if P is None:
            P = 0.0 if boundary == "torus" else self.r + 6 * math.sqrt(self.variance_rate * self.duration)
        self.P = float(P)
        if self.P < 0:
            raise PointProcessError("P must be non-negative, got %r" % P)

    @classmethod
    def from_horizon(cls, T, beta, **kwargs):
        n = T / float(beta)
        if abs(n - round(n)) > 1e-9:
            raise HorizonError("horizon %r is not a whole number of slices of %r" % (T, beta))
        return cls(beta=beta, n_slices=int(round(n)), **kwargs)

    @property
    def duration(self):
        return self.n_slices * self.beta

    @property
    def horizon(self):
        return (self.first_slice + self.n_slices) * self.beta

    @property
    def half_width(self):
        return self.L + self.P


class TrajectorySet(object):
    """Node positions at slice boundaries plus per-slice sub-step extremes.

    ``positions[j]`` holds the (unwrapped) positions at the start of slice
    ``first_slice + j``; ``lo[j]``/``hi[j]`` hold the per-coordinate minimum
    and maximum deviation from that position over the sub-steps of the slice.
    """

    def __init__(self, positions, lo, hi, beta, s, first_slice=0, half_width=None,
                 boundary="padded", variance_rate=1.0, q=3.0, substeps=None):
        self.positions = np.asarray(positions, dtype=float)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.beta = float(beta)
        self.s = int(s)
        self.first_slice = int(first_slice)
        self.half_width = half_width
        self.boundary = boundary
        self.variance_rate = float(variance_rate)
        self.q = float(q)
        self.substeps = substeps
        self._excursions = {}
        if self.positions.ndim != 3:
            raise PointProcessError("positions must have shape (slices+1, nodes, d)")
        if self.lo.shape != (self.positions.shape[0] - 1,) + self.positions.shape[1:]:
            raise PointProcessError("deviation records do not match positions")

    @property
    def n_nodes(self):
        return self.positions.shape[1]

    @property
    def d(self):
        return self.positions.shape[2]

    @property
    def n_slices(self):
        return self.positions.shape[0] - 1

    @property
    def last_slice(self):
        """One past the last simulated slice."""
        return self.first_slice + self.n_slices

    @property
    def ids(self):
        return np.arange(self.n_nodes)

    @property
    def bridge_allowance(self):
        return self.q * math.sqrt(self.variance_rate * self.beta / self.s)

    def _row(self, slice_):
        if not self.first_slice <= slice_ <= self.last_slice:
            raise HorizonError("slice %d outside simulated range [%d, %d]"
                               % (slice_, self.first_slice, self.last_slice))
        return slice_ - self.first_slice

    def wrap(self, x):
        if self.boundary != "torus":
            return x
        H = self.half_width
        return np.mod(x + H, 2 * H) - H

    def position(self, slice_):
        return self.wrap(self.positions[self._row(slice_)])

    def substep_positions(self, slice_):
        """Positions at the s+1 sub-step times of one slice, shape (s+1, N, d)."""
        if self.substeps is None:
            raise HorizonError("sub-step positions were not kept")
        row = self._row(slice_)
        if row == self.n_slices:
            raise HorizonError("slice %d has no sub-steps" % slice_)
        return self.wrap(self.substeps[row * self.s:(row + 1) * self.s + 1])

    def excursion(self, a, b):
        """Per-node, per-coordinate (min, max) deviation from the position at
        slice a over slices [a, b)."""
        key = (a, b)
        if key not in self._excursions:
            ra, rb = self._row(a), self._row(b)
            if rb <= ra:
                raise HorizonError("empty slice range [%d, %d)" % (a, b))
            start = self.positions[ra]
            offset = self.positions[ra:rb] - start
            low = np.min(offset + self.lo[ra:rb], axis=0)
            high = np.max(offset + self.hi[ra:rb], axis=0)
            self._excursions[key] = (low, high)
        return self._excursions[key]

    def displacement_mask(self, a, b, z, mode=CHECKED):
        """Nodes whose displacement over slices [a, b) stays in Q_z."""
        if mode not in MODES:
            raise ValueError("unknown displacement mode %r" % mode)
        if math.isinf(z):
            return np.ones(self.n_nodes, dtype=bool)
        limit = z / 2.0
        if mode == CONSERVATIVE:
            limit -= self.bridge_allowance
        if limit < 0:
            return np.zeros(self.n_nodes, dtype=bool)
        low, high = self.excursion(a, b)
        return np.all((high <= limit) & (low >= -limit), axis=1)

    def _grid(self, t):
        steps = t / self.beta * self.s
        step = int(round(steps))
        if abs(steps - step) > 1e-9 * max(1.0, abs(steps)):
            raise HorizonError("time %r is not on the sub-step grid" % t)
        return step

    def displacement_in(self, node, t0, t1, z, mode=CHECKED):
        """Whether node's displacement over [t0, t1] stays in Q_z."""
        s0, s1 = self._grid(t0), self._grid(t1)
        if s1 <= s0:
            raise HorizonError("need t0 < t1, got %r, %r" % (t0, t1))
        if math.isinf(z):
            return True
        if s0 % self.s == 0 and s1 % self.s == 0:
            return bool(self.displacement_mask(s0 // self.s, s1 // self.s, z, mode)[node])
        if self.substeps is None:
            raise HorizonError("times off the slice grid need sub-step positions")
        base = self.first_slice * self.s
        if s0 < base or s1 > self.last_slice * self.s:
            raise HorizonError("interval [%r, %r] outside the simulation" % (t0, t1))
        path = self.substeps[s0 - base:s1 - base + 1, node] - self.substeps[s0 - base, node]
        limit = z / 2.0 - (self.bridge_allowance if mode == CONSERVATIVE else 0.0)
        return bool(np.all(np.abs(path) <= limit))

    def subset(self, mask):
        substeps = None if self.substeps is None else self.substeps[:, mask]
        return TrajectorySet(self.positions[:, mask], self.lo[:, mask], self.hi[:, mask],
                             self.beta, self.s, self.first_slice, self.half_width,
                             self.boundary, self.variance_rate, self.q, substeps)

    def thin(self, keep, rng):
        """Keep each node independently with probability ``keep``."""
        return self.subset(rng.random(self.n_nodes) < keep)

    def with_nodes(self, other):
        """Realization augmented by the nodes of ``other`` (same slicing)."""
        if (other.first_slice, other.n_slices, other.s) != (self.first_slice, self.n_slices, self.s):
            raise PointProcessError("cannot merge trajectories with different slicing")
        substeps = None
        if self.substeps is not None and other.substeps is not None:
            substeps = np.concatenate([self.substeps, other.substeps], axis=1)
        return TrajectorySet(np.concatenate([self.positions, other.positions], axis=1),
                             np.concatenate([self.lo, other.lo], axis=1),
                             np.concatenate([self.hi, other.hi], axis=1),
                             self.beta, self.s, self.first_slice, self.half_width,
                             self.boundary, self.variance_rate, self.q, substeps)

    @classmethod
    def static(cls, points, n_slices, beta, s, first_slice=0, keep_substeps=True, **kwargs):
        """Immobile nodes."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2:
            raise PointProcessError("points must have shape (N, d)")
        positions = np.broadcast_to(points, (n_slices + 1,) + points.shape).copy()
        zeros = np.zeros((n_slices,) + points.shape)
        substeps = None
        if keep_substeps:
            substeps = np.broadcast_to(points, (n_slices * s + 1,) + points.shape).copy()
        return cls(positions, zeros, zeros.copy(), beta, s, first_slice,
                   substeps=substeps, **kwargs)


def sample_ppp(lo, hi, lam, rng, max_nodes=5 * 10 ** 6):
    """Poisson point process of intensity ``lam`` on the box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lam < 0:
        raise PointProcessError("intensity must be non-negative, got %r" % lam)
    if np.any(hi <= lo):
        raise PointProcessError("degenerate box [%s, %s]" % (lo, hi))
    mean = lam * float(np.prod(hi - lo))
    if mean > max_nodes:
        raise PointProcessError("expected %g nodes exceeds the cap of %d" % (mean, max_nodes))
    count = rng.poisson(mean) if mean > 0 else 0
    return lo + (hi - lo) * rng.random((count, lo.size))


def evolve(traj, slices, rng, keep_substeps=None):
    """Advance every node by ``slices`` slices of Brownian motion."""
    if slices == 0:
        return traj
    if keep_substeps is None:
        keep_substeps = traj.substeps is not None
    N, d, s = traj.n_nodes, traj.d, traj.s
    sd = math.sqrt(traj.variance_rate * traj.beta / s)
    positions = [traj.positions]
    lows, highs = [traj.lo], [traj.hi]
    if keep_substeps and traj.substeps is None and traj.n_slices > 0:
        raise HorizonError("cannot start keeping sub-steps part way through a realization")
    pieces = [traj.substeps] if keep_substeps and traj.substeps is not None else []
    current = traj.positions[-1]
    for _ in range(slices):
        path = np.cumsum(rng.normal(0.0, sd, (s, N, d)), axis=0)
        lows.append(np.minimum(path.min(axis=0), 0.0)[None])
        highs.append(np.maximum(path.max(axis=0), 0.0)[None])
        if keep_substeps:
            pieces.append(current + path)
        current = current + path[-1]
        positions.append(current[None])
    substeps = None
    if keep_substeps:
        if traj.substeps is None:
            pieces.insert(0, traj.positions[-1:])
        substeps = np.concatenate(pieces, axis=0)
    return TrajectorySet(np.concatenate(positions, axis=0), np.concatenate(lows, axis=0),
                         np.concatenate(highs, axis=0), traj.beta, traj.s, traj.first_slice,
                         traj.half_width, traj.boundary, traj.variance_rate, traj.q, substeps)


def simulate(cfg, replica=0, keep_substeps=False):
    """Sample the initial PPP on [-L-P, L+P]^d and evolve it over the horizon."""
    H = cfg.half_width
    points = sample_ppp(-H * np.ones(cfg.d), H * np.ones(cfg.d), cfg.lam,
                        stream(cfg.seed, replica, "ppp"), cfg.max_nodes)
    log.debug("replica %d: %d nodes in [-%g, %g]^%d", replica, len(points), H, H, cfg.d)
    traj = TrajectorySet(points[None], np.zeros((0,) + points.shape), np.zeros((0,) + points.shape),
                         cfg.beta, cfg.s, cfg.first_slice, H, cfg.boundary,
                         cfg.variance_rate, cfg.q,
                         points[None].copy() if keep_substeps else None)
    return evolve(traj, cfg.n_slices, stream(cfg.seed, replica, "evolve"), keep_substeps)


class SpatialIndex(object):
    """Uniform grid hash of points with bucket side at least ``bucket``.

    With ``period`` set, coordinates live on the torus [-period/2, period/2)^d.
    """

    def __init__(self, points, bucket, period=None):
        self.points = np.asarray(points, dtype=float).reshape(-1, np.shape(points)[-1])
        self.period = period
        if period is not None:
            self.nb = max(1, int(math.floor(period / float(bucket))))
            self.bucket = period / float(self.nb)
        else:
            self.nb = None
            self.bucket = float(bucket)
        self.buckets = {}
        if len(self.points):
            keys = self._keys(self.points)
            uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
            inverse = np.asarray(inverse).reshape(-1)
            order = np.argsort(inverse, kind="stable")
            splits = np.cumsum(np.bincount(inverse, minlength=len(uniq)))[:-1]
            for key, members in zip(uniq, np.split(order, splits)):
                self.buckets[tuple(int(v) for v in key)] = members

    def _keys(self, x):
        if self.period is not None:
            x = np.mod(x + self.period / 2.0, self.period)
            return np.minimum(np.floor(x / self.bucket).astype(np.int64), self.nb - 1)
        return np.floor(x / self.bucket).astype(np.int64)

    def _offset(self, delta):
        if self.period is not None:
            delta = delta - self.period * np.round(delta / self.period)
        return delta

    def query(self, x, radius):
        """Indices of points within Euclidean distance ``radius`` of x."""
        if not self.buckets:
            return np.zeros(0, dtype=np.int64)
        x = np.asarray(x, dtype=float)
        reach = int(math.ceil(radius / self.bucket))
        center = self._keys(x[None])[0]
        spans = [range(c - reach, c + reach + 1) for c in center]
        if self.period is not None and 2 * reach + 1 >= self.nb:
            spans = [range(self.nb)] * len(center)
        found = []
        seen = set()
        for key in np.array(np.meshgrid(*spans, indexing="ij")).reshape(len(center), -1).T:
            if self.period is not None:
                key = np.mod(key, self.nb)
            key = tuple(int(v) for v in key)
            if key in seen:
                continue
            seen.add(key)
            members = self.buckets.get(key)
            if members is not None:
                found.append(members)
        if not found:
            return np.zeros(0, dtype=np.int64)
        cand = np.concatenate(found)
        dist = np.linalg.norm(self._offset(self.points[cand] - x), axis=1)
        return np.sort(cand[dist <= radius])

    def covered(self, x, radius):
        return len(self.query(x, radius)) > 0


def covered(index, x, r):
    """True iff some indexed node lies within distance r of x."""
    return index.covered(x, r)


def conditioned_increments(n, delta, z, rng, d=1, s=64, variance_rate=1.0,
                           min_acceptance=1e-3, batch=None):
    """Brownian increments over [0, delta] conditioned on the sub-stepped path
    staying in Q_z; returns (samples, acceptance rate)."""
    if z <= 0:
        raise ConfinementError("z must be positive, got %r" % z, 0.0)
    sd = math.sqrt(variance_rate * delta / s)
    if math.isinf(z):
        return rng.normal(0.0, math.sqrt(variance_rate * delta), (n, d)), 1.0
    batch = batch or max(64, 2 * n)
    accepted, tried = [], 0
    total = 0
    while total < n:
        path = np.cumsum(rng.normal(0.0, sd, (s, batch, d)), axis=0)
        ok = np.all(np.abs(path) <= z / 2.0, axis=(0, 2))
        tried += batch
        if ok.any():
            accepted.append(path[-1][ok])
            total += int(ok.sum())
        rate = total / float(tried)
        if tried >= 20 * batch and rate < min_acceptance:
            raise ConfinementError("acceptance rate %.2e below %.2e for z=%g, delta=%g"
                                   % (rate, min_acceptance, z, delta), rate)
    return np.concatenate(accepted)[:n], total / float(tried)


def conditioned_increment(delta, z, rng, d=1, s=64, variance_rate=1.0, min_acceptance=1e-3):
    samples, _ = conditioned_increments(1, delta, z, rng, d, s, variance_rate, min_acceptance)
    return samples[0]


def sample_confined(delta, z, n, rng, d=1):
    """Exact draws from the law of B(delta) given that B stays in Q_z on [0, delta]."""
    a = z / 2.0
    sd = math.sqrt(delta)
    if bounds.escape_free_probability(delta, a) < 1e-6:
        raise ConfinementError("confinement probability too small for z=%g, delta=%g" % (z, delta),
                               bounds.escape_free_probability(delta, a))
    out = np.empty((n, d))
    for axis in range(d):
        filled = 0
        while filled < n:
            y = rng.normal(0.0, sd, 2 * (n - filled) + 16)
            free = np.exp(-y ** 2 / (2 * delta)) / math.sqrt(2 * math.pi * delta)
            ratio = np.where(np.abs(y) < a, bounds.killed_density(y, delta, a) / free, 0.0)
            keep = y[rng.random(y.size) < ratio][:n - filled]
            out[filled:filled + keep.size, axis] = keep
            filled += keep.size
    return out


def dump_trajectories(traj, path):
    """Rows (node_id, t, x_1..x_d) at every stored time."""
    if traj.substeps is not None:
        times = (traj.first_slice + np.arange(traj.substeps.shape[0]) / float(traj.s)) * traj.beta
        stack = traj.wrap(traj.substeps)
    else:
        times = (traj.first_slice + np.arange(traj.positions.shape[0])) * traj.beta
        stack = traj.wrap(traj.positions)
    header = ["node_id", "t"] + ["x_%d" % (a + 1) for a in range(traj.d)]
    rows = ([node, t] + list(stack[row, node])
            for row, t in enumerate(times) for node in range(traj.n_nodes))
    write_csv(path, header, rows)


def interior_counts(cfg, replicas, threads=None):
    """Nodes inside [-L, L]^d at the end of the horizon, one count per replica."""
    def one(replica):
        x = simulate(cfg, replica).position(cfg.first_slice + cfg.n_slices)
        return int(np.sum(np.all(np.abs(x) <= cfg.L, axis=1)))
    return np.array(run_replicas(one, replicas, threads))


def confinement_estimate(d, delta, z, n, seed=0, s=64):
    """(fraction, standard error) of n sub-stepped paths staying in Q_z."""
    rng = stream(seed, "confine", int(round(1000 * z / math.sqrt(delta))), int(round(1000 * delta)), d)
    path = np.cumsum(rng.normal(0.0, math.sqrt(delta / s), (s, n, d)), axis=0)
    rate = float(np.mean(np.all(np.abs(path) <= z / 2.0, axis=(0, 2))))
    return rate, math.sqrt(max(rate * (1 - rate), 1e-12) / n)
