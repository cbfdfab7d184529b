# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Cell indicator processes on a realization and the bad clusters they form.

All counts are read from dense per-scale tables: node positions are binned
into cubes of scale j (through their scale-0 index, so the bins of different
scales nest exactly) and an ok-table (count >= threshold) is turned into
prefix sums, so "every cube inside this box is dense" is one box sum compared
with the box volume.
"""

import itertools
import math
from collections import OrderedDict, namedtuple

import numpy as np

from . import bounds, tessellation as tess
from .graph import CellWindow, bfs_cluster
from .mobility import CHECKED, HorizonError, SimConfig, simulate
from .tessellation import Cell
from .utils import run_replicas, write_csv, write_json

import logging
log = logging.getLogger(__name__)

COUNT = "count"
DETECT = "detect"

ClusterResult = namedtuple("ClusterResult", "cells escaped")


class _CountTable(object):
    """Node counts per scale-j cube over a dense index range, with prefix
    sums of the ok-table."""

    def __init__(self, index, origin, shape, threshold):
        self.origin = np.asarray(origin, dtype=np.int64)
        self.shape = tuple(shape)
        local = index - self.origin
        inside = np.all((local >= 0) & (local < np.array(shape)), axis=1)
        local = local[inside]
        flat = np.ravel_multi_index(tuple(local.T), self.shape) if len(local) else np.zeros(0, np.int64)
        self.counts = np.bincount(flat, minlength=int(np.prod(self.shape))).reshape(self.shape)
        ok = (self.counts >= threshold).astype(np.int64)
        prefix = ok
        for axis in range(ok.ndim):
            prefix = np.cumsum(prefix, axis=axis)
        self.prefix = np.pad(prefix, [(1, 0)] * ok.ndim)

    def count(self, idx):
        local = tuple(int(a - o) for a, o in zip(idx, self.origin))
        if any(v < 0 or v >= n for v, n in zip(local, self.shape)):
            return 0
        return int(self.counts[local])

    def all_ok(self, lo, hi):
        """Whether every cube with lo <= index <= hi passes the threshold."""
        lo = [int(a - o) for a, o in zip(lo, self.origin)]
        hi = [int(b - o) + 1 for b, o in zip(hi, self.origin)]
        if any(a < 0 or b > n for a, b, n in zip(lo, hi, self.shape)):
            return False
        volume = 1
        for a, b in zip(lo, hi):
            volume *= b - a
        total = 0
        for corner in itertools.product((0, 1), repeat=len(lo)):
            point = tuple(hi[a] if c else lo[a] for a, c in enumerate(corner))
            sign = (-1) ** (len(lo) - sum(corner))
            total += sign * int(self.prefix[point])
        return total == volume


class IndicatorGrid(object):
    """Lazily evaluated, memoized indicator fields of one realization.

    ``mode`` picks the scale-1 event E: ``count`` asks for (1-eps) lam ell^d
    nodes in the cube, ``detect`` for one node whose displacement over the
    slice stays in Q_{w ell}.  A ``user`` callable (traj, cell) -> {0, 1}
    replaces E altogether and is trusted to be increasing and restricted to
    the super cell.
    """

    def __init__(self, traj, p, mode=DETECT, disp_mode=CHECKED, user=None, max_tables=16):
        if mode not in (COUNT, DETECT):
            raise ValueError("unknown E mode %r" % mode)
        if traj.d != p.d:
            raise tess.GeometryError("trajectory dimension %d differs from d=%d" % (traj.d, p.d))
        self.traj = traj
        self.p = p
        self.mode = mode
        self.disp_mode = disp_mode
        self.user = user
        self.max_tables = max_tables
        self.memo = {}
        self._tables = OrderedDict()
        self._base_index = {}

    def _ell(self, j):
        return self.p.ell * tess.space_unit(self.p, j) / self.p.m

    def threshold(self, eps_scale, j):
        return (1 - tess.epsilon_k(self.p, eps_scale)) * self.p.lam * self._ell(j) ** self.p.d

    def _scale0(self, slice_):
        if slice_ not in self._base_index:
            x = self.traj.position(slice_)
            self._base_index[slice_] = np.floor(x * self.p.m / self.p.ell).astype(np.int64)
        return self._base_index[slice_]

    def table(self, j, slice_, threshold, interval=None, z=None):
        """Count table of scale-j cubes at ``slice_``; with ``interval`` only
        nodes whose displacement over those slices stays in Q_z count."""
        key = (j, slice_, threshold, interval, z)
        if key in self._tables:
            self._tables.move_to_end(key)
            return self._tables[key]
        index = self._scale0(slice_) // tess.space_unit(self.p, j)
        if interval is not None:
            mask = self.traj.displacement_mask(interval[0], interval[1], z, self.disp_mode)
            index = index[mask]
        H = self.traj.half_width
        if H is None:
            H = float(np.max(np.abs(self.traj.positions))) if self.traj.n_nodes else 1.0
        side = self._ell(j)
        low = int(math.floor(-H / side)) - 1
        size = int(math.ceil(2 * H / side)) + 3
        table = _CountTable(index, (low,) * self.p.d, (size,) * self.p.d, threshold)
        self._tables[key] = table
        while len(self._tables) > self.max_tables:
            self._tables.popitem(last=False)
        return table

    def _memo(self, key, fn):
        if key not in self.memo:
            self.memo[key] = int(fn())
        return self.memo[key]

    def E(self, i, tau):
        i = tuple(i)
        return self._memo(("E", i, tau), lambda: self._E(i, tau))

    def _E(self, i, tau):
        if self.user is not None:
            return self.user(self.traj, Cell(1, i, tau))
        if self.mode == COUNT:
            return self.table(1, tau, self.threshold(1, 1)).count(i) >= self.threshold(1, 1)
        z = self.p.w * self.p.ell
        return self.table(1, tau, 1, (tau, tau + 1), z).count(i) >= 1

    def D(self, k, i, tau):
        i = tuple(i)

        def evaluate():
            r = tess.space_ratio(self.p, k - 1)
            t0 = tau * tess.time_unit(self.p, k)
            table = self.table(k - 1, t0, self.threshold(k, k - 1))
            return table.all_ok([a * r for a in i], [(a + 1) * r - 1 for a in i])
        return self._memo(("D", k, i, tau), evaluate)

    def _dense_box(self, j, lo, hi, eps_scale, a, b, z):
        return self.table(j, a, self.threshold(eps_scale, j), (a, b), z).all_ok(lo, hi)

    def D_ext(self, k, i, tau):
        i = tuple(i)

        def evaluate():
            r = tess.space_ratio(self.p, k - 1)
            b = tess._base_radius(self.p, k - 1)
            v = tess.time_unit(self.p, k)
            z = b * self._ell(k - 1)
            return self._dense_box(k - 1, [a * r - b for a in i], [(a + 1) * r - 1 + b for a in i],
                                   k, tau * v, (tau + 2) * v, z)
        return self._memo(("Dext", k, i, tau), evaluate)

    def D_base(self, k, i, tau):
        if k > self.p.kappa - 1:
            raise tess.ScaleRangeError("D_base needs k <= kappa - 1, got k=%d" % k)
        i = tuple(i)

        def evaluate():
            b = tess._base_radius(self.p, k)
            g = tess.gamma(self.p, k, 1, tau)
            z = b * self._ell(k)
            return self._dense_box(k, [a - b for a in i], [a + b for a in i],
                                   k + 1, g * tess.time_unit(self.p, k + 1),
                                   tau * tess.time_unit(self.p, k), z)
        return self._memo(("Dbase", k, i, tau), evaluate)

    def A_k(self, k, i, tau):
        kappa = self.p.kappa
        if k == 1:
            if kappa == 1:
                return self.E(i, tau)
            return max(self.E(i, tau), 1 - self.D_base(1, i, tau))
        if k == kappa:
            return self.D_ext(k, i, tau)
        return max(self.D_ext(k, i, tau), 1 - self.D_base(k, i, tau))

    def ancestor(self, i, tau, k):
        return tess.pi(self.p, 1, k - 1, tuple(i)), tess.gamma(self.p, 1, k - 1, tau)

    def A(self, i, tau):
        """(A, per-scale vector) for the scale-1 cell (i, tau)."""
        i = tuple(i)
        key = ("A", i, tau)
        if key not in self.memo:
            vector = [self.A_k(k, *self.ancestor(i, tau, k)) for k in range(1, self.p.kappa + 1)]
            self.memo[key] = (int(all(vector)), tuple(vector))
        return self.memo[key]


def indicator_E(traj, p, c, mode=DETECT, disp_mode=CHECKED):
    return IndicatorGrid(traj, p, mode, disp_mode).E(c.i, c.tau)


def density_indicators(traj, p, c, grid=None):
    """(D_k, D^ext_k, D^base_k) for cell c; D^base is None at k = kappa."""
    grid = grid or IndicatorGrid(traj, p)
    base = grid.D_base(c.k, c.i, c.tau) if c.k <= p.kappa - 1 else None
    return grid.D(c.k, c.i, c.tau), grid.D_ext(c.k, c.i, c.tau), base


def compute_A(traj, p, c, grid=None, mode=DETECT):
    grid = grid or IndicatorGrid(traj, p, mode)
    return grid.A(c.i, c.tau)


def sweep_A(grid, cells, pruned=True):
    """A over many scale-1 cells.

    The pruned sweep walks from the top scale down and stops at the first
    ancestor with A_k = 0, so lower scales of a doomed subtree are never
    evaluated.
    """
    cells = [(tuple(i), tau) for i, tau in cells]
    if not pruned:
        return dict(((i, tau), grid.A(i, tau)[0]) for i, tau in cells)
    out = {}
    alive = cells
    for k in range(grid.p.kappa, 0, -1):
        groups = {}
        for i, tau in alive:
            groups.setdefault(grid.ancestor(i, tau, k), []).append((i, tau))
        survivors = []
        for (ai, atau), members in sorted(groups.items()):
            if grid.A_k(k, ai, atau):
                survivors.extend(members)
            else:
                for cell in members:
                    out[cell] = 0
        alive = survivors
    for cell in alive:
        out[cell] = 1
    return out


def bad_cluster(grid, root, use="E", window=None, half_width=3, t_slices=None):
    """K (use="E") or K' (use="A") of the scale-1 cell ``root``."""
    if use not in ("E", "A"):
        raise ValueError("use must be 'E' or 'A', got %r" % use)
    if window is None:
        window = CellWindow.centered(root, half_width, t_slices or 1)
    if use == "E":
        def is_bad(i, tau):
            return grid.E(i, tau) == 0
    else:
        def is_bad(i, tau):
            return grid.A(i, tau)[0] == 0
    cells, touched = bfs_cluster((tuple(root.i), root.tau), is_bad, window)
    return ClusterResult(set(Cell(1, i, tau) for i, tau in cells), touched)


def required_span(p, window, mode=DETECT):
    """(first, last) scale-1 slices every A of the window reads."""
    first, last = window.first, window.last + (1 if mode == DETECT else 0)
    for tau in (window.first, window.last):
        for k in range(2, p.kappa + 1):
            t_k = tess.gamma(p, 1, k - 1, tau)
            v = tess.time_unit(p, k)
            first = min(first, t_k * v)
            last = max(last, (t_k + 2) * v)
        for k in range(1, p.kappa):
            t_k = tess.gamma(p, 1, k - 1, tau)
            g = tess.gamma(p, k, 1, t_k)
            first = min(first, g * tess.time_unit(p, k + 1))
    return first, last


def required_box(p, window):
    """Per-axis real (lo, hi) covering every cube any A of the window reads."""
    lo, hi = [], []
    for c in window.center:
        ends = (c - window.half_width, c + window.half_width)
        a_lo, a_hi = tess._axis_cube(p, 1, ends[0])[0], tess._axis_cube(p, 1, ends[1])[1]
        for k in range(1, p.kappa + 1):
            anc = [tess.pi(p, 1, k - 1, e) for e in ends]
            if k >= 2:
                a_lo = min(a_lo, tess._axis_extended(p, k, anc[0])[0])
                a_hi = max(a_hi, tess._axis_extended(p, k, anc[1])[1])
            if k <= p.kappa - 1:
                a_lo = min(a_lo, tess._axis_base(p, k, anc[0])[0])
                a_hi = max(a_hi, tess._axis_base(p, k, anc[1])[1])
        lo.append(a_lo * p.ell / p.m)
        hi.append(a_hi * p.ell / p.m)
    return lo, hi


def simulation_for(p, window, use="E", mode=DETECT, s=8, seed=0, P=None,
                   boundary="padded", variance_rate=1.0, q=3.0, max_nodes=5 * 10 ** 6):
    """SimConfig whose box and slices cover everything ``window`` reads."""
    if use == "A":
        first, last = required_span(p, window, mode)
        lo, hi = required_box(p, window)
    else:
        first, last = window.first, window.last + 1
        lo = [(c - window.half_width) * p.ell for c in window.center]
        hi = [(c + window.half_width + 1) * p.ell for c in window.center]
    L = max(max(abs(v) for v in lo), max(abs(v) for v in hi)) + p.ell
    if P is None:
        P = p.r + 6 * math.sqrt(variance_rate * (last - first) * p.beta)
    return SimConfig(d=p.d, lam=p.lam, r=p.r, L=L, beta=p.beta, n_slices=last - first, s=s,
                     P=P, boundary=boundary, seed=seed, first_slice=first,
                     variance_rate=variance_rate, q=q, max_nodes=max_nodes)


def escape_probability(p, t, replicas, use="E", mode=DETECT, half_width=3, seed=0,
                       s=8, P=None, threads=None, disp_mode=CHECKED, **sim):
    """Fraction of replicas whose root cluster reaches the window boundary
    within t slices, with a Wilson interval; also returns per-replica rows."""
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    window = CellWindow(half_width, p.d, t)
    cfg = simulation_for(p, window, use, mode, s, seed, P, **sim)
    root = Cell(1, (0,) * p.d, 0)

    def one(replica):
        traj = simulate(cfg, replica)
        grid = IndicatorGrid(traj, p, mode, disp_mode)
        result = bad_cluster(grid, root, use, window)
        return (replica, int(result.escaped), len(result.cells))

    rows = run_replicas(one, replicas, threads)
    escaped = sum(row[1] for row in rows)
    est = bounds.estimate("escape_%s" % use, escaped, replicas)
    log.info("escape(%s) lam=%g t=%d: %d/%d", use, p.lam, t, escaped, replicas)
    return est, rows


def export_grid(grid, cells, path):
    """CSV rows (k, i_1..i_d, tau, E, Dext, Dbase, Ak, A): one per scale-1
    cell, then one per ancestor at each scale 2..kappa.  E and A are only
    defined on scale 1 and are left empty above it."""
    p = grid.p
    header = ["k"] + ["i_%d" % (a + 1) for a in range(p.d)] + ["tau", "E", "Dext", "Dbase", "Ak", "A"]
    cells = [(tuple(i), tau) for i, tau in cells]
    rows = []
    for i, tau in cells:
        base = grid.D_base(1, i, tau) if p.kappa > 1 else ""
        A, vector = grid.A(i, tau)
        try:
            ext = grid.D_ext(1, i, tau)
        except HorizonError:
            ext = ""
        rows.append([1] + list(i) + [tau, grid.E(i, tau), ext, base, vector[0], A])
    for k in range(2, p.kappa + 1):
        for i, tau in sorted(set(grid.ancestor(i, tau, k) for i, tau in cells)):
            base = grid.D_base(k, i, tau) if k < p.kappa else ""
            rows.append([k] + list(i) + [tau, "", grid.D_ext(k, i, tau), base,
                                         grid.A_k(k, i, tau), ""])
    write_csv(path, header, rows)


def dump_cluster(result, path):
    write_json(path, {"escaped": bool(result.escaped),
                      "cells": sorted([c.k, list(c.i), c.tau] for c in result.cells)})
