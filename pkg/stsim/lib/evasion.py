# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Detection and evasion certificates for a target that sees the future.

Space is cut into cubes of side r / (2 sqrt(d)) and time into the slices of
the realization.  A cell is *blocked* when a node starting in its cube keeps
its displacement over the slice in Q_ell (any point of the cube is then
within r of it), and *vacant* when no node comes within r + delta_safe of
the cube at any sub-step.  Blocked cells certify detection, vacant cells
carry evasion witnesses, and everything else is left undecided.
"""

import copy
import itertools
import math
from collections import deque, namedtuple

import numpy as np
from scipy import ndimage

from . import bounds
from .mobility import CONSERVATIVE, HorizonError, simulate
from .rng import stream
from .utils import run_replicas, write_csv

import logging
log = logging.getLogger(__name__)

DETECTION_CERTAIN = "DetectionCertain"
EVASION_POSSIBLE = "EvasionPossible"
INCONCLUSIVE = "Inconclusive"

HOP = "hop"
CLOSURE = "closure"

Certificate = namedtuple("Certificate", "verdict death_slice witness path mode")
StaticResult = namedtuple("StaticResult", "time uncertain clear min_distance")
Analysis = namedtuple("Analysis", "field detection evasion static")
Bracket = namedtuple("Bracket", "lam low up static rows replay_failures statics")

VERDICT_HEADER = ["replica", "detection", "death_slice", "evasion", "path_length",
                  "static_time", "static_uncertain", "static_clear", "replay_ok"]


def cell_side(r, d):
    return r / (2 * math.sqrt(d))


def default_delta_safe(traj):
    return 3 * math.sqrt(traj.variance_rate * traj.beta / traj.s)


class SliceField(object):
    """Blocked and vacant cells of the window |i_a| <= half_cells over
    slices 0 .. t_slices - 1, stored as arrays indexed [tau, i + half_cells]."""

    def __init__(self, blocked, vacant, ell, r, half_cells, beta, s, delta_safe):
        self.blocked = blocked
        self.vacant = vacant
        self.ell = ell
        self.r = r
        self.half_cells = half_cells
        self.beta = beta
        self.s = s
        self.delta_safe = delta_safe

    @property
    def d(self):
        return self.blocked.ndim - 1

    @property
    def t_slices(self):
        return self.blocked.shape[0]

    def index(self, i):
        return tuple(int(a) + self.half_cells for a in i)

    def cell(self, index):
        return tuple(int(a) - self.half_cells for a in index)

    def center(self, i):
        return (np.asarray(i, dtype=float) + 0.5) * self.ell

    def neutral(self):
        return ~(self.blocked | self.vacant)


def _near(points, ell, radius, half_cells):
    """Window mask of cells whose closed cube is within ``radius`` of a point."""
    d = points.shape[1]
    width = 2 * half_cells + 1
    mask = np.zeros((width,) * d, dtype=bool)
    reach = (half_cells + 1) * ell + radius
    points = points[np.all(np.abs(points) <= reach, axis=1)]
    if not len(points):
        return mask
    K = int(math.ceil(radius / ell)) + 1
    offs = np.arange(-K, K + 1)
    base = np.floor(points / ell).astype(np.int64)
    total = np.zeros((len(points),) + (len(offs),) * d)
    for a in range(d):
        lo = (base[:, a, None] + offs) * ell
        x = points[:, a, None]
        gap = np.maximum(np.maximum(lo - x, x - (lo + ell)), 0.0)
        shape = [len(points)] + [1] * d
        shape[1 + a] = len(offs)
        total = total + (gap ** 2).reshape(shape)
    hit = np.nonzero(total <= radius ** 2)
    cells = np.stack([base[hit[0], a] + offs[hit[1 + a]] for a in range(d)], axis=1)
    cells = cells[np.all(np.abs(cells) <= half_cells, axis=1)] + half_cells
    mask[tuple(cells.T)] = True
    return mask


def classify_cells(traj, r, t_slices, half_cells, delta_safe=None, disp_mode=CONSERVATIVE):
    """SliceField of a realization that kept its sub-step positions."""
    if traj.substeps is None:
        raise HorizonError("vacancy classification needs sub-step positions")
    if t_slices > traj.last_slice:
        raise HorizonError("need %d slices, realization ends at %d" % (t_slices, traj.last_slice))
    d = traj.d
    ell = cell_side(r, d)
    if delta_safe is None:
        delta_safe = default_delta_safe(traj)
    width = 2 * half_cells + 1
    blocked = np.zeros((t_slices,) + (width,) * d, dtype=bool)
    vacant = np.zeros_like(blocked)
    for tau in range(t_slices):
        start = traj.position(tau)[traj.displacement_mask(tau, tau + 1, ell, disp_mode)]
        idx = np.floor(start / ell).astype(np.int64)
        idx = idx[np.all(np.abs(idx) <= half_cells, axis=1)] + half_cells
        blocked[tau][tuple(idx.T)] = True
        path = traj.substep_positions(tau).reshape(-1, d)
        vacant[tau] = ~_near(path, ell, r + delta_safe, half_cells)
    overlap = blocked & vacant
    if overlap.any():
        # a node in the cube is at distance 0 from it
        raise AssertionError("%d cells both blocked and vacant" % int(overlap.sum()))
    log.debug("classified %d slices: %.3f blocked, %.3f vacant", t_slices,
              blocked.mean(), vacant.mean())
    return SliceField(blocked, vacant, ell, r, half_cells, traj.beta, traj.s, delta_safe)


def _structure(d):
    return ndimage.generate_binary_structure(d, d)


def _closure(seeds, allowed):
    """Cells of ``allowed`` connected to a seed through ``allowed``."""
    seeds = seeds & allowed
    if not seeds.any():
        return seeds
    labels, _ = ndimage.label(allowed, structure=_structure(allowed.ndim))
    keep = np.unique(labels[seeds])
    return np.isin(labels, keep[keep > 0])


def _dilate(cells):
    if not cells.any():
        return cells
    return ndimage.binary_dilation(cells, structure=_structure(cells.ndim))


def _on_edge(cells):
    edge = np.zeros_like(cells)
    for a in range(cells.ndim):
        lo = [slice(None)] * cells.ndim
        hi = [slice(None)] * cells.ndim
        lo[a] = 0
        hi[a] = -1
        edge[tuple(lo)] = True
        edge[tuple(hi)] = True
    return bool(np.any(cells & edge))


def detection_certificate(field, t_slices=None, origin=None):
    """Over-approximate where an undetected target can be, slice by slice.

    DetectionCertain when that set empties before ``t_slices``; reaching the
    window edge counts as escape.
    """
    t_slices = field.t_slices if t_slices is None else t_slices
    origin = (0,) * field.d if origin is None else origin
    frontier = np.zeros(field.blocked.shape[1:], dtype=bool)
    frontier[field.index(origin)] = True
    for tau in range(t_slices):
        open_ = ~field.blocked[tau]
        if tau > 0:
            frontier = _dilate(frontier)
        frontier = _closure(frontier, open_)
        if not frontier.any():
            return Certificate(DETECTION_CERTAIN, tau, None, None, None)
        if _on_edge(frontier):
            log.debug("frontier reached the window edge at slice %d", tau)
            return Certificate(INCONCLUSIVE, None, None, None, None)
    return Certificate(INCONCLUSIVE, None, None, None, None)


def _spatial_offsets(d):
    return [o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)]


def _path(allowed, goal, sources, hop):
    """Shortest cell path from a source to ``goal`` through ``allowed``."""
    goal = tuple(goal)
    if sources[goal]:
        return [goal]
    offsets = _spatial_offsets(allowed.ndim)
    parent = {goal: None}
    queue = deque([goal])
    while queue:
        cell = queue.popleft()
        for o in offsets:
            nxt = tuple(a + b for a, b in zip(cell, o))
            if nxt in parent or any(v < 0 or v >= n for v, n in zip(nxt, allowed.shape)):
                continue
            if not allowed[nxt]:
                continue
            parent[nxt] = cell
            if sources[nxt]:
                path = [nxt]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                return path
            if not hop:
                queue.append(nxt)
    raise AssertionError("no path to %r" % (goal,))


def _polyline_at(points, fractions):
    points = np.asarray(points, dtype=float)
    if len(points) == 1:
        return np.repeat(points, len(fractions), axis=0)
    u = np.asarray(fractions) * (len(points) - 1)
    seg = np.minimum(np.floor(u).astype(int), len(points) - 2)
    w = (u - seg)[:, None]
    return points[seg] * (1 - w) + points[seg + 1] * w


def evasion_certificate(field, t_slices=None, mode=CLOSURE, origin=None, static=None):
    """Constructive witness of a trajectory avoiding every detection ball.

    ``hop`` moves one cell per slice through cells vacant at the slice it
    moves in; ``closure`` crosses any vacant component within a slice.  A
    clear static result short-cuts to the stay-put witness.  The witness is
    an array of rows (t, x_1..x_d) at every sub-step time.
    """
    if mode not in (HOP, CLOSURE):
        raise ValueError("unknown evasion mode %r" % mode)
    t_slices = field.t_slices if t_slices is None else t_slices
    d = field.d
    origin = (0,) * d if origin is None else tuple(origin)
    times = np.arange(t_slices * field.s + 1) * field.beta / field.s
    if static is not None and static.clear:
        witness = np.column_stack([times, np.zeros((len(times), d))])
        return Certificate(EVASION_POSSIBLE, None, witness, [origin], mode)
    start = field.index(origin)
    if not field.vacant[0][start]:
        return Certificate(INCONCLUSIVE, None, None, None, mode)
    hop = mode == HOP
    reach = []
    seeds = np.zeros(field.vacant.shape[1:], dtype=bool)
    seeds[start] = True
    for tau in range(t_slices):
        vac = field.vacant[tau]
        if tau > 0:
            seeds = reach[-1] & vac
        if hop:
            current = (_dilate(seeds) if tau > 0 else seeds) & vac
        else:
            current = _closure(seeds, vac)
        if not current.any():
            return Certificate(INCONCLUSIVE, None, None, None, mode)
        reach.append(current)

    # walk back from any surviving cell
    goal = tuple(int(v) for v in np.argwhere(reach[-1])[0])
    legs = []
    for tau in range(t_slices - 1, -1, -1):
        vac = field.vacant[tau]
        if tau > 0:
            sources = reach[tau - 1] & vac
        else:
            sources = np.zeros_like(vac)
            sources[start] = True
        path = _path(vac, goal, sources, hop)
        legs.append(path)
        goal = path[0]
    legs.reverse()

    rows = []
    fractions = np.arange(field.s) / float(field.s)
    cells = []
    for tau, leg in enumerate(legs):
        points = [field.center(field.cell(c)) for c in leg]
        if tau == 0:
            points.insert(0, np.asarray(origin, dtype=float) * field.ell)
        rows.append(_polyline_at(points, fractions))
        cells.extend(field.cell(c) for c in (leg if tau == 0 else leg[1:]))
    rows.append(field.center(field.cell(legs[-1][-1]))[None])
    witness = np.column_stack([times, np.concatenate(rows)])
    return Certificate(EVASION_POSSIBLE, None, witness, cells, mode)


def replay(traj, witness, r):
    """(ok, first time detected) for a witness checked against every
    node at every sub-step."""
    s = traj.s
    for row, (t, *x) in enumerate(witness):
        tau, j = divmod(row, s)
        if tau >= traj.n_slices:
            tau, j = traj.n_slices - 1, s
        nodes = traj.substep_positions(tau)[j]
        if len(nodes) and np.min(np.linalg.norm(nodes - np.asarray(x), axis=1)) <= r:
            return False, float(t)
    return True, None


def static_detection(traj, r, t_slices, delta_safe=None):
    """First sub-step time a node is within r of the origin.

    ``uncertain`` marks a detection within delta_safe of the radius; ``clear``
    marks survival with every node farther than r + delta_safe throughout.
    """
    if delta_safe is None:
        delta_safe = default_delta_safe(traj)
    closest = math.inf
    for tau in range(t_slices):
        path = traj.substep_positions(tau)
        if not path.shape[1]:
            continue
        dist = np.min(np.linalg.norm(path, axis=2), axis=1)
        hit = np.flatnonzero(dist <= r)
        if len(hit):
            j = int(hit[0])
            return StaticResult((tau + j / float(traj.s)) * traj.beta,
                                bool(dist[j] > r - delta_safe), False, float(dist[j]))
        closest = min(closest, float(dist.min()))
    return StaticResult(None, False, closest > r + delta_safe, closest)


def survival_curve(results, times):
    """[(t, fraction of static targets not detected by t)]."""
    n = float(len(results))
    return [(t, sum(1 for res in results if res.time is None or res.time > t) / n)
            for t in times]


def analyse(traj, r, t_slices, half_cells, mode=CLOSURE, delta_safe=None):
    field = classify_cells(traj, r, t_slices, half_cells, delta_safe)
    static = static_detection(traj, r, t_slices, field.delta_safe)
    detection = detection_certificate(field, t_slices)
    evasion = evasion_certificate(field, t_slices, mode, static=static)
    if detection.verdict == DETECTION_CERTAIN and evasion.verdict == EVASION_POSSIBLE:
        raise AssertionError("detection and evasion certified on one realization")
    return Analysis(field, detection, evasion, static)


def default_half_cells(cfg):
    return int(cfg.L / cell_side(cfg.r, cfg.d))


def verdict_row(replica, a, replay_ok=""):
    path = len(a.evasion.path) if a.evasion.path else ""
    death = a.detection.death_slice if a.detection.death_slice is not None else ""
    return [replica, a.detection.verdict, death, a.evasion.verdict, path,
            a.static.time if a.static.time is not None else "",
            int(a.static.uncertain), int(a.static.clear), replay_ok]


def rho_bracket(cfg, replicas, half_cells=None, mode=CLOSURE, threads=None, delta_safe=None):
    """Desk-scale bracket on the probability that the target survives
    ``cfg.n_slices`` slices: EvasionPossible below, not DetectionCertain above."""
    if replicas < 1:
        raise ValueError("need at least one replica")
    half_cells = default_half_cells(cfg) if half_cells is None else half_cells

    def one(replica):
        traj = simulate(cfg, replica, keep_substeps=True)
        a = analyse(traj, cfg.r, cfg.n_slices, half_cells, mode, delta_safe)
        replay_ok = ""
        if a.evasion.verdict == EVASION_POSSIBLE:
            replay_ok = int(replay(traj, a.evasion.witness, cfg.r)[0])
        return a, replay_ok

    outcomes = run_replicas(one, replicas, threads)
    results = [a for a, _ in outcomes]
    low = sum(1 for a in results if a.evasion.verdict == EVASION_POSSIBLE)
    up = sum(1 for a in results if a.detection.verdict != DETECTION_CERTAIN)
    survived = sum(1 for a in results if a.static.time is None)
    rows = [verdict_row(k, a, ok) for k, (a, ok) in enumerate(outcomes)]
    failures = sum(1 for _, ok in outcomes if ok == 0)
    if failures:
        log.warning("%d evasion witnesses failed replay", failures)
    bracket = Bracket(cfg.lam, bounds.estimate("rho_low", low, replicas),
                      bounds.estimate("rho_up", up, replicas),
                      bounds.estimate("static_survival", survived, replicas), rows, failures,
                      [a.static for a in results])
    log.info("lam=%g: rho in [%.3f, %.3f], static survival %.3f", cfg.lam,
             bracket.low.value, bracket.up.value, bracket.static.value)
    return bracket


def phase_scan(cfg, lambdas, replicas, half_cells=None, mode=CLOSURE, threads=None):
    out = []
    for lam in lambdas:
        scaled = copy.copy(cfg)
        scaled.lam = float(lam)
        out.append(rho_bracket(scaled, replicas, half_cells, mode, threads))
    return out


def thinned_pair(cfg, keep, replica, half_cells=None, mode=CLOSURE):
    """Analyses of one realization and of its independent ``keep``-thinning."""
    half_cells = default_half_cells(cfg) if half_cells is None else half_cells
    traj = simulate(cfg, replica, keep_substeps=True)
    thinned = traj.thin(keep, stream(cfg.seed, replica, "thin"))
    return (analyse(traj, cfg.r, cfg.n_slices, half_cells, mode),
            analyse(thinned, cfg.r, cfg.n_slices, half_cells, mode))


def blocked_fraction(field):
    return float(field.blocked.mean())


def write_witness(certificate, path):
    d = certificate.witness.shape[1] - 1
    write_csv(path, ["t"] + ["x_%d" % (a + 1) for a in range(d)], certificate.witness)
