# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import csv
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from stsim.lib import cellfield, evasion, mobility
from stsim.lib.cellfield import DETECT, IndicatorGrid
from stsim.lib.evasion import (
    CLOSURE,
    DETECTION_CERTAIN,
    EVASION_POSSIBLE,
    HOP,
    INCONCLUSIVE,
    SliceField,
    StaticResult,
)
from stsim.lib.graph import CellWindow
from stsim.lib.mobility import CONSERVATIVE, HorizonError, TrajectorySet
from stsim.lib.tessellation import Cell

BETA = 0.002
S = 16
ELL = 1.0 / (2 * math.sqrt(2))


def _line_field(vacant_sets, blocked_sets=None, half_cells=4, s=4):
    """A d=1 SliceField from per-slice sets of vacant and blocked cells."""
    t = len(vacant_sets)
    width = 2 * half_cells + 1
    vacant = np.zeros((t, width), dtype=bool)
    blocked = np.zeros_like(vacant)
    for tau, cells in enumerate(vacant_sets):
        for i in cells:
            vacant[tau, i + half_cells] = True
    for tau, cells in enumerate(blocked_sets or []):
        for i in cells:
            blocked[tau, i + half_cells] = True
    return SliceField(blocked, vacant, 0.5, 1.0, half_cells, 1.0, s, 0.1)


def _grid_nodes(half_cells, skip_origin=False):
    rng = range(-half_cells, half_cells + 1)
    return np.array([[(i + 0.5) * ELL, (j + 0.5) * ELL] for i in rng for j in rng
                     if not (skip_origin and i == 0 and j == 0)])


def test_cell_side_and_half_cells(desk_sim):
    assert_allclose(evasion.cell_side(1.0, 2), ELL)
    assert evasion.default_half_cells(desk_sim(1.0)) == 8


def test_empty_realization_evades(desk_sim):
    cfg = desk_sim(0.0)
    traj = mobility.simulate(cfg, 0, keep_substeps=True)
    a = evasion.analyse(traj, cfg.r, cfg.n_slices, 8)
    assert a.field.vacant.all()
    assert not a.field.blocked.any()
    assert a.static == StaticResult(None, False, True, math.inf)
    assert a.detection.verdict == INCONCLUSIVE
    assert a.evasion.verdict == EVASION_POSSIBLE
    assert a.evasion.witness.shape == (10 * 16 + 1, 3)
    assert not a.evasion.witness[:, 1:].any()
    assert evasion.replay(traj, a.evasion.witness, cfg.r) == (True, None)


def test_node_on_target_detects_at_once():
    traj = TrajectorySet.static([[0.05, 0.05]], 10, BETA, S)
    a = evasion.analyse(traj, 1.0, 10, 8)
    assert a.field.blocked[0][8, 8]
    assert a.detection == (DETECTION_CERTAIN, 0, None, None, None)
    assert a.evasion.verdict == INCONCLUSIVE
    assert a.static.time == 0.0
    assert not a.static.clear


def test_surrounded_origin_stays_inconclusive():
    # every cell but the origin holds an immobile node
    traj = TrajectorySet.static(_grid_nodes(3, skip_origin=True), 4, BETA, S)
    field = evasion.classify_cells(traj, 1.0, 4, 3)
    assert field.blocked.sum() == 4 * 48
    assert not field.vacant.any()
    cert = evasion.detection_certificate(field)
    assert cert.verdict == INCONCLUSIVE
    assert evasion.blocked_fraction(field) == 48 / 49.0


def test_detection_after_one_slice():
    field = _line_field([[], []], [[-1, 1], [-2, -1, 0, 1, 2]], half_cells=3)
    cert = evasion.detection_certificate(field)
    assert cert.verdict == DETECTION_CERTAIN
    assert cert.death_slice == 1


def test_detection_reaching_edge_is_inconclusive():
    field = _line_field([[], []], [[], list(range(-3, 4))], half_cells=3)
    assert evasion.detection_certificate(field).verdict == INCONCLUSIVE


def test_closure_crosses_a_slice_hop_does_not():
    field = _line_field([[0, 1, 2, 3], [3]])
    assert evasion.evasion_certificate(field, mode=HOP).verdict == INCONCLUSIVE
    cert = evasion.evasion_certificate(field, mode=CLOSURE)
    assert cert.verdict == EVASION_POSSIBLE
    assert cert.path == [(0,), (1,), (2,), (3,)]
    w = cert.witness
    assert w.shape == (2 * 4 + 1, 2)
    assert_allclose(w[:, 0], np.arange(9) / 4.0)
    assert_allclose(w[:4, 1], [0.0, 0.25, 0.75, 1.25])
    assert_allclose(w[4:, 1], 1.75)


def test_hop_moves_one_cell_per_slice():
    field = _line_field([[0], [0, 1], [1, 2]])
    cert = evasion.evasion_certificate(field, mode=HOP)
    assert cert.verdict == EVASION_POSSIBLE
    assert cert.path[0] == (0,)
    assert cert.path[-1] in [(1,), (2,)]
    steps = [abs(b[0] - a[0]) for a, b in zip(cert.path, cert.path[1:])]
    assert max(steps) <= 1


def test_evasion_needs_vacant_start():
    field = _line_field([[1, 2], [1, 2]])
    assert evasion.evasion_certificate(field).verdict == INCONCLUSIVE
    with pytest.raises(ValueError):
        evasion.evasion_certificate(field, mode="teleport")


def test_classify_needs_substeps(desk_sim):
    cfg = desk_sim(1.0)
    with pytest.raises(HorizonError):
        evasion.classify_cells(mobility.simulate(cfg, 0), 1.0, 10, 8)
    traj = mobility.simulate(cfg, 0, keep_substeps=True)
    with pytest.raises(HorizonError):
        evasion.classify_cells(traj, 1.0, 11, 8)


def test_replay_finds_collision():
    traj = TrajectorySet.static([[2.0, 0.0]], 2, BETA, 4)
    times = np.arange(9) * BETA / 4
    walk = np.column_stack([times, np.linspace(0.0, 1.5, 9), np.zeros(9)])
    ok, t = evasion.replay(traj, walk, 1.0)
    assert not ok
    assert t == times[6]
    still = np.column_stack([times, np.zeros((9, 2))])
    assert evasion.replay(traj, still, 1.0) == (True, None)


def test_static_detection_uncertain_band():
    traj = TrajectorySet.static([[1.0 - 1e-3, 0.0]], 2, BETA, 4)
    res = evasion.static_detection(traj, 1.0, 2)
    assert res.time == 0.0
    assert res.uncertain
    traj = TrajectorySet.static([[1.5, 0.0]], 2, BETA, 4)
    res = evasion.static_detection(traj, 1.0, 2)
    assert res.time is None
    assert res.clear
    assert_allclose(res.min_distance, 1.5)


def test_survival_curve():
    results = [StaticResult(None, False, True, 2.0), StaticResult(0.5, False, False, 0.9),
               StaticResult(1.5, False, False, 0.9), StaticResult(0.0, False, False, 0.1)]
    assert evasion.survival_curve(results, [0.0, 1.0, 2.0]) == [(0.0, 0.75), (1.0, 0.5), (2.0, 0.25)]


def test_blocked_cells_are_E_cells(desk_sim, desk_scale):
    # with conservative displacement, scale-1 E of the cell field is "blocked"
    cfg = desk_sim(5.0, n_slices=4)
    for replica in range(3):
        traj = mobility.simulate(cfg, replica, keep_substeps=True)
        field = evasion.classify_cells(traj, 1.0, 4, 4)
        grid = IndicatorGrid(traj, desk_scale, DETECT, CONSERVATIVE)
        for tau in range(4):
            for index in np.ndindex(field.blocked.shape[1:]):
                assert grid.E(field.cell(index), tau) == int(field.blocked[tau][index])


def test_detection_agrees_with_bad_cluster(desk_sim, desk_scale):
    cfg = desk_sim(30.0, n_slices=4)
    window = CellWindow(4, 2, 4)
    for replica in range(4):
        traj = mobility.simulate(cfg, replica, keep_substeps=True)
        field = evasion.classify_cells(traj, 1.0, 4, 4)
        cert = evasion.detection_certificate(field)
        grid = IndicatorGrid(traj, desk_scale, DETECT, CONSERVATIVE)
        cluster = cellfield.bad_cluster(grid, Cell(1, (0, 0), 0), window=window)
        if not cluster.escaped:
            assert cert.verdict == DETECTION_CERTAIN


def test_thinning_is_monotone(desk_sim):
    full, thinned = evasion.thinned_pair(desk_sim(10.0), 0.5, 0, half_cells=6)
    assert not (thinned.field.blocked & ~full.field.blocked).any()
    assert not (full.field.vacant & ~thinned.field.vacant).any()
    if full.evasion.verdict == EVASION_POSSIBLE:
        assert thinned.evasion.verdict == EVASION_POSSIBLE
    if thinned.detection.verdict == DETECTION_CERTAIN:
        assert full.detection.verdict == DETECTION_CERTAIN


def test_bracket_extremes(desk_sim):
    sparse = evasion.rho_bracket(desk_sim(0.05), 20, threads=1)
    dense = evasion.rho_bracket(desk_sim(30.0), 20)
    for b in (sparse, dense):
        assert b.low.value <= b.up.value
        assert b.replay_failures == 0
        assert len(b.rows) == 20
        assert all(len(row) == len(evasion.VERDICT_HEADER) for row in b.rows)
    assert sparse.low.value >= 0.5
    assert dense.up.value <= 0.5
    assert sparse.static.value >= dense.static.value


def test_phase_scan_orders_brackets(desk_sim):
    brackets = evasion.phase_scan(desk_sim(1.0), [0.05, 30.0], 10, mode=HOP)
    assert [b.lam for b in brackets] == [0.05, 30.0]
    assert brackets[0].low.value > brackets[1].up.value


def test_write_witness(tmp_path):
    cert = evasion.evasion_certificate(_line_field([[0, 1, 2, 3], [3]]))
    path = str(tmp_path / "witness.csv")
    evasion.write_witness(cert, path)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "x_1"]
    assert len(rows) == 10
