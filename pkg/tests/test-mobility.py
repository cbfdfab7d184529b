# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import csv
import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from stsim.lib import bounds, mobility
from stsim.lib.mobility import (
    CONSERVATIVE,
    ConfinementError,
    HorizonError,
    PointProcessError,
    SimConfig,
    SpatialIndex,
    TrajectorySet,
)
from stsim.lib.rng import stream


def test_default_padding():
    cfg = SimConfig(d=2, r=1.0, beta=0.25, n_slices=4)
    assert math.isclose(cfg.P, 1.0 + 6.0)
    assert SimConfig(boundary="torus").P == 0.0
    assert cfg.half_width == cfg.L + cfg.P


def test_bad_config():
    with pytest.raises(PointProcessError):
        SimConfig(L=0)
    with pytest.raises(PointProcessError):
        SimConfig(boundary="mirror")
    with pytest.raises(HorizonError):
        SimConfig.from_horizon(1.0, 0.3)
    assert SimConfig.from_horizon(1.0, 0.25).n_slices == 4


def test_sample_ppp_mean():
    counts = [len(mobility.sample_ppp([0, 0], [1, 1], 100.0, stream(0, k, "ppp")))
              for k in range(200)]
    assert abs(np.mean(counts) - 100.0) < 4.0


def test_sample_ppp_inside_box():
    x = mobility.sample_ppp([-1, 2], [1, 3], 50.0, stream(1, 0, "ppp"))
    assert np.all(x[:, 0] >= -1) and np.all(x[:, 0] <= 1)
    assert np.all(x[:, 1] >= 2) and np.all(x[:, 1] <= 3)


def test_sample_ppp_empty_and_errors():
    assert mobility.sample_ppp([0], [1], 0.0, stream(0, 0, "ppp")).shape == (0, 1)
    with pytest.raises(PointProcessError):
        mobility.sample_ppp([0], [1], -1.0, stream(0, 0, "ppp"))
    with pytest.raises(PointProcessError):
        mobility.sample_ppp([0], [0], 1.0, stream(0, 0, "ppp"))
    with pytest.raises(PointProcessError):
        mobility.sample_ppp([0, 0], [100, 100], 10.0, stream(0, 0, "ppp"), max_nodes=1000)


def test_simulate_reproducible():
    cfg = SimConfig(d=2, lam=2.0, L=2.0, beta=0.1, n_slices=3, s=4, seed=7)
    a = mobility.simulate(cfg, 3)
    b = mobility.simulate(cfg, 3)
    assert_array_equal(a.positions, b.positions)
    c = mobility.simulate(cfg, 4)
    assert a.positions.shape != c.positions.shape or not np.array_equal(a.positions, c.positions)


def test_substeps_match_slice_positions():
    cfg = SimConfig(d=2, lam=2.0, L=2.0, beta=0.1, n_slices=3, s=4)
    traj = mobility.simulate(cfg, 0, keep_substeps=True)
    assert traj.substeps.shape == (3 * 4 + 1, traj.n_nodes, 2)
    for k in range(3):
        sub = traj.substep_positions(k)
        assert sub.shape == (5, traj.n_nodes, 2)
        assert_array_equal(sub[0], traj.position(k))
        assert_array_equal(sub[-1], traj.position(k + 1))
    with pytest.raises(HorizonError):
        traj.substep_positions(3)
    with pytest.raises(HorizonError):
        traj.position(4)


def test_substeps_not_kept():
    cfg = SimConfig(d=1, lam=2.0, L=2.0, beta=0.1, n_slices=1, s=2)
    with pytest.raises(HorizonError):
        mobility.simulate(cfg, 0).substep_positions(0)


def test_excursion_brackets_zero():
    cfg = SimConfig(d=2, lam=3.0, L=2.0, beta=0.2, n_slices=2, s=8)
    traj = mobility.simulate(cfg, 0)
    low, high = traj.excursion(0, 2)
    assert np.all(low <= 0) and np.all(high >= 0)
    net = traj.position(2) - traj.position(0)
    assert np.all(net >= low - 1e-12) and np.all(net <= high + 1e-12)


def test_static_nodes_never_move():
    traj = TrajectorySet.static([[0.0, 0.0], [1.0, 1.0]], 3, 0.5, 4)
    assert traj.displacement_mask(0, 3, 0.1).all()
    assert not traj.displacement_mask(0, 3, 1e-6, mode=CONSERVATIVE).any()
    assert traj.displacement_mask(0, 3, math.inf).all()
    assert traj.displacement_in(0, 0.0, 1.5, 0.1)
    assert traj.displacement_in(1, 0.125, 0.375, 0.1)
    with pytest.raises(ValueError):
        traj.displacement_mask(0, 1, 1.0, mode="loose")


def test_displacement_in_agrees_with_mask():
    cfg = SimConfig(d=1, lam=5.0, L=2.0, beta=0.5, n_slices=2, s=8)
    traj = mobility.simulate(cfg, 0, keep_substeps=True)
    mask = traj.displacement_mask(0, 2, 1.0)
    for node in range(traj.n_nodes):
        assert traj.displacement_in(node, 0.0, 1.0, 1.0) == mask[node]


def test_thin_and_subset():
    cfg = SimConfig(d=1, lam=20.0, L=2.0, beta=0.1, n_slices=1, s=2)
    traj = mobility.simulate(cfg, 0)
    assert traj.thin(0.0, stream(0, 0, "thin")).n_nodes == 0
    assert traj.thin(1.0, stream(0, 0, "thin")).n_nodes == traj.n_nodes
    both = traj.with_nodes(traj)
    assert both.n_nodes == 2 * traj.n_nodes


def test_with_nodes_needs_same_slicing():
    a = TrajectorySet.static([[0.0]], 2, 1.0, 4)
    b = TrajectorySet.static([[0.0]], 3, 1.0, 4)
    with pytest.raises(PointProcessError):
        a.with_nodes(b)


def test_torus_wraps():
    cfg = SimConfig(d=2, lam=1.0, L=2.0, beta=4.0, n_slices=2, s=4, boundary="torus")
    traj = mobility.simulate(cfg, 0)
    x = traj.position(2)
    assert np.all(x >= -2.0) and np.all(x < 2.0)


def _brute(points, x, radius, period=None):
    delta = points - x
    if period is not None:
        delta = delta - period * np.round(delta / period)
    return np.flatnonzero(np.linalg.norm(delta, axis=1) <= radius)


def test_spatial_index_matches_brute_force():
    rng = np.random.default_rng(3)
    points = rng.uniform(-5, 5, (400, 2))
    index = SpatialIndex(points, 1.0)
    for x in rng.uniform(-6, 6, (50, 2)):
        assert_array_equal(index.query(x, 0.7), _brute(points, x, 0.7))
        assert index.covered(x, 0.7) == mobility.covered(index, x, 0.7)


def test_spatial_index_torus():
    rng = np.random.default_rng(4)
    points = rng.uniform(-2, 2, (200, 2))
    index = SpatialIndex(points, 0.5, period=4.0)
    for x in rng.uniform(-2, 2, (50, 2)):
        assert_array_equal(index.query(x, 0.9), _brute(points, x, 0.9, period=4.0))


def test_spatial_index_empty():
    index = SpatialIndex(np.zeros((0, 2)), 1.0)
    assert not index.covered([0.0, 0.0], 10.0)


def test_sample_confined_inside():
    x = mobility.sample_confined(1.0, 3.0, 2000, stream(0, "confine"), d=2)
    assert x.shape == (2000, 2)
    assert np.all(np.abs(x) < 1.5)
    # confinement pulls the spread below the free variance
    assert np.var(x[:, 0]) < 1.0


def test_sample_confined_too_tight():
    with pytest.raises(ConfinementError):
        mobility.sample_confined(100.0, 0.1, 10, stream(0, "confine"))


def test_conditioned_increments():
    x, rate = mobility.conditioned_increments(500, 1.0, 4.0, stream(1, "confine"), d=1)
    assert x.shape == (500, 1)
    assert np.all(np.abs(x) <= 2.0)
    assert 0 < rate <= 1
    with pytest.raises(ConfinementError):
        mobility.conditioned_increments(10, 1.0, 0.0, stream(1, "confine"))


def test_confinement_estimate_above_bound():
    rate, err = mobility.confinement_estimate(1, 1.0, 3.0, 20000)
    assert rate >= bounds.confinement_bound(1, 1.0, 3.0) - 3 * err
    assert rate <= 1


def test_dump_trajectories(tmp_path):
    traj = TrajectorySet.static([[0.0, 1.0], [2.0, 3.0]], 2, 0.5, 2, keep_substeps=False)
    path = str(tmp_path / "traj.csv")
    mobility.dump_trajectories(traj, path)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["node_id", "t", "x_1", "x_2"]
    assert len(rows) == 1 + 2 * 3
    assert float(rows[-1][1]) == 1.0


def test_interior_counts_thread_independent():
    cfg = SimConfig(d=1, lam=3.0, L=2.0, beta=0.5, n_slices=1, s=4)
    serial = mobility.interior_counts(cfg, 6, threads=1)
    parallel = mobility.interior_counts(cfg, 6, threads=3)
    assert_array_equal(serial, parallel)
    assert len(serial) == 6
