# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import json
import math
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from stsim.lib import bounds, coupling
from stsim.lib.bounds import PreconditionError
from stsim.lib.coupling import CouplingParams
from stsim.lib.rng import stream
from stsim.lib.tessellation import GeometryError


def test_indistinguishable_regime():
    delta, M = coupling.indistinguishable_regime(1, 1.0, 0.25)
    assert delta == 16.0
    assert_allclose(M, math.sqrt(8 * 16 * math.log(32)))
    assert coupling.indistinguishable_regime(2, 1.0, 0.25)[0] == 128.0


def test_check_regime():
    delta, M = coupling.indistinguishable_regime(1, 1.0, 0.25)
    coupling.check_regime(1, delta, M, 1.0, 0.25)
    with pytest.raises(PreconditionError):
        coupling.check_regime(1, delta / 2, M, 1.0, 0.25)
    with pytest.raises(PreconditionError):
        coupling.check_regime(1, delta, M / 2, 1.0, 0.25)
    with pytest.raises(PreconditionError):
        coupling.check_regime(1, delta, M, 1.0, 1.5)


def test_g_zero_outside_cube():
    g = coupling.g_subdensity(np.array([[0.0], [5.0], [5.01]]), 16.0, 10.0, 1.0)
    assert g[0] > g[1] > 0
    assert g[2] == 0


def test_g_checks_regime():
    with pytest.raises(PreconditionError):
        coupling.g_subdensity(np.zeros((1, 1)), 1.0, 10.0, 1.0, xi=0.25)


def test_g_mass_dimension_limit():
    with pytest.raises(PreconditionError):
        coupling.g_mass(4, 16.0, 10.0, 1.0, 5.0)
    assert coupling.g_mass(1, 16.0, 10.0, 1.0, 0.0) == 0.0


def test_f_delta_exact_is_a_density():
    mass, _ = integrate.quad(lambda t: float(coupling.f_delta_exact(np.array([t]), 1.0, 4.0)),
                             -2.0, 2.0)
    assert_allclose(mass, 1.0, rtol=1e-6)
    assert coupling.f_delta_exact(np.array([2.5]), 1.0, 4.0) == 0


def test_reflection_bounds_below_killed_density():
    delta, M = 4.0, 3.0
    y = np.linspace(-4.4, 4.4, 89)[:, None]
    killed = bounds.killed_density(y[:, 0], delta, 1.5 * M)
    assert np.all(coupling.f_delta_product_lower(y, delta, M) <= killed + 1e-12)
    near = y[np.abs(y[:, 0]) <= 2.0]
    assert np.all(coupling.f_delta_lower(near, delta, M) <= coupling.f_delta_exact(near, delta, 3 * M))


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("normalization", ["unit", "exact"])
def test_indistinguishable_in_regime(d, normalization):
    delta, M = coupling.indistinguishable_regime(d, 1.0, 0.25)
    passed, reports = coupling.verify_indistinguishable(d, delta, M, 1.0, 0.25,
                                                        normalization=normalization)
    assert passed
    assert [r.name for r in reports] == ["domination", "integral"]
    assert reports[1].value >= 0.75


def test_indistinguishable_rejects_large_g():
    delta, M = coupling.indistinguishable_regime(1, 1.0, 0.25)

    def g(z):
        return 2 * coupling.g_subdensity(z, delta, M, 1.0, check=False)
    passed, reports = coupling.verify_indistinguishable(1, delta, M, 1.0, 0.25, g=g)
    assert not passed
    assert not reports[0].passed


def test_indistinguishable_outside_regime():
    passed, reports = coupling.verify_indistinguishable(1, 1.0, 2.0, 1.0, 0.25)
    assert not passed
    assert not reports[1].passed
    with pytest.raises(ValueError):
        coupling.verify_indistinguishable(1, 16.0, 21.0, 1.0, 0.25, normalization="none")


def test_desk_params(coupling_params):
    p = coupling_params
    assert p.R == 26.0
    assert p.M == 28.0
    assert p.m_sep == 2.0
    assert p.xi == 0.25
    assert p.confinement == 84.0
    assert_allclose(p.psi, 0.802, atol=2e-3)
    assert_allclose(p.theta, 0.831, atol=3e-3)
    p.check_applied()


def test_params_geometry():
    with pytest.raises(GeometryError):
        CouplingParams(K=3.0, K_inner=3.0)
    with pytest.raises(GeometryError):
        CouplingParams(K=29.0, ell=2.0)
    with pytest.raises(PreconditionError):
        CouplingParams(delta=1.0).check_applied()
    with pytest.raises(PreconditionError):
        CouplingParams(K_inner=28.0).check_applied()


def test_couple_success(coupling_params, tmp_path):
    p = coupling_params
    phi0 = coupling.grid_phi0(p, stream(0, 0, "phi0"), extra=0.5)
    path = str(tmp_path / "t.json")
    result = coupling.couple(phi0, p, stream(0, 0, "couple"), path)
    t = result.transcript
    assert result.success
    assert t["failed_step"] is None
    assert t["hypothesis"] and t["domination"] and t["subset"]
    assert t["domination_violations"] == 0
    assert t["min_domination_margin"] >= 0
    assert t["pairs"] == t["n_xi0"]
    assert t["shared"] + t["residual"] == t["pairs"]
    assert t["unpaired"] == len(phi0) - t["pairs"]
    assert result.phi_delta.shape == phi0.shape
    assert np.all(np.abs(result.phi_delta - phi0) < p.confinement / 2.0)
    assert coupling.is_subset(result.xi, result.phi_delta)
    assert np.all(np.abs(result.xi) <= p.K_inner / 2.0)
    assert len(result.xi) == t["n_xi"] > 0
    with open(path) as f:
        assert json.load(f)["success"] is True


def test_couple_hypothesis_fails(coupling_params):
    p = coupling_params
    phi0 = coupling.grid_phi0(p, stream(1, 0, "phi0"))
    phi0 = phi0[phi0[:, 0] >= -p.K / 2.0 + p.ell]
    result = coupling.couple(phi0, p, stream(1, 0, "couple"))
    assert not result.success
    assert result.transcript["failed_step"] == "hypothesis"
    assert result.transcript["short_cells"] == [0]
    assert len(result.xi) == 0


def test_couple_intensity_out_of_reach():
    p = CouplingParams(delta=400.0)
    assert p.theta > 1
    phi0 = coupling.grid_phi0(p, stream(2, 0, "phi0"))
    result = coupling.couple(phi0, p, stream(2, 0, "couple"))
    assert result.transcript["failed_step"] == "intensity"


def test_couple_domination_fails():
    # xi0 runs at 0.9 of the bare phi0 count in each of 58 cells
    p = CouplingParams(ell=0.5, eps=0.2)
    assert p.theta <= 1
    phi0 = coupling.grid_phi0(p, stream(3, 0, "phi0"))
    result = coupling.couple(phi0, p, stream(3, 0, "couple"))
    assert result.transcript["failed_step"] == "domination"
    assert result.transcript["failed_cells"]


def test_couple_outside_box(coupling_params):
    with pytest.raises(GeometryError):
        coupling.couple(np.array([[20.0]]), coupling_params, stream(0, 0, "couple"))


def test_grid_phi0_counts(coupling_params):
    p = coupling_params
    phi0 = coupling.grid_phi0(p, stream(0, 1, "phi0"))
    assert len(phi0) == 150 * 29
    assert np.all(np.abs(phi0) <= p.K / 2.0)


def test_is_subset():
    phi = np.array([[0.1], [0.2], [0.3]])
    assert coupling.is_subset(phi[[0, 2]], phi)
    assert coupling.is_subset(np.zeros((0, 1)), phi)
    assert not coupling.is_subset(np.array([[0.1 + 1e-15]]), phi)


def test_dispersion_and_independence():
    assert coupling.dispersion([1, 2, 3]) == (2.0, 0.5)
    mean, ratio = coupling.dispersion([])
    assert mean == 0.0 and math.isnan(ratio)
    assert coupling.independence([1, 1, 1], [1, 2, 3]) == 0.0
    assert_allclose(coupling.independence([1, 2, 3], [2, 4, 6]), 1.0)


def test_grid_experiment(coupling_params, tmp_path):
    out = str(tmp_path / "transcripts")
    report = coupling.couple_grid_experiment(coupling_params, 2, seed=4, threads=1, extra=0.5,
                                             transcripts=out)
    assert report.estimate.value == 1.0
    assert report.subset_ok
    assert len(report.rows) == 2
    assert len(report.rows[0]) == len(coupling.REPLICA_HEADER)
    assert sorted(os.listdir(out)) == ["coupling-00000.json", "coupling-00001.json"]
    assert len(report.xi_counts) == len(report.phi0_counts) == 2


def test_grid_experiment_checks_preconditions():
    with pytest.raises(PreconditionError):
        coupling.couple_grid_experiment(CouplingParams(delta=1.0), 1)
