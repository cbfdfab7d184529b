# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import math

import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from stsim.lib import bounds
from stsim.lib.bounds import PreconditionError


def test_chernoff_lower_value():
    assert_allclose(bounds.poisson_chernoff(100, 0.5, "lower"), math.exp(-12.5))


def test_chernoff_bad_eps():
    with pytest.raises(PreconditionError):
        bounds.poisson_chernoff(10, 1.0, "upper")
    with pytest.raises(ValueError):
        bounds.poisson_chernoff(10, 0.5, "sideways")


def test_verify_bounds_all_pass():
    reports = bounds.verify_bounds()
    assert reports
    failed = [r for r in reports if not r.passed]
    assert failed == []
    assert all(r.margin >= 0 for r in reports)


def test_gaussian_tail_values():
    assert_allclose(bounds.gaussian_tail(1.0, 2.0), 0.02699548, rtol=1e-5)
    assert_allclose(bounds.gaussian_tail(1.0, 1.0), 0.24197072, rtol=1e-5)
    assert bounds.gaussian_tail(1.0, 2.0) >= bounds.gaussian_tail_exact(1.0, 2.0)


def test_gaussian_tail_precondition():
    with pytest.raises(PreconditionError):
        bounds.gaussian_tail(2.0, 1.0)


def test_confinement_bound_precondition():
    with pytest.raises(PreconditionError):
        bounds.confinement_bound(1, 1.0, 2.0)


def test_confinement_series_below_one():
    value = bounds.confinement_series(2, 1.0, 3.0)
    assert 0 < value < 1
    assert value >= bounds.confinement_bound(2, 1.0, 3.0)


def test_killed_density_integrates_to_survival():
    a = 1.5
    mass, _ = integrate.quad(lambda y: float(bounds.killed_density(y, 1.0, a)), -a, a)
    assert_allclose(mass, bounds.escape_free_probability(1.0, a), rtol=1e-6)


def test_killed_density_outside_is_zero():
    assert bounds.killed_density(2.0, 1.0, 1.5) == 0


def test_wilson_endpoints():
    lo, hi = bounds.wilson(0, 20)
    assert lo == 0.0 and 0 < hi < 1
    lo, hi = bounds.wilson(20, 20)
    assert hi == 1.0 and 0 < lo < 1
    with pytest.raises(PreconditionError):
        bounds.wilson(3, 2)


def test_estimate():
    e = bounds.estimate("x", 3, 4)
    assert e.value == 0.75
    assert e.ci_low < 0.75 < e.ci_high
    assert e.n == 4


def test_void_probability():
    assert_allclose(bounds.void_probability(1.0, 1.0, 2), math.exp(-math.pi))
    assert_allclose(bounds.ball_volume(1), 2.0)
    assert_allclose(bounds.ball_volume(3), 4 * math.pi / 3)


@settings(max_examples=50, deadline=None)
@given(st.floats(1, 500), st.floats(0.05, 0.95), st.floats(1.01, 3.0))
def test_chernoff_decreasing_in_lam(lam, eps, factor):
    for side in ("upper", "lower"):
        assert bounds.poisson_chernoff(lam * factor, eps, side) <= bounds.poisson_chernoff(lam, eps, side)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([1, 2, 3]), st.floats(0.1, 10), st.floats(3, 8), st.floats(0, 2))
def test_confinement_increasing_in_z(d, delta, k, extra):
    z = k * math.sqrt(delta)
    assert bounds.confinement_bound(d, delta, z) <= bounds.confinement_bound(d, delta, z + extra)
