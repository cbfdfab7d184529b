# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import math

import pytest

from stsim.lib.coupling import CouplingParams
from stsim.lib.mobility import SimConfig
from stsim.lib.tessellation import ScaleParams


@pytest.fixture
def desk_sim():
    """Evasion desk setting: d=2, r=1, beta=0.002, s=16, ten slices, L=3."""
    def make(lam, **kwargs):
        values = dict(d=2, lam=lam, r=1.0, L=3.0, beta=0.002, n_slices=10, s=16, seed=0)
        values.update(kwargs)
        return SimConfig(**values)
    return make


@pytest.fixture
def desk_scale():
    """ScaleParams whose scale-1 cells are the evasion cells."""
    return ScaleParams(d=2, ell=1.0 / (2 * math.sqrt(2)), beta=0.002, lam=5.0, r=1.0)


@pytest.fixture
def fractal_params():
    """d=1, m=7, kappa=2: the cheapest setting with a scale-2 ancestor."""
    return ScaleParams(d=1, ell=1.0, eta=1, m=7, kappa=2, lam=4.0, r=1.0)


@pytest.fixture
def coupling_params():
    return CouplingParams(d=1, delta=16.0, ell=1.0, K=29.0, K_inner=3.0, eps=0.5, beta=150.0)
