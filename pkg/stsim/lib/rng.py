# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""Counter-based random streams.

Every draw in stsim comes from a Philox generator whose key is derived from
the run seed and a tuple naming what the stream is for (replica number,
purpose, ...). Two streams with different keys never share state, so the
order in which replicas are scheduled cannot change any result.
"""

import numpy as np

import logging
log = logging.getLogger(__name__)

PURPOSES = {
    "ppp": 1,
    "evolve": 2,
    "thin": 3,
    "couple": 4,
    "confine": 5,
    "phi0": 6,
    "coverage": 7,
}


def _encode(part):
    """Map a key part onto a non-negative integer.

    >>> [_encode(p) for p in (0, 1, -1, 2, -2)]
    [0, 2, 1, 4, 3]
    >>> _encode("evolve")
    2
    """
    if isinstance(part, str):
        return PURPOSES[part]
    part = int(part)
    return 2 * part if part >= 0 else -2 * part - 1


def stream(seed, *key):
    """Return a numpy Generator for (seed, *key)."""
    seq = np.random.SeedSequence(_encode(seed), spawn_key=tuple(_encode(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))
