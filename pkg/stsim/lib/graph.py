# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

"""The scale-1 space-time cell graph: bounded windows, neighbourhoods,
cluster search and connected components."""

import itertools
from collections import deque

from .tessellation import WindowError

import logging
log = logging.getLogger(__name__)


class CellWindow(object):
    """Spatial indices with |i_a| <= half_width around ``center`` and time
    indices in [first, first + t_slices).

    >>> w = CellWindow(2, 1, 3)
    >>> w.contains((2,), 0), w.contains((3,), 0), w.contains((0,), 3)
    (True, False, False)
    >>> w.on_boundary((0,), 2), w.on_boundary((-2,), 0), w.on_boundary((0,), 1)
    (True, True, False)
    """

    def __init__(self, half_width, d, t_slices, first=0, center=None):
        if half_width < 0 or t_slices < 1:
            raise WindowError("empty window (half_width=%r, t_slices=%r)" % (half_width, t_slices))
        self.half_width = int(half_width)
        self.d = int(d)
        self.t_slices = int(t_slices)
        self.first = int(first)
        self.center = tuple(center) if center is not None else (0,) * self.d

    @classmethod
    def centered(cls, cell, half_width, t_slices):
        return cls(half_width, len(cell.i), t_slices, first=cell.tau, center=cell.i)

    @property
    def last(self):
        return self.first + self.t_slices - 1

    def contains(self, i, tau):
        return (self.first <= tau <= self.last
                and all(abs(a - c) <= self.half_width for a, c in zip(i, self.center)))

    def on_boundary(self, i, tau):
        return (tau == self.last
                or any(abs(a - c) == self.half_width for a, c in zip(i, self.center)))

    def spatial_indices(self):
        ranges = [range(c - self.half_width, c + self.half_width + 1) for c in self.center]
        return itertools.product(*ranges)

    def cells(self):
        for tau in range(self.first, self.last + 1):
            for i in self.spatial_indices():
                yield i, tau

    def __repr__(self):
        return "CellWindow(half_width=%d, d=%d, t=[%d, %d], center=%r)" % (
            self.half_width, self.d, self.first, self.last, self.center)


def offsets(d):
    """The 3^(d+1) - 1 non-zero space-time offsets."""
    return [delta for delta in itertools.product((-1, 0, 1), repeat=d + 1) if any(delta)]


def neighbors(i, tau, deltas=None):
    if deltas is None:
        deltas = offsets(len(i))
    for delta in deltas:
        yield tuple(a + e for a, e in zip(i, delta[:-1])), tau + delta[-1]


class UnionFind(object):
    """Disjoint sets with union by size and path compression."""

    def __init__(self, items=()):
        self._leader = {}
        self._size = {}
        for item in items:
            self.add(item)

    def add(self, item):
        if item not in self._leader:
            self._leader[item] = item
            self._size[item] = 1

    def find(self, item):
        path = [item]
        parent = self._leader[item]
        while parent != self._leader[parent]:
            path.append(parent)
            parent = self._leader[parent]
        for member in path:
            self._leader[member] = parent
        return parent

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._leader[rb] = ra
        self._size[ra] += self._size[rb]
        return ra

    def groups(self):
        out = {}
        for item in self._leader:
            out.setdefault(self.find(item), set()).add(item)
        return list(out.values())


def bfs_cluster(root, is_bad, window):
    """Cells reachable from ``root`` through bad cells inside ``window``.

    Returns (cells, touched) where ``touched`` is set when any cluster cell
    lies on the window boundary.  A good root gives an empty cluster.
    """
    i0, tau0 = root
    if not window.contains(i0, tau0):
        raise WindowError("root %r outside %r" % (root, window))
    if not is_bad(i0, tau0):
        return set(), False
    deltas = offsets(window.d)
    seen = {root}
    queue = deque([root])
    touched = False
    while queue:
        i, tau = queue.popleft()
        if window.on_boundary(i, tau):
            touched = True
        for cell in neighbors(i, tau, deltas):
            if cell in seen or not window.contains(*cell):
                continue
            if is_bad(*cell):
                seen.add(cell)
                queue.append(cell)
    return seen, touched


def connected_components(cells):
    """Components of a set of (i, tau) cells under space-time adjacency."""
    cells = set(cells)
    uf = UnionFind(cells)
    for cell in cells:
        for other in neighbors(*cell):
            if other in cells:
                uf.union(cell, other)
    return uf.groups()
