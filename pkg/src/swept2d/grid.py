"""Core domain types: topologies, grids, panels, stencil programs.

Layout conventions used throughout the package:

* ``i`` is the x (column) index and grows East; ``j`` is the y (row) index
  and grows South.  North of ``(i, j)`` is ``(i, j - 1)``.
* Point arrays are stored row-major as ``values[j, i, component]``.
* Ranks are addressed by ``(cx, cy)`` and linearised as ``cy * px + cx``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import KernelContractError, ValidationError


class Direction(enum.IntEnum):
    NORTH = 0
    SOUTH = 1
    WEST = 2
    EAST = 3
    NORTHWEST = 4
    NORTHEAST = 5
    SOUTHWEST = 6
    SOUTHEAST = 7

    @property
    def offset(self):
        """(dx, dy) step toward this direction."""
        return _OFFSETS[self]

    @property
    def opposite(self):
        dx, dy = self.offset
        return _BY_OFFSET[(-dx, -dy)]


_OFFSETS = {
    Direction.NORTH: (0, -1),
    Direction.SOUTH: (0, 1),
    Direction.WEST: (-1, 0),
    Direction.EAST: (1, 0),
    Direction.NORTHWEST: (-1, -1),
    Direction.NORTHEAST: (1, -1),
    Direction.SOUTHWEST: (-1, 1),
    Direction.SOUTHEAST: (1, 1),
}
_BY_OFFSET = {v: k for k, v in _OFFSETS.items()}

SIDES = (Direction.NORTH, Direction.SOUTH, Direction.WEST, Direction.EAST)


class Orientation(enum.IntEnum):
    UPWARD = 0
    DOWNWARD = 1


def _check_side(n, name="n"):
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise ValidationError(name, f"must be an integer, got {n!r}")
    if n < 4:
        raise ValidationError(name, f"must be >= 4, got {n}")
    if n % 2:
        raise ValidationError(name, f"must be even, got {n}")


@dataclass(frozen=True)
class Topology:
    """A ``px`` by ``py`` doubly periodic grid of ranks, each owning ``n x n`` points."""

    px: int
    py: int
    n: int

    def __post_init__(self):
        for name in ("px", "py"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(name, f"must be a positive integer, got {v!r}")
        _check_side(self.n)

    @property
    def size(self):
        return self.px * self.py

    @property
    def width(self):
        return self.px * self.n

    @property
    def height(self):
        return self.py * self.n

    def coords(self):
        """All rank coordinates in linear (row-major) order."""
        return [(cx, cy) for cy in range(self.py) for cx in range(self.px)]

    def rank_of(self, coord):
        cx, cy = coord
        if not (0 <= cx < self.px and 0 <= cy < self.py):
            raise ValidationError("rank", f"{coord} outside {self.px}x{self.py} topology")
        return cy * self.px + cx

    def coord_of(self, rank):
        if not 0 <= rank < self.size:
            raise ValidationError("rank", f"{rank} outside topology of {self.size} ranks")
        return rank % self.px, rank // self.px

    def neighbor(self, coord, direction):
        return neighbor_of(self, coord, direction)

    def neighbor_rank(self, rank, direction):
        return self.rank_of(neighbor_of(self, self.coord_of(rank), direction))


def make_topology(px, py, n):
    return Topology(px, py, n)


def neighbor_of(topo, rank, direction):
    """Coordinates of the neighbour of ``rank`` in ``direction`` with periodic wrap."""
    cx, cy = rank
    topo.rank_of(rank)
    dx, dy = Direction(direction).offset
    return (cx + dx) % topo.px, (cy + dy) % topo.py


def constant_arity(a):
    return lambda t: a


@dataclass(frozen=True)
class StencilProgram:
    """A pointwise update rule reading a 3x3 neighbourhood.

    ``apply(t, block)`` receives a block of shape ``(h + 2, w + 2, arity(t))``
    and returns the ``(h, w, arity(t + 1))`` interior at sub-step ``t + 1``.
    A single 3x3 neighbourhood is the ``h = w = 1`` case.  Implementations
    must be elementwise in the interior so that the result for a point does
    not depend on the block it was evaluated in.
    """

    name: str
    arity: Callable[[int], int]
    apply: Callable[[int, np.ndarray], np.ndarray]
    period: int = 1

    def apply_point(self, t, nbhd):
        """Evaluate one point from a ``(3, 3, arity)`` neighbourhood."""
        nbhd = np.asarray(nbhd, dtype=np.float64)
        if nbhd.shape[:2] != (3, 3):
            raise KernelContractError(f"neighbourhood must be 3x3, got {nbhd.shape[:2]}")
        return np.asarray(self.apply(t, nbhd))[0, 0]


def _freeze(a):
    a = np.asarray(a, dtype=np.float64)
    if a.flags.writeable and a.base is None:
        a.flags.writeable = False
    elif a.flags.writeable:
        a = a.view()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """One rank's ``n x n`` block of state vectors at global sub-step ``step``."""

    n: int
    step: int
    values: np.ndarray

    def __post_init__(self):
        _check_side(self.n)
        v = _freeze(self.values)
        if v.ndim != 3 or v.shape[:2] != (self.n, self.n):
            raise ValidationError("values", f"expected shape ({self.n}, {self.n}, arity), got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def arity(self):
        return self.values.shape[2]

    @classmethod
    def _trusted(cls, n, step, values):
        g = object.__new__(cls)
        object.__setattr__(g, "n", n)
        object.__setattr__(g, "step", step)
        object.__setattr__(g, "values", values)
        return g


def panel_counts(n, orientation):
    """Per-level state-vector counts of a panel on an ``n x n`` base."""
    _check_side(n)
    orientation = Orientation(orientation)
    if orientation is Orientation.UPWARD:
        return [2 * (n - 2 * k) for k in range(n // 2)]
    return [2 * (2 * k + 2) for k in range(n // 2)]


def panel_shape(n, orientation):
    """Return ``(counts, total)``; the total is always ``n*n/2 + n``."""
    counts = panel_counts(n, orientation)
    return counts, sum(counts)


def slab_extent(direction, orientation, n, k):
    """(rows, cols) of level ``k`` of a panel.

    North/South slabs are two rows deep, West/East slabs two columns wide.
    """
    length = n - 2 * k if Orientation(orientation) is Orientation.UPWARD else 2 * k + 2
    if Direction(direction) in (Direction.NORTH, Direction.SOUTH):
        return 2, length
    return length, 2


@dataclass(frozen=True, eq=False)
class Panel:
    """One triangular side of a pyramid or bridge, stored level by level.

    ``levels[k]`` holds the values at sub-step ``start_step + k`` as an
    array of shape ``slab_extent(...) + (arity,)``; its row-major order is
    the canonical scan order used on the wire.
    """

    direction: Direction
    orientation: Orientation
    n: int
    start_step: int
    levels: Sequence[np.ndarray] = field(default_factory=tuple)

    def __post_init__(self):
        _check_side(self.n)
        d = Direction(self.direction)
        if d not in SIDES:
            raise ValidationError("direction", f"panels face N/S/W/E, got {d.name}")
        o = Orientation(self.orientation)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "orientation", o)
        if len(self.levels) != self.n // 2:
            raise ValidationError("levels", f"expected {self.n // 2} levels, got {len(self.levels)}")
        levels = []
        for k, slab in enumerate(self.levels):
            slab = _freeze(slab)
            want = slab_extent(d, o, self.n, k)
            if slab.ndim != 3 or slab.shape[:2] != want:
                raise ValidationError("levels", f"level {k} has shape {slab.shape}, expected {want} + (arity,)")
            levels.append(slab)
        object.__setattr__(self, "levels", tuple(levels))

    @classmethod
    def _trusted(cls, direction, orientation, n, start_step, levels):
        # Internal fast path for component outputs whose shapes hold by construction.
        p = object.__new__(cls)
        object.__setattr__(p, "direction", direction)
        object.__setattr__(p, "orientation", orientation)
        object.__setattr__(p, "n", n)
        object.__setattr__(p, "start_step", start_step)
        object.__setattr__(p, "levels", tuple(levels))
        return p

    @property
    def arities(self):
        return [slab.shape[2] for slab in self.levels]

    @property
    def count(self):
        return sum(slab.shape[0] * slab.shape[1] for slab in self.levels)

    def equals(self, other):
        """Bitwise equality including metadata."""
        if (self.direction, self.orientation, self.n, self.start_step) != (
            other.direction, other.orientation, other.n, other.start_step):
            return False
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.levels, other.levels))


@dataclass(frozen=True, eq=False)
class GlobalField:
    """The whole periodic domain at one sub-step.

    ``shift`` records the cyclic offset of rank-owned blocks relative to
    global coordinates; it is ``(0, 0)`` for fields produced by ``gather``.
    """

    width: int
    height: int
    step: int
    values: np.ndarray
    shift: tuple = (0, 0)

    def __post_init__(self):
        v = _freeze(self.values)
        if v.ndim != 3 or v.shape[:2] != (self.height, self.width):
            raise ValidationError("values", f"expected shape ({self.height}, {self.width}, arity), got {v.shape}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "shift", tuple(self.shift))

    @property
    def arity(self):
        return self.values.shape[2]

    @classmethod
    def from_function(cls, width, height, init_fn, step=0):
        """Build a field by calling ``init_fn(i, j)`` at every global point."""
        rows = [[np.asarray(init_fn(i, j), dtype=np.float64) for i in range(width)] for j in range(height)]
        arities = {v.shape for row in rows for v in row}
        if len(arities) != 1:
            raise KernelContractError(f"init_fn returned mixed shapes {sorted(arities)}")
        return cls(width, height, step, np.array(rows, dtype=np.float64))


def init_grid(topo, rank, init_fn, prog=None):
    """Build the step-0 block of ``rank`` from ``init_fn(global_i, global_j)``.

    When ``prog`` is given, every vector must have length ``prog.arity(0)``.
    """
    cx, cy = rank
    topo.rank_of(rank)
    n = topo.n
    want = prog.arity(0) if prog is not None else None
    out = None
    for lj in range(n):
        for li in range(n):
            gi, gj = cx * n + li, cy * n + lj
            v = np.asarray(init_fn(gi, gj), dtype=np.float64)
            if v.ndim != 1:
                raise KernelContractError(f"init_fn must return a 1-D state vector, got shape {v.shape}")
            if out is None:
                want = v.shape[0] if want is None else want
                out = np.empty((n, n, want), dtype=np.float64)
            if v.shape[0] != want:
                raise KernelContractError(f"init_fn returned arity {v.shape[0]} at ({gi}, {gj}), expected {want}")
            out[lj, li] = v
    return Grid(n, 0, out)


def scatter(topo, field):
    """Split a global field (shift ``(0, 0)``) into per-rank grids in rank order."""
    if (field.width, field.height) != (topo.width, topo.height):
        raise ValidationError("field", f"{field.width}x{field.height} does not match topology {topo.width}x{topo.height}")
    n = topo.n
    return [Grid(n, field.step, np.array(field.values[cy * n:(cy + 1) * n, cx * n:(cx + 1) * n]))
            for cx, cy in topo.coords()]
