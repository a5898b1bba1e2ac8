"""The four space-time building blocks of the swept decomposition.

Every component works level by level.  At level ``k`` (global sub-step
``start_step + k``) it assembles the values it knows into one rectangular
array, copies the output panel slabs out of it, and applies the stencil to
obtain the interior of level ``k + 1``.  Slabs are taken before the update.

Geometry, in the frame of each component (rows grow South, columns East):

upward pyramid
    level ``k`` covers ``[k, n-k)^2`` of the base block.  N/S slabs are its
    first/last two rows, W/E slabs its first/last two columns.

longitudinal bridge (valley between a northern and a southern pyramid)
    level ``k`` stacks ``north`` (2 rows), the bridge interior (``2k`` rows)
    and ``south`` (2 rows) into a ``(2k+4, n-2k)`` array.  E takes the last
    two columns of the top ``2k+2`` rows, W the first two columns of the
    bottom ``2k+2`` rows.

latitudinal bridge (valley between a western and an eastern pyramid)
    level ``k`` places ``west``, interior, ``east`` side by side in an
    ``(n-2k, 2k+4)`` array.  N takes the first two rows of the left ``2k+2``
    columns, S the last two rows of the right ``2k+2`` columns.

downward pyramid
    level ``k`` is a ``(2k+4)^2`` square: the interior ``(2k)^2`` surrounded
    by a two-deep ring made of four strips, each owning one corner
    (pinwheel): W = top-left ``(2k+2, 2)``, N = top-right ``(2, 2k+2)``,
    E = bottom-right ``(2k+2, 2)``, S = bottom-left ``(2, 2k+2)``.

A bridge is therefore not the plain transpose of the other bridge: the
pinwheel has a handedness, and the two bridges are related by a quarter
turn instead.  See docs/geometry.md for the derivation.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import KernelContractError, NumericError, ValidationError
from .grid import Direction, Grid, Orientation, Panel

UP = Orientation.UPWARD
DOWN = Orientation.DOWNWARD
N, S, W, E = Direction.NORTH, Direction.SOUTH, Direction.WEST, Direction.EAST


def advance(prog, t, block, where="", origin=(0, 0)):
    """Apply ``prog`` at sub-step ``t`` to ``block`` and validate the result.

    ``where`` names the caller for error messages; a ``(label, level)``
    tuple is formatted only when an error is raised.  ``origin`` is the
    frame position of the block's top-left corner.
    """
    out = prog.apply(t, block)
    shape = out.shape
    if shape[0] != block.shape[0] - 2 or shape[1] != block.shape[1] - 2 or shape[2] != prog.arity(t + 1):
        want = (block.shape[0] - 2, block.shape[1] - 2, prog.arity(t + 1))
        raise KernelContractError(f"{prog.name} at sub-step {t} returned shape {shape}, expected {want} ({_where(where)})")
    # A single reduction is non-finite iff some element is (or it overflowed,
    # which the exact test below rules out before raising).
    if not math.isfinite(np.add.reduce(out, axis=None)) and not np.isfinite(out).all():
        j, i, c = np.argwhere(~np.isfinite(out))[0]
        raise NumericError(f"{prog.name} produced non-finite component {c}",
                           location=f"{_where(where)} sub-step {t + 1} (i={i + origin[1] + 1}, j={j + origin[0] + 1})")
    out.flags.writeable = False
    return out


def _where(where):
    if isinstance(where, tuple):
        return f"{where[0]} level {where[1]}"
    return where


def _check_panels(prog, panels, orientation, expected_dirs, where):
    first = panels[0]
    n, t0 = first.n, first.start_step
    want = [prog.arity(t0 + k) for k in range(n // 2)]
    for p, d in zip(panels, expected_dirs):
        if p.orientation is not orientation:
            raise KernelContractError(f"{where}: expected {orientation.name} panel, got {p.orientation.name}")
        if p.direction is not d:
            raise KernelContractError(f"{where}: expected {d.name}-side panel, got {p.direction.name}")
        if p.n != n:
            raise KernelContractError(f"{where}: mismatched panel sizes {p.n} and {n}")
        if p.start_step != t0:
            raise KernelContractError(f"{where}: mismatched start steps {p.start_step} and {t0}")
        got = [slab.shape[2] for slab in p.levels]
        if got != want:
            k = next(k for k in range(len(want)) if k >= len(got) or got[k] != want[k])
            raise KernelContractError(f"{where}: {d.name} panel level {k} has arity "
                                      f"{got[k] if k < len(got) else None}, kernel expects {want[k]}")
    return n, t0


def upward_pyramid(prog, base):
    """Grow the pyramid on ``base``; return its (N, S, W, E) upward panels."""
    n, t0 = base.n, base.step
    if base.arity != prog.arity(t0):
        raise KernelContractError(f"base arity {base.arity} != kernel arity {prog.arity(t0)} at sub-step {t0}")
    sides = ([], [], [], [])
    cur = base.values
    for k in range(n // 2):
        sides[0].append(cur[:2])
        sides[1].append(cur[-2:])
        sides[2].append(cur[:, :2])
        sides[3].append(cur[:, -2:])
        if k < n // 2 - 1:
            cur = advance(prog, t0 + k, cur, ("upward", k), (k, k))
    return tuple(Panel._trusted(d, UP, n, t0, lv) for d, lv in zip((N, S, W, E), sides))


def longitudinal_bridge(prog, north, south):
    """Fill the valley between a pyramid's South side and the next pyramid's North side.

    ``north`` is the South panel of the northern pyramid, ``south`` the North
    panel of the southern one.  Returns the bridge's (W, E) downward panels.
    """
    n, t0 = _check_panels(prog, (north, south), UP, (S, N), "longitudinal bridge")
    west, east = [], []
    interior = np.empty((0, n, prog.arity(t0)))
    for k in range(n // 2):
        cur = np.concatenate((north.levels[k], interior, south.levels[k]), axis=0)
        east.append(cur[:2 * k + 2, -2:])
        west.append(cur[2:, :2])
        if k < n // 2 - 1:
            interior = advance(prog, t0 + k, cur, ("longitudinal bridge", k), (n // 2 - k - 2, k))
    return Panel._trusted(W, DOWN, n, t0, west), Panel._trusted(E, DOWN, n, t0, east)


def latitudinal_bridge(prog, west, east):
    """Fill the valley between a pyramid's East side and the next pyramid's West side.

    ``west`` is the East panel of the western pyramid, ``east`` the West
    panel of the eastern one.  Returns the bridge's (N, S) downward panels.
    """
    n, t0 = _check_panels(prog, (west, east), UP, (E, W), "latitudinal bridge")
    north, south = [], []
    interior = np.empty((n, 0, prog.arity(t0)))
    for k in range(n // 2):
        cur = np.concatenate((west.levels[k], interior, east.levels[k]), axis=1)
        north.append(cur[:2, :2 * k + 2])
        south.append(cur[-2:, 2:])
        if k < n // 2 - 1:
            interior = advance(prog, t0 + k, cur, ("latitudinal bridge", k), (k, n // 2 - k - 2))
    return Panel._trusted(N, DOWN, n, t0, north), Panel._trusted(S, DOWN, n, t0, south)


def downward_pyramid(prog, north, south, west, east):
    """Fill the inverted pyramid enclosed by four bridge panels.

    The arguments are named by where they sit relative to the pyramid, so
    ``north`` is the South panel of the latitudinal bridge above it,
    ``west`` the East panel of the longitudinal bridge to its left, and so
    on.  Returns the ``n x n`` grid at ``start_step + n/2``.
    """
    n, t0 = _check_panels(prog, (north, south, west, east), DOWN, (S, N, E, W), "downward pyramid")
    interior = np.empty((0, 0, prog.arity(t0)))
    for k in range(n // 2):
        m = 2 * k + 4
        block = np.empty((m, m, prog.arity(t0 + k)))
        block[:m - 2, :2] = west.levels[k]
        block[:2, 2:] = north.levels[k]
        block[2:, -2:] = east.levels[k]
        block[-2:, :m - 2] = south.levels[k]
        block[2:m - 2, 2:m - 2] = interior
        interior = advance(prog, t0 + k, block, ("downward", k), (n // 2 - k - 2, n // 2 - k - 2))
    return Grid._trusted(n, t0 + n // 2, interior)


def check_base(prog, base):
    if not isinstance(base, Grid):
        raise ValidationError("base", f"expected Grid, got {type(base).__name__}")
    if base.arity != prog.arity(base.step):
        raise KernelContractError(f"grid arity {base.arity} != kernel arity {prog.arity(base.step)} at sub-step {base.step}")
