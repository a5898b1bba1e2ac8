"""Time-stepping engines: serial oracle, classic halo exchange, swept.

Both distributed engines run one worker per rank (threads of this process
by default) that talk only through a transport endpoint.  ``swept_rank`` and
``classic_rank`` are the per-rank bodies and can equally be driven from
separate processes over TCP.
"""

from __future__ import annotations

import contextlib
import logging
import sys
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .codec import decode_array, decode_panel, encode_array, encode_panel
from .components import advance, check_base, downward_pyramid, latitudinal_bridge, longitudinal_bridge, upward_pyramid
from .errors import ProtocolError, SweptError, TransportError, ValidationError
from .grid import Direction, GlobalField, Grid, Orientation, SIDES

log = logging.getLogger(__name__)

N, S, W, E = Direction.NORTH, Direction.SOUTH, Direction.WEST, Direction.EAST
UP, DOWN = Orientation.UPWARD, Orientation.DOWNWARD


# --- serial oracle ---------------------------------------------------------

def serial_reference(prog, field, substeps, record=False):
    """Advance a whole periodic field ``substeps`` times on one process.

    With ``record=True`` returns the list of fields at every sub-step
    (``substeps + 1`` entries), otherwise only the last one.
    """
    if field.shift != (0, 0):
        raise ValidationError("field", "serial reference needs an unshifted field")
    if substeps < 0:
        raise ValidationError("substeps", f"must be non-negative, got {substeps}")
    t = field.step
    if field.arity != prog.arity(t):
        raise ValidationError("field", f"arity {field.arity} != kernel arity {prog.arity(t)} at sub-step {t}")
    values = field.values
    history = [field]
    for _ in range(substeps):
        padded = np.pad(values, ((1, 1), (1, 1), (0, 0)), mode="wrap")
        values = advance(prog, t, padded, "serial")
        t += 1
        if record:
            history.append(GlobalField(field.width, field.height, t, values))
    if record:
        return history
    return GlobalField(field.width, field.height, t, values)


def gather(topo, grids, shift=(0, 0)):
    """Assemble per-rank grids into a global field in unshifted coordinates.

    ``shift`` is the offset of the blocks' origins relative to global
    coordinates, e.g. ``(n/2, n/2)`` after half a swept cycle.
    """
    steps = {g.step for g in grids}
    if len(steps) != 1:
        raise ValidationError("grids", f"ranks disagree on the sub-step: {sorted(steps)}")
    if len(grids) != topo.size:
        raise ValidationError("grids", f"expected {topo.size} grids, got {len(grids)}")
    n = topo.n
    out = np.empty((topo.height, topo.width, grids[0].arity))
    for g, (cx, cy) in zip(grids, topo.coords()):
        out[cy * n:(cy + 1) * n, cx * n:(cx + 1) * n] = g.values
    sx, sy = shift
    if sx or sy:
        out = np.roll(out, (sy, sx), axis=(0, 1))
    return GlobalField(topo.width, topo.height, steps.pop(), out)


# --- reporting ---------------------------------------------------------------

@dataclass
class RankStats:
    messages_sent: int = 0
    bytes_sent: int = 0
    exchanges: int = 0
    compute_time: float = 0.0
    wait_time: float = 0.0
    injected_delay: float = 0.0
    components: dict = field(default_factory=lambda: defaultdict(lambda: [0.0, 0]))

    def timed(self, name, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        dt = time.perf_counter() - t0
        self.compute_time += dt
        c = self.components[name]
        c[0] += dt
        c[1] += 1
        return out


@dataclass
class EngineReport:
    engine: str
    substeps: int
    wall_time: float
    ranks: list
    shift: tuple = (0, 0)

    @property
    def messages_per_rank(self):
        return [r.messages_sent for r in self.ranks]

    @property
    def bytes_per_rank(self):
        return [r.bytes_sent for r in self.ranks]

    @property
    def exchanges_per_rank(self):
        return [r.exchanges for r in self.ranks]

    @property
    def time_per_substep(self):
        return self.wall_time / self.substeps if self.substeps else float("nan")

    def component_times(self):
        """Total seconds and call counts per component, summed over ranks."""
        out = defaultdict(lambda: [0.0, 0])
        for r in self.ranks:
            for name, (sec, calls) in r.components.items():
                out[name][0] += sec
                out[name][1] += calls
        return {k: tuple(v) for k, v in out.items()}


# --- tags --------------------------------------------------------------------

def swept_tag(cycle, half, phase, direction):
    return ((((cycle * 2 + half) * 2 + phase) * 4 + int(direction)) & 0x3FFFFFFF) | 0x40000000


def classic_tag(step, phase, direction):
    return (((step * 2 + phase) * 4 + int(direction)) & 0x3FFFFFFF) | 0x80000000


# --- swept --------------------------------------------------------------------

class _Link:
    """A rank's endpoint plus bookkeeping for panel traffic."""

    def __init__(self, ep, stats, timeout):
        self.ep = ep
        self.stats = stats
        self.timeout = timeout

    def send_panel(self, dest, tag, panel):
        data = self.stats.timed("encode", encode_panel, panel)
        self.ep.send(dest, tag, data)
        self.stats.messages_sent += 1
        self.stats.bytes_sent += len(data)

    def recv_panel(self, src, tag, direction, orientation, n, start):
        t0 = time.perf_counter()
        data = self.ep.recv(src, tag, self.timeout)
        self.stats.wait_time += time.perf_counter() - t0
        p = self.stats.timed("decode", decode_panel, data)
        if (p.direction, p.orientation, p.n, p.start_step) != (direction, orientation, n, start):
            raise ProtocolError(
                f"rank {self.ep.rank}: expected {direction.name}/{orientation.name} panel n={n} at sub-step {start} "
                f"from rank {src}, got {p.direction.name}/{p.orientation.name} n={p.n} at sub-step {p.start_step}")
        return p


def swept_half(prog, nb, link, grid, cycle, half, fault=False):
    """Advance ``grid`` by ``n/2`` sub-steps with one half of the swept cycle.

    Half 0 exchanges toward North/West and leaves the block shifted by
    ``(+n/2, +n/2)``; half 1 exchanges toward South/East and undoes the shift.
    ``nb`` maps each side to the neighbouring rank.
    """
    n, t0 = grid.n, grid.step
    st = link.stats
    up_n, up_s, up_w, up_e = st.timed("upward", upward_pyramid, prog, grid)
    if half == 0:
        link.send_panel(nb[N], swept_tag(cycle, 0, 0, N), up_n)
        link.send_panel(nb[W], swept_tag(cycle, 0, 0, W), up_w)
        south_n = link.recv_panel(nb[S], swept_tag(cycle, 0, 0, N), N, UP, n, t0)
        east_w = link.recv_panel(nb[E], swept_tag(cycle, 0, 0, W), W, UP, n, t0)
        st.exchanges += 1
        b_w, b_e = st.timed("longitudinal", longitudinal_bridge, prog, up_s, south_n)
        l_n, l_s = st.timed("latitudinal", latitudinal_bridge, prog, up_e, east_w)
        link.send_panel(nb[N], swept_tag(cycle, 0, 1, N), l_n)
        link.send_panel(nb[W], swept_tag(cycle, 0, 1, W), b_w)
        d_s = link.recv_panel(nb[S], swept_tag(cycle, 0, 1, N), N, DOWN, n, t0)
        d_e = link.recv_panel(nb[E], swept_tag(cycle, 0, 1, W), W, DOWN, n, t0)
        st.exchanges += 1
        west = b_e
        if fault:
            west = type(b_e)._trusted(E, DOWN, n, t0, b_w.levels)
        return st.timed("downward", downward_pyramid, prog, l_s, d_s, west, d_e)
    link.send_panel(nb[S], swept_tag(cycle, 1, 0, S), up_s)
    link.send_panel(nb[E], swept_tag(cycle, 1, 0, E), up_e)
    north_s = link.recv_panel(nb[N], swept_tag(cycle, 1, 0, S), S, UP, n, t0)
    west_e = link.recv_panel(nb[W], swept_tag(cycle, 1, 0, E), E, UP, n, t0)
    st.exchanges += 1
    b_w, b_e = st.timed("longitudinal", longitudinal_bridge, prog, north_s, up_n)
    l_n, l_s = st.timed("latitudinal", latitudinal_bridge, prog, west_e, up_w)
    link.send_panel(nb[S], swept_tag(cycle, 1, 1, S), l_s)
    link.send_panel(nb[E], swept_tag(cycle, 1, 1, E), b_e)
    d_n = link.recv_panel(nb[N], swept_tag(cycle, 1, 1, S), S, DOWN, n, t0)
    d_w = link.recv_panel(nb[W], swept_tag(cycle, 1, 1, E), E, DOWN, n, t0)
    st.exchanges += 1
    return st.timed("downward", downward_pyramid, prog, d_n, l_n, d_w, b_w)


def swept_rank(prog, topo, endpoint, rank, grid, halves, first_half=0, stats=None, fault=False, timeout=None):
    """Per-rank body of the swept engine; returns ``(grid, stats)``."""
    check_base(prog, grid)
    stats = stats or RankStats()
    link = _Link(endpoint, stats, timeout)
    nb = {d: topo.neighbor_rank(rank, d) for d in SIDES}
    for h in range(halves):
        half = (first_half + h) % 2
        cycle = (first_half + h) // 2
        grid = swept_half(prog, nb, link, grid, cycle, half, fault and h == 0 and rank == 0)
    return grid, stats


# --- classic -------------------------------------------------------------------

def classic_rank(prog, topo, endpoint, rank, grid, substeps, stats=None, timeout=None):
    """Per-rank body of the halo-exchange engine; returns ``(grid, stats)``.

    Each sub-step first swaps East/West edge columns, then North/South edge
    rows extended by the corner values just received, so the diagonal
    neighbours' corners arrive without extra messages.
    """
    check_base(prog, grid)
    stats = stats or RankStats()
    n = topo.n
    nb = {d: topo.neighbor_rank(rank, d) for d in SIDES}
    self_x, self_y = topo.px == 1, topo.py == 1

    def exchange(step, phase, lo_dir, hi_dir, lo_edge, hi_edge, shape):
        # lo_edge travels toward lo_dir, hi_edge toward hi_dir; returns
        # (halo on the lo side, halo on the hi side).
        if (self_x if phase == 0 else self_y):
            return hi_edge, lo_edge
        for d, edge in ((lo_dir, lo_edge), (hi_dir, hi_edge)):
            data = stats.timed("encode", encode_array, edge)
            endpoint.send(nb[d], classic_tag(step, phase, d), data)
            stats.messages_sent += 1
            stats.bytes_sent += len(data)
        t0 = time.perf_counter()
        lo = endpoint.recv(nb[lo_dir], classic_tag(step, phase, hi_dir), timeout)
        hi = endpoint.recv(nb[hi_dir], classic_tag(step, phase, lo_dir), timeout)
        stats.wait_time += time.perf_counter() - t0
        stats.exchanges += 1
        try:
            return decode_array(lo, shape), decode_array(hi, shape)
        except SweptError as exc:
            raise ProtocolError(f"rank {rank}: bad halo at sub-step {step}: {exc}") from exc

    for _ in range(substeps):
        v = grid.values
        a = v.shape[2]
        step = grid.step
        west, east = exchange(step, 0, W, E, v[:, 0], v[:, -1], (n, a))
        top = np.concatenate((west[:1], v[0], east[:1]))
        bottom = np.concatenate((west[-1:], v[-1], east[-1:]))
        north, south = exchange(step, 1, N, S, top, bottom, (n + 2, a))
        padded = np.empty((n + 2, n + 2, a))
        padded[1:-1, 1:-1] = v
        padded[1:-1, 0] = west
        padded[1:-1, -1] = east
        padded[0] = north
        padded[-1] = south
        out = stats.timed("stencil", advance, prog, step, padded, f"classic rank {rank}")
        grid = Grid._trusted(n, step + 1, out)
    return grid, stats


# --- multi-rank drivers -----------------------------------------------------

@contextlib.contextmanager
def fast_switching(interval=5e-5):
    """Shorten the interpreter's thread switch interval while ranks run.

    With the default 5 ms slice a rank that just received a message can
    wait that long for the lock held by a computing neighbour, which would
    swamp the latencies being measured.
    """
    old = sys.getswitchinterval()
    sys.setswitchinterval(interval)
    try:
        yield
    finally:
        sys.setswitchinterval(old)


def _endpoint(transport, rank):
    if hasattr(transport, "endpoint"):
        return transport.endpoint(rank)
    return transport[rank]


def run_ranks(topo, transport, body):
    """Run ``body(rank, endpoint)`` for every rank on its own thread.

    All ranks start together after a barrier.  If any rank fails the
    transport is closed so blocked peers wake up, and the first failure is
    re-raised.  Returns ``(results, wall_time)``.
    """
    size = topo.size
    results = [None] * size
    errors = []
    lock = threading.Lock()
    barrier = threading.Barrier(size)
    starts, ends = [0.0] * size, [0.0] * size

    def worker(rank):
        try:
            ep = _endpoint(transport, rank)
            barrier.wait()
            starts[rank] = time.perf_counter()
            results[rank] = body(rank, ep)
            ends[rank] = time.perf_counter()
        except BaseException as exc:  # noqa: BLE001 - forwarded to the caller
            with lock:
                errors.append((time.perf_counter(), rank, exc))
            barrier.abort()
            transport.close(f"rank {rank} failed: {exc}")

    threads = [threading.Thread(target=worker, args=(r,), name=f"rank-{r}", daemon=True) for r in range(size)]
    with fast_switching():
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if errors:
        # The earliest non-transport failure is the root cause; the rest are
        # peers woken by the abort.
        errors.sort(key=lambda e: (isinstance(e[2], (TransportError, threading.BrokenBarrierError)), e[0]))
        _, rank, exc = errors[0]
        log.debug("rank %d failed first: %r", rank, exc)
        raise exc
    return results, max(ends) - min(starts)


def _stats_from(stats, before, after):
    stats.injected_delay = after.injected_delay - before.injected_delay
    return stats


def _run(engine, topo, transport, grids, body):
    if len(grids) != topo.size:
        raise ValidationError("grids", f"expected {topo.size} grids, got {len(grids)}")
    before = [_endpoint(transport, r).counters.snapshot() for r in range(topo.size)]
    results, wall = run_ranks(topo, transport, body)
    out_grids = [g for g, _ in results]
    stats = [_stats_from(s, before[r], _endpoint(transport, r).counters) for r, (_, s) in enumerate(results)]
    return out_grids, stats, wall


def run_swept(prog, topo, transport, grids, cycles=1, *, halves=None, shift=(0, 0), fault=False, timeout=None):
    """Advance all ranks by ``cycles`` swept cycles (``n`` sub-steps each).

    ``halves`` overrides the number of half cycles.  ``shift`` is the block
    offset of ``grids`` (``(0, 0)`` or ``(n/2, n/2)``); it decides which half
    runs first.  ``fault=True`` deliberately feeds rank 0 the wrong bridge
    panel once, to show that the verification catches wiring errors.
    Returns ``(grids, report)``; ``report.shift`` is the final block offset.
    """
    n = topo.n
    halves = 2 * cycles if halves is None else halves
    if halves < 0:
        raise ValidationError("halves", f"must be non-negative, got {halves}")
    shift = tuple(shift)
    if shift not in ((0, 0), (n // 2, n // 2)):
        raise ValidationError("shift", f"must be (0, 0) or ({n // 2}, {n // 2}), got {shift}")
    first = 0 if shift == (0, 0) else 1

    def body(rank, ep):
        return swept_rank(prog, topo, ep, rank, grids[rank], halves, first, fault=fault, timeout=timeout)

    out, stats, wall = _run("swept", topo, transport, grids, body)
    final = (0, 0) if (first + halves) % 2 == 0 else (n // 2, n // 2)
    return out, EngineReport("swept", halves * n // 2, wall, stats, final)


def run_classic(prog, topo, transport, grids, substeps, *, timeout=None):
    """Advance all ranks by ``substeps`` sub-steps with a halo exchange each."""

    def body(rank, ep):
        return classic_rank(prog, topo, ep, rank, grids[rank], substeps, timeout=timeout)

    out, stats, wall = _run("classic", topo, transport, grids, body)
    return out, EngineReport("classic", substeps, wall, stats)
