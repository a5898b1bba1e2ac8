import numpy as np
import pytest

from swept2d import InProcTransport, make_topology, scatter
from swept2d.kernels import build_kernel

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Record one acceptance line; the terminal summary lists them all."""
    results = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}" + (f"  [{detail}]" if detail else "")
        results.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results, key=lambda r: r[0]):
            terminalreporter.write_line(line)


@pytest.fixture
def setup_kernel():
    """Build ``(prog, topo, field, grids)`` for a named kernel and topology."""

    def make(name, px, py, n, seed=0, **kw):
        topo = make_topology(px, py, n)
        prog, field = build_kernel(name, topo.width, topo.height, seed=seed, **kw)
        return prog, topo, field, scatter(topo, field)

    return make


@pytest.fixture
def inproc():
    made = []

    def make(size):
        t = InProcTransport(size, timeout=20.0)
        made.append(t)
        return t

    yield make
    for t in made:
        t.close()


def bitwise_equal(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.tobytes() == b.tobytes()
