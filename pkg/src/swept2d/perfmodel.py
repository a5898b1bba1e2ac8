"""Analytical cost model of the swept decomposition.

Per sub-step, a rank pays ``n^2 s`` for computing and, amortised over the
``n/2`` sub-steps of a half cycle, two latencies plus per-component
overheads::

    full        [(n^2 s)(n/2) + a_u(n) + a_d(n) + 2 a_b(n) + 2 tau] / (n/2)
    simplified  n^2 s + 4 tau / n

``tau`` is charged once per exchange round and read as a one-way latency.
Minimising the simplified form over real ``n`` gives ``n* = (2 tau / s)^(1/3)``
and a cost of ``6 tau / n*`` there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ValidationError

# Typical one-way interconnect latencies (seconds).
LATENCY_PRESETS = {
    "ec2": 150e-6,       # Amazon EC2 cloud
    "gige": 50e-6,       # typical Gigabit Ethernet
    "100gige": 5e-6,     # fast 100-Gigabit Ethernet
    "fdr-ib": 0.7e-6,    # Mellanox 56Gb/s FDR InfiniBand
}

# Seconds per sub-step per point for node / discretisation pairs.
COMPUTE_PRESETS = {
    "nehalem-fe": 800e-9,   # single Nehalem thread (10 GFLOPS), 8000 FLOP finite-element system
    "nehalem-fv": 40e-9,    # same node, 400 FLOP finite-volume system
    "nehalem-fd": 0.6e-9,   # same node, 6 FLOP finite-difference scalar
    "summit-fe": 200e-12,   # 40 TFLOPS GPU node, finite-element system
    "summit-fv": 10e-12,    # same node, finite-volume system
    "summit-fd": 150e-15,   # same node, finite-difference scalar
}

CURVE_COLUMNS = ("n", "s", "tau", "term_compute", "term_latency", "total")


def _check(n=None, s=None, tau=None):
    if n is not None and (isinstance(n, bool) or int(n) != n or n < 4 or n % 2):
        raise ValidationError("n", f"must be an even integer >= 4, got {n!r}")
    if s is not None and not (s > 0 and math.isfinite(s)):
        raise ValidationError("s", f"must be positive and finite, got {s!r}")
    if tau is not None and not (tau >= 0 and math.isfinite(tau)):
        raise ValidationError("tau", f"must be non-negative and finite, got {tau!r}")


@dataclass(frozen=True)
class CostParams:
    """Model inputs.  Overheads are linear, ``a_x(n) = c_x * n`` seconds."""

    n: int
    s: float
    tau: float
    c_u: float = 0.0
    c_d: float = 0.0
    c_b: float = 0.0

    def __post_init__(self):
        _check(self.n, self.s, self.tau)
        for name in ("c_u", "c_d", "c_b"):
            if getattr(self, name) < 0:
                raise ValidationError(name, f"must be non-negative, got {getattr(self, name)}")

    def alpha_u(self):
        return self.c_u * self.n

    def alpha_d(self):
        return self.c_d * self.n

    def alpha_b(self):
        return self.c_b * self.n


def predict_full(p):
    half = p.n / 2
    work = (p.n * p.n * p.s) * half
    return (work + p.alpha_u() + p.alpha_d() + 2 * p.alpha_b() + 2 * p.tau) / half


def predict_simplified(n, s, tau):
    _check(n, s, tau)
    return n * n * s + 4 * tau / n


def predict_classic(s, tau, n, rounds=2):
    """Per-sub-step cost of a halo exchange with ``rounds`` latencies per sub-step."""
    _check(n, s, tau)
    return n * n * s + rounds * tau


class Optimum(NamedTuple):
    n: int
    cost: float
    analytic: float  # real-valued stationary point (2 tau / s)^(1/3)


def optimal_n(s, tau, n_min=4, n_max=4096):
    """Even ``n`` in ``[n_min, n_max]`` minimising the simplified cost.

    Every candidate is evaluated; ties go to the smaller ``n``.
    """
    _check(None, s, tau)
    _check(n_min)
    if n_max < n_min:
        raise ValidationError("n_max", f"must be >= n_min ({n_min}), got {n_max}")
    ns = np.arange(n_min, n_max + 1, 2, dtype=np.float64)
    costs = ns * ns * s + 4 * tau / ns
    i = int(np.argmin(costs))  # first minimum, i.e. smallest n on ties
    return Optimum(int(ns[i]), float(costs[i]), (2 * tau / s) ** (1.0 / 3.0))


def round_to_even(x):
    return 2 * int(round(x / 2))


def breaks_latency_barrier(s, tau, n_min=4, n_max=4096):
    """True when the best achievable per-sub-step cost is below ``tau``."""
    return optimal_n(s, tau, n_min, n_max).cost < tau


def model_curves(ns, s_values, tau_values):
    """Rows of the compute, latency and total terms for every (s, tau, n)."""
    rows = []
    for s in s_values:
        for tau in tau_values:
            for n in ns:
                _check(n, s, tau)
                compute, latency = n * n * s, 4 * tau / n
                rows.append(dict(n=n, s=s, tau=tau, term_compute=compute, term_latency=latency,
                                 total=compute + latency))
    return rows


# --- overhead calibration -----------------------------------------------

def component_work(n):
    """Point updates per half cycle for each component kind.

    ``bridge`` is per bridge; a half cycle builds two.  The total
    ``upward + 2 bridge + downward`` equals ``n^3 / 2``.
    """
    _check(n)
    h = n // 2
    return {
        "upward": sum((n - 2 * k - 2) ** 2 for k in range(h - 1)),
        "bridge": sum((2 * k + 2) * (n - 2 * k - 2) for k in range(h - 1)),
        "downward": sum((2 * k + 2) ** 2 for k in range(h)),
    }


def fit_overheads(samples, s):
    """Least-squares ``c`` for ``a(n) = c n`` per component kind.

    ``samples`` maps ``n`` to measured mean seconds per call of
    ``upward``, ``bridge`` and ``downward``.  The compute share
    ``work * s`` is removed first; the fit goes through the origin.
    Returns ``{"c_u", "c_d", "c_b"}``.
    """
    _check(None, s)
    out = {}
    for key, name in (("c_u", "upward"), ("c_d", "downward"), ("c_b", "bridge")):
        ns = np.array(sorted(samples), dtype=np.float64)
        if ns.size == 0:
            raise ValidationError("samples", "need at least one n")
        alpha = np.array([samples[int(n)][name] - component_work(int(n))[name] * s for n in ns])
        c = float(np.dot(ns, alpha) / np.dot(ns, ns))
        out[key] = max(c, 0.0)
    return out


def samples_from_report(report):
    """Mean seconds per call of each component kind from an EngineReport."""
    times = report.component_times()
    out = {}
    for name, keys in (("upward", ("upward",)), ("downward", ("downward",)),
                       ("bridge", ("longitudinal", "latitudinal"))):
        sec = sum(times.get(k, (0.0, 0))[0] for k in keys)
        calls = sum(times.get(k, (0.0, 0))[1] for k in keys)
        out[name] = sec / calls if calls else 0.0
    return out
