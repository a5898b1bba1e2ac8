"""Stencil programs: wave, Euler (RK4), the two-sub-step wide stencil, and
small kernels used by tests and the verifier.

Every ``apply`` works on a padded block ``b`` of shape ``(h+2, w+2, a)``
using only elementwise arithmetic (+, -, *, /), so a point's result is
bitwise independent of the block it is computed in.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

try:  # optional: compiled loops for the wave kernel
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

from .errors import KernelContractError, NumericError, ValidationError
from .grid import GlobalField, StencilProgram, constant_arity

# Interior and the four face neighbours of a padded block.
_C = (slice(1, -1), slice(1, -1))
_N = (slice(None, -2), slice(1, -1))
_S = (slice(2, None), slice(1, -1))
_W = (slice(1, -1), slice(None, -2))
_E = (slice(1, -1), slice(2, None))


def _arity_check(block, want, name, t):
    if block.shape[2] != want:
        raise KernelContractError(f"{name}: sub-step {t} expects arity {want}, got {block.shape[2]}")


# --- trivial kernels -----------------------------------------------------

def identity_substep(t, b):
    return b[_C].copy()


def increment_substep(t, b):
    return b[_C] + 1.0


def average_substep(t, b):
    """Five-point average."""
    return ((((b[_C] + b[_N]) + b[_S]) + b[_W]) + b[_E]) * 0.2


def linear_substep(t, b, weights):
    """Fixed linear combination of all nine neighbours (row-major order)."""
    out = b[:-2, :-2] * weights[0, 0]
    for dy in range(3):
        for dx in range(3):
            if dy or dx:
                out = out + b[dy:dy + b.shape[0] - 2, dx:dx + b.shape[1] - 2] * weights[dy, dx]
    return out


def identity(arity=1):
    return StencilProgram("identity", constant_arity(arity), identity_substep)


def increment(arity=1):
    return StencilProgram("increment", constant_arity(arity), increment_substep)


def average(arity=1):
    return StencilProgram("average", constant_arity(arity), average_substep)


def random_linear(seed, arity=1):
    """A linear kernel with seeded positive weights summing to one."""
    w = np.random.default_rng(seed).uniform(0.1, 1.0, size=(3, 3))
    w = w / w.sum()
    return StencilProgram(f"linear-{seed}", constant_arity(arity), partial(linear_substep, weights=w))


# --- 2D wave equation ----------------------------------------------------

@dataclass(frozen=True)
class WaveConfig:
    """Leapfrog wave solver on a unit-spaced grid.

    ``sigma`` is the width of the initial Gaussian pulse as a fraction of
    the smaller domain side; the pulse sits at the domain centre.
    """

    cfl: float = 0.3
    amplitude: float = 1.0
    sigma: float = 0.08

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0 / math.sqrt(2.0):
            raise ValidationError("cfl", f"must lie in (0, 1/sqrt(2)], got {self.cfl}")


def _wave_loops(b, c2):
    h, w = b.shape[0] - 2, b.shape[1] - 2
    out = np.empty((h, w, 2))
    k = 2.0 - 4.0 * c2
    for j in range(h):
        for i in range(w):
            u = b[j + 1, i + 1, 0]
            out[j, i, 0] = (c2 * ((b[j + 1, i + 2, 0] + b[j + 1, i, 0]) + (b[j, i + 1, 0] + b[j + 2, i + 1, 0]))
                            + (k * u - b[j + 1, i + 1, 1]))
            out[j, i, 1] = u
    return out


# Same operations in the same order as the array version below, so both
# paths agree bitwise; the compiled one only removes per-call overhead,
# which dominates on the small blocks of the swept components.
_wave_jit = None
if numba is not None and not os.environ.get("SWEPT2D_NO_JIT"):
    _wave_jit = numba.njit(cache=True)(_wave_loops)


def wave_substep_array(t, b, cfl=0.3):
    _arity_check(b, 2, "wave", t)
    c2 = cfl * cfl
    u = b[1:-1, 1:-1, 0]
    out = np.empty(u.shape + (2,))
    out[..., 0] = (c2 * ((b[1:-1, 2:, 0] + b[1:-1, :-2, 0]) + (b[:-2, 1:-1, 0] + b[2:, 1:-1, 0]))
                   + ((2.0 - 4.0 * c2) * u - b[1:-1, 1:-1, 1]))
    out[..., 1] = u
    return out


def wave_substep(t, b, cfl=0.3):
    """(u, u_prev) -> (2u - u_prev + cfl^2 * laplacian(u), u).

    Evaluated as ``c2 * ((E + W) + (N + S)) + ((2 - 4 c2) u - u_prev)``,
    which costs fewer operations than the textbook grouping.
    """
    if _wave_jit is None or b.dtype != np.float64:
        return wave_substep_array(t, b, cfl)
    _arity_check(b, 2, "wave", t)
    return _wave_jit(b, cfl * cfl)


def wave(config=WaveConfig()):
    if _wave_jit is not None:
        # Compile (or load from cache) before any timing; read-only arrays
        # are a separate specialisation.
        probe = np.zeros((3, 3, 2))
        _wave_jit(probe, 0.0)
        probe.flags.writeable = False
        _wave_jit(probe, 0.0)
    return StencilProgram("wave", constant_arity(2), partial(wave_substep, cfl=config.cfl))


def wave_initial(config, width, height):
    """Centred Gaussian pulse at rest: u = u_prev."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    s = config.sigma * min(width, height)
    r2 = (x - width / 2.0) ** 2 + (y - height / 2.0) ** 2
    u = config.amplitude * np.exp(-r2 / (2.0 * s * s))
    return np.stack((u, u), axis=-1)


# --- wide stencil split into two sub-steps -------------------------------

def wide_arity(t):
    return 1 if t % 2 == 0 else 5


def wide_stencil_substeps(t, b):
    """Even sub-steps push [u, u_W, u_E, u_N, u_S]; odd ones combine them into
    u_{i-2,j} + u_{i+2,j} + u_{i,j-2} + u_{i,j+2} - 4 u_{i,j}."""
    _arity_check(b, wide_arity(t), "wide-stencil", t)
    if t % 2 == 0:
        c = b[..., 0]
        return np.stack((c[_C], c[_W], c[_E], c[_N], c[_S]), axis=-1)
    out = (((b[1:-1, :-2, 1] + b[1:-1, 2:, 2]) + b[:-2, 1:-1, 3]) + b[2:, 1:-1, 4]) - 4.0 * b[1:-1, 1:-1, 0]
    return out[..., None]


def wide_stencil():
    return StencilProgram("wide-stencil", wide_arity, wide_stencil_substeps, period=2)


def wide_stencil_direct(u):
    """Reference: the five-wide stencil applied once on a periodic 2-D array."""
    return (((np.roll(u, 2, axis=1) + np.roll(u, -2, axis=1)) + np.roll(u, 2, axis=0))
            + np.roll(u, -2, axis=0)) - 4.0 * u


# --- compressible Euler, RK4 ---------------------------------------------

EULER_ARITY = 13  # q(4) | stage base(4) | RK accumulator(4) | obstacle mask


@dataclass(frozen=True)
class EulerConfig:
    lx: float = 50.0
    ly: float = 25.0
    nx: int = 1024
    ny: int = 512
    dt: float = 1e-6
    rho: float = 1.084
    mach: float = 0.2
    p: float = 101325.0
    gamma: float = 1.4
    # Penalisation strength of the obstacle; 0 disables it.
    obstacle_sigma: float = 0.0
    # Relative amplitude and width (domain units) of an initial density/pressure bump.
    pulse: float = 0.0
    pulse_width: float = 2.0

    def __post_init__(self):
        for name in ("lx", "ly", "dt", "rho", "p"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, f"must be positive, got {getattr(self, name)}")
        for name in ("nx", "ny"):
            if getattr(self, name) < 1:
                raise ValidationError(name, f"must be positive, got {getattr(self, name)}")

    @property
    def dx(self):
        return self.lx / self.nx

    @property
    def dy(self):
        return self.ly / self.ny

    @property
    def sound_speed(self):
        return math.sqrt(self.gamma * self.p / self.rho)

    @property
    def u(self):
        return self.sound_speed * self.mach


def _euler_rhs(q, chi, cfg):
    """-div F(q) with skew-symmetric convective terms, for the block interior."""
    g1 = cfg.gamma - 1.0
    hx = 1.0 / (2.0 * cfg.dx)
    hy = 1.0 / (2.0 * cfg.dy)
    rho, ru, rv, en = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    u = ru / rho
    v = rv / rho
    p = g1 * (en - 0.5 * (ru * u + rv * v))
    h = (en + p) / rho

    def ddx(f):
        return (f[1:-1, 2:] - f[1:-1, :-2]) * hx

    def ddy(f):
        return (f[2:, 1:-1] - f[:-2, 1:-1]) * hy

    def conv(phi):
        # 1/2 [d(m phi) + m d(phi) + phi d(m)] in each direction, m the mass flux
        x = 0.5 * ((ddx(ru * phi) + ru[_C] * ddx(phi)) + phi[_C] * ddx(ru))
        y = 0.5 * ((ddy(rv * phi) + rv[_C] * ddy(phi)) + phi[_C] * ddy(rv))
        return x + y

    out = np.empty((rho.shape[0] - 2, rho.shape[1] - 2, 4))
    out[..., 0] = -(ddx(ru) + ddy(rv))
    out[..., 1] = -(conv(u) + ddx(p))
    out[..., 2] = -(conv(v) + ddy(p))
    out[..., 3] = -conv(h)
    if cfg.obstacle_sigma:
        damp = cfg.obstacle_sigma * chi
        out[..., 1] -= damp * ru[_C]
        out[..., 2] -= damp * rv[_C]
    return out


def euler_substep(t, b, cfg):
    """One classical RK4 stage; ``t % 4`` selects the stage."""
    _arity_check(b, EULER_ARITY, "euler", t)
    stage = t % 4
    k = _euler_rhs(b[..., 0:4], b[1:-1, 1:-1, 12], cfg)
    c = b[1:-1, 1:-1]
    out = np.empty(c.shape)
    dt = cfg.dt
    if stage == 0:
        base = c[..., 0:4]
        out[..., 4:8] = base
        out[..., 8:12] = k
        out[..., 0:4] = base + (0.5 * dt) * k
    elif stage == 3:
        q = c[..., 4:8] + (dt / 6.0) * (c[..., 8:12] + k)
        out[..., 0:4] = q
        out[..., 4:8] = q
        out[..., 8:12] = 0.0
    else:
        base = c[..., 4:8]
        out[..., 4:8] = base
        out[..., 8:12] = c[..., 8:12] + 2.0 * k
        out[..., 0:4] = base + ((0.5 * dt) if stage == 1 else dt) * k
    out[..., 12] = c[..., 12]
    q = out[..., 0:4]
    rho = q[..., 0]
    p = (cfg.gamma - 1.0) * (q[..., 3] - 0.5 * (q[..., 1] * q[..., 1] + q[..., 2] * q[..., 2]) / rho)
    bad = ~((rho > 0.0) & (p > 0.0))
    if bad.any():
        j, i = np.argwhere(bad)[0]
        raise NumericError("euler: non-physical state (rho or p <= 0)", location=f"sub-step {t + 1} block (i={i}, j={j})")
    return out


def euler(config=EulerConfig()):
    return StencilProgram("euler", constant_arity(EULER_ARITY), partial(euler_substep, cfg=config), period=4)


def obstacle_mask(cfg, x, y):
    """exp(-(x^2 + (y + 0.25 ly/nx)^2)^8) about the domain centre."""
    r2 = x * x + (y + 0.25 * cfg.ly / cfg.nx) ** 2
    return np.exp(-(r2 ** 8))


def euler_initial(cfg):
    """Free stream plus an optional centred density/pressure bump."""
    j, i = np.mgrid[0:cfg.ny, 0:cfg.nx].astype(np.float64)
    x = (i + 0.5) * cfg.dx - cfg.lx / 2.0
    y = (j + 0.5) * cfg.dy - cfg.ly / 2.0
    bump = cfg.pulse * np.exp(-(x * x + y * y) / (2.0 * cfg.pulse_width ** 2))
    rho = cfg.rho * (1.0 + bump)
    p = cfg.p * (1.0 + bump)
    u = np.full_like(rho, cfg.u)
    out = np.zeros((cfg.ny, cfg.nx, EULER_ARITY))
    out[..., 0] = rho
    out[..., 1] = rho * u
    out[..., 2] = 0.0
    out[..., 3] = p / (cfg.gamma - 1.0) + 0.5 * rho * u * u
    out[..., 4:8] = out[..., 0:4]
    out[..., 12] = obstacle_mask(cfg, x, y)
    return out


def euler_pressure(values, cfg):
    q = values[..., 0:4]
    return (cfg.gamma - 1.0) * (q[..., 3] - 0.5 * (q[..., 1] ** 2 + q[..., 2] ** 2) / q[..., 0])


# --- registry used by the CLI and the verifier ---------------------------

KERNEL_NAMES = ("identity", "increment", "average", "linear", "wide-stencil", "wave", "euler")


def _simple_init(init, width, height, seed, arity=1):
    if init == "ones":
        return np.ones((height, width, arity))
    if init == "index":
        j, i = np.mgrid[0:height, 0:width].astype(np.float64)
        return np.repeat((j * width + i)[..., None], arity, axis=2)
    if init == "random":
        return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(height, width, arity))
    raise ValidationError("init", f"unknown initial condition {init!r}")


def build_kernel(name, width, height, seed=0, init=None, **params):
    """Return ``(program, initial GlobalField)`` for a named kernel.

    ``params`` feed the kernel's config (``cfl`` for wave; any EulerConfig
    field for euler).  Euler's resolution is always ``width x height``.
    """
    allowed = {"wave": {"cfl", "amplitude", "sigma"},
               "euler": set(EulerConfig.__dataclass_fields__) - {"nx", "ny"}}.get(name, set())
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ValidationError("params", f"kernel {name!r} does not take {', '.join(unknown)}")
    if name == "identity":
        return identity(), GlobalField(width, height, 0, _simple_init(init or "random", width, height, seed))
    if name == "increment":
        return increment(), GlobalField(width, height, 0, _simple_init(init or "ones", width, height, seed))
    if name == "average":
        return average(), GlobalField(width, height, 0, _simple_init(init or "random", width, height, seed))
    if name == "linear":
        return random_linear(seed), GlobalField(width, height, 0, _simple_init(init or "random", width, height, seed))
    if name == "wide-stencil":
        return wide_stencil(), GlobalField(width, height, 0, _simple_init(init or "random", width, height, seed))
    if name == "wave":
        cfg = WaveConfig(**{k: float(v) for k, v in params.items() if k in ("cfl", "amplitude", "sigma")})
        if init in (None, "pulse"):
            values = wave_initial(cfg, width, height)
        else:
            values = _simple_init(init, width, height, seed, arity=2)
        return wave(cfg), GlobalField(width, height, 0, values)
    if name == "euler":
        defaults = EulerConfig()
        fields = {f: type(getattr(defaults, f))(params[f]) for f in EulerConfig.__dataclass_fields__ if f in params}
        cfg = EulerConfig(**fields)
        cfg = replace(cfg, nx=width, ny=height)
        if init == "random" and not cfg.pulse:
            cfg = replace(cfg, pulse=0.05)
        return euler(cfg), GlobalField(width, height, 0, euler_initial(cfg))
    raise ValidationError("kernel", f"unknown kernel {name!r}; choose from {', '.join(KERNEL_NAMES)}")
