"""The nine acceptance criteria, each at its stated tolerance.

Each test records one PASS/FAIL line (shown in the terminal summary) and
then asserts, so a failing criterion is red in the test report too.
"""

import math
import statistics
import time

import numpy as np

from swept2d import (InProcTransport, LatencyTransport, Orientation, gather, make_topology, run_classic,
                     run_swept, scatter, serial_reference)
from swept2d.codec import decode_panel, encode_panel
from swept2d.grid import Direction, Panel, panel_shape, slab_extent
from swept2d.kernels import WaveConfig, build_kernel
from swept2d.perfmodel import (COMPUTE_PRESETS, LATENCY_PRESETS, CostParams, optimal_n, predict_full,
                               predict_simplified, round_to_even)
from swept2d.transport import TcpGroup, local_roster

from conftest import bitwise_equal
from test_codec import GOLDEN, golden_panel
from test_kernels import wave_error


def test_criterion_1_engine_equivalence(record_criterion):
    start = time.perf_counter()
    failures, runs = [], 0
    for kernel in ("identity", "increment", "wide-stencil", "wave", "euler"):
        for px, py in ((1, 1), (2, 2), (2, 3), (3, 3)):
            for n in (4, 8, 16):
                topo = make_topology(px, py, n)
                prog, field = build_kernel(kernel, topo.width, topo.height, seed=11)
                history = serial_reference(prog, field, 3 * n, record=True)
                grids = scatter(topo, field)
                for cycles in (1, 2, 3):
                    want = history[cycles * n].values
                    out, rep = run_swept(prog, topo, InProcTransport(topo.size), grids, cycles=cycles)
                    if not bitwise_equal(gather(topo, out, rep.shift).values, want):
                        failures.append(("swept", kernel, px, py, n, cycles))
                    out, _ = run_classic(prog, topo, InProcTransport(topo.size), grids, cycles * n)
                    if not bitwise_equal(gather(topo, out).values, want):
                        failures.append(("classic", kernel, px, py, n, cycles))
                    runs += 2
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 300
    record_criterion(1, "engine equivalence", ok, f"{runs - len(failures)}/{runs} runs bitwise equal, {elapsed:.1f} s")
    assert ok, failures[:5]


def test_criterion_2_cycle_arithmetic(record_criterion):
    topo = make_topology(2, 2, 8)
    prog, field = build_kernel("increment", topo.width, topo.height)
    out, report = run_swept(prog, topo, InProcTransport(4), scatter(topo, field), cycles=1)
    advanced = gather(topo, out, report.shift)
    substeps_ok = advanced.step == 8 and report.substeps == 8 and np.all(advanced.values == 9.0)
    messages_ok = report.messages_per_rank == [4] * topo.size
    ok = substeps_ok and messages_ok
    record_criterion(2, "cycle arithmetic", ok,
                     f"advances {advanced.step} sub-steps (ok={substeps_ok}); panel messages per rank per cycle "
                     f"{sorted(set(report.messages_per_rank))} in {report.exchanges_per_rank[0]} exchange rounds, "
                     f"4 required: unattainable without redundant work, see decisions ledger")
    assert substeps_ok
    assert messages_ok, report.messages_per_rank


def test_criterion_3_panel_geometry(record_criterion):
    counts, total = panel_shape(8, Orientation.UPWARD)
    ok = counts == [16, 12, 8, 4] and total == 40
    ok = ok and all(panel_shape(n, o)[1] == n * n // 2 + n for n in range(4, 129, 2) for o in Orientation)
    record_criterion(3, "panel geometry", ok, f"panel_shape(8, up) = {counts}, total {total}")
    assert ok


WAVE_NS = (8, 16, 32, 64)
TAU = 1e-3


def _time_run(engine, n, tau):
    topo = make_topology(2, 2, n)
    prog, field = build_kernel("wave", topo.width, topo.height)
    grids = scatter(topo, field)
    cycles = max(1, math.ceil(128 / n))
    inner = InProcTransport(4)
    transport = LatencyTransport(inner, tau) if tau else inner
    if engine == "swept":
        _, report = run_swept(prog, topo, transport, grids, cycles=cycles)
    else:
        _, report = run_classic(prog, topo, transport, grids, cycles * n)
    return report.time_per_substep


def test_criterion_4_latency_barrier(record_criterion):
    start = time.perf_counter()
    configs = [("swept", n, 0.0) for n in WAVE_NS] + [("swept", n, TAU) for n in WAVE_NS] + [("classic", 8, TAU)]
    warmup, repeats = 3, 15
    samples = {c: [] for c in configs}
    # Interleave configurations so slow drifts of the host hit all of them alike.
    for rep in range(warmup + repeats):
        for c in configs:
            t = _time_run(*c)
            if rep >= warmup:
                samples[c].append(t)
    med = {c: statistics.median(v) for c, v in samples.items()}

    # (a) calibrate s per n from the latency-free run, then compare with n^2 s + 4 tau / n.
    fit = {}
    for n in WAVE_NS:
        s = med["swept", n, 0.0] / (n * n)
        predicted = predict_simplified(n, s, TAU)
        fit[n] = med["swept", n, TAU] / predicted - 1.0
    ok_a = all(abs(e) <= 0.25 for e in fit.values())
    # (b) speed-up at the smallest n.
    speedup = med["classic", 8, TAU] / med["swept", 8, TAU]
    ok_b = speedup >= 3.0
    # (c) the best measured n beats the latency.
    best_n = min(WAVE_NS, key=lambda n: med["swept", n, TAU])
    ok_c = med["swept", best_n, TAU] < TAU
    elapsed = time.perf_counter() - start
    ok = ok_a and ok_b and ok_c and elapsed < 300
    detail = (f"(a) fit errors " + ", ".join(f"n={n}: {e:+.0%}" for n, e in fit.items())
              + f"; (b) speed-up {speedup:.2f} at n=8; (c) {med['swept', best_n, TAU] * 1e6:.0f} us/sub-step "
              f"at n={best_n} vs tau {TAU * 1e6:.0f} us; {elapsed:.0f} s")
    record_criterion(4, "latency barrier at desk scale", ok, detail)
    for c, v in med.items():
        print(f"  {c[0]:8s} n={c[1]:3d} tau={c[2] * 1e3:.0f} ms: {v * 1e6:9.1f} us/sub-step")
    assert ok_a, fit
    assert ok_b, speedup
    assert ok_c
    assert elapsed < 300


def test_criterion_5_cost_model(record_criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = 2 * int(rng.integers(2, 2049))
        s = 10 ** rng.uniform(-15, -3)
        tau = 10 ** rng.uniform(-8, -1)
        full, simple = predict_full(CostParams(n, s, tau)), predict_simplified(n, s, tau)
        worst = max(worst, abs(full - simple) / simple)
    ok_identity = worst <= 1e-12
    checked, bad = 0, []
    for tau in LATENCY_PRESETS.values():
        for s in COMPUTE_PRESETS.values():
            opt = optimal_n(s, tau)
            if 4 <= opt.analytic <= 4096:
                checked += 1
                if abs(opt.n - round_to_even(opt.analytic)) > 2:
                    bad.append((s, tau, opt))
    ok = ok_identity and not bad
    record_criterion(5, "cost model", ok,
                     f"max relative gap full vs simplified {worst:.1e} over 1000 draws; {checked - len(bad)}/{checked} "
                     f"preset optima within 2 of the analytic point")
    assert ok, bad


def test_criterion_6_wave(record_criterion):
    start = time.perf_counter()
    errs = [wave_error(n) for n in (16, 32, 64)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok_conv = all(3.2 <= r <= 4.8 for r in ratios)
    cfg = WaveConfig(cfl=0.3)
    prog, field = build_kernel("wave", 64, 64, cfl=cfg.cfl)
    out = serial_reference(prog, field, 10_000)
    peak0 = np.abs(field.values[..., 0]).max()
    peak = np.abs(out.values[..., 0]).max()
    ok_bounded = bool(np.isfinite(out.values).all()) and peak <= 10 * peak0
    elapsed = time.perf_counter() - start
    ok = ok_conv and ok_bounded and elapsed < 60
    record_criterion(6, "wave kernel", ok, f"convergence ratios {ratios[0]:.3f}, {ratios[1]:.3f}; "
                                           f"max|u| {peak:.3f} after 1e4 sub-steps (initial {peak0:.3f}); {elapsed:.1f} s")
    assert ok


def test_criterion_7_euler(record_criterion):
    start = time.perf_counter()
    prog, field = build_kernel("euler", 128, 64)
    out = serial_reference(prog, field, 400)
    q0, q = field.values[..., 0:4], out.values[..., 0:4]
    scale = np.abs(q0).max(axis=(0, 1))
    scale[2] = scale[1]  # v = 0 in the free stream; use the momentum scale
    free_stream = float((np.abs(q - q0) / scale).max())

    prog, field = build_kernel("euler", 128, 64, init="random")
    out = serial_reference(prog, field, 400)
    cells = 128 * 64
    mass0, mass = field.values[..., 0].sum() / cells, out.values[..., 0].sum() / cells
    drift = abs(mass - mass0) / mass0
    moved = not np.array_equal(out.values[..., 0], field.values[..., 0])

    topo = make_topology(4, 2, 32)
    grids = scatter(topo, field)
    want = serial_reference(prog, field, 64).values
    swept, rep = run_swept(prog, topo, InProcTransport(8), grids, cycles=2)
    classic, _ = run_classic(prog, topo, InProcTransport(8), grids, 64)
    equal = bitwise_equal(gather(topo, swept, rep.shift).values, want) and bitwise_equal(gather(topo, classic).values,
                                                                                         want)
    elapsed = time.perf_counter() - start
    ok = free_stream <= 1e-12 and drift <= 1e-12 and moved and equal and elapsed < 120
    record_criterion(7, "Euler kernel", ok, f"free-stream change {free_stream:.1e}, mass drift {drift:.1e} over 400 "
                                            f"sub-steps on 128x64; engines bitwise equal: {equal}; {elapsed:.1f} s")
    assert ok


def test_criterion_8_codec(record_criterion):
    rng = np.random.default_rng(8)
    ok_round = True
    for _ in range(100):
        n = 2 * int(rng.integers(2, 13))
        d = Direction(int(rng.integers(0, 4)))
        o = Orientation(int(rng.integers(0, 2)))
        arity = int(rng.integers(1, 14))
        levels = []
        for k in range(n // 2):
            shape = slab_extent(d, o, n, k) + (arity,)
            raw = rng.integers(0, 2 ** 64, size=shape, dtype=np.uint64)  # arbitrary bit patterns, NaNs included
            levels.append(raw.view(np.float64))
        p = Panel(d, o, n, int(rng.integers(0, 2 ** 40)), levels)
        q = decode_panel(encode_panel(p))
        ok_round &= (q.direction, q.orientation, q.n, q.start_step) == (d, o, n, p.start_step)
        ok_round &= all(bitwise_equal(a, b) for a, b in zip(p.levels, q.levels))
    golden = GOLDEN.read_bytes()
    ok_golden = len(golden) == 348 and encode_panel(golden_panel()) == golden
    ok = bool(ok_round and ok_golden)
    record_criterion(8, "codec", ok, f"100 random round trips bitwise: {bool(ok_round)}; golden 348-byte fixture "
                                     f"unchanged: {ok_golden}")
    assert ok


def test_criterion_9_transport_timing(record_criterion):
    tau = 0.050
    group = TcpGroup(local_roster(make_topology(2, 1, 4)), timeout=10)
    t = LatencyTransport(group, tau)
    try:
        start = time.perf_counter()
        for i in range(10):
            t.send(0, 1, i, b"ping")
            t.recv(1, 0, i)
            t.send(1, 0, i, b"pong")
            t.recv(0, 1, i)
        elapsed = time.perf_counter() - start
    finally:
        t.close()
    ok = 1.0 <= elapsed <= 1.2
    record_criterion(9, "transport timing", ok, f"10 ping-pongs at tau=50 ms over loopback TCP took {elapsed:.3f} s")
    assert ok
