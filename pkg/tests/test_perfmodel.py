import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from swept2d import ValidationError
from swept2d.perfmodel import (COMPUTE_PRESETS, LATENCY_PRESETS, CostParams, breaks_latency_barrier,
                               component_work, fit_overheads, model_curves, optimal_n, predict_classic,
                               predict_full, predict_simplified, round_to_even)


def test_worked_example():
    want = (64 * 40e-9 * 4 + 2 * 150e-6) / 4
    assert math.isclose(want, 7.756e-5, rel_tol=1e-12)
    assert math.isclose(predict_full(CostParams(8, 40e-9, 150e-6)), want, rel_tol=1e-15)
    assert math.isclose(predict_simplified(8, 40e-9, 150e-6), 2.56e-6 + 7.5e-5, rel_tol=1e-15)


def test_latency_free_limit_and_scaling():
    assert predict_full(CostParams(12, 3e-9, 0.0)) == 144 * 3e-9
    assert math.isclose(predict_simplified(32, 1e-9, 0.0), 4 * predict_simplified(16, 1e-9, 0.0), rel_tol=1e-15)


def test_overheads_are_linear_in_n():
    p = CostParams(8, 1e-9, 1e-6, c_u=1e-7, c_d=2e-7, c_b=3e-7)
    base = predict_full(CostParams(8, 1e-9, 1e-6))
    assert math.isclose(predict_full(p) - base, (8e-7 + 16e-7 + 2 * 24e-7) / 4, rel_tol=1e-12)


@given(n=st.integers(2, 2048).map(lambda k: 2 * k), s=st.floats(1e-15, 1e-3), tau=st.floats(0, 1e-2))
def test_full_equals_simplified_without_overheads(n, s, tau):
    assert math.isclose(predict_full(CostParams(n, s, tau)), predict_simplified(n, s, tau), rel_tol=1e-12)


def test_optimal_n_examples():
    assert optimal_n(1e-9, 0.0).n == 4
    opt = optimal_n(0.6e-9, 150e-6)
    assert math.isclose(opt.analytic, 5e5 ** (1 / 3), rel_tol=1e-12)
    assert opt.n in (78, 80)
    ns = np.arange(4, 4097, 2)
    costs = [predict_simplified(int(n), 40e-9, 0.7e-6) for n in ns]
    assert optimal_n(40e-9, 0.7e-6).n == int(ns[int(np.argmin(costs))])


def test_optimal_n_is_exhaustive_minimum():
    rng = np.random.default_rng(7)
    for _ in range(20):
        s = 10 ** rng.uniform(-14, -6)
        tau = 10 ** rng.uniform(-7, -3)
        opt = optimal_n(s, tau, 4, 512)
        for n in range(4, 513, 2):
            assert opt.cost <= predict_simplified(n, s, tau)


def test_optimal_n_ties_go_to_smaller_n():
    # 16 s + tau == 36 s + 2 tau / 3 when tau = 60 s.
    s = 1.0
    tau = 60.0
    assert optimal_n(s, tau, 4, 6).n == 4


def test_optimal_n_validation():
    with pytest.raises(ValidationError):
        optimal_n(0.0, 1e-6)
    with pytest.raises(ValidationError):
        optimal_n(1e-9, 1e-6, n_min=10, n_max=8)
    with pytest.raises(ValidationError) as exc:
        CostParams(7, 1e-9, 0.0)
    assert exc.value.field == "n"


def test_presets_match_tables():
    assert LATENCY_PRESETS == {"ec2": 150e-6, "gige": 50e-6, "100gige": 5e-6, "fdr-ib": 0.7e-6}
    assert sorted(COMPUTE_PRESETS.values()) == sorted([800e-9, 40e-9, 0.6e-9, 200e-12, 10e-12, 150e-15])


def test_analytic_point_agrees_with_brute_force_for_presets():
    for tau in LATENCY_PRESETS.values():
        for s in COMPUTE_PRESETS.values():
            opt = optimal_n(s, tau)
            if 4 <= opt.analytic <= 4096:
                assert abs(opt.n - round_to_even(opt.analytic)) <= 2


def test_latency_barrier_condition():
    # At the real optimum the cost is 6 tau / n*, so it is below tau exactly when n* > 6.
    for tau in LATENCY_PRESETS.values():
        for s in COMPUTE_PRESETS.values():
            a = (2 * tau / s) ** (1 / 3)
            if a > 8:
                assert breaks_latency_barrier(s, tau)
            if a < 5.5:
                assert not breaks_latency_barrier(s, tau)
    # A preset pair with 4 <= n* < 6: the barrier is not broken.
    assert 4 <= optimal_n(800e-9, 50e-6).analytic < 6
    assert not breaks_latency_barrier(800e-9, 50e-6)


def test_classic_cost():
    assert predict_classic(1e-9, 1e-3, 8) == 64e-9 + 2e-3


def test_model_curves_shape():
    rows = model_curves([4, 8, 16, 32, 64], [40e-9], [150e-6])
    compute = [r["term_compute"] for r in rows]
    latency = [r["term_latency"] for r in rows]
    total = [r["total"] for r in rows]
    assert compute == sorted(compute) and latency == sorted(latency, reverse=True)
    i = int(np.argmin(total))
    assert 0 < i < len(total) - 1


@pytest.mark.parametrize("n", range(4, 66, 2))
def test_component_work_sums_to_half_cycle(n):
    w = component_work(n)
    assert w["upward"] + 2 * w["bridge"] + w["downward"] == n ** 3 // 2


def test_fit_overheads_recovers_coefficients():
    s = 2e-9
    samples = {}
    for n in (8, 16, 32):
        w = component_work(n)
        samples[n] = {"upward": w["upward"] * s + 1e-6 * n, "bridge": w["bridge"] * s + 3e-6 * n,
                      "downward": w["downward"] * s + 2e-6 * n}
    c = fit_overheads(samples, s)
    assert math.isclose(c["c_u"], 1e-6, rel_tol=1e-9)
    assert math.isclose(c["c_b"], 3e-6, rel_tol=1e-9)
    assert math.isclose(c["c_d"], 2e-6, rel_tol=1e-9)
