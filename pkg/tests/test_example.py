import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisytr import tr1ne
from noisytr.example import (
    ExampleProblem,
    acceptance_region_f,
    acceptance_region_m1,
    acceptance_region_m2,
    local_noise,
    m1_thresholds,
    m2_interval,
    region_sweep,
    write_region_sweep,
)
from noisytr.oracle import ROLE_B0, ROLE_B1, BatchDraw, NoisyOracle, Subsampled, psi_statistic
from noisytr.trqne import AlgoConfig

psi_st = st.floats(-1, 1)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ExampleProblem(0, 1.0)
    with pytest.raises(ValueError):
        ExampleProblem(10, 0.0)


def test_full_set_cancels_noise():
    ex = ExampleProblem(200, 2.5)
    fs = ex.finite_sum()
    full = fs.full_batch()
    for x in (-1.3, 0.0, 0.7):
        assert fs.batch_value(full, [x]) == pytest.approx(0.5 * x * x, abs=1e-12)
        assert fs.batch_gradient(full, [x])[0] == pytest.approx(x, abs=1e-12)
    assert psi_statistic(full) == 0.0


def test_exact_phi_is_abs_x_times_delta():
    from noisytr.optimality import phi_order1

    ex = ExampleProblem(10, 1.0)
    for x, delta in ((2.0, 0.1), (-0.5, 0.3)):
        assert phi_order1(ex.exact().gradient([x]), delta).decrement == pytest.approx(abs(x) * delta)


def test_m1_threshold_values():
    # level 0.5: (1/0.5)(1 - 0.8) = 0.4, and the upper branch 3.6 lies outside [-1, 1]
    assert m1_thresholds(0.5, 0.25) == pytest.approx((0.4, 3.6), abs=1e-12)
    assert m1_thresholds(4.0, 0.25) == pytest.approx((0.05, 0.45), abs=1e-12)
    alpha, x = 0.5, 0.0
    assert acceptance_region_m1(0.4 - 1e-9, alpha, x, 0.25)
    assert not acceptance_region_m1(0.4 + 1e-9, alpha, x, 0.25)
    assert not acceptance_region_m1(1.0, alpha, x, 0.25)
    for psi, expected in ((0.04, True), (0.2, False), (0.46, True)):
        assert acceptance_region_m1(psi, 4.0, 0.0, 0.25) is expected


def test_m2_interval_values():
    lo, hi = m2_interval(0.5, 0.25)
    assert lo == pytest.approx(-2.0 / 3.0, abs=1e-12)
    assert hi == pytest.approx(0.4, abs=1e-12)
    assert acceptance_region_m2(-0.6, 0.5, 0.0, 0.25)
    assert not acceptance_region_m2(-0.7, 0.5, 0.0, 0.25)


def test_local_noise_rescaling():
    # the same relative noise level is reached at x with alpha = level * e^{x^2}
    x = 1.1
    alpha = 4.0 * math.exp(x * x)
    assert local_noise(alpha, x) == pytest.approx(4.0)
    assert acceptance_region_m1(0.05 - 1e-9, alpha, x, 0.25)
    assert not acceptance_region_m1(0.05 + 1e-9, alpha, x, 0.25)


@given(psi_st, st.floats(0.01, 10), st.floats(-2, 2), st.floats(0.01, 0.2))
def test_psi_zero_and_region_nesting(psi, alpha, x, nu):
    assert acceptance_region_m1(0.0, alpha, x, nu)
    assert acceptance_region_m2(0.0, alpha, x, nu)
    if acceptance_region_m2(psi, alpha, x, nu):
        assert acceptance_region_m1(psi, alpha, x, nu)


@given(st.floats(0.01, 10), st.floats(1.01, 10), st.floats(0.01, 0.25))
def test_m2_width_decreases_with_noise_level(level, factor, nu):
    w = lambda lv: m2_interval(lv, nu)[1] - m2_interval(lv, nu)[0]
    assert w(level * factor) < w(level)


def test_f_region_trivial_cases():
    assert acceptance_region_f(0.0, 0.7, 2.0, 0.5, -0.1, 0.1, 0.05)
    assert acceptance_region_f(0.3, 0.3, 1.0, 0.0, 0.0, 0.1, 0.05)
    assert not acceptance_region_f(0.3, 0.3, 1.0, 0.0, 0.1, 0.1, 0.05)


def _batch_with_psi(pos, neg):
    idx = np.array(list(range(1, pos + 1)) + [-i for i in range(1, neg + 1)])
    return BatchDraw(idx, len(idx), None, True)


def _f_event_by_simulation(ex, x, s, r, nu, b0, b1):
    """Evaluate the value-accuracy event directly from batch sums."""
    fs = ex.finite_sum()
    _, _, noisy = fs.batch_decrease(b0, [x], [s])
    exact = 0.5 * x * x - 0.5 * (x + s) ** 2
    gbar = fs.batch_gradient(b1, [x])[0]
    return bool(abs(noisy - exact) <= 2 * nu * abs(gbar) * r)


def test_f_region_worked_example():
    # x = 1, s = -0.1, r = 0.1, alpha = 1, nu = 0.05, both batches with mean sign 0.3
    ex = ExampleProblem(100, 1.0)
    b = _batch_with_psi(13, 7)
    assert psi_statistic(b) == pytest.approx(0.3)
    simulated = _f_event_by_simulation(ex, 1.0, -0.1, 0.1, 0.05, b, b)
    assert acceptance_region_f(0.3, 0.3, 1.0, 1.0, -0.1, 0.1, 0.05) is simulated
    assert simulated is False


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 30), st.integers(0, 30), st.integers(0, 30), st.integers(0, 30),
    st.floats(0.1, 5), st.floats(-2, 2), st.floats(0.01, 1), st.sampled_from([-1.0, 1.0]),
)
def test_f_region_matches_simulation(p0, q0, p1, q1, alpha, x, r, sign):
    if p0 + q0 == 0 or p1 + q1 == 0:
        return
    ex = ExampleProblem(100, alpha)
    b0, b1 = _batch_with_psi(p0, q0), _batch_with_psi(p1, q1)
    s = sign * r
    sim = _f_event_by_simulation(ex, x, s, r, 0.05, b0, b1)
    closed = acceptance_region_f(psi_statistic(b0), psi_statistic(b1), alpha, x, s, r, 0.05)
    if sim != closed:
        # only rounding at the boundary may separate them
        e = math.exp(-x * x)
        lhs = 0.5 * alpha * abs(psi_statistic(b0)) * e * abs(1 - math.exp(-(2 * x * s + s * s)))
        rhs = 2 * 0.05 * abs(x) * r * abs(1 - alpha * psi_statistic(b1) * e)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, rhs)


def test_region_sweep_csv(tmp_path):
    grid = np.linspace(-1, 1, 11)
    rows = region_sweep((0.5, 4.0), 0.25, grid)
    assert len(rows) == 22
    path = tmp_path / "regions.csv"
    write_region_sweep(path, (0.5, 4.0), 0.25, grid)
    with open(path) as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["noise_level", "psi", "m1", "m2"]
    assert len(data) == 23


def test_kappa_f_dominates_component_gradients():
    ex = ExampleProblem(50, 2.0)
    fs = ex.finite_sum()
    box = 1.5
    ys = np.linspace(-box, box, 3001)
    worst = max(float(np.abs(fs.gradients(fs.index_set[[0, -1]], np.array([y]))).max()) for y in ys)
    assert ex.kappa_f(0.2, box) >= 0.2 * worst


def _near(a, b):
    return abs(a - b) <= 1e-9 * max(1.0, abs(b))


def test_detected_events_match_closed_forms_on_runs():
    alpha, nu_eta = 3.0, 0.1
    ex = ExampleProblem(10_000, alpha)
    exact = ex.exact()
    cfg = AlgoConfig(q=1, epsilon=(0.01,), eta=nu_eta, r0=0.5, r_max=1.0, budget=30)
    nu = cfg.nu
    seen = {"m1": set(), "m2": set(), "f": set()}
    checked = 0
    for seed in range(30):
        oracle = NoisyOracle(exact, Subsampled(ex.finite_sum(), 40, 40), seed=seed)
        trace = tr1ne.run(cfg, oracle, [1.4], exact=exact)
        for rec in trace.records:
            if rec.guarded:
                continue
            x, s, r = float(rec.x[0]), float(rec.step[0]), rec.r
            psi0 = psi_statistic(oracle.batch(rec.k, ROLE_B0))
            psi1 = psi_statistic(oracle.batch(rec.k, ROLE_B1))
            c = 1 - psi1 * local_noise(alpha, x)
            lo1, hi1 = 1 / (1 + nu), 1 / (1 - nu)
            ev = rec.event_flags
            if not (_near(abs(c), lo1) or _near(c, hi1)):
                assert ev.m1_per_j[0] == acceptance_region_m1(psi1, alpha, x, nu)
                assert ev.m2 == acceptance_region_m2(psi1, alpha, x, nu)
            e = math.exp(-x * x)
            lhs = 0.5 * alpha * abs(psi0) * e * abs(1 - math.exp(-(2 * x * s + s * s)))
            rhs = 2 * nu * abs(x) * r * abs(c)
            if not _near(lhs, rhs):
                assert ev.f == acceptance_region_f(psi0, psi1, alpha, x, s, r, nu)
            seen["m1"].add(ev.m1_per_j[0])
            seen["m2"].add(ev.m2)
            seen["f"].add(ev.f)
            checked += 1
    assert checked > 500
    # the comparison is only meaningful if every flag took both values
    assert all(v == {True, False} for v in seen.values())
