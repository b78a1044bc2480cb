import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisytr import problems
from noisytr.core import DerivativeBundle, LipschitzEstimate, model_decrement
from noisytr.events import (
    classify_trace,
    decrease_shortfalls,
    lattice_threshold,
    small_radius_failures,
    selection_gap_violations,
    threshold_for,
)
from noisytr.optimality import phi
from noisytr.oracle import AdditiveGaussian, ExactOracle, NoisyOracle
from noisytr.trqne import (
    AlgoConfig,
    State,
    complexity_bound,
    compute_step,
    per_iteration_decrease,
    run,
    select_degree,
    threshold_constants,
    trqne_iterate,
    update_radius,
)


def half_square(n):
    return ExactOracle(
        "half_square", n,
        lambda x: 0.5 * float(x @ x), lambda x: x.copy(), lambda x: np.eye(len(x)),
        0.0, LipschitzEstimate((1.0, 0.0)),
    )


def fixed_quadratic(g, H):
    """Oracle whose bundle at the origin is (0, g, H)."""
    g, H = np.asarray(g, float), np.asarray(H, float)
    return ExactOracle(
        "fixed", len(g),
        lambda x: float(g @ x + 0.5 * x @ H @ x), lambda x: g + H @ x, lambda x: H.copy(),
        -np.inf, None,
    )


# --- configuration ---------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"eta": 1.5}, "eta must be in"),
        ({"eta": 0.0}, "eta must be in"),
        ({"q": 3, "epsilon": (0.1,) * 3}, "q must be"),
        ({"q": 2, "epsilon": (0.1,)}, "epsilon must have"),
        ({"epsilon": (1.0,)}, "epsilon entries"),
        ({"theta": 0.001}, "theta must be"),
        ({"varsigma": 0.0}, "varsigma"),
        ({"gamma": 1.0}, "gamma"),
        ({"r_max": 0.5, "r0": 0.5}, "r_max"),
        ({"r0": 0.01}, "r0 must be in"),
        ({"r0": 200.0}, "r0 must be in"),
        ({"budget": -1}, "budget"),
        ({"budget": 2.5}, "budget"),
    ],
)
def test_config_rejects(kwargs, message):
    with pytest.raises(ValueError, match=message):
        AlgoConfig(**kwargs)


def test_config_defaults_and_nu():
    cfg = AlgoConfig()
    assert (cfg.eta, cfg.gamma, cfg.theta, cfg.varsigma, cfg.r_max, cfg.r0) == (0.1, 2.0, 1.0, 1.0, 100.0, 1.0)
    assert cfg.nu == pytest.approx(0.05)
    assert AlgoConfig(eta=0.5).nu == pytest.approx(0.125)


def test_config_round_trip_and_unknown_keys():
    cfg = AlgoConfig(q=2, epsilon=(0.1, 0.2), eta=0.2, budget=7)
    assert AlgoConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        AlgoConfig.from_dict({"nu": 0.1})


# --- degree selection and step -------------------------------------------------------


def test_q1_selects_normalized_gradient_step():
    oracle = NoisyOracle(half_square(2))
    cfg = AlgoConfig(q=1, epsilon=(0.5,))
    j, disps, _, fall = select_degree(oracle, np.array([3.0, 4.0]), 0.1, cfg, 0)
    assert j == 1 and not fall
    assert np.allclose(disps[0].displacement, [-0.06, -0.08])


def test_q2_selects_first_order_far_from_minimizer():
    # decrement 10 * 0.1 = 1.0 against (0.5 / 1.05) * 0.1
    oracle = NoisyOracle(half_square(1))
    cfg = AlgoConfig(q=2, epsilon=(0.5, 0.5), eta=0.1)
    j, disps, _, fall = select_degree(oracle, np.array([10.0]), 0.1, cfg, 0)
    assert j == 1 and len(disps) == 1 and not fall
    assert disps[0].decrement == pytest.approx(1.0)
    assert disps[0].decrement > 0.5 / 1.05 * 0.1


def test_q2_selects_second_order_at_saddle():
    oracle = NoisyOracle(fixed_quadratic([0.0, 0.0], np.diag([-2.0, 1.0])))
    cfg = AlgoConfig(q=2, epsilon=(0.5, 0.5), eta=0.1)
    j, disps, _, fall = select_degree(oracle, np.zeros(2), 0.1, cfg, 0)
    assert j == 2 and not fall
    assert disps[0].decrement == 0.0
    assert disps[1].decrement == pytest.approx(0.01)
    assert disps[1].decrement > 0.5 / 1.05 * 0.1**2 / 2


def test_fallthrough_at_minimizer_is_guarded():
    oracle = NoisyOracle(half_square(2))
    cfg = AlgoConfig(q=2, epsilon=(0.5, 0.5))
    rec = trqne_iterate(State(np.zeros(2), 1.0, 0), cfg, oracle)
    assert rec.fallthrough and rec.j_k == 2
    assert rec.guarded and not rec.success
    assert math.isnan(rec.rho) and math.isnan(rec.noisy_f_before)
    assert rec.r_next == 0.5 and np.array_equal(rec.x_next, rec.x)


def test_compute_step_verbatim_when_radius_is_delta():
    g = np.array([1.0, 2.0])
    d = phi(g, None, 0.3, 1)
    s, dec = compute_step(1, d, 0.3, 0.3, DerivativeBundle(0.0, g))
    assert s is d.displacement and dec == d.decrement


def test_compute_step_first_order_wide_radius():
    g = np.array([3.0, 4.0])
    d = phi(g, None, 1.0, 1)
    s, dec = compute_step(1, d, 2.5, 1.0, DerivativeBundle(0.0, g))
    assert np.allclose(s, [-1.5, -2.0])
    assert dec == pytest.approx(5.0 * 2.5)
    assert dec >= d.decrement


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1.01, 10))
def test_compute_step_second_order_wide_radius(seed, factor):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    H = 0.5 * (A + A.T)
    g = rng.standard_normal(3)
    b = DerivativeBundle(0.0, g, H)
    d = phi(g, H, 1.0, 2)
    s, dec = compute_step(2, d, factor, 1.0, b)
    assert np.linalg.norm(s) <= factor * (1 + 1e-12)
    assert dec >= d.decrement
    assert dec == pytest.approx(model_decrement(g, H, s), abs=1e-12)


def test_update_radius_law():
    cfg = AlgoConfig(r_max=4.0)
    assert update_radius(1.0, True, cfg) == 2.0
    assert update_radius(3.0, True, cfg) == 4.0
    assert update_radius(1.0, False, cfg) == 0.5


# --- iterations and runs ----------------------------------------------------------------


def test_successful_iteration_far_from_minimizer():
    oracle = NoisyOracle(half_square(2))
    cfg = AlgoConfig(q=1, epsilon=(0.01,))
    rec = trqne_iterate(State(np.array([30.0, 40.0]), 0.1, 0), cfg, oracle)
    # rho = (|x| r - r^2/2) / (|x| r) = 1 - r / (2 |x|)
    assert rec.rho == pytest.approx(1 - 0.1 / 100)
    assert rec.success and rec.r_next == 0.2
    assert np.allclose(rec.x_next, [29.94, 39.92])


def test_unsuccessful_iteration_keeps_point_and_shrinks():
    # a step of length 3 along -x from x = 1 overshoots: rho = (0.5 - 2) / 3 < eta
    oracle = NoisyOracle(half_square(1))
    cfg = AlgoConfig(q=1, epsilon=(0.01,), r0=1.0, theta=1.0)
    rec = trqne_iterate(State(np.array([1.0]), 3.0, 0), cfg, oracle)
    assert rec.decrement_noisy == pytest.approx(3.0)
    assert rec.rho == pytest.approx((0.5 - 2.0) / 3.0)
    assert not rec.success
    assert rec.r_next == 1.5 and np.array_equal(rec.x_next, rec.x)


def test_budget_zero_gives_empty_trace():
    bench = problems.make("quadratic")
    tr = run(AlgoConfig(budget=0), NoisyOracle(bench.oracle), bench.x0)
    assert len(tr) == 0 and np.array_equal(tr.final.x, bench.x0)


def test_runs_are_deterministic():
    bench = problems.make("rosenbrock")
    cfg = AlgoConfig(q=2, epsilon=(0.1, 0.1), budget=60)
    noise = AdditiveGaussian(1e-3, 1e-2, 1e-2)
    a = run(cfg, NoisyOracle(bench.oracle, noise, seed=3), bench.x0)
    b = run(cfg, NoisyOracle(bench.oracle, noise, seed=3), bench.x0)
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.x, rb.x) and ra.r == rb.r
        assert np.array_equal([ra.rho], [rb.rho], equal_nan=True)
    assert np.array_equal(a.final.x, b.final.x)


def test_exact_oracle_does_not_change_decisions():
    bench = problems.make("trig_saddle", x0=(0.4, -0.3, 0.2))
    cfg = AlgoConfig(q=2, epsilon=(0.05, 0.05), budget=40)
    plain = run(cfg, NoisyOracle(bench.oracle), bench.x0)
    watched = run(cfg, NoisyOracle(bench.oracle), bench.x0, exact=bench.oracle)
    assert [r.success for r in plain.records] == [r.success for r in watched.records]
    assert np.array_equal(plain.final.x, watched.final.x)


def test_convex_quadratic_reaches_tolerance():
    bench = problems.make("quadratic")
    eps = 0.01
    cfg = AlgoConfig(q=1, epsilon=(eps,), budget=5000)
    tr = run(cfg, NoisyOracle(bench.oracle), bench.x0, exact=bench.oracle, stop=lambda r: r.event_flags.optimal)
    last = tr.records[-1]
    assert last.event_flags.optimal
    # at order one the measure is ||g|| delta, so optimality means ||g|| <= eps
    assert last.event_flags.grad_norm_exact <= eps


@pytest.mark.parametrize("name, q", [("quadratic", 1), ("rosenbrock", 1), ("rosenbrock", 2), ("trig_saddle", 2)])
def test_trace_invariants(name, q):
    bench = problems.make(name)
    cfg = AlgoConfig(q=q, epsilon=(0.05,) * q, budget=400, r_max=16.0)
    tr = run(cfg, NoisyOracle(bench.oracle, AdditiveGaussian(1e-4, 1e-3, 1e-3), seed=1), bench.x0, exact=bench.oracle)
    for rec in tr.records:
        assert np.linalg.norm(rec.step) <= rec.r * (1 + 1e-12)
        assert rec.delta == min(rec.r, cfg.theta)
        assert rec.success == (rec.rho >= cfg.eta)
        expect = min(cfg.r_max, cfg.gamma * rec.r) if rec.success else rec.r / cfg.gamma
        assert rec.r_next == expect
        if rec.success:
            assert rec.noisy_f_before >= rec.noisy_f_after
        if not rec.fallthrough:
            j = rec.j_k
            thr = cfg.varsigma * cfg.epsilon[j - 1] / (1 + cfg.nu) * rec.delta**j / math.factorial(j)
            assert rec.displacements[j - 1].decrement > thr


# --- theory constants ---------------------------------------------------------------------


def test_threshold_constants_hand_values():
    cfg = AlgoConfig(q=1, epsilon=(0.01,), eta=0.1, varsigma=1.0)
    r_bar, kr, kd = threshold_constants(cfg, LipschitzEstimate((1.0,)))
    assert kr == pytest.approx(0.9 / 4.2)
    assert kr == pytest.approx(0.2143, abs=1e-4)
    assert r_bar == pytest.approx(0.002143, abs=1e-6)
    assert kd == pytest.approx(0.2041, abs=1e-4)


@given(st.floats(0.01, 0.99), st.floats(1.0, 1e4), st.floats(0.001, 0.9))
def test_threshold_is_kappa_times_eps(eta, lip, eps):
    cfg = AlgoConfig(q=1, epsilon=(eps,), eta=eta, theta=max(eps, 0.5), r0=1.0)
    r_bar, kr, _ = threshold_constants(cfg, LipschitzEstimate((lip,)))
    assert kr < 1
    assert r_bar == pytest.approx(kr * eps)


def test_complexity_bound_grows_as_tolerance_shrinks():
    lip = LipschitzEstimate((1.0, 1.0))
    bounds = [complexity_bound(AlgoConfig(q=1, epsilon=(e,)), lip, 1.0, 0.0) for e in (0.1, 0.01, 0.001)]
    assert bounds[0] < bounds[1] < bounds[2]
    with pytest.raises(ValueError):
        complexity_bound(AlgoConfig(), lip, 1.0, 0.0, p_star=0.5)


def test_lattice_threshold():
    assert lattice_threshold(1.0, 2.0, 0.3) == 0.25
    assert lattice_threshold(1.0, 2.0, 0.25) == 0.25
    assert lattice_threshold(1.0, 2.0, 2.0) == 1.0


# --- per-trace statements under the exact oracle --------------------------------------------


def exact_traces():
    out = []
    for name, q, x0 in (("quadratic", 1, None), ("rosenbrock", 1, None), ("rosenbrock", 2, None),
                        ("trig_saddle", 1, (0.4, -0.3, 0.2)), ("trig_saddle", 2, None)):
        bench = problems.make(name) if x0 is None else problems.make(name, x0=x0)
        cfg = AlgoConfig(q=q, epsilon=(0.05,) * q, budget=20_000, r_max=64.0)
        tr = run(cfg, NoisyOracle(bench.oracle), bench.x0, exact=bench.oracle, stop=lambda r: r.event_flags.optimal)
        out.append((f"{name}/q{q}", bench, cfg, tr))
    return out


@pytest.fixture(scope="module")
def traces():
    return exact_traces()


def test_small_radius_iterations_succeed(traces):
    for label, bench, cfg, tr in traces:
        assert tr.records[-1].event_flags.optimal, label
        assert small_radius_failures(tr, threshold_for(cfg, bench.oracle)) == [], label


def test_large_radius_successes_decrease_enough(traces):
    for label, bench, cfg, tr in traces:
        r_bar = threshold_for(cfg, bench.oracle)
        guaranteed = per_iteration_decrease(cfg, bench.oracle.lipschitz)
        assert decrease_shortfalls(tr, r_bar, guaranteed) == [], label


def test_selected_decrement_clears_degree_test(traces):
    for label, _, _, tr in traces:
        assert selection_gap_violations(tr) == [], label


def test_unsuccessful_count_bounded_by_successes(traces):
    for label, bench, cfg, tr in traces:
        r_bar = threshold_for(cfg, bench.oracle)
        counts = classify_trace(tr, r_bar)
        assert not counts.censored
        slack = math.ceil(math.log(cfg.r0 / lattice_threshold(cfg.r0, cfg.gamma, r_bar)) / math.log(cfg.gamma) - 1e-9)
        assert slack == math.ceil(math.log(cfg.r0 / r_bar) / math.log(cfg.gamma))
        assert counts.n_U <= counts.n_S + slack, label


def test_counts_partition(traces):
    for label, bench, cfg, tr in traces:
        c = classify_trace(tr, threshold_for(cfg, bench.oracle))
        assert c.n_A == c.n_AS + c.n_AU + c.n_AU_at_threshold
        assert c.n_I + c.n_A == c.n_closure
        assert c.n_lambda + c.n_lambda_bar == c.n_eps
        assert c.n_S == c.n_AS + c.n_IS
        # exact oracle: every event holds, so there is nothing inaccurate
        assert c.n_I == 0
