"""Named verification suites.

Each check returns a :class:`Check` carrying its measured quantities, so that
callers (the CLI, the acceptance tests) can both print a verdict and assert on
the raw numbers.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import problems
from .core import DerivativeBundle, TaylorModel, remainder_bound_check
from .events import (
    annotate_record, degraded_optimality_check, small_radius_failures,
    subsampling_noise_scale, threshold_for,
)
from .example import ExampleProblem, m1_thresholds, m2_interval, region_sweep, write_region_sweep
from .harness import (
    ExperimentSpec, complexity_scaling, concentration_study, psi_tail_study, run_experiment,
)
from .optimality import phi_bruteforce, phi_order2
from .oracle import (
    AdditiveBounded, AdditiveGaussian, NoisyOracle, Subsampled, bernstein_integral,
    bernstein_integral_bound, min_batch_for_tail,
)
from .trqne import AlgoConfig, State, trqne_iterate
from .tr1ne import tr1ne_iterate


@dataclass
class Check:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{verdict}] {self.name} ({self.seconds:.1f}s) {parts}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)) and len(v) > 6:
        return f"[{len(v)} items]"
    return v


def _timed(name: str, fn: Callable[[], tuple]) -> Check:
    t0 = time.perf_counter()
    passed, measured = fn()
    return Check(name, bool(passed), measured, time.perf_counter() - t0)


def _sample_in_box(rng, box, margin):
    return np.array([rng.uniform(lo + margin, hi - margin) for lo, hi in box])


# starting points away from the trig saddle, for first-order runs
TRIG_START = (0.4, -0.3, 0.2)


def benchmark_suite() -> dict:
    return {
        "quadratic": problems.make("quadratic"),
        "rosenbrock": problems.make("rosenbrock"),
        "trig_saddle": problems.make("trig_saddle"),
        "example": problems.make("example", m=1000, alpha=1.0),
    }


# --- analytic bounds and solver checks ------------------------------------


def taylor_remainder_check(samples: int = 1000, seed: int = 0) -> Check:
    def body():
        rng = np.random.default_rng(seed)
        violations = {}
        for name, bench in benchmark_suite().items():
            f, lip = bench.oracle, bench.oracle.lipschitz
            n = f.dimension
            bad = 0
            for _ in range(samples):
                j = int(rng.integers(1, 3))
                if bench.box is not None:
                    while True:
                        x = _sample_in_box(rng, bench.box, 0.0)
                        s = rng.standard_normal(n) * rng.uniform(0.0, 1.0) / math.sqrt(n)
                        if all(lo <= v <= hi for v, (lo, hi) in zip(x + s, bench.box)):
                            break
                else:
                    x = rng.uniform(-3.0, 3.0, n)
                    s = rng.standard_normal(n) * rng.uniform(0.0, 2.0) / math.sqrt(n)
                bad += not remainder_bound_check(f, x, s, j, lip)
            violations[name] = bad
        return sum(violations.values()) == 0, {"violations": violations, "samples_per_benchmark": samples}

    return _timed("taylor remainder bound", body)


def random_subproblem(rng, n):
    A = rng.standard_normal((n, n))
    H = 0.5 * (A + A.T) * rng.uniform(0.1, 5.0)
    g = rng.standard_normal(n) * 10.0 ** rng.uniform(-2, 1)
    return g, H, float(10.0 ** rng.uniform(-1, 0.5))


def subproblem_check(instances: int = 100, seed: int = 1, tol: float = 1e-3) -> Check:
    def body():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(instances):
            n = int(rng.integers(1, 6))
            g, H, delta = random_subproblem(rng, n)
            exact = phi_order2(g, H, delta)
            model = TaylorModel(np.zeros(n), DerivativeBundle(0.0, g, H), 2)
            brute = phi_bruteforce(model, delta, rng=np.random.default_rng(int(rng.integers(2**31))))
            scale = max(abs(exact.decrement), 1e-300)
            worst = max(worst, abs(exact.decrement - brute.decrement) / scale)
        return worst <= tol, {"max_relative_gap": worst, "instances": instances}

    return _timed("order-2 subproblem vs brute force", body)


def small_radius_configs():
    """(label, benchmark, cfg) triples used for the small-radius success check."""
    out = []
    for name, bench in benchmark_suite().items():
        if name == "trig_saddle":
            starts = {1: problems.make("trig_saddle", x0=TRIG_START), 2: bench}
        else:
            starts = {1: bench, 2: bench}
        for q, b in starts.items():
            eps = 0.01
            cfg = AlgoConfig(q=q, epsilon=(eps,) * q, budget=3000)
            out.append((f"{name}/q{q}", b, cfg))
    return out


def small_radius_check(injected_per_trace: int = 40, seed: int = 2) -> Check:
    """Iterations with r_k <= r_bar that are not optimal must succeed (exact oracle).

    Runs every benchmark, then re-runs single iterations from visited iterates
    with radii forced below the threshold.
    """

    def body():
        rng = np.random.default_rng(seed)
        counter = {}
        tested = 0
        for label, bench, cfg in small_radius_configs():
            exact = bench.oracle
            r_bar = threshold_for(cfg, exact)
            oracle = NoisyOracle(exact)
            spec_trace = _exact_trace(bench, cfg)
            bad = len(small_radius_failures(spec_trace, r_bar))
            recs = spec_trace.records
            picks = rng.choice(len(recs), size=min(injected_per_trace, len(recs)), replace=False)
            for i in sorted(picks):
                for shrink in (1.0, cfg.gamma**-1, cfg.gamma**-6):
                    st = State(recs[i].x.copy(), r_bar * shrink, 0)
                    rec = trqne_iterate(st, cfg, oracle)
                    rec.event_flags = annotate_record(rec, exact, cfg, r_bar)
                    if rec.event_flags.optimal:
                        continue
                    tested += 1
                    bad += not rec.success
            counter[label] = bad
        return sum(counter.values()) == 0, {"counterexamples": counter, "injected_tested": tested}

    return _timed("small-radius iterations succeed", body)


def _exact_trace(bench, cfg, algorithm="trqne"):
    from .trqne import run

    oracle = NoisyOracle(bench.oracle)
    step = trqne_iterate if algorithm == "trqne" else tr1ne_iterate
    return run(cfg, oracle, bench.x0, exact=bench.oracle, iterate=step, algorithm=algorithm,
               stop=lambda rec: rec.event_flags.optimal)


def implication_problems() -> dict:
    suite = benchmark_suite()
    suite["quadratic_ill"] = problems.make("quadratic", n=3, cond=100.0, seed=3, start=1.0)
    return suite


def _random_record(rng, bench, q, first_order_variant=False):
    f = bench.oracle
    n = f.dimension
    if bench.box is not None:
        x = _sample_in_box(rng, bench.box, 0.5)
    else:
        x = rng.uniform(-2.0, 2.0, n)
    level = 10.0 ** rng.uniform(-5, 1.5)
    if bench.finite_sum is not None and rng.random() < 0.5:
        size = bench.finite_sum.size
        nb = int(rng.integers(1, size + 1))
        noise = Subsampled(bench.finite_sum, nb, nb)
    elif rng.random() < 0.5:
        noise = AdditiveBounded(level, level, level)
    else:
        noise = AdditiveGaussian(level, level, level)
    oracle = NoisyOracle(f, noise, seed=int(rng.integers(2**31)))
    r = float(10.0 ** rng.uniform(-3, 0.5))
    cfg = AlgoConfig(q=q, epsilon=(0.01,) * q, eta=float(rng.uniform(0.05, 0.6)), budget=1)
    step = tr1ne_iterate if first_order_variant else trqne_iterate
    rec = step(State(x, r, int(rng.integers(1000))), cfg, oracle)
    rec.event_flags = annotate_record(rec, f, cfg, threshold_for(cfg, f))
    return rec


def event_implication_check(draws: int = 10_000, seed: int = 3) -> Check:
    def body():
        rng = np.random.default_rng(seed)
        suite = list(implication_problems().values())
        suff_bad = suff_true = 0
        for _ in range(draws):
            bench = suite[int(rng.integers(len(suite)))]
            rec = _random_record(rng, bench, int(rng.integers(1, 3)))
            ev = rec.event_flags
            suff_true += ev.sufficient
            suff_bad += ev.sufficient and not ev.m
        tm_bad = tf_bad = tm_true = tf_true = 0
        for _ in range(draws):
            bench = suite[int(rng.integers(len(suite)))]
            rec = _random_record(rng, bench, 1, first_order_variant=bool(rng.random() < 0.5))
            ev = rec.event_flags
            tm_true += ev.tilde_m
            tf_true += ev.tilde_f
            tm_bad += ev.tilde_m and not ev.m
            tf_bad += ev.tilde_f and not ev.f
        measured = {
            "sufficient_not_m": suff_bad, "sufficient_true": suff_true,
            "tilde_m_not_m": tm_bad, "tilde_m_true": tm_true,
            "tilde_f_not_f": tf_bad, "tilde_f_true": tf_true, "draws": draws,
        }
        return suff_bad == tm_bad == tf_bad == 0, measured

    return _timed("event implications", body)


def monotone_radius_records():
    """Traces from exact and noisy runs of both algorithms on every benchmark."""
    specs = []
    for name in ("quadratic", "rosenbrock", "trig_saddle", "example"):
        params = {"m": 1000} if name == "example" else {}
        noises = [{"kind": "none"}, {"kind": "additive_bounded", "b0": 1e-3, "b1": 1e-2, "b2": 1e-2},
                  {"kind": "additive_gaussian", "sigma0": 1e-3, "sigma1": 1e-2, "sigma2": 1e-2}]
        if name == "example":
            noises.append({"kind": "subsampled", "n0": 50, "n1": 50})
        for noise in noises:
            for algo, q in (("trqne", 1), ("trqne", 2), ("tr1ne", 1)):
                cfg = AlgoConfig(q=q, epsilon=(1e-3,) * q, budget=300, r_max=8.0)
                specs.append(ExperimentSpec(name, algo, cfg, noise, params, replications=3, seed=5, stop_at_hit=False))
    return specs


def monotone_radius_check() -> Check:
    def body():
        mono_bad = radius_bad = exact_chain_bad = n_rec = 0
        for spec in monotone_radius_records():
            for tr in run_experiment(spec):
                cfg = tr.cfg
                prev_accepted = None
                for rec in tr.records:
                    n_rec += 1
                    expect = min(cfg.r_max, cfg.gamma * rec.r) if rec.success else rec.r / cfg.gamma
                    radius_bad += rec.r_next != expect or rec.success != (rec.rho >= cfg.eta)
                    if not rec.success:
                        radius_bad += not np.array_equal(rec.x_next, rec.x)
                        continue
                    mono_bad += not rec.noisy_f_before >= rec.noisy_f_after
                    if spec.noise["kind"] == "none":
                        if prev_accepted is not None and rec.noisy_f_before > prev_accepted:
                            exact_chain_bad += 1
                        prev_accepted = rec.noisy_f_after
        ok = mono_bad == radius_bad == exact_chain_bad == 0
        return ok, {"monotone_violations": mono_bad, "radius_law_violations": radius_bad,
                    "exact_chain_violations": exact_chain_bad, "records": n_rec}

    return _timed("monotone noisy values and radius law", body)


# --- concentration -------------------------------------------------------------


def bernstein_integral_check() -> Check:
    def body():
        lhs = bernstein_integral(2056, 1.0)
        rhs = bernstein_integral_bound(2056, 1.0)
        ok = abs(lhs - 0.0556) <= 1e-3 and abs(rhs - 0.1818) <= 1e-3 and lhs <= rhs
        return ok, {"integral": lhs, "bound": rhs}

    return _timed("Bernstein integral vs bound", body)


PSI_T_GRID = (0.05, 0.1, 0.2)
PSI_N_GRID = (100, 500, 2000)


def psi_tail_check(draws: int = 100_000, m: int = 100_000, seed: int = 4) -> Check:
    def body():
        rows = psi_tail_study(m, PSI_T_GRID, PSI_N_GRID, draws, seed)
        n_min = min_batch_for_tail(0.1)
        worst = max(r.empirical - r.bound for r in rows)
        ok = all(r.ok for r in rows) and n_min == 246
        return ok, {"cells": len(rows), "max_excess": worst, "min_batch_t0.1": n_min}

    return _timed("hypergeometric psi tail", body)


def bernstein_exceedance_check(draws: int = 20_000, seed: int = 5) -> Check:
    def body():
        prob = ExampleProblem(100_000, 1.0)
        rows = concentration_study(prob, 0.5, 0.5, (100, 1000, 10_000, 2 * prob.m), (0.01, 0.05, 0.1, 0.3), draws, seed)
        return all(r.ok for r in rows), {"cells": len(rows), "max_excess": max(r.empirical - r.bound for r in rows)}

    return _timed("batch decrease exceedance vs Bernstein", body)


# --- regions -----------------------------------------------------------------

REGION_LEVELS = (0.5, 4.0 / 3.0, 4.0)
REGION_NU = 0.25
# acceptance thresholds for the three noise levels, by hand from the closed forms
EXPECTED_M1 = {0.5: (0.4, 3.6), 4.0 / 3.0: (0.15, 1.35), 4.0: (0.05, 0.45)}


def regions_check(out_path: Optional[Path] = None) -> Check:
    def body():
        worst = 0.0
        for level, (lo, hi) in EXPECTED_M1.items():
            got = m1_thresholds(level, REGION_NU)
            worst = max(worst, abs(got[0] - lo), abs(got[1] - hi))
        widths = [m2_interval(level, REGION_NU)[1] - m2_interval(level, REGION_NU)[0] for level in REGION_LEVELS]
        decreasing = all(b < a for a, b in zip(widths, widths[1:]))
        grid = np.linspace(-1.0, 1.0, 2001)
        mismatch = 0
        for level, psi, m1, m2 in region_sweep(REGION_LEVELS, REGION_NU, grid):
            lo, hi = m1_thresholds(level, REGION_NU)
            a, b = m2_interval(level, REGION_NU)
            # skip grid points within rounding of a boundary
            if min(abs(psi - lo), abs(psi - hi), abs(psi - a), abs(psi - b)) < 1e-9:
                continue
            mismatch += m1 != (psi <= lo or psi >= hi)
            mismatch += m2 != (a <= psi <= b)
        if out_path is not None:
            write_region_sweep(out_path, REGION_LEVELS, REGION_NU, grid)
        ok = worst <= 1e-12 and decreasing and mismatch == 0
        return ok, {"max_threshold_error": worst, "m2_widths": [round(w, 12) for w in widths], "grid_mismatches": mismatch}

    return _timed("acceptance regions of the example", body)


# --- scaling -----------------------------------------------------------------

SLOPE_LIMIT = {1: 2.4, 2: 3.5}


def scaling_specs(q: int) -> list:
    grid = tuple(10.0 ** (-e) for e in (1.0, 1.5, 2.0, 2.5, 3.0))
    cfg = AlgoConfig(q=q, epsilon=(0.1,) * q, budget=100_000)
    trig = {"x0": TRIG_START} if q == 1 else {}
    return [
        ExperimentSpec("rosenbrock", "trqne", cfg, epsilon_grid=grid),
        ExperimentSpec("trig_saddle", "trqne", cfg, problem_params=trig, epsilon_grid=grid),
        ExperimentSpec("quadratic", "trqne", cfg, epsilon_grid=grid),
    ]


def scaling_check(q: int) -> Check:
    def body():
        slopes, dominated, censored = {}, {}, {}
        for spec in scaling_specs(q):
            table = complexity_scaling(spec)
            slopes[spec.problem] = table.slope
            dominated[spec.problem] = table.dominated
            censored[spec.problem] = sum(r.censored for r in table.rows)
        ok = all(s <= SLOPE_LIMIT[q] for s in slopes.values()) and all(dominated.values()) and not any(censored.values())
        return ok, {"slopes": slopes, "below_bound": dominated, "censored": censored}

    return _timed(f"complexity scaling q={q}", body)


# --- degraded optimality -----------------------------------------------------

DEGRADED_ALPHA_STAR = 0.9


def degraded_spec(replications: int = 1000) -> ExperimentSpec:
    cfg = AlgoConfig(q=1, epsilon=(0.01,), eta=1.0 / 3.0, r0=1.0, r_max=1.0, budget=40)
    return ExperimentSpec(
        "example", "tr1ne", cfg, {"kind": "subsampled", "n0": 300, "n1": 300},
        {"m": 100_000, "alpha": 3.0, "x0": 9.42}, replications=replications, seed=11, stop_at_hit=False,
    )


def degraded_check(replications: int = 1000) -> Check:
    def body():
        spec = degraded_spec(replications)
        traces = run_experiment(spec)
        b = subsampling_noise_scale(spec.problem_params["alpha"], DEGRADED_ALPHA_STAR, spec.noise["n1"])
        rep = degraded_optimality_check(traces, DEGRADED_ALPHA_STAR, b)
        measured = {
            "B": b, "large_count": rep.large.count, "large_freq_m": rep.large.freq_m,
            "large_freq_f": rep.large.freq_f, "small_freq_m": rep.small.freq_m, "small_freq_f": rep.small.freq_f,
            "offending_cells": rep.offending_cells,
        }
        return rep.large_bin_ok is True and rep.violations_confined is True, measured

    return _timed("degraded optimality", body)


SUITES = {
    "lemmas": lambda: [taylor_remainder_check(), subproblem_check(), small_radius_check(), event_implication_check(), monotone_radius_check()],
    "concentration": lambda: [bernstein_integral_check(), psi_tail_check(), bernstein_exceedance_check()],
    "regions": lambda out=None: [regions_check(out)],
    "scaling-q1": lambda: [scaling_check(1)],
    "scaling-q2": lambda: [scaling_check(2)],
    "degraded": lambda: [degraded_check()],
}
