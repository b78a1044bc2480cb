"""Per-iteration accuracy events, iteration-class counts and empirical diagnostics.

Everything in this module looks at a finished :class:`IterationRecord` with the
exact oracle in hand; none of it feeds back into the algorithms. Probabilities
are estimated by frequencies across independent replications, conditioning on
iteration index and gradient-magnitude bins in place of the (unobservable)
history sigma-algebra.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import model_decrement
from .optimality import phi
from .trqne import AlgoConfig, IterationRecord, Trace, threshold_constants

# slack for comparisons of quantities that agree in exact arithmetic
REL_SLACK = 1e-12


def _le(a: float, b: float, scale: float) -> bool:
    return a <= b + REL_SLACK * max(1.0, abs(scale))


@dataclass(frozen=True)
class EventFlags:
    m1_per_j: tuple
    m2: bool
    m: bool
    f: bool
    e: bool
    s: bool
    sufficient: bool
    # R_k > r_bar; None when no Lipschitz information is available
    lam: Optional[bool]
    # current iterate is an (eps, delta_k)-approximate minimizer
    optimal: bool
    # first-order-only surrogates, None for second-order steps
    tilde_m: Optional[bool]
    tilde_f: Optional[bool]
    f_exact: float
    grad_norm_exact: float
    phi_exact: tuple
    model_decrease_exact: float
    decrease_exact: float


def threshold_for(cfg: AlgoConfig, exact) -> Optional[float]:
    if exact.lipschitz is None:
        return None
    return threshold_constants(cfg, exact.lipschitz)[0]


def exact_measures(exact, x, delta: float, cfg: AlgoConfig):
    """Exact bundle and phi_j^delta(x) for j = 1..q."""
    bundle = exact.bundle(x, cfg.q)
    res = [phi(bundle.gradient, bundle.hessian if j == 2 else None, delta, j) for j in range(1, cfg.q + 1)]
    return bundle, res


def is_approx_minimizer(phis: Sequence, cfg: AlgoConfig, delta: float) -> bool:
    return all(
        p.decrement <= cfg.epsilon[j] * delta ** (j + 1) / math.factorial(j + 1)
        for j, p in enumerate(phis)
    )


def _steps_hessian(bundle, j):
    return bundle.hessian if j == 2 else None


def detect_m(record: IterationRecord, exact_bundle, exact_phis, cfg: AlgoConfig):
    """(m1 flags for j <= j_k, m2, m)."""
    nu, vs = cfg.nu, cfg.varsigma
    m1 = []
    for j in range(1, record.j_k + 1):
        noisy_dec = record.displacements[j - 1].decrement
        exact_phi = exact_phis[j - 1].decrement
        m1.append(_le(exact_phi, (1.0 + nu) / vs * noisy_dec, exact_phi))
    dt = model_decrement(exact_bundle.gradient, _steps_hessian(exact_bundle, record.j_k), record.step)
    dbar = record.decrement_noisy
    m2 = _le((1.0 - nu) * dbar, dt, dt) and _le(dt, (1.0 + nu) * dbar, dt)
    return tuple(m1), m2, all(m1) and m2


def detect_f(record: IterationRecord, decrease_exact: float, cfg: AlgoConfig) -> bool:
    if record.guarded:
        # no function values were computed, so there is no estimate to be accurate
        return False
    err = abs(decrease_exact - record.decrease_noisy)
    return _le(err, 2.0 * cfg.nu * record.decrement_noisy, decrease_exact)


def check_sufficient_conditions(record: IterationRecord, exact_bundle, exact_phis, cfg: AlgoConfig) -> bool:
    """Directional derivative errors along s_k and along the exact maximizers.

    Every order l <= j_k is tested in every direction, measured against the
    noisy model decrement in that direction.
    """
    nb = record.noisy_bundle
    half_nu = 0.5 * cfg.nu
    jk = record.j_k
    dg = nb.gradient - exact_bundle.gradient
    dH = nb.hessian - exact_bundle.hessian if jk == 2 else None

    def errors(v):
        out = [abs(float(dg @ v))]
        if dH is not None:
            out.append(abs(float(v @ dH @ v)))
        return out

    if any(e > half_nu * record.decrement_noisy for e in errors(record.step)):
        return False
    for j in range(1, jk + 1):
        d_hat = exact_phis[j - 1].displacement
        dbar = model_decrement(nb.gradient, _steps_hessian(nb, j), d_hat)
        if any(e > half_nu * dbar for e in errors(d_hat)):
            return False
    return True


def detect_tilde_events(record: IterationRecord, exact_bundle, decrease_exact: float, cfg: AlgoConfig):
    gbar = record.noisy_bundle.gradient
    gbar_norm = float(np.linalg.norm(gbar))
    tilde_m = float(np.linalg.norm(exact_bundle.gradient - gbar)) <= cfg.nu * gbar_norm
    if record.guarded:
        return tilde_m, False
    err = abs(record.decrease_noisy - decrease_exact)
    tilde_f = err <= 2.0 * cfg.nu * gbar_norm * min(1.0, record.r)
    return tilde_m, tilde_f


def annotate_record(record: IterationRecord, exact, cfg: AlgoConfig, r_bar: Optional[float]) -> EventFlags:
    exact_bundle, phis = exact_measures(exact, record.x, record.delta, cfg)
    m1, m2, m = detect_m(record, exact_bundle, phis, cfg)
    f_x = exact_bundle.value
    decrease_exact = f_x - exact.value(record.x + record.step)
    dt = model_decrement(exact_bundle.gradient, _steps_hessian(exact_bundle, record.j_k), record.step)
    f = detect_f(record, decrease_exact, cfg)
    if record.j_k == 1:
        tm, tf = detect_tilde_events(record, exact_bundle, decrease_exact, cfg)
    else:
        tm = tf = None
    return EventFlags(
        m1_per_j=m1, m2=m2, m=m, f=f, e=m and f, s=record.success,
        sufficient=check_sufficient_conditions(record, exact_bundle, phis, cfg),
        lam=None if r_bar is None else record.r > r_bar,
        optimal=is_approx_minimizer(phis, cfg, record.delta),
        tilde_m=tm, tilde_f=tf,
        f_exact=f_x, grad_norm_exact=float(np.linalg.norm(exact_bundle.gradient)),
        phi_exact=tuple(p.decrement for p in phis),
        model_decrease_exact=dt, decrease_exact=decrease_exact,
    )


def annotate(trace: Trace, exact, r_bar: Optional[float] = None) -> Trace:
    """Fill event flags on every record of an un-annotated trace."""
    cfg = trace.cfg
    r_bar = threshold_for(cfg, exact) if r_bar is None else r_bar
    for rec in trace.records:
        rec.event_flags = annotate_record(rec, exact, cfg, r_bar)
    return trace


def hitting_time(trace: Trace) -> Optional[int]:
    for rec in trace.records:
        if rec.event_flags.optimal:
            return rec.k
    return None


def lattice_threshold(r0: float, gamma: float, r_bar: float) -> float:
    """Largest radius of the form r0 gamma^-i (i >= 0 integer) not exceeding r_bar."""
    i = max(0, math.ceil(math.log(r0 / r_bar) / math.log(gamma) - 1e-12))
    val = r0 * gamma ** (-i)
    while val > r_bar:
        i += 1
        val = r0 * gamma ** (-i)
    return val


@dataclass(frozen=True)
class ClassCounts:
    n_eps: int
    censored: bool
    # R_k > r_bar and R_k <= r_bar
    n_lambda: int
    n_lambda_bar: int
    # R_k >= r_bar
    n_closure: int
    n_I: int
    n_A: int
    n_AS: int
    n_AU: int
    # accurate unsuccessful iterations sitting exactly on R_k = r_bar
    n_AU_at_threshold: int
    n_IS: int
    n_S: int
    n_U: int


def classify_trace(trace: Trace, r_bar: float) -> ClassCounts:
    hit = hitting_time(trace)
    censored = hit is None
    n_eps = len(trace.records) if censored else hit
    c = dict.fromkeys(
        ["n_lambda", "n_lambda_bar", "n_closure", "n_I", "n_A", "n_AS", "n_AU", "n_AU_at_threshold", "n_IS", "n_S", "n_U"], 0
    )
    for rec in trace.records[:n_eps]:
        ev = rec.event_flags
        R = rec.r
        strict, closed = R > r_bar, R >= r_bar
        c["n_lambda"] += strict
        c["n_lambda_bar"] += not strict
        c["n_closure"] += closed
        if closed:
            if ev.e:
                c["n_A"] += 1
                c["n_AS"] += ev.s
                if not ev.s:
                    if strict:
                        c["n_AU"] += 1
                    else:
                        c["n_AU_at_threshold"] += 1
            else:
                c["n_I"] += 1
                c["n_IS"] += ev.s
            c["n_S"] += ev.s
        if strict and not ev.s:
            c["n_U"] += 1
    return ClassCounts(n_eps=n_eps, censored=censored, **c)


def small_radius_failures(trace: Trace, r_bar: float) -> list:
    """Iterations with r_k <= r_bar, optimality unmet and accurate events, that failed."""
    return [
        rec.k for rec in trace.records
        if rec.r <= r_bar and not rec.event_flags.optimal and rec.event_flags.e and not rec.success
    ]


def decrease_shortfalls(trace: Trace, r_bar: float, guaranteed: float) -> list:
    """Accurate successful iterations with r_k >= r_bar that decreased f by less than guaranteed."""
    out = []
    for rec in trace.records:
        ev = rec.event_flags
        if rec.success and ev.e and rec.r >= r_bar and not ev.optimal:
            if ev.decrease_exact < guaranteed * (1.0 - 1e-9):
                out.append(rec.k)
    return out


def selection_gap_violations(trace: Trace) -> list:
    """Accurate, non-optimal iterations whose selected decrement misses the degree test."""
    out = []
    cfg = trace.cfg
    for rec in trace.records:
        ev = rec.event_flags
        if ev.m and not ev.optimal:
            j = rec.j_k
            thr = cfg.varsigma * cfg.epsilon[j - 1] * rec.delta**j / (math.factorial(j) * (1.0 + cfg.nu))
            if not rec.displacements[j - 1].decrement > thr:
                out.append(rec.k)
    return out


# --- Monte Carlo diagnostics -------------------------------------------------


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n) if n > 0 else math.inf


@dataclass
class BinStat:
    label: str
    count: int
    freq_m: float
    freq_f: float
    freq_gbar: float
    large_gradient: Optional[bool] = None

    def below(self, target: float, which: str = "m") -> bool:
        freq = getattr(self, f"freq_{which}")
        return self.count > 0 and freq < target - 3.0 * binomial_sigma(target, self.count)


@dataclass
class DegradedReport:
    alpha_star: float
    b: float
    large: BinStat
    small: BinStat
    cells: list
    # large-gradient bin: M and F at least alpha_*, Gbar at least sqrt(alpha_*), within 3 sigma
    large_bin_ok: Optional[bool]
    # every cell whose M frequency is significantly below alpha_* is a small-gradient cell
    violations_confined: Optional[bool]
    offending_cells: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.large_bin_ok is not False and self.violations_confined is not False


def _bin_stat(label, rows, large=None) -> BinStat:
    if not rows:
        return BinStat(label, 0, math.nan, math.nan, math.nan, large)
    arr = np.asarray(rows, dtype=float)
    return BinStat(label, len(rows), float(arr[:, 0].mean()), float(arr[:, 1].mean()), float(arr[:, 2].mean()), large)


DEFAULT_RATIO_EDGES = (0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, math.inf)


def degraded_optimality_check(
    traces: Sequence[Trace], alpha_star: float, b: float, ratio_edges=DEFAULT_RATIO_EDGES
) -> DegradedReport:
    """Bin first-order iterations by ||grad f|| / (2 B_bar) and test the frequency claims.

    Cells are (iteration index, ratio bin) pairs. Edges must include 1 so that
    no cell straddles the large/small-gradient boundary.
    """
    from .tr1ne import bar_b

    if not 0.5 <= alpha_star < 1:
        raise ValueError("alpha_star must be in [1/2, 1)")
    edges = tuple(ratio_edges)
    if 1.0 not in edges:
        raise ValueError("ratio edges must include 1")
    large_rows, small_rows, cells = [], [], {}
    for tr in traces:
        nu = tr.cfg.nu
        for rec in tr.records:
            ev = rec.event_flags
            bb = bar_b(b, nu, rec.r)
            ratio = ev.grad_norm_exact / (2.0 * bb)
            gbar = float(np.linalg.norm(rec.noisy_bundle.gradient)) >= bb
            row = (ev.m, ev.f, gbar)
            (large_rows if ratio >= 1.0 else small_rows).append(row)
            idx = int(np.searchsorted(edges, ratio, side="right")) - 1
            cells.setdefault((rec.k, idx), []).append(row)
    large = _bin_stat("grad >= 2 B_bar", large_rows, True)
    small = _bin_stat("grad < 2 B_bar", small_rows, False)
    stats = []
    for (k, idx) in sorted(cells):
        lo, hi = edges[idx], edges[idx + 1]
        stats.append(_bin_stat(f"k={k} ratio in [{lo:g},{hi:g})", cells[(k, idx)], lo >= 1.0))
    if large.count == 0:
        large_ok = None
    else:
        large_ok = not (large.below(alpha_star, "m") or large.below(alpha_star, "f") or large.below(math.sqrt(alpha_star), "gbar"))
    low = [c for c in stats if c.below(alpha_star, "m") or c.below(alpha_star, "f")]
    offending = [c.label for c in low if c.large_gradient]
    confined = None if not stats else not offending
    return DegradedReport(alpha_star, b, large, small, stats, large_ok, confined, offending)


def subsampling_noise_scale(alpha: float, alpha_star: float, n_batch: int) -> float:
    """B = max(B0, B1) for the signed example with batches of size n_batch.

    Uses Pr[|psi| <= t] >= 1 - 2 exp(-t^2 n / 2) = sqrt(alpha_*), the gradient
    error bound alpha |psi| / sqrt(2e) and the decrease error bound alpha |psi| / 2.
    """
    t = math.sqrt(2.0 * math.log(2.0 / (1.0 - math.sqrt(alpha_star))) / n_batch)
    b1 = alpha * t / math.sqrt(2.0 * math.e)
    b0 = 0.5 * alpha * t
    return max(b0, b1)


@dataclass
class AS3Estimate:
    k: np.ndarray
    count: np.ndarray
    p_m: np.ndarray
    p_f: np.ndarray
    # half-width of a 3-sigma binomial band
    p_m_band: np.ndarray
    p_f_band: np.ndarray
    third: np.ndarray
    third_ci: np.ndarray
    # E[1_S dF+] / E[1_S 1_F dF+]; nan where the denominator vanishes
    mu_hat: np.ndarray


def _bootstrap_mean_ci(values: np.ndarray, rng: np.random.Generator, reps: int = 1000, level: float = 0.95):
    if len(values) == 0:
        return (math.nan, math.nan)
    idx = rng.integers(0, len(values), size=(reps, len(values)))
    means = values[idx].mean(axis=1)
    a = (1.0 - level) / 2.0
    return (float(np.quantile(means, a)), float(np.quantile(means, 1.0 - a)))


def as3_estimate(traces: Sequence[Trace], seed: int = 0, bootstrap: int = 1000) -> AS3Estimate:
    """Per-iteration-index frequencies of M and F and the harm term 1_S (1 - 1_F) df.

    Only iterations before each run's hitting time enter, since that is the
    range over which the assumption is needed.
    """
    if len(traces) < 100:
        raise ValueError("at least 100 replications are required")
    rng = np.random.default_rng(seed)
    pre_hit = []
    for t in traces:
        hit = hitting_time(t)
        pre_hit.append(t.records if hit is None else t.records[:hit])
    kmax = max(len(r) for r in pre_hit)
    ks, counts, pm, pf, bm, bf, third, third_ci, mu = [], [], [], [], [], [], [], [], []
    for k in range(kmax):
        recs = [r[k] for r in pre_hit if len(r) > k]
        n = len(recs)
        m = np.array([r.event_flags.m for r in recs], dtype=float)
        f = np.array([r.event_flags.f for r in recs], dtype=float)
        s = np.array([r.success for r in recs], dtype=float)
        df = np.array([r.event_flags.decrease_exact if r.success else 0.0 for r in recs])
        harm = s * (1.0 - f) * df
        gain = s * np.maximum(df, 0.0)
        denom = float(np.mean(gain * f))
        ks.append(k)
        counts.append(n)
        pm.append(m.mean())
        pf.append(f.mean())
        bm.append(3.0 * binomial_sigma(m.mean(), n))
        bf.append(3.0 * binomial_sigma(f.mean(), n))
        third.append(harm.mean())
        third_ci.append(_bootstrap_mean_ci(harm, rng, bootstrap))
        mu.append(float(np.mean(gain)) / denom if denom > 0 else math.nan)
    return AS3Estimate(
        np.array(ks), np.array(counts), np.array(pm), np.array(pf), np.array(bm), np.array(bf),
        np.array(third), np.array(third_ci), np.array(mu),
    )


def expectation_condition_check(record: IterationRecord, eta: float, integral_bound: float) -> bool:
    """Model decrement at least integral_bound / eta (inclusive)."""
    return record.decrement_noisy >= integral_bound / eta
