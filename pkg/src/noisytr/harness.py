"""Experiment orchestration: specs, replications, tables and summaries.

Replication ``i`` of a spec with root seed ``s`` draws all of its noise from a
stream derived from ``(s, i)``, so replications can run in any order or in
parallel and still produce identical results.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import problems
from .events import ClassCounts, annotate, classify_trace, hitting_time, threshold_for
from .example import ExampleProblem
from .oracle import AdditiveBounded, AdditiveGaussian, NoisyOracle, NoNoise, Subsampled, bernstein_w
from .trqne import AlgoConfig, Trace, complexity_bound
from .trqne import run as run_trqne
from .tr1ne import run as run_tr1ne

ALGORITHMS = ("trqne", "tr1ne")
NOISE_KINDS = ("none", "additive_bounded", "additive_gaussian", "subsampled")
DEFAULT_EPSILON_GRID = tuple(10.0 ** (-e) for e in (1.0, 1.5, 2.0, 2.5, 3.0))


class SpecError(ValueError):
    """Invalid experiment specification; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentSpec:
    problem: str
    algorithm: str = "trqne"
    cfg: AlgoConfig = field(default_factory=AlgoConfig)
    noise: dict = field(default_factory=lambda: {"kind": "none"})
    problem_params: dict = field(default_factory=dict)
    epsilon_grid: Optional[tuple] = None
    replications: int = 1
    seed: int = 0
    # stop each run at the exact hitting time instead of spending the whole budget
    stop_at_hit: bool = True

    def __post_init__(self):
        if self.problem not in problems.REGISTRY:
            raise SpecError("problem", f"unknown problem {self.problem!r}; known: {sorted(problems.REGISTRY)}")
        if self.algorithm not in ALGORITHMS:
            raise SpecError("algorithm", f"unknown algorithm {self.algorithm!r}; known: {list(ALGORITHMS)}")
        if self.algorithm == "tr1ne" and self.cfg.q != 1:
            raise SpecError("cfg.q", "tr1ne requires q = 1")
        kind = self.noise.get("kind") if isinstance(self.noise, dict) else None
        if kind not in NOISE_KINDS:
            raise SpecError("noise.kind", f"unknown noise model {kind!r}; known: {list(NOISE_KINDS)}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise SpecError("replications", "must be an integer >= 1")
        if int(self.seed) != self.seed or self.seed < 0:
            raise SpecError("seed", "must be a non-negative integer")
        if self.epsilon_grid is not None:
            grid = tuple(float(e) for e in self.epsilon_grid)
            if len(grid) < 2 or any(b >= a for a, b in zip(grid, grid[1:])):
                raise SpecError("epsilon_grid", "must hold at least two strictly decreasing values")
            if not all(0 < e < 1 for e in grid):
                raise SpecError("epsilon_grid", "values must lie in (0,1)")
            object.__setattr__(self, "epsilon_grid", grid)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "problem_params": dict(self.problem_params),
            "algorithm": self.algorithm,
            "cfg": self.cfg.to_dict(),
            "noise": dict(self.noise),
            "epsilon_grid": None if self.epsilon_grid is None else list(self.epsilon_grid),
            "replications": int(self.replications),
            "seed": int(self.seed),
            "stop_at_hit": bool(self.stop_at_hit),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(sorted(unknown)[0], "unknown key")
        if "problem" not in d:
            raise SpecError("problem", "missing")
        try:
            cfg = AlgoConfig.from_dict(d.pop("cfg", {}))
        except ValueError as exc:
            raise SpecError("cfg", str(exc)) from None
        grid = d.pop("epsilon_grid", None)
        return cls(cfg=cfg, epsilon_grid=None if grid is None else tuple(grid), **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        return cls.from_dict(json.loads(text))

    @property
    def spec_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def build_benchmark(spec: ExperimentSpec):
    try:
        return problems.make(spec.problem, **spec.problem_params)
    except (TypeError, ValueError) as exc:
        raise SpecError("problem_params", str(exc)) from None


def build_noise(noise: dict, bench):
    params = {k: v for k, v in noise.items() if k != "kind"}
    kind = noise.get("kind")
    try:
        if kind == "none":
            return NoNoise()
        if kind == "additive_bounded":
            return AdditiveBounded(**params)
        if kind == "additive_gaussian":
            return AdditiveGaussian(**params)
        if kind == "subsampled":
            if bench.finite_sum is None:
                raise SpecError("noise.kind", "subsampling needs a finite-sum problem")
            return Subsampled(bench.finite_sum, **params)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError("noise", str(exc)) from None
    raise SpecError("noise.kind", f"unknown noise model {kind!r}")


def validate_spec(spec: ExperimentSpec) -> None:
    """Build the benchmark and noise model once so that bad parameters fail early."""
    bench = build_benchmark(spec)
    build_noise(spec.noise, bench)
    if bench.x0.shape[0] != bench.oracle.dimension:
        raise SpecError("problem_params", "starting point has the wrong dimension")


def replication_seed(root: int, index: int) -> int:
    return int(np.random.SeedSequence([int(root), int(index)]).generate_state(1, dtype=np.uint32)[0])


def run_replication(spec: ExperimentSpec, index: int, cfg: Optional[AlgoConfig] = None) -> Trace:
    cfg = spec.cfg if cfg is None else cfg
    bench = build_benchmark(spec)
    oracle = NoisyOracle(bench.oracle, build_noise(spec.noise, bench), seed=replication_seed(spec.seed, index))
    stop = (lambda rec: rec.event_flags.optimal) if spec.stop_at_hit else None
    runner = run_trqne if spec.algorithm == "trqne" else run_tr1ne
    return runner(cfg, oracle, bench.x0, exact=bench.oracle, stop=stop)


def _replication_job(args):
    spec_dict, index, cfg_dict = args
    spec = ExperimentSpec.from_dict(spec_dict)
    cfg = None if cfg_dict is None else AlgoConfig.from_dict(cfg_dict)
    return run_replication(spec, index, cfg)


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None, cfg: Optional[AlgoConfig] = None) -> list:
    """All replications, in index order."""
    if workers is None or workers <= 1 or spec.replications == 1:
        return [run_replication(spec, i, cfg) for i in range(spec.replications)]
    jobs = [(spec.to_dict(), i, None if cfg is None else cfg.to_dict()) for i in range(spec.replications)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        traces = list(pool.map(_replication_job, jobs))
    return traces


# --- serialization -----------------------------------------------------------

TRACE_COLUMNS = (
    "k", "r", "delta", "j_k", "rho", "success", "decrement", "f_exact", "f_noisy", "f_noisy_trial",
    "grad_norm_exact", "fallthrough", "guarded", "m1", "m2", "m", "f", "e", "s", "sufficient",
    "lambda", "tilde_m", "tilde_f", "x",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_rows(trace: Trace):
    for rec in trace.records:
        ev = rec.event_flags
        yield [
            _fmt(rec.k), _fmt(rec.r), _fmt(rec.delta), _fmt(rec.j_k), _fmt(rec.rho), _fmt(rec.success),
            _fmt(rec.decrement_noisy), _fmt(ev.f_exact), _fmt(rec.noisy_f_before), _fmt(rec.noisy_f_after),
            _fmt(ev.grad_norm_exact), _fmt(rec.fallthrough), _fmt(rec.guarded),
            "".join(str(int(b)) for b in ev.m1_per_j), _fmt(ev.m2), _fmt(ev.m), _fmt(ev.f), _fmt(ev.e),
            _fmt(ev.s), _fmt(ev.sufficient), _fmt(ev.lam), _fmt(ev.tilde_m), _fmt(ev.tilde_f),
            ";".join(repr(float(v)) for v in rec.x),
        ]


def write_trace_csv(path, trace: Trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(trace_rows(trace))


def trace_summary(trace: Trace, r_bar: Optional[float]) -> dict:
    hit = hitting_time(trace)
    out = {
        "iterations": len(trace),
        "n_eps": len(trace) if hit is None else hit,
        "censored": hit is None,
        "successes": sum(r.success for r in trace.records),
        "f_final": trace.records[-1].event_flags.f_exact if trace.records else math.nan,
    }
    if r_bar is not None and trace.records:
        out["counts"] = classify_trace(trace, r_bar).__dict__
    return out


# --- aggregation -------------------------------------------------------------


def aggregate(values: Sequence[float], censored: Optional[Sequence[bool]] = None, seed: int = 0, bootstrap: int = 2000) -> dict:
    """Order-independent summary of one scalar across replications.

    Censored entries are excluded from the statistics and counted.
    """
    vals = np.asarray(values, dtype=float)
    cens = np.zeros(len(vals), dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
    kept = np.sort(vals[~cens])
    out = {"replications": int(len(vals)), "censored": int(cens.sum()), "n": int(len(kept))}
    if len(kept) == 0:
        out.update(mean=math.nan, median=math.nan, q10=math.nan, q90=math.nan, ci_low=math.nan, ci_high=math.nan)
        return out
    mean = float(kept.mean())
    if len(kept) == 1:
        lo = hi = mean
    else:
        rng = np.random.default_rng(seed)
        means = kept[rng.integers(0, len(kept), size=(bootstrap, len(kept)))].mean(axis=1)
        lo, hi = float(np.quantile(means, 0.025)), float(np.quantile(means, 0.975))
        lo, hi = min(lo, mean), max(hi, mean)
    out.update(
        mean=mean, median=float(np.median(kept)), q10=float(np.quantile(kept, 0.1)),
        q90=float(np.quantile(kept, 0.9)), ci_low=lo, ci_high=hi,
    )
    return out


# --- studies -----------------------------------------------------------------


@dataclass
class ScalingRow:
    epsilon: float
    mean_n_eps: float
    max_n_eps: float
    bound: float
    replications: int
    censored: int
    n_eps: list


@dataclass
class ScalingTable:
    rows: list
    slope: float
    # epsilons used for the slope fit
    fit_epsilons: tuple

    @property
    def dominated(self) -> bool:
        """Every uncensored hitting time lies below its bound evaluation."""
        return all(r.max_n_eps <= r.bound for r in self.rows if not math.isnan(r.max_n_eps))


def fit_slope(epsilons: Sequence[float], counts: Sequence[float]) -> float:
    """Least-squares slope of log N against log(1/eps); N = 0 is read as 1."""
    x = np.log(1.0 / np.asarray(epsilons, dtype=float))
    y = np.log(np.maximum(np.asarray(counts, dtype=float), 1.0))
    return float(np.polyfit(x, y, 1)[0])


def complexity_scaling(spec: ExperimentSpec, fit_points: int = 3, workers: Optional[int] = None) -> ScalingTable:
    grid = spec.epsilon_grid or DEFAULT_EPSILON_GRID
    bench = build_benchmark(spec)
    lip = bench.oracle.lipschitz
    if lip is None:
        raise SpecError("problem", "complexity bounds need Lipschitz constants")
    f0 = bench.oracle.value(bench.x0)
    rows = []
    for eps in grid:
        cfg = replace(spec.cfg, epsilon=(eps,) * spec.cfg.q)
        traces = run_experiment(spec, workers=workers, cfg=cfg)
        hits = [hitting_time(t) for t in traces]
        cens = [h is None for h in hits]
        n = [len(t) if h is None else h for t, h in zip(traces, hits)]
        kept = [v for v, c in zip(n, cens) if not c]
        bound = complexity_bound(cfg, lip, f0, bench.oracle.f_low, p_star=1.0)
        rows.append(ScalingRow(
            eps, float(np.mean(kept)) if kept else math.nan, float(max(kept)) if kept else math.nan,
            bound, len(traces), sum(cens), n,
        ))
    fit = sorted(rows, key=lambda r: r.epsilon)[:fit_points]
    usable = [r for r in fit if not math.isnan(r.mean_n_eps)]
    slope = fit_slope([r.epsilon for r in usable], [r.mean_n_eps for r in usable]) if len(usable) >= 2 else math.nan
    return ScalingTable(rows, slope, tuple(r.epsilon for r in usable))


@dataclass
class ConcentrationRow:
    batch: int
    tau: float
    empirical: float
    bound: float
    sigma: float

    @property
    def ok(self) -> bool:
        return self.empirical <= self.bound + 3.0 * self.sigma


def sample_psi(rng: np.random.Generator, m: int, n_batch: int, draws: int) -> np.ndarray:
    """Mean sign of `draws` uniform without-replacement batches from {-m..m} \\ {0}."""
    positives = rng.hypergeometric(m, m, n_batch, size=draws)
    return (2.0 * positives - n_batch) / n_batch


def concentration_study(
    problem: ExampleProblem, x: float, s: float, batch_grid, tau_grid, draws: int = 10_000, seed: int = 0
) -> list:
    """Exceedance Pr[dF - df > tau] of the batch decrease error against exp(-W0(tau))."""
    if draws < 10_000:
        raise ValueError("draws must be >= 10^4 per cell")
    box = abs(x) + abs(s)
    kappa = problem.kappa_f(abs(s), box)
    scale = 0.5 * problem.alpha * (math.exp(-x * x) - math.exp(-(x + s) ** 2))
    rows = []
    rng = np.random.default_rng(seed)
    for n in batch_grid:
        if n >= 2 * problem.m:
            errors = np.zeros(draws)
        else:
            errors = scale * sample_psi(rng, problem.m, n, draws)
        for tau in tau_grid:
            p = float(np.mean(errors > tau))
            bound = math.exp(-bernstein_w(tau, n, kappa))
            rows.append(ConcentrationRow(int(n), float(tau), p, bound, math.sqrt(max(bound * (1 - bound), 0.0) / draws)))
    return rows


@dataclass
class PsiTailRow:
    t: float
    batch: int
    empirical: float
    bound: float
    sigma: float

    @property
    def ok(self) -> bool:
        return self.empirical <= self.bound + 3.0 * self.sigma


def psi_tail_study(m: int, t_grid, batch_grid, draws: int = 100_000, seed: int = 0) -> list:
    from .oracle import one_sided_psi_tail

    rng = np.random.default_rng(seed)
    rows = []
    for n in batch_grid:
        psi = sample_psi(rng, m, n, draws)
        for t in t_grid:
            bound = one_sided_psi_tail(t, n)
            p = float(np.mean(psi > t))
            rows.append(PsiTailRow(float(t), int(n), p, bound, math.sqrt(max(bound * (1 - bound), 0.0) / draws)))
    return rows


def experiment_summary(spec: ExperimentSpec, traces: Sequence[Trace]) -> dict:
    bench = build_benchmark(spec)
    r_bar = threshold_for(spec.cfg, bench.oracle)
    per_run = [trace_summary(t, r_bar) for t in traces]
    return {
        "spec_hash": spec.spec_hash,
        "spec": spec.to_dict(),
        "r_bar": r_bar,
        "n_eps": aggregate([p["n_eps"] for p in per_run], [p["censored"] for p in per_run], seed=spec.seed),
        "f_final": aggregate([p["f_final"] for p in per_run], seed=spec.seed),
        "runs": per_run,
    }


def event_summary(traces: Sequence[Trace]) -> dict:
    """Per-iteration-index frequencies of the accuracy events."""
    kmax = max((len(t) for t in traces), default=0)
    table = []
    for k in range(kmax):
        evs = [t.records[k].event_flags for t in traces if len(t) > k]
        table.append({
            "k": k, "count": len(evs),
            "m": float(np.mean([e.m for e in evs])), "f": float(np.mean([e.f for e in evs])),
            "e": float(np.mean([e.e for e in evs])), "s": float(np.mean([e.s for e in evs])),
        })
    return {"per_iteration": table}


__all__ = [
    "ExperimentSpec", "SpecError", "run_experiment", "run_replication", "complexity_scaling",
    "concentration_study", "psi_tail_study", "aggregate", "write_trace_csv", "TRACE_COLUMNS",
    "experiment_summary", "event_summary", "fit_slope", "ClassCounts", "annotate",
]
