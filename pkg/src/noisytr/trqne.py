"""Adaptive-degree trust-region method with noisy evaluations (orders q <= 2).

Each iteration picks the lowest model degree whose (noisy) optimality
displacement promises a significant decrement, takes a step with that model,
and accepts or rejects it on the ratio of estimated function decrease to model
decrease. The radius is multiplied or divided by ``gamma``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import DerivativeBundle, LipschitzEstimate, as_vector, model_decrement
from .optimality import DisplacementResult, phi

RADIUS_RTOL = 1e-12


@dataclass(frozen=True)
class AlgoConfig:
    q: int = 1
    epsilon: tuple = (1e-2,)
    eta: float = 0.1
    theta: float = 1.0
    varsigma: float = 1.0
    gamma: float = 2.0
    r_max: float = 100.0
    r0: float = 1.0
    budget: int = 1000

    def __post_init__(self):
        eps = self.epsilon
        if isinstance(eps, (int, float)):
            eps = (float(eps),)
        eps = tuple(float(e) for e in eps)
        object.__setattr__(self, "epsilon", eps)
        if self.q not in (1, 2):
            raise ValueError("q must be 1 or 2")
        if len(eps) != self.q:
            raise ValueError(f"epsilon must have q={self.q} entries, got {len(eps)}")
        if not all(0 < e < 1 for e in eps):
            raise ValueError("epsilon entries must be in (0,1)")
        if not 0 < self.eta < 1:
            raise ValueError("eta must be in (0,1)")
        if not self.eps_min <= self.theta <= 1:
            raise ValueError("theta must be in [eps_min, 1]")
        if not 0 < self.varsigma <= 1:
            raise ValueError("varsigma must be in (0,1]")
        if not self.gamma > 1:
            raise ValueError("gamma must be > 1")
        if not self.r_max >= 1:
            raise ValueError("r_max must be >= 1")
        if not self.eps_min < self.r0 <= self.r_max:
            raise ValueError("r0 must be in (eps_min, r_max]")
        if int(self.budget) != self.budget or self.budget < 0:
            raise ValueError("budget must be a non-negative integer")

    @property
    def eps_min(self) -> float:
        return min(self.epsilon)

    @property
    def nu(self) -> float:
        return min(0.5 * self.eta, 0.25 * (1.0 - self.eta))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilon"] = list(self.epsilon)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AlgoConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "epsilon" in known and not isinstance(known["epsilon"], (int, float)):
            known["epsilon"] = tuple(known["epsilon"])
        return cls(**known)


@dataclass
class State:
    x: np.ndarray
    r: float
    k: int = 0


@dataclass
class IterationRecord:
    k: int
    x: np.ndarray
    r: float
    delta: float
    j_k: int
    displacements: list
    step: np.ndarray
    decrement_noisy: float
    rho: float
    success: bool
    noisy_f_before: float
    noisy_f_after: float
    # the estimated decrease used in rho (nan on guarded iterations)
    decrease_noisy: float
    x_next: np.ndarray
    r_next: float
    noisy_bundle: Optional[DerivativeBundle] = None
    # no degree passed the selection test; j_k = q by default
    fallthrough: bool = False
    # model decrement <= 0: declared unsuccessful without a ratio
    guarded: bool = False
    event_flags: object = None


@dataclass
class Trace:
    algorithm: str
    cfg: AlgoConfig
    records: list = field(default_factory=list)
    final: Optional[State] = None

    def __len__(self):
        return len(self.records)


def select_degree(oracle, x, delta: float, cfg: AlgoConfig, k: int):
    """Return (j_k, displacements, noisy bundle, fallthrough)."""
    displacements = []
    bundle = None
    for j in range(1, cfg.q + 1):
        bundle = oracle.bundle(x, j, k)
        disp = phi(bundle.gradient, bundle.hessian, delta, j)
        displacements.append(disp)
        threshold = cfg.varsigma * cfg.epsilon[j - 1] / (1.0 + cfg.nu) * delta**j / math.factorial(j)
        if disp.decrement > threshold:
            return j, displacements, bundle, False
    return cfg.q, displacements, bundle, True


def compute_step(j_k: int, displacement: DisplacementResult, r: float, delta: float, bundle: DerivativeBundle):
    """Step of norm <= r whose model decrement is at least that of the displacement."""
    if r == delta:
        return displacement.displacement, displacement.decrement
    wide = phi(bundle.gradient, bundle.hessian, r, j_k)
    if wide.decrement >= displacement.decrement:
        return wide.displacement, wide.decrement
    return displacement.displacement, displacement.decrement


def update_radius(r: float, success: bool, cfg: AlgoConfig) -> float:
    return min(cfg.r_max, cfg.gamma * r) if success else r / cfg.gamma


def finish_iteration(state, cfg, oracle, delta, j_k, displacements, bundle, fallthrough, s, dec):
    x, r, k = state.x, state.r, state.k
    guarded = not dec > 0
    if guarded:
        f0 = fs = dF = rho = math.nan
        success = False
    else:
        f0, fs, dF = oracle.value_pair(x, s, k)
        rho = dF / dec
        success = rho >= cfg.eta
    x_next = x + s if success else x.copy()
    r_next = update_radius(r, success, cfg)
    return IterationRecord(
        k=k, x=x.copy(), r=r, delta=delta, j_k=j_k, displacements=displacements,
        step=np.asarray(s, dtype=float).copy(), decrement_noisy=float(dec), rho=float(rho),
        success=bool(success), noisy_f_before=float(f0), noisy_f_after=float(fs),
        decrease_noisy=float(dF), x_next=x_next, r_next=r_next, noisy_bundle=bundle,
        fallthrough=fallthrough, guarded=guarded,
    )


def trqne_iterate(state: State, cfg: AlgoConfig, oracle) -> IterationRecord:
    delta = min(state.r, cfg.theta)
    j_k, displacements, bundle, fallthrough = select_degree(oracle, state.x, delta, cfg, state.k)
    bundle_jk = bundle.truncated(j_k)
    s, dec = compute_step(j_k, displacements[j_k - 1], state.r, delta, bundle_jk)
    return finish_iteration(state, cfg, oracle, delta, j_k, displacements, bundle_jk, fallthrough, s, dec)


def run(
    cfg: AlgoConfig,
    oracle,
    x0,
    exact=None,
    stop: Optional[Callable[[IterationRecord], bool]] = None,
    iterate: Optional[Callable] = None,
    algorithm: str = "trqne",
) -> Trace:
    """Iterate for ``cfg.budget`` iterations.

    ``exact`` is never consulted by the algorithm; when given, each record is
    annotated with event flags after it is produced. ``stop`` lets a harness end
    the run early (e.g. after the exact hitting time).
    """
    from .events import annotate_record, threshold_for

    step_fn = trqne_iterate if iterate is None else iterate
    state = State(as_vector(x0).copy(), float(cfg.r0), 0)
    trace = Trace(algorithm, cfg)
    r_bar = threshold_for(cfg, exact) if exact is not None else None
    for _ in range(int(cfg.budget)):
        rec = step_fn(state, cfg, oracle)
        if exact is not None:
            rec.event_flags = annotate_record(rec, exact, cfg, r_bar)
        trace.records.append(rec)
        state = State(rec.x_next, rec.r_next, state.k + 1)
        if stop is not None and stop(rec):
            break
    trace.final = state
    return trace


def threshold_constants(cfg: AlgoConfig, lip: LipschitzEstimate):
    """(r_bar, kappa_r, kappa_delta) below which accurate iterations must succeed."""
    nu = cfg.nu
    kappa_r = cfg.varsigma * (1.0 - cfg.eta) / (4.0 * (1.0 + nu) * lip.restricted(cfg.q).aggregate)
    r_bar = min(cfg.theta, kappa_r * cfg.eps_min)
    return r_bar, kappa_r, kappa_r / (1.0 + nu)


def complexity_bound(cfg: AlgoConfig, lip: LipschitzEstimate, f0: float, f_low: float, p_star: float = 1.0) -> float:
    """Right-hand side of the expected hitting-time bound."""
    if not 0.5 < p_star <= 1:
        raise ValueError("p_star must be in (1/2, 1]")
    r_bar, _, kappa_d = threshold_constants(cfg, lip)
    q = cfg.q
    main = 4.0 * math.factorial(q) * (f0 - f_low) / (cfg.varsigma * cfg.eta * (kappa_d * cfg.eps_min) ** (q + 1))
    log_term = math.ceil(math.log(cfg.r0 / r_bar) / math.log(cfg.gamma))
    return 2.0 * p_star / (2.0 * p_star - 1.0) ** 2 * (main + log_term + 2)


def per_iteration_decrease(cfg: AlgoConfig, lip: LipschitzEstimate) -> float:
    """Guaranteed exact decrease on accurate successful iterations with r_k >= r_bar."""
    _, _, kappa_d = threshold_constants(cfg, lip)
    return cfg.varsigma * cfg.eta / (2.0 * math.factorial(cfg.q)) * (kappa_d * cfg.eps_min) ** (cfg.q + 1)


__all__ = [
    "AlgoConfig", "State", "IterationRecord", "Trace", "select_degree", "compute_step",
    "trqne_iterate", "run", "threshold_constants", "complexity_bound", "per_iteration_decrease",
    "update_radius", "model_decrement",
]
