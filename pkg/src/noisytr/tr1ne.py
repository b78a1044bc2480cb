"""First-order variant: a normalized noisy-gradient step of length r_k.

There is no optimality radius and no degree loop; the model decrement is
simply ||g|| r_k. Records use ``delta = r`` so that the event detectors treat
the whole trust region as the optimality ball.
"""
from __future__ import annotations

import numpy as np

from .optimality import DisplacementResult, unit_descent_step
from .trqne import AlgoConfig, IterationRecord, State, Trace, finish_iteration
from .trqne import run as _run


def tr1ne_iterate(state: State, cfg: AlgoConfig, oracle) -> IterationRecord:
    if cfg.q != 1:
        raise ValueError("the first-order variant requires q = 1")
    bundle = oracle.bundle(state.x, 1, state.k)
    gnorm = float(np.linalg.norm(bundle.gradient))
    r = state.r
    # zero gradient gives a zero step and decrement, which the guard rejects
    s = unit_descent_step(bundle.gradient, r)
    dec = gnorm * r
    disp = DisplacementResult(s, dec, 1.0, r, 1)
    return finish_iteration(state, cfg, oracle, r, 1, [disp], bundle, False, s, dec)


def run(cfg: AlgoConfig, oracle, x0, exact=None, stop=None) -> Trace:
    return _run(cfg, oracle, x0, exact=exact, stop=stop, iterate=tr1ne_iterate, algorithm="tr1ne")


def bar_b(b: float, nu: float, r: float) -> float:
    """B / (nu min(1, r)): gradient scale below which noise may dominate."""
    if not b > 0:
        raise ValueError("b must be positive")
    if not 0 < nu < 1:
        raise ValueError("nu must be in (0,1)")
    if not r > 0:
        raise ValueError("r must be positive")
    return b / (nu * min(1.0, r))

