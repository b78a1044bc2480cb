"""Bundled benchmark problems, registered by name.

Each entry builds an :class:`ExactOracle` whose Lipschitz constants are valid on
the stated box (or globally) and a default starting point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import LipschitzEstimate
from .example import ExampleProblem
from .oracle import ExactOracle, FiniteSumProblem


@dataclass(frozen=True)
class Benchmark:
    oracle: ExactOracle
    x0: np.ndarray
    # box on which the Lipschitz constants hold; None means globally
    box: Optional[tuple] = None
    finite_sum: Optional[FiniteSumProblem] = None


def _rotation(n: int, seed: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def quadratic(n: int = 10, cond: float = 10.0, seed: int = 7, start: float = 3.0) -> Benchmark:
    """f = x'Ax/2 with eigenvalues spread linearly on [1/cond, 1]."""
    Q = _rotation(n, seed)
    A = Q @ np.diag(np.linspace(1.0 / cond, 1.0, n)) @ Q.T
    A = 0.5 * (A + A.T)
    lam_max = float(np.linalg.eigvalsh(A)[-1])
    oracle = ExactOracle(
        name="quadratic",
        dimension=n,
        value_fn=lambda x: 0.5 * float(x @ A @ x),
        gradient_fn=lambda x: A @ x,
        hessian_fn=lambda x: A.copy(),
        f_low=0.0,
        lipschitz=LipschitzEstimate((lam_max, 0.0)),
    )
    return Benchmark(oracle, np.full(n, start))


ROSEN_BOX = ((-2.0, 2.0), (-1.0, 3.0))


def rosenbrock(b: float = 100.0, x0=(-1.2, 1.0)) -> Benchmark:
    """(1-x)^2 + b (y - x^2)^2 with constants valid on [-2,2] x [-1,3]."""
    (xlo, xhi), (ylo, yhi) = ROSEN_BOX
    xm = max(abs(xlo), abs(xhi))

    def value(z):
        x, y = z
        return (1.0 - x) ** 2 + b * (y - x * x) ** 2

    def gradient(z):
        x, y = z
        return np.array([-2.0 * (1.0 - x) - 4.0 * b * x * (y - x * x), 2.0 * b * (y - x * x)])

    def hessian(z):
        x, y = z
        return np.array([[2.0 - 4.0 * b * y + 12.0 * b * x * x, -4.0 * b * x], [-4.0 * b * x, 2.0 * b]])

    # entrywise maxima of |H| on the box bound the spectral norm via Frobenius
    h11 = max(abs(2.0 - 4.0 * b * yy + 12.0 * b * xx * xx) for xx in (0.0, xm) for yy in (ylo, yhi))
    lip1 = math.sqrt(h11**2 + 2.0 * (4.0 * b * xm) ** 2 + (2.0 * b) ** 2)
    # third-derivative form 24bx v1^3 - 12b v1^2 v2, max |v1^2 v2| = 2/(3 sqrt 3)
    lip2 = 24.0 * b * xm + 12.0 * b * 2.0 / (3.0 * math.sqrt(3.0))
    oracle = ExactOracle("rosenbrock", 2, value, gradient, hessian, 0.0, LipschitzEstimate((lip1, lip2)))
    return Benchmark(oracle, np.asarray(x0, dtype=float), box=ROSEN_BOX)


def trig_saddle(n: int = 3, seed: int = 11, x0=None) -> Benchmark:
    """f = sum_i s_i cos((Qx)_i) with signs (-1, ..., -1, +1): a strict saddle at 0.

    Q is orthogonal, so every derivative norm is bounded by one globally.
    """
    Q = _rotation(n, seed)
    signs = -np.ones(n)
    signs[-1] = 1.0

    def value(x):
        return float(signs @ np.cos(Q @ x))

    def gradient(x):
        return -Q.T @ (signs * np.sin(Q @ x))

    def hessian(x):
        H = -Q.T @ np.diag(signs * np.cos(Q @ x)) @ Q
        return 0.5 * (H + H.T)

    oracle = ExactOracle("trig_saddle", n, value, gradient, hessian, -float(n), LipschitzEstimate((1.0, 1.0)))
    start = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    return Benchmark(oracle, start)


def example(m: int = 100_000, alpha: float = 1.0, x0: float = 3.0) -> Benchmark:
    ex = ExampleProblem(m, alpha)
    return Benchmark(ex.exact(), np.array([float(x0)]), finite_sum=ex.finite_sum())


REGISTRY: dict[str, Callable[..., Benchmark]] = {
    "quadratic": quadratic,
    "rosenbrock": rosenbrock,
    "trig_saddle": trig_saddle,
    "example": example,
}


def make(name: str, **params) -> Benchmark:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**params)
