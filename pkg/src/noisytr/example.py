"""The one-dimensional signed finite-sum example and its closed-form events.

f_i(x) = x^2/2 + (alpha/2) sgn(i) exp(-x^2) for i in {-m..m} \\ {0}. The noise
terms cancel over the full index set, so f(x) = x^2/2, while a batch b gives
the gradient x (1 - alpha psi(b) exp(-x^2)) with psi(b) the mean sign.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import LipschitzEstimate
from .oracle import ExactOracle, FiniteSumProblem


@dataclass(frozen=True)
class ExampleProblem:
    m: int = 100_000
    alpha: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def index_set(self) -> np.ndarray:
        return np.concatenate([np.arange(-self.m, 0), np.arange(1, self.m + 1)])

    def finite_sum(self) -> FiniteSumProblem:
        alpha = self.alpha

        def values(idx, x):
            return 0.5 * x[0] ** 2 + 0.5 * alpha * np.sign(idx) * math.exp(-x[0] ** 2)

        def gradients(idx, x):
            g = x[0] * (1.0 - alpha * np.sign(idx) * math.exp(-x[0] ** 2))
            return g[:, None]

        def hessians(idx, x):
            e = math.exp(-x[0] ** 2)
            h = 1.0 - alpha * np.sign(idx) * e * (1.0 - 2.0 * x[0] ** 2)
            return h[:, None, None]

        return FiniteSumProblem(self.index_set, values, gradients, hessians, signed=True, name="example")

    def exact(self) -> ExactOracle:
        return ExactOracle(
            name="example",
            dimension=1,
            value_fn=lambda x: 0.5 * float(x[0] ** 2),
            gradient_fn=lambda x: np.array([x[0]]),
            hessian_fn=lambda x: np.array([[1.0]]),
            f_low=0.0,
            lipschitz=LipschitzEstimate((1.0, 0.0)),
        )

    def kappa_f(self, radius: float, box: float) -> float:
        """radius * max_i |f_i'(y)| over |y| <= box."""
        # |y (1 +- alpha e^{-y^2})| <= box + alpha / sqrt(2e)
        return radius * (box + self.alpha / math.sqrt(2.0 * math.e))


def example_components(problem: ExampleProblem, i: int, x: float):
    """(f_i(x), f_i'(x)) for a single index."""
    if i == 0 or abs(i) > problem.m:
        raise ValueError(f"index {i} is not in the signed index set")
    sg = 1.0 if i > 0 else -1.0
    e = math.exp(-x * x)
    return 0.5 * x * x + 0.5 * problem.alpha * sg * e, x * (1.0 - problem.alpha * sg * e)


def local_noise(alpha: float, x: float) -> float:
    return alpha * math.exp(-x * x)


def acceptance_region_m1(psi: float, alpha: float, x: float, nu: float) -> bool:
    return abs(1.0 - psi * local_noise(alpha, x)) >= 1.0 / (1.0 + nu)


def acceptance_region_m2(psi: float, alpha: float, x: float, nu: float) -> bool:
    c = 1.0 - psi * local_noise(alpha, x)
    return 1.0 / (1.0 + nu) <= c <= 1.0 / (1.0 - nu)


def acceptance_region_f(psi0, psi1, alpha, x, s, r, nu) -> bool:
    e = math.exp(-x * x)
    lhs = 0.5 * alpha * abs(psi0) * e * abs(1.0 - math.exp(-(2.0 * x * s + s * s)))
    rhs = 2.0 * nu * abs(x) * r * abs(1.0 - alpha * psi1 * e)
    return lhs <= rhs


def m1_thresholds(noise_level: float, nu: float):
    """Accept iff psi <= lower or psi >= upper (noise_level = alpha e^{-x^2})."""
    return (1.0 - 1.0 / (1.0 + nu)) / noise_level, (1.0 + 1.0 / (1.0 + nu)) / noise_level


def m2_interval(noise_level: float, nu: float):
    return (1.0 - 1.0 / (1.0 - nu)) / noise_level, (1.0 - 1.0 / (1.0 + nu)) / noise_level


def region_sweep(noise_levels, nu: float, psi_grid):
    """Rows (noise_level, psi, m1, m2) with alpha = noise_level at x = 0."""
    rows = []
    for level in noise_levels:
        for psi in psi_grid:
            rows.append((level, float(psi), acceptance_region_m1(psi, level, 0.0, nu), acceptance_region_m2(psi, level, 0.0, nu)))
    return rows


def write_region_sweep(path, noise_levels, nu: float, psi_grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise_level", "psi", "m1", "m2"])
        for level, psi, m1, m2 in region_sweep(noise_levels, nu, psi_grid):
            w.writerow([repr(float(level)), repr(psi), int(m1), int(m2)])
