"""Evaluation oracles and the concentration bounds used to reason about them.

A :class:`NoisyOracle` wraps an :class:`ExactOracle` with one of four noise
models. All randomness is drawn from generators keyed by
``(seed, iteration, role)``, so a given iteration always sees the same batches
and perturbations no matter how often it is queried.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .core import DerivativeBundle, LipschitzEstimate, as_vector

# stream identifiers for the per-iteration generators
ROLE_F0 = 0  # function value at x_k
ROLE_FS = 1  # function value at the trial point
ROLE_G = 2  # gradient
ROLE_H = 3  # Hessian
ROLE_B0 = 4  # function-value batch
ROLE_B1 = 5  # derivative batch


@dataclass(frozen=True)
class ExactOracle:
    name: str
    dimension: int
    value_fn: Callable
    gradient_fn: Callable
    hessian_fn: Callable
    f_low: float
    lipschitz: Optional[LipschitzEstimate] = None

    def value(self, x) -> float:
        return float(self.value_fn(as_vector(x)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.gradient_fn(as_vector(x)), dtype=float)

    def hessian(self, x) -> np.ndarray:
        return np.asarray(self.hessian_fn(as_vector(x)), dtype=float)

    def bundle(self, x, order: int) -> DerivativeBundle:
        x = as_vector(x)
        if x.shape[0] != self.dimension:
            raise ValueError(f"point has dimension {x.shape[0]}, oracle expects {self.dimension}")
        if order not in (0, 1, 2):
            raise ValueError(f"order must be 0, 1 or 2, got {order}")
        g = self.gradient(x) if order >= 1 else None
        h = self.hessian(x) if order >= 2 else None
        return DerivativeBundle(self.value(x), g, h, order)


@dataclass(frozen=True)
class BatchDraw:
    indices: np.ndarray
    size: int
    drawn_at: Optional[np.ndarray] = None
    signed: bool = False


class FiniteSumProblem:
    """f(x) = mean_i f_i(x) over an index set, with vectorized component access.

    ``values(indices, x)`` returns an array of f_i(x); ``gradients`` an array of
    shape (len(indices), n); ``hessians`` (optional) shape (len(indices), n, n).
    """

    def __init__(self, index_set, values, gradients, hessians=None, signed=False, name="finite_sum"):
        self.index_set = np.asarray(index_set)
        if self.index_set.ndim != 1 or len(np.unique(self.index_set)) != len(self.index_set):
            raise ValueError("index set must be a 1-d array of distinct indices")
        if signed and np.any(self.index_set == 0):
            raise ValueError("a signed index set cannot contain 0")
        self.values = values
        self.gradients = gradients
        self.hessians = hessians
        self.signed = signed
        self.name = name

    @property
    def size(self) -> int:
        return len(self.index_set)

    def sample_batch(self, rng: np.random.Generator, size: int, x=None) -> BatchDraw:
        if size > self.size:
            raise ValueError(f"batch size {size} exceeds the {self.size} available components")
        if size < 1:
            raise ValueError("batch size must be >= 1")
        if size == self.size:
            idx = self.index_set.copy()
        else:
            idx = self.index_set[rng.choice(self.size, size, replace=False)]
        at = None if x is None else as_vector(x).copy()
        return BatchDraw(idx, size, at, self.signed)

    def full_batch(self) -> BatchDraw:
        return BatchDraw(self.index_set.copy(), self.size, None, self.signed)

    def batch_value(self, batch: BatchDraw, x) -> float:
        return float(np.mean(self.values(batch.indices, as_vector(x))))

    def batch_gradient(self, batch: BatchDraw, x) -> np.ndarray:
        return np.mean(self.gradients(batch.indices, as_vector(x)), axis=0)

    def batch_hessian(self, batch: BatchDraw, x) -> np.ndarray:
        if self.hessians is None:
            raise ValueError(f"{self.name} provides no component Hessians")
        h = np.mean(self.hessians(batch.indices, as_vector(x)), axis=0)
        return 0.5 * (h + h.T)

    def batch_decrease(self, batch: BatchDraw, x, s):
        """Return (f_b(x), f_b(x+s), mean_b[f_i(x) - f_i(x+s)]) on a single batch."""
        x = as_vector(x)
        v0 = self.values(batch.indices, x)
        vs = self.values(batch.indices, x + as_vector(s))
        return float(np.mean(v0)), float(np.mean(vs)), float(np.mean(v0 - vs))


# --- noise models -----------------------------------------------------------


@dataclass(frozen=True)
class NoNoise:
    kind: str = field(default="none", init=False)


@dataclass(frozen=True)
class AdditiveBounded:
    """Perturbations of norm at most b0, b1, b2 (value, gradient, Hessian)."""

    b0: float
    b1: float
    b2: float = 0.0
    kind: str = field(default="additive_bounded", init=False)


@dataclass(frozen=True)
class AdditiveGaussian:
    """Independent N(0, sigma_j^2) entries on the value, gradient and Hessian."""

    sigma0: float
    sigma1: float
    sigma2: float = 0.0
    kind: str = field(default="additive_gaussian", init=False)


@dataclass(frozen=True)
class Subsampled:
    problem: FiniteSumProblem
    n0: int
    n1: int
    kind: str = field(default="subsampled", init=False)

    def __post_init__(self):
        for name in ("n0", "n1"):
            size = getattr(self, name)
            if not 1 <= size <= self.problem.size:
                raise ValueError(f"{name}={size} must lie in [1, {self.problem.size}]")


def _sym_perturbation(rng, n, radius):
    w = rng.standard_normal((n, n))
    w = 0.5 * (w + w.T)
    nrm = float(np.linalg.norm(w, 2))
    if nrm == 0.0:
        return np.zeros((n, n))
    return w * (radius * rng.random() / nrm)


def _ball_perturbation(rng, n, radius):
    v = rng.standard_normal(n)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        return np.zeros(n)
    return v * (radius * rng.random() ** (1.0 / n) / nrm)


class NoisyOracle:
    """Serves noisy bundles and noisy decreases; ``base`` stays exact."""

    def __init__(self, base: ExactOracle, noise=None, seed: int = 0):
        self.base = base
        self.noise = NoNoise() if noise is None else noise
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self._batches: dict = {}

    def _rng(self, iteration: int, role: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, int(iteration), role])

    def batch(self, iteration: int, role: int, x=None) -> BatchDraw:
        key = (iteration, role)
        if key not in self._batches:
            if len(self._batches) > 64:
                self._batches.clear()
            size = self.noise.n0 if role == ROLE_B0 else self.noise.n1
            self._batches[key] = self.noise.problem.sample_batch(self._rng(iteration, role), size, x)
        return self._batches[key]

    def _value_noise(self, iteration, role):
        nz = self.noise
        if nz.kind == "additive_bounded":
            return nz.b0 * (2.0 * self._rng(iteration, role).random() - 1.0)
        if nz.kind == "additive_gaussian":
            return nz.sigma0 * self._rng(iteration, role).standard_normal()
        return 0.0

    def bundle(self, x, order: int, iteration: int) -> DerivativeBundle:
        x = as_vector(x)
        nz = self.noise
        if order not in (0, 1, 2):
            raise ValueError(f"order must be 0, 1 or 2, got {order}")
        if nz.kind == "subsampled":
            prob = nz.problem
            b0 = self.batch(iteration, ROLE_B0, x)
            value = prob.batch_value(b0, x)
            g = h = None
            if order >= 1:
                b1 = self.batch(iteration, ROLE_B1, x)
                g = prob.batch_gradient(b1, x)
                if order == 2:
                    h = prob.batch_hessian(b1, x)
            return DerivativeBundle(value, g, h, order)

        exact = self.base.bundle(x, order)
        if nz.kind == "none":
            return exact
        n = self.base.dimension
        value = exact.value + self._value_noise(iteration, ROLE_F0)
        g = h = None
        if order >= 1:
            rg = self._rng(iteration, ROLE_G)
            if nz.kind == "additive_bounded":
                g = exact.gradient + _ball_perturbation(rg, n, nz.b1)
            else:
                g = exact.gradient + nz.sigma1 * rg.standard_normal(n)
        if order == 2:
            rh = self._rng(iteration, ROLE_H)
            if nz.kind == "additive_bounded":
                h = exact.hessian + _sym_perturbation(rh, n, nz.b2)
            else:
                e = nz.sigma2 * rh.standard_normal((n, n))
                h = exact.hessian + np.triu(e) + np.triu(e, 1).T
        return DerivativeBundle(value, g, h, order)

    def value_pair(self, x, s, iteration: int):
        """Return (fbar(x), fbar(x+s), estimated decrease)."""
        x = as_vector(x)
        s = as_vector(s)
        nz = self.noise
        if nz.kind == "subsampled":
            # f0 - fs rather than the mean of differences, so that an accepted
            # step always has fbar(x) >= fbar(x + s) in floating point
            f0, fs, _ = nz.problem.batch_decrease(self.batch(iteration, ROLE_B0, x), x, s)
            return f0, fs, f0 - fs
        f0 = self.base.value(x) + self._value_noise(iteration, ROLE_F0)
        fs = self.base.value(x + s) + self._value_noise(iteration, ROLE_FS)
        return f0, fs, f0 - fs


def eval_noisy(oracle: NoisyOracle, x, order: int, iteration: int) -> DerivativeBundle:
    return oracle.bundle(x, order, iteration)


def eval_decrease_noisy(oracle: NoisyOracle, x, s, iteration: int) -> float:
    return oracle.value_pair(x, s, iteration)[2]


# --- batch statistics and tail bounds ----------------------------------------


def psi_statistic(batch: BatchDraw) -> float:
    """Mean sign of the batch indices."""
    if not batch.signed:
        raise ValueError("psi is only defined for signed index sets")
    return float(np.mean(np.sign(batch.indices)))


def psi_tail_bound(t: float, n_batch: int) -> float:
    """Lower bound (1 - exp(-t^2 n / 2))^2 on Pr[|psi| <= t]."""
    if not 0 < t < 1:
        raise ValueError("t must be in (0, 1)")
    if n_batch < 1:
        raise ValueError("n_batch must be >= 1")
    return (1.0 - math.exp(-0.5 * t * t * n_batch)) ** 2


def min_batch_for_tail(t: float) -> int:
    """Smallest n with psi_tail_bound(t, n) > 1/2, i.e. ceil(2|log(1 - 1/sqrt 2)| / t^2)."""
    if not 0 < t < 1:
        raise ValueError("t must be in (0, 1)")
    n = math.ceil(2.0 * abs(math.log(1.0 - 1.0 / math.sqrt(2.0))) / (t * t))
    while psi_tail_bound(t, n) <= 0.5:
        n += 1
    return n


def one_sided_psi_tail(t: float, n_batch: int) -> float:
    """Hoeffding/Chvatal bound exp(-t^2 n / 2) on Pr[psi > t] for without-replacement draws."""
    return math.exp(-0.5 * t * t * n_batch)


def bernstein_w(tau: float, batch_size: int, kappa: float, which: str = "W0") -> float:
    """Exponent tau^2 |b| / (4 kappa (2 kappa + tau/3)); W0 for values, W1 for gradients."""
    if which not in ("W0", "W1"):
        raise ValueError("which must be 'W0' or 'W1'")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return tau * tau * batch_size / (4.0 * kappa * (2.0 * kappa + tau / 3.0))


def concentration_bound(tau: float, batch_size: int, kappa: float, which: str = "W0", dim: int = 1) -> float:
    w = bernstein_w(tau, batch_size, kappa, which)
    if which == "W0":
        return math.exp(-w)
    return min(1.0, (dim + 1) * math.exp(-w))


def tau_star(batch_size: int, kappa: float) -> float:
    root = math.sqrt(batch_size)
    if root / kappa <= 4.0 / 3.0:
        raise ValueError("batch too small: need sqrt(|b|)/kappa > 4/3")
    return 8.0 * kappa**2 / (root - 4.0 * kappa / 3.0)


def bernstein_integral(batch_size: int, kappa: float) -> float:
    """Numerical value of int_0^inf exp(-W0(tau)) dtau."""
    val, _ = integrate.quad(lambda t: math.exp(-bernstein_w(t, batch_size, kappa)), 0.0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=200)
    return val


def bernstein_integral_bound(batch_size: int, kappa: float) -> float:
    """Closed-form upper bound tau* + exp(-sqrt|b| tau*) / sqrt|b| on the integral."""
    ts = tau_star(batch_size, kappa)
    root = math.sqrt(batch_size)
    return ts + math.exp(-root * ts) / root


def expectation_threshold(eta: float, n_batch: int) -> float:
    """(1/eta) sqrt(pi / (2 n)): decrement above which inaccurate successes do no harm on average."""
    if not 0 < eta <= 1:
        raise ValueError("eta must be in (0, 1]")
    if n_batch < 1:
        raise ValueError("n_batch must be >= 1")
    return math.sqrt(math.pi / (2.0 * n_batch)) / eta
