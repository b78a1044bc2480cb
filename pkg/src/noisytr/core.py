"""Derivative bundles, Taylor models and the Taylor remainder bound.

Only orders 1 and 2 are supported: a bundle carries a value, a gradient and
(for order 2) a symmetric Hessian. Everything here is dense numpy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SYMMETRY_RTOL = 1e-12
REMAINDER_SLACK = 1e-10


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


@dataclass(frozen=True)
class DerivativeBundle:
    """Value and derivatives of ``f`` (exact or noisy) at one point.

    ``order`` is the highest derivative present: 0 (value only), 1 (gradient)
    or 2 (gradient and Hessian).
    """

    value: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None
    order: int = field(default=-1)

    def __post_init__(self):
        order = self.order
        if order < 0:
            order = 0 if self.gradient is None else (1 if self.hessian is None else 2)
            object.__setattr__(self, "order", order)
        if order not in (0, 1, 2):
            raise ValueError(f"order must be 0, 1 or 2, got {order}")
        if order >= 1:
            if self.gradient is None:
                raise ValueError("order >= 1 requires a gradient")
            object.__setattr__(self, "gradient", as_vector(self.gradient))
        if order == 2:
            if self.hessian is None:
                raise ValueError("order 2 requires a Hessian")
            h = np.asarray(self.hessian, dtype=float)
            n = self.gradient.shape[0]
            if h.shape != (n, n):
                raise ValueError(f"Hessian shape {h.shape} does not match dimension {n}")
            scale = max(1.0, float(np.max(np.abs(h))))
            if np.max(np.abs(h - h.T)) > SYMMETRY_RTOL * scale:
                raise ValueError("Hessian is not symmetric")
            object.__setattr__(self, "hessian", h)
        elif self.hessian is not None and order < 2:
            object.__setattr__(self, "hessian", None)

    @property
    def dimension(self) -> int:
        if self.gradient is None:
            raise ValueError("value-only bundle has no dimension")
        return self.gradient.shape[0]

    def truncated(self, order: int) -> "DerivativeBundle":
        if order > self.order:
            raise ValueError(f"cannot truncate an order-{self.order} bundle to order {order}")
        if order == self.order:
            return self
        return DerivativeBundle(
            self.value,
            self.gradient if order >= 1 else None,
            self.hessian if order >= 2 else None,
            order,
        )


@dataclass(frozen=True)
class TaylorModel:
    """Degree-``degree`` Taylor expansion of a bundle around ``center``."""

    center: np.ndarray
    bundle: DerivativeBundle
    degree: int

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {self.degree}")
        if self.degree > self.bundle.order:
            raise ValueError(
                f"degree {self.degree} exceeds bundle order {self.bundle.order}"
            )
        c = as_vector(self.center)
        if c.shape[0] != self.bundle.dimension:
            raise ValueError("center and bundle dimensions differ")
        object.__setattr__(self, "center", c)


@dataclass(frozen=True)
class LipschitzEstimate:
    """Lipschitz constants of the j-th derivatives, j = 1..q."""

    per_order: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.per_order)
        if any(v < 0 for v in vals):
            raise ValueError("Lipschitz constants must be non-negative")
        object.__setattr__(self, "per_order", vals)

    @property
    def aggregate(self) -> float:
        return max(1.0, max(self.per_order, default=0.0))

    def restricted(self, q: int) -> "LipschitzEstimate":
        return LipschitzEstimate(self.per_order[:q])


def _check_step(model: TaylorModel, s) -> np.ndarray:
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape[0] != model.center.shape[0]:
        raise ValueError(
            f"step dimension {s.shape[0]} does not match model dimension {model.center.shape[0]}"
        )
    return s


def model_decrement(gradient, hessian, s) -> float:
    """-(g.s + s'Hs/2), with the quadratic term dropped when ``hessian`` is None."""
    dec = -float(np.dot(gradient, s))
    if hessian is not None:
        dec -= 0.5 * float(s @ hessian @ s)
    return dec


def taylor_value(model: TaylorModel, s) -> float:
    s = _check_step(model, s)
    b = model.bundle
    return b.value - model_decrement(b.gradient, b.hessian if model.degree == 2 else None, s)


def taylor_decrement(model: TaylorModel, s) -> float:
    """Model decrease f(x) - t(x, s); does not depend on ``bundle.value``."""
    s = _check_step(model, s)
    b = model.bundle
    return model_decrement(b.gradient, b.hessian if model.degree == 2 else None, s)


def remainder_bound_check(f, x, s, j: int, lip: LipschitzEstimate) -> bool:
    """Check |f(x+s) - t_j(x,s)| <= L_j/(j+1)! ||s||^(j+1) for the exact oracle ``f``."""
    x = as_vector(x)
    s = as_vector(s)
    model = TaylorModel(x, f.bundle(x, j), j)
    residual = abs(f.value(x + s) - taylor_value(model, s))
    bound = lip.per_order[j - 1] / math.factorial(j + 1) * float(np.linalg.norm(s)) ** (j + 1)
    return residual <= bound + REMAINDER_SLACK
