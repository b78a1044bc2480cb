"""Optimality measure: maximal model decrement over a ball of radius delta.

Order 1 is analytic. Order 2 solves the trust-region subproblem exactly with an
eigendecomposition and a scalar root find on the secular equation, handling the
hard case by moving along a minimal-curvature eigenvector. ``phi_bruteforce`` is
an independent sampling-plus-ascent oracle used only for validation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .core import TaylorModel, model_decrement

DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class DisplacementResult:
    displacement: np.ndarray
    decrement: float
    # certified fraction of the global maximum; None for lower-bound-only results
    quality: Optional[float]
    radius: float
    order: int


def unit_descent_step(gradient, radius: float) -> np.ndarray:
    """-radius * g / ||g||; shared by both algorithms so their arithmetic agrees."""
    g = np.asarray(gradient, dtype=float)
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return np.zeros_like(g)
    return -(g / gnorm) * radius


def phi_order1(gradient, delta: float) -> DisplacementResult:
    if delta <= 0:
        raise ValueError("delta must be positive")
    g = np.asarray(gradient, dtype=float).reshape(-1)
    gnorm = float(np.linalg.norm(g))
    d = unit_descent_step(g, delta)
    return DisplacementResult(d, gnorm * delta, 1.0, delta, 1)


def _lexmin(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    for ai, bi in zip(a, b):
        if ai < bi:
            return a
        if bi < ai:
            return b
    return a


def _dual_bound(gh, lam, lam_shift, delta, active):
    # max_d of the Lagrangian: an upper bound on the subproblem maximum
    denom = lam[active] + lam_shift
    return 0.5 * float(np.sum(gh[active] ** 2 / denom)) + 0.5 * lam_shift * delta**2


def phi_order2(gradient, hessian, delta: float, tol: float = DEFAULT_TOL) -> DisplacementResult:
    """Globally maximize -(g.d + d'Hd/2) over ||d|| <= delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not 0 < tol < 1:
        raise ValueError("tol must be in (0, 1)")
    g = np.asarray(gradient, dtype=float).reshape(-1)
    H = np.asarray(hessian, dtype=float)
    H = 0.5 * (H + H.T)
    try:
        lam, Q = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("eigendecomposition failed") from exc
    if not np.all(np.isfinite(lam)):
        raise ArithmeticError("eigendecomposition produced non-finite eigenvalues")
    gh = Q.T @ g

    scale = max(1.0, float(np.max(np.abs(lam))), float(np.linalg.norm(g)) / delta)
    eig_tol = 1e-12 * scale
    gnorm = float(np.linalg.norm(g))
    g_tol = 1e-13 * max(1.0, gnorm)

    lam_lo = max(0.0, -float(lam[0]))
    singular = lam + lam_lo <= eig_tol
    hard_candidate = not np.any(np.abs(gh[singular]) > g_tol)

    def step(shift, active):
        coef = np.zeros_like(gh)
        coef[active] = -gh[active] / (lam[active] + shift)
        return coef

    if hard_candidate:
        active = ~singular
        coef0 = step(lam_lo, active)
        norm0 = float(np.linalg.norm(coef0))
    else:
        active = np.ones_like(singular)
        norm0 = np.inf

    if norm0 <= delta:
        if lam_lo == 0.0:
            # interior (or boundary-touching) Newton point of a convex model
            coef = coef0
            shift = 0.0
            on_boundary = False
        else:
            # hard case: fill up to the boundary along the lowest eigenvector
            tau = np.sqrt(max(delta**2 - norm0**2, 0.0))
            v = Q[:, 0]
            base = Q @ coef0
            # g may have a sub-tolerance component along v, so take the better sign
            plus, minus = base + tau * v, base - tau * v
            dp, dm = model_decrement(g, H, plus), model_decrement(g, H, minus)
            d, dec = (plus, dp) if dp > dm else (minus, dm) if dm > dp else (_lexmin(plus, minus), dp)
            ub = _dual_bound(gh, lam, lam_lo, delta, active)
            quality = 1.0 if ub <= 0 else min(1.0, dec / ub)
            return _certify(d, dec, quality, delta, tol)
    else:
        gh_act = gh[active]
        lam_act = lam[active]

        def secular(shift):
            denom = lam_act + shift
            if np.any(denom <= 0):
                return -1.0 / delta
            with np.errstate(over="ignore", divide="ignore"):
                # overflow means the norm is effectively infinite, which is the right sign
                nrm = float(np.sqrt(np.sum((gh_act / denom) ** 2)))
            if nrm == 0.0:
                return np.inf
            return 1.0 / nrm - 1.0 / delta

        lo = lam_lo
        hi = max(lam_lo, gnorm / delta - float(lam[0])) + 1.0
        while secular(hi) < 0:
            hi *= 2.0
        on_boundary = secular(lo) < 0
        if not on_boundary:
            shift = lo
        else:
            shift = brentq(secular, lo, hi, xtol=1e-15 * max(1.0, hi), rtol=4 * np.finfo(float).eps, maxiter=500)
        coef = step(shift, active)

    d = Q @ coef
    nrm = float(np.linalg.norm(d))
    if nrm > delta or (on_boundary and nrm > 0):
        # a secular-equation solution lies on the sphere; with negative curvature a
        # root that falls slightly short of it loses a measurable amount of decrement
        d = d * (delta / nrm)
    dec = model_decrement(g, H, d)
    if shift == 0.0 and lam_lo == 0.0 and norm0 <= delta:
        # convex interior solution: the Newton point is the exact maximizer
        quality = 1.0
    else:
        ub = _dual_bound(gh, lam, shift, delta, active)
        quality = 1.0 if ub <= 0 else min(1.0, dec / ub)
    return _certify(d, dec, quality, delta, tol)


def _certify(d, dec, quality, delta, tol):
    if dec < 0:
        # only rounding can make the maximizer worse than d = 0
        d = np.zeros_like(d)
        dec = 0.0
        quality = 1.0
    if quality < 1.0 - tol:
        raise ArithmeticError(f"subproblem solve certified only {quality:.3g} of the maximum")
    return DisplacementResult(d, float(dec), float(quality), delta, 2)


def phi(model_gradient, model_hessian, delta: float, order: int) -> DisplacementResult:
    if order == 1:
        return phi_order1(model_gradient, delta)
    if order == 2:
        return phi_order2(model_gradient, model_hessian, delta)
    raise ValueError(f"unsupported order {order}")


def phi_bruteforce(
    model: TaylorModel,
    delta: float,
    samples: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    refine: int = 16,
    ascent_steps: int = 2000,
) -> DisplacementResult:
    """Sample the ball, then refine the best points by projected gradient ascent."""
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    rng = np.random.default_rng(0) if rng is None else rng
    b = model.bundle
    g = b.gradient
    H = b.hessian if model.degree == 2 else np.zeros((g.shape[0], g.shape[0]))
    n = g.shape[0]

    dirs = rng.standard_normal((samples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.ones(samples)
    half = samples // 2
    radii[half:] = rng.random(samples - half) ** (1.0 / n)
    pts = dirs * (delta * radii)[:, None]
    pts = np.vstack([pts, np.zeros((1, n))])

    def decrements(P):
        return -(P @ g) - 0.5 * np.einsum("ij,jk,ik->i", P, H, P)

    vals = decrements(pts)
    top = np.argsort(vals)[-refine:]
    P = pts[top].copy()
    lip = max(float(np.linalg.norm(H, 2)), 1e-12)
    step = 1.0 / lip
    for _ in range(ascent_steps):
        grad = -(g[None, :] + P @ H)
        P = P + step * grad
        nrm = np.linalg.norm(P, axis=1)
        over = nrm > delta
        P[over] *= (delta / nrm[over])[:, None]
    vals_ref = decrements(P)
    best = int(np.argmax(vals_ref))
    d = P[best]
    dec = float(vals_ref[best])
    if vals[top].max() > dec:
        i = top[int(np.argmax(vals[top]))]
        d, dec = pts[i], float(vals[i])
    return DisplacementResult(d, max(dec, 0.0), None, delta, model.degree)
