"""Penalty families: values, derivatives, LQA weights, reparametrization.

Five families are supported: none, lasso, ridge, en (lasso + ridge), scad,
and scad_l2 (scad + ridge). The sparse part is weighted by lambda1, the
ridge part by lambda2. The SCAD shape parameter ``a`` defaults to 3.7.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("none", "lasso", "ridge", "en", "scad", "scad_l2")
_SPARSE = {"lasso": "l1", "en": "l1", "scad": "scad", "scad_l2": "scad"}
_HAS_RIDGE = {"ridge", "en", "scad_l2"}

DEFAULT_A = 3.7


@dataclass(frozen=True)
class PenaltySpec:
    family: str = "none"
    lambda1: float = 0.0
    lambda2: float = 0.0
    a: float = DEFAULT_A

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("tuning parameters must be nonnegative")
        if self.family == "none" and (self.lambda1 > 0 or self.lambda2 > 0):
            raise ValueError("family 'none' takes no tuning parameters")
        if self.family in ("lasso", "scad") and self.lambda2 != 0:
            raise ValueError(f"{self.family} does not use lambda2")
        if self.family == "ridge" and self.lambda1 != 0:
            raise ValueError("ridge does not use lambda1")
        if self.family in ("scad", "scad_l2") and not self.a > 2:
            raise ValueError("SCAD shape parameter must satisfy a > 2")

    @classmethod
    def from_reparam(cls, family: str, lam: float, alpha: float,
                     a: float = DEFAULT_A) -> "PenaltySpec":
        l1, l2 = reparametrize(lam, alpha)
        if family in ("lasso", "scad") and l2 > 0:
            raise ValueError(f"{family} requires alpha = 1")
        if family == "ridge" and l1 > 0:
            raise ValueError("ridge requires alpha = 0")
        if family == "none":
            if lam != 0:
                raise ValueError("family 'none' requires lambda = 0")
            return cls("none")
        return cls(family, lambda1=l1, lambda2=l2, a=a)


def reparametrize(lam: float, alpha: float):
    """(lambda, alpha) -> (lambda1, lambda2) = (lambda*alpha, lambda*(1-alpha))."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return lam * alpha, lam * (1.0 - alpha)


def _scad_value(theta: np.ndarray, lam1: float, a: float) -> np.ndarray:
    """Closed-form SCAD penalty (lambda1 factor included); slope lam1 near 0."""
    theta = np.abs(theta)
    if lam1 == 0:
        return np.zeros_like(theta)
    small = theta <= lam1
    large = theta > a * lam1
    mid = ~small & ~large
    out = np.empty_like(theta)
    out[small] = lam1 * theta[small]
    out[mid] = (2 * a * lam1 * theta[mid] - theta[mid] ** 2 - lam1 ** 2) / (2 * (a - 1))
    out[large] = lam1 ** 2 * (a + 1) / 2.0
    return out


def _scad_derivative(theta: np.ndarray, lam1: float, a: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if lam1 == 0:
        return np.zeros_like(theta)
    return np.where(theta <= lam1, lam1,
                    np.maximum(a * lam1 - theta, 0.0) / (a - 1))


def penalty_value(spec: PenaltySpec, beta) -> float:
    """Total penalty P(beta) = lambda1 * P_L1(beta) + lambda2 * sum beta_j^2."""
    beta = np.asarray(beta, dtype=float)
    theta = np.abs(beta)
    kind = _SPARSE.get(spec.family)
    if kind == "l1":
        sparse = spec.lambda1 * theta.sum()
    elif kind == "scad":
        sparse = float(_scad_value(theta, spec.lambda1, spec.a).sum())
    else:
        sparse = 0.0
    ridge = spec.lambda2 * float(beta @ beta) if spec.family in _HAS_RIDGE else 0.0
    return sparse + ridge


def penalty_derivative(spec: PenaltySpec, theta) -> np.ndarray | float:
    """dP/d(theta) at nonnegative magnitude theta (elementwise)."""
    arr = np.asarray(theta, dtype=float)
    if np.any(arr < 0):
        raise ValueError("theta must be nonnegative")
    kind = _SPARSE.get(spec.family)
    if kind == "l1":
        d = np.full_like(arr, spec.lambda1)
    elif kind == "scad":
        d = _scad_derivative(arr, spec.lambda1, spec.a)
    else:
        d = np.zeros_like(arr)
    if spec.family in _HAS_RIDGE:
        d = d + 2.0 * spec.lambda2 * arr
    return d if np.ndim(theta) else float(d)


def lqa_weights(spec: PenaltySpec, beta_t: np.ndarray):
    """Local quadratic approximation weights at the current iterate.

    Returns (sigma, U) with sigma_j = P'(|beta_j|)/|beta_j| and U = sigma*beta.
    All coordinates must be nonzero; zeroed coordinates are to be masked out
    by the caller before requesting weights.
    """
    beta_t = np.asarray(beta_t, dtype=float)
    theta = np.abs(beta_t)
    if spec.family == "none":
        z = np.zeros_like(beta_t)
        return z, z.copy()
    if np.any(theta == 0):
        raise ValueError("lqa_weights requires nonzero coordinates; mask zeros first")
    sigma = penalty_derivative(spec, theta) / theta
    return sigma, sigma * beta_t


def convexity_check(spec: PenaltySpec) -> bool:
    """True iff the full penalty is strictly convex (grouping-effect condition)."""
    if spec.family in ("en", "ridge"):
        return spec.lambda2 > 0
    if spec.family == "scad_l2":
        return spec.lambda2 > 1.0 / (2.0 * (spec.a - 1.0))
    return False
