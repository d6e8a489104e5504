"""Working correlation structures and moment estimation of their parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("independence", "exchangeable", "ar1")
ALPHA_CLAMP = 0.99


@dataclass(frozen=True)
class CorrelationSpec:
    """Working correlation choice. ``alpha`` is ignored for independence.

    ``alpha=None`` for exchangeable/ar1 means: moment-estimate it from
    Pearson residuals during fitting.
    """
    kind: str = "independence"
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown working correlation {self.kind!r}")
        if self.kind != "independence" and self.alpha is not None:
            if not -1.0 < self.alpha < 1.0:
                raise ValueError("correlation parameter must lie in (-1, 1)")


@dataclass(frozen=True)
class VarianceModel:
    """Variance function family plus dispersion.

    gaussian: Var(Y|X) = dispersion; binomial: Var(Y|X) = mu(1-mu).
    """
    family: str = "gaussian"
    dispersion: float = 1.0

    def __post_init__(self):
        if self.family not in ("gaussian", "binomial"):
            raise ValueError(f"unknown variance family {self.family!r}")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be positive")

    def variance(self, mu: np.ndarray) -> np.ndarray:
        if self.family == "gaussian":
            return np.full_like(np.asarray(mu, dtype=float), self.dispersion)
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0) or np.any(mu >= 1):
            raise ValueError("binomial variance requires 0 < mu < 1")
        return self.dispersion * mu * (1.0 - mu)


def build_correlation(spec: CorrelationSpec, T: int) -> np.ndarray:
    """T x T working correlation matrix W(alpha)."""
    if T < 1:
        raise ValueError("cluster size must be >= 1")
    if spec.kind == "independence" or T == 1:
        return np.eye(T)
    a = spec.alpha
    if a is None:
        raise ValueError("correlation parameter not set (estimate it first)")
    if not -1.0 < a < 1.0:
        raise ValueError("correlation parameter must lie in (-1, 1)")
    idx = np.arange(T)
    if spec.kind == "ar1":
        return a ** np.abs(idx[:, None] - idx[None, :])
    # exchangeable; PD additionally needs alpha > -1/(T-1)
    if a <= -1.0 / (T - 1):
        raise ValueError(
            f"exchangeable alpha={a} not positive definite for T={T}")
    W = np.full((T, T), a)
    np.fill_diagonal(W, 1.0)
    return W


def working_covariance(u: np.ndarray, W: np.ndarray) -> np.ndarray:
    """V = U^{1/2} W U^{1/2} with U = diag(u)."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("variance entries must be strictly positive")
    if W.shape != (len(u), len(u)):
        raise ValueError("dimension mismatch between u and W")
    s = np.sqrt(u)
    V = W * np.outer(s, s)
    # exact diagonal (sqrt-and-square loses an ulp otherwise)
    np.fill_diagonal(V, u * np.diag(W))
    return V


def estimate_alpha(residual_blocks, kind: str, dispersion: float = 1.0) -> float:
    """Moment estimator of the working correlation parameter.

    ``residual_blocks`` are per-subject Pearson residual vectors.
    exchangeable: average of all distinct within-subject cross-products;
    ar1: average of lag-1 products. Both divided by the dispersion and
    clamped to (-0.99, 0.99).
    """
    if kind not in ("exchangeable", "ar1"):
        raise ValueError("alpha is only estimated for exchangeable or ar1")
    num = 0.0
    count = 0
    for r in residual_blocks:
        r = np.asarray(r, dtype=float)
        Ti = len(r)
        if Ti < 2:
            continue
        if kind == "exchangeable":
            num += (r.sum() ** 2 - (r ** 2).sum()) / 2.0
            count += Ti * (Ti - 1) // 2
        else:
            num += float(r[:-1] @ r[1:])
            count += Ti - 1
    if count == 0:
        raise ValueError("correlation not estimable: all subjects have T_i = 1")
    alpha = num / (count * dispersion)
    return float(np.clip(alpha, -ALPHA_CLAMP, ALPHA_CLAMP))


def estimate_dispersion(residual_blocks, p: int) -> float:
    """Mean squared Pearson residual over N - p degrees of freedom."""
    ss = 0.0
    N = 0
    for r in residual_blocks:
        r = np.asarray(r, dtype=float)
        ss += float(r @ r)
        N += len(r)
    if N <= p:
        raise ValueError("not enough observations to estimate dispersion")
    return ss / (N - p)
