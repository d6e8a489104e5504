"""GEE and penalized-GEE solvers.

The penalized fit iterates a local quadratic approximation of the penalty
gradient: small coordinates are zeroed and masked out, the remaining ones
take a Newton-type step on the approximated estimating equation. The
estimating function is S(beta) = sum_i D_i' V_i^{-1} (y_i - mu_i) minus
N times the penalty gradient.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .correlation import (CorrelationSpec, VarianceModel, build_correlation,
                          estimate_alpha, estimate_dispersion)
from .penalties import PenaltySpec, penalty_value


class SolverError(RuntimeError):
    """Numerical failure during fitting (singular system, non-estimable)."""


class StandardizationWarning(UserWarning):
    """Penalized fit requested on data that is not pooled-standardized."""


@dataclass(frozen=True)
class ModelSpec:
    """Link + variance family + working correlation."""
    link: str = "identity"
    variance: VarianceModel = field(default_factory=VarianceModel)
    correlation: CorrelationSpec = field(default_factory=CorrelationSpec)

    def __post_init__(self):
        if self.link not in ("identity", "logit"):
            raise ValueError(f"unknown link {self.link!r}")
        want = "gaussian" if self.link == "identity" else "binomial"
        if self.variance.family != want:
            raise ValueError(f"link {self.link!r} requires the {want} family")


@dataclass(frozen=True)
class SolverControl:
    zero_threshold: float = 1e-4
    convergence_c: float = 1e-6
    max_iterations: int = 200
    init: object = "ridge"      # "ridge" | "zeros" | coefficient vector
    ridge_jitter: float = 1e-8
    track_objective: bool = False
    # internal refits (CV folds, bootstrap resamples) disable the
    # standardization warning instead of juggling global warning filters,
    # which would race under threads
    warn_nonstandard: bool = True

    def __post_init__(self):
        if self.zero_threshold <= 0 or self.convergence_c <= 0:
            raise ValueError("thresholds must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.ridge_jitter <= 0:
            raise ValueError("ridge_jitter must be positive")


@dataclass(frozen=True)
class PgeeFit:
    beta_naive: np.ndarray
    beta_nonnaive: np.ndarray
    active_set: tuple
    iterations: int
    converged: bool
    threshold_used: float
    penalty: PenaltySpec
    model: ModelSpec
    correlation_alpha: float | None = None
    objective_trace: tuple | None = None   # gaussian only


def mean_and_derivatives(beta, X_i, link: str):
    """Cluster mean mu_i and derivative matrix D_i = d mu_i / d beta."""
    X_i = np.asarray(X_i, dtype=float)
    eta = X_i @ beta
    if link == "identity":
        return eta, X_i
    if link == "logit":
        mu = 1.0 / (1.0 + np.exp(-eta))
        return mu, (mu * (1.0 - mu))[:, None] * X_i
    raise ValueError(f"unknown link {link!r}")


def _inverse_correlations(model: ModelSpec, cluster_sizes, alpha):
    """W(alpha)^{-1} per distinct cluster size."""
    spec = CorrelationSpec(model.correlation.kind, alpha)
    out = {}
    for T in set(cluster_sizes):
        W = build_correlation(spec, T)
        try:
            out[T] = np.linalg.inv(W)
        except np.linalg.LinAlgError as e:
            raise SolverError(f"singular working correlation for T={T}") from e
    return out


class _ScoreEngine:
    """Evaluates S(beta) and the expected information H = -dS/dbeta.

    Pooled fast paths cover working independence (both links) and the
    gaussian identity model with any fixed correlation, where D_i does not
    depend on beta; the general case loops over clusters.
    """

    def __init__(self, data, model: ModelSpec, alpha):
        self.data = data
        self.model = model
        self.alpha = alpha
        self.phi = model.variance.dispersion
        self.indep = model.correlation.kind == "independence"
        self.gaussian = model.link == "identity"
        if self.gaussian:
            X, y = data.stacked_X, data.stacked_y
            if self.indep:
                self.H = (X.T @ X) / self.phi
                self.A = (X.T @ y) / self.phi
            else:
                Winv = _inverse_correlations(model, data.cluster_sizes, alpha)
                p = data.p
                self.H = np.zeros((p, p))
                self.A = np.zeros(p)
                for yi, Xi in zip(data.y, data.X):
                    Vinv = Winv[len(yi)] / self.phi
                    XtVinv = Xi.T @ Vinv
                    self.H += XtVinv @ Xi
                    self.A += XtVinv @ yi
        elif not self.indep:
            self._Winv = _inverse_correlations(model, data.cluster_sizes, alpha)

    def score(self, beta):
        if self.gaussian:
            return self.A - self.H @ beta, self.H
        X, y = self.data.stacked_X, self.data.stacked_y
        mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
        mu = np.clip(mu, 1e-10, 1.0 - 1e-10)
        w = mu * (1.0 - mu)
        if self.indep:
            # D = diag(w) X, V = phi diag(w): S = X'(y-mu)/phi, H = X'diag(w)X/phi
            S = X.T @ (y - mu) / self.phi
            H = (X.T * w) @ X / self.phi
            return S, H
        p = self.data.p
        S = np.zeros(p)
        H = np.zeros((p, p))
        start = 0
        for yi, Xi in zip(self.data.y, self.data.X):
            Ti = len(yi)
            mui = mu[start:start + Ti]
            wi = w[start:start + Ti]
            start += Ti
            Di = wi[:, None] * Xi
            u = self.phi * wi
            s = np.sqrt(u)
            Vinv = self._Winv[Ti] / np.outer(s, s)
            DtVinv = Di.T @ Vinv
            S += DtVinv @ (yi - mui)
            H += DtVinv @ Di
        return S, H


def gee_score(beta, data, model: ModelSpec):
    """Unpenalized estimating function S and K = (1/n) sum D'V^{-1}D."""
    beta = np.asarray(beta, dtype=float)
    alpha = model.correlation.alpha
    if model.correlation.kind != "independence" and alpha is None:
        raise ValueError("correlation parameter not set (estimate it first)")
    S, H = _ScoreEngine(data, model, alpha).score(beta)
    return S, H / data.n


def pearson_residual_blocks(beta, data, model: ModelSpec):
    """Per-subject Pearson residuals (variance function without dispersion)."""
    unit = VarianceModel(model.variance.family, 1.0)
    blocks = []
    for yi, Xi in zip(data.y, data.X):
        mu, _ = mean_and_derivatives(beta, Xi, model.link)
        if model.link == "logit":
            mu = np.clip(mu, 1e-10, 1.0 - 1e-10)
        blocks.append((yi - mu) / np.sqrt(unit.variance(mu)))
    return blocks


def _solve_spd(M, rhs, jitter):
    """Solve a symmetric positive (semi)definite system, regularizing with
    jitter*I when the Cholesky pivot underflows."""
    _, x, info = _dposv(M, rhs, lower=1)
    if info == 0:
        return x
    _, x, info = _dposv(M + jitter * np.eye(M.shape[0]), rhs, lower=1)
    if info == 0:
        return x
    try:
        return np.linalg.solve(M + jitter * np.eye(M.shape[0]), rhs)
    except np.linalg.LinAlgError as e:
        raise SolverError("singular Newton system after regularization") from e


try:
    from scipy.linalg.lapack import dposv as _dposv
except ImportError:  # pragma: no cover
    def _dposv(M, rhs, lower=1):
        try:
            return M, np.linalg.solve(M, rhs), 0
        except np.linalg.LinAlgError:
            return M, rhs, 1


def _penalty_sigma(penalty: PenaltySpec, theta: np.ndarray) -> np.ndarray:
    """Diagonal LQA weights P'(theta)/theta without per-call validation."""
    fam = penalty.family
    if fam in ("lasso", "en"):
        s = penalty.lambda1 / theta
    elif fam in ("scad", "scad_l2"):
        lam1 = penalty.lambda1
        if lam1 == 0.0:
            s = np.zeros_like(theta)
        else:
            d = np.where(theta <= lam1, lam1,
                         np.maximum(penalty.a * lam1 - theta, 0.0)
                         / (penalty.a - 1.0))
            s = d / theta
    else:
        s = np.zeros_like(theta)
    if fam in ("ridge", "en", "scad_l2"):
        s = s + 2.0 * penalty.lambda2
    return s


def _resolve_alpha(data, model: ModelSpec, control) -> float | None:
    """Fix the working correlation parameter before a penalized fit."""
    if model.correlation.kind == "independence":
        return None
    if model.correlation.alpha is not None:
        return model.correlation.alpha
    if max(data.cluster_sizes) < 2:
        raise ValueError("correlation not estimable: all subjects have T_i = 1")
    # moment estimate from an independence fit
    indep = ModelSpec(model.link, model.variance, CorrelationSpec("independence"))
    beta0 = _initial_beta(data, _ScoreEngine(data, indep, None), 1e-3, control)
    res = pearson_residual_blocks(beta0, data, indep)
    phi = estimate_dispersion(res, data.p) if data.N > data.p else 1.0
    return estimate_alpha(res, model.correlation.kind, phi)


def _initial_beta(data, engine, lam2, control, tol=1e-8, max_iter=50):
    """Ridge warm start: Newton iterations on the pure-ridge problem."""
    N = data.N
    p = data.p
    beta = np.zeros(p)
    for _ in range(max_iter):
        S, H = engine.score(beta)
        step = _solve_spd(H + 2.0 * N * lam2 * np.eye(p),
                          S - 2.0 * N * lam2 * beta, control.ridge_jitter)
        beta = beta + step
        if np.linalg.norm(step) < tol:
            break
    return beta


def _check_standardized(data):
    dev = data.unit_variance_deviation
    if dev > 1e-6:
        warnings.warn(
            f"covariates deviate from pooled unit variance by {dev:.2e}; "
            "penalties weigh columns comparably only on standardized data",
            StandardizationWarning, stacklevel=3)


def _pgls_value(S, H, N, penalty, beta):
    # Q = (1/2n) S' K^{-1} S with K = H/n, via least squares (H may be singular)
    z, *_ = np.linalg.lstsq(H, S, rcond=None)
    return 0.5 * float(S @ z) + N * penalty_value(penalty, beta)


def fit_pgee(data, model: ModelSpec, penalty: PenaltySpec,
             control: SolverControl = SolverControl(), *,
             engine: _ScoreEngine | None = None) -> PgeeFit:
    """Penalized GEE via local quadratic approximation.

    Each iteration zeroes coordinates below the threshold (they never
    re-enter), builds the quadratic penalty approximation on the active
    coordinates, and takes a Newton step using the expected information.

    ``engine`` lets grid searches reuse the precomputed score engine of a
    dataset across many penalties (it does not depend on the penalty).
    """
    p = data.p
    N = data.N
    if penalty.family != "none" and control.warn_nonstandard:
        _check_standardized(data)
    if engine is None:
        alpha = _resolve_alpha(data, model, control)
        engine = _ScoreEngine(data, model, alpha)
    else:
        alpha = engine.alpha

    if isinstance(control.init, str) and control.init == "ridge":
        beta = _initial_beta(data, engine, max(penalty.lambda2, 1e-3), control)
    elif isinstance(control.init, str) and control.init == "zeros":
        if penalty.family != "none":
            raise ValueError("init='zeros' is only usable with penalty 'none'")
        beta = np.zeros(p)
    elif isinstance(control.init, str):
        raise ValueError(f"unknown init {control.init!r}")
    else:
        beta = np.asarray(control.init, dtype=float).copy()
        if beta.shape != (p,):
            raise ValueError("initial vector has wrong length")

    masked = np.zeros(p, dtype=bool)
    converged = False
    trace = [] if (control.track_objective and model.link == "identity") else None
    iterations = 0
    skip_mask = isinstance(control.init, str) and control.init == "zeros"
    threshold = control.zero_threshold
    jitter = control.ridge_jitter
    c2 = control.convergence_c ** 2
    idx = np.arange(p)
    H_act = None
    for iterations in range(1, control.max_iterations + 1):
        prev = beta.copy()
        # Step 1: remove small coordinates permanently
        if not skip_mask:
            small = np.abs(beta) < threshold
            if small.any() and np.any(small & ~masked):
                masked |= small
                beta[masked] = 0.0
                idx = np.flatnonzero(~masked)
                H_act = None
        skip_mask = False
        if idx.size:
            # Steps 2-3: quadratic penalty approximation, then a Newton
            # update on the active coordinates
            b_act = beta[idx]
            sigma = _penalty_sigma(penalty, np.abs(b_act))
            S, H = engine.score(beta)
            if engine.gaussian:
                if H_act is None:
                    H_act = H[idx[:, None], idx] if idx.size < p else H
                Hsub = H_act
            else:
                Hsub = H[idx[:, None], idx] if idx.size < p else H
            M = Hsub.copy()
            M.flat[::idx.size + 1] += N * sigma
            rhs = S[idx] - N * sigma * b_act
            beta[idx] = b_act + _solve_spd(M, rhs, jitter)
        if trace is not None:
            S_t, H_t = engine.score(beta)
            trace.append(_pgls_value(S_t, H_t, N, penalty, beta))
        d = beta - prev
        if float(d @ d) < c2:
            converged = True
            break

    beta[masked] = 0.0
    active_set = tuple(int(j) for j in np.flatnonzero(beta))
    return PgeeFit(
        beta_naive=beta,
        beta_nonnaive=beta * (1.0 + penalty.lambda2),
        active_set=active_set,
        iterations=iterations,
        converged=converged,
        threshold_used=control.zero_threshold,
        penalty=penalty,
        model=model,
        correlation_alpha=alpha,
        objective_trace=tuple(trace) if trace is not None else None,
    )


def fit_gee(data, model: ModelSpec,
            control: SolverControl = SolverControl()) -> PgeeFit:
    """Unpenalized GEE by Fisher scoring (no thresholding of coefficients).

    The working correlation parameter, when unset, is re-estimated from
    Pearson residuals at each iteration.
    """
    p = data.p
    N = data.N
    if p >= N:
        raise SolverError("design singular: use a penalized fit (p >= N)")
    estimate = (model.correlation.kind != "independence"
                and model.correlation.alpha is None)
    if estimate and max(data.cluster_sizes) < 2:
        raise ValueError("correlation not estimable: all subjects have T_i = 1")

    alpha = model.correlation.alpha
    if estimate:
        alpha = 0.0   # start from the identity, re-estimated each iteration
    beta = np.zeros(p)
    engine = _ScoreEngine(data, model, alpha)
    # full-rank check on the independence cross-product
    _, H0 = engine.score(beta)
    if np.linalg.matrix_rank(H0) < p:
        raise SolverError("design singular: use a penalized fit")

    converged = False
    for iterations in range(1, control.max_iterations + 1):
        if estimate:
            res = pearson_residual_blocks(beta, data, model)
            phi = estimate_dispersion(res, p)
            alpha = estimate_alpha(res, model.correlation.kind, phi)
            engine = _ScoreEngine(data, model, alpha)
        S, H = engine.score(beta)
        step = _solve_spd(H, S, control.ridge_jitter)
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise SolverError("divergent Fisher scoring iterates")
        if np.linalg.norm(step) < control.convergence_c:
            converged = True
            break

    active_set = tuple(int(j) for j in np.flatnonzero(beta))
    return PgeeFit(
        beta_naive=beta,
        beta_nonnaive=beta.copy(),
        active_set=active_set,
        iterations=iterations,
        converged=converged,
        threshold_used=0.0,
        penalty=PenaltySpec("none"),
        model=model,
        correlation_alpha=alpha,
    )


def pgls_objective(beta, data, model: ModelSpec, penalty: PenaltySpec) -> float:
    """Penalized generalized least squares objective (gaussian only).

    Q^P(beta) = (1/2n) S' K^{-1} S + N P(beta); its minimizer solves the
    penalized estimating equation.
    """
    if model.link != "identity":
        raise ValueError("PGLS objective defined for gaussian only")
    beta = np.asarray(beta, dtype=float)
    S, K = gee_score(beta, data, model)
    try:
        z = np.linalg.solve(K, S)
    except np.linalg.LinAlgError:
        z, *_ = np.linalg.lstsq(K, S, rcond=None)
    return float(S @ z) / (2.0 * data.n) + data.N * penalty_value(penalty, beta)
