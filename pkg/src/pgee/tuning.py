"""Tuning-parameter selection: leave-one-subject-out CV, QGCV, paths."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .correlation import CorrelationSpec, build_correlation, working_covariance
from .penalties import PenaltySpec
from .solver import (ModelSpec, PgeeFit, SolverControl, SolverError,
                     _ScoreEngine, _resolve_alpha, fit_pgee,
                     mean_and_derivatives)

DEFAULT_ALPHAS = tuple(k / 14 for k in range(15))


@dataclass(frozen=True)
class TuningGrid:
    """Descending lambda sequence crossed with an alpha sequence in [0, 1]."""
    lambda_values: tuple
    alpha_values: tuple

    def __post_init__(self):
        lams = np.asarray(self.lambda_values, dtype=float)
        alphas = np.asarray(self.alpha_values, dtype=float)
        if len(lams) == 0 or len(alphas) == 0:
            raise ValueError("empty tuning grid")
        if np.any(lams <= 0) or (len(lams) > 1 and np.any(np.diff(lams) >= 0)):
            raise ValueError("lambda values must be positive and strictly descending")
        if np.any(alphas < 0) or np.any(alphas > 1):
            raise ValueError("alpha values must lie in [0, 1]")
        if len(alphas) > 1 and np.any(np.diff(alphas) <= 0):
            raise ValueError("alpha values must be strictly increasing")


def lambda_max(data, alpha: float) -> float:
    """Smallest lambda zeroing all coefficients under the L1 part
    (gaussian independence convention); alpha is floored at 0.01."""
    X, y = data.stacked_X, data.stacked_y
    return float(np.max(np.abs(X.T @ y))) / (data.N * max(alpha, 0.01))


def default_grid(data, n_lambda: int = 30, alpha_values=DEFAULT_ALPHAS,
                 lambda_min_ratio: float = 1e-3) -> TuningGrid:
    """Log-spaced lambda grid anchored at lambda_max for the largest alpha."""
    alphas = tuple(sorted(set(float(a) for a in alpha_values)))
    lmax = lambda_max(data, max(alphas))
    lams = np.geomspace(lmax, lmax * lambda_min_ratio, n_lambda)
    return TuningGrid(tuple(lams), alphas)


@dataclass(frozen=True)
class CvPoint:
    lam: float
    alpha: float
    pl_cv: float
    se_cv: float
    n_folds: int
    valid: bool


@dataclass(frozen=True)
class CvSurface:
    points: tuple          # CvPoint per grid cell, row-major in (lambda, alpha)

    def valid_points(self):
        return [pt for pt in self.points if pt.valid]

    @property
    def minimum(self) -> CvPoint:
        valid = self.valid_points()
        if not valid:
            raise SolverError("no valid grid point in CV surface")
        best = min(pt.pl_cv for pt in valid)
        # ties broken toward parsimony: largest lambda, then largest alpha
        tied = [pt for pt in valid if pt.pl_cv == best]
        return max(tied, key=lambda pt: (pt.lam, pt.alpha))

    def one_se_set(self):
        """Grid points with PL_CV within one SE of the minimum."""
        m = self.minimum
        cut = m.pl_cv + m.se_cv
        return [pt for pt in self.valid_points() if pt.pl_cv <= cut]


def _prediction_loss(fit: PgeeFit, data, model: ModelSpec, i: int) -> float:
    """Eq.-(7) style per-subject loss for held-out subject i."""
    yi, Xi, Ti = data.cluster_view(i)
    mu, _ = mean_and_derivatives(fit.beta_nonnaive, Xi, model.link)
    r = yi - mu
    if model.correlation.kind == "independence" and model.variance.dispersion == 1.0:
        # V reduces to the identity; for binomial data this is the Brier
        # score, a proper scoring rule (weighting by mu(1-mu) would reward
        # shrinkage toward 1/2 rather than calibration)
        q = float(r @ r)
    else:
        spec = CorrelationSpec(model.correlation.kind, fit.correlation_alpha)
        W = build_correlation(spec, Ti)
        if model.link == "logit":
            mu = np.clip(mu, 1e-10, 1 - 1e-10)
        u = model.variance.variance(np.asarray(mu, dtype=float))
        V = working_covariance(u, W)
        q = float(r @ np.linalg.solve(V, r))
    return q / Ti


def loso_cv(data, model: ModelSpec, penalty_family: str, grid: TuningGrid,
            control: SolverControl = SolverControl()) -> CvSurface:
    """Leave-one-subject-out cross-validation over the (lambda, alpha) grid.

    Each grid point refits n times, excluding one subject; the per-subject
    loss is the working-covariance-weighted quadratic form of its prediction
    residuals divided by T_i. PL_CV is the sum over subjects, its SE the
    sample standard deviation of the per-subject losses times sqrt(n).
    """
    if data.n < 2:
        raise ValueError("LOSO-CV needs at least two subjects")
    folds = [data.drop_subject(i) for i in range(data.n)]
    control = replace(control, warn_nonstandard=False)
    # one score engine per fold, shared across all grid points
    engines = [_ScoreEngine(f, model, _resolve_alpha(f, model, control))
               for f in folds]
    points = []
    for lam in grid.lambda_values:
        for alpha in grid.alpha_values:
            try:
                penalty = PenaltySpec.from_reparam(penalty_family, lam, alpha)
            except ValueError:
                # e.g. lasso at alpha != 1: not a representable cell
                points.append(CvPoint(lam, alpha, np.nan, np.nan, data.n, False))
                continue
            losses = np.empty(data.n)
            ok = True
            for i in range(data.n):
                try:
                    fit = fit_pgee(folds[i], model, penalty, control,
                                   engine=engines[i])
                except SolverError:
                    ok = False
                    break
                if not fit.converged:
                    ok = False
                    break
                losses[i] = _prediction_loss(fit, data, model, i)
            if ok:
                pl = float(losses.sum())
                se = float(losses.std(ddof=1) * np.sqrt(data.n))
                points.append(CvPoint(lam, alpha, pl, se, data.n, True))
            else:
                points.append(CvPoint(lam, alpha, np.nan, np.nan, data.n, False))
    return CvSurface(tuple(points))


def select_tuning(surface: CvSurface, rule: str = "min"):
    """Pick (lambda, alpha) by the global minimum or the one-SE rule."""
    if rule == "min":
        pt = surface.minimum
    elif rule == "one_se":
        candidates = surface.one_se_set()
        pt = max(candidates, key=lambda q: (q.lam, q.alpha))
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    return pt.lam, pt.alpha


def _deviance_residuals(fit: PgeeFit, data, model: ModelSpec):
    blocks = []
    for yi, Xi in zip(data.y, data.X):
        mu, _ = mean_and_derivatives(fit.beta_nonnaive, Xi, model.link)
        if model.link == "identity":
            blocks.append(yi - mu)
        else:
            mu = np.clip(mu, 1e-10, 1 - 1e-10)
            with np.errstate(divide="ignore", invalid="ignore"):
                dev = 2 * (np.where(yi > 0, yi * np.log(yi / mu), 0.0)
                           + np.where(yi < 1, (1 - yi) * np.log((1 - yi) / (1 - mu)), 0.0))
            blocks.append(np.sign(yi - mu) * np.sqrt(np.maximum(dev, 0.0)))
    return blocks


def effective_parameters(fit: PgeeFit, data, penalty: PenaltySpec) -> float:
    """Generalized-ridge trace estimate of the effective parameter count.

    trace[(H + N Sigma)^{-1} H] on the active coordinates, where Sigma is
    the quadratic penalty-approximation weight matrix at the solution.
    Zeroed coordinates contribute 0.
    """
    model = fit.model
    if model.link != "identity":
        raise ValueError("effective parameters implemented for gaussian only")
    active = np.asarray(fit.active_set, dtype=int)
    if active.size == 0:
        return 0.0
    from .penalties import lqa_weights
    _, H = _ScoreEngine(data, model, fit.correlation_alpha).score(fit.beta_naive)
    Ha = H[np.ix_(active, active)]
    sigma, _ = lqa_weights(penalty, fit.beta_naive[active])
    M = Ha + data.N * np.diag(sigma)
    try:
        return float(np.trace(np.linalg.solve(M, Ha)))
    except np.linalg.LinAlgError as e:
        raise SolverError("singular system in effective-parameter trace") from e


def qgcv(fit: PgeeFit, data, model: ModelSpec) -> float:
    """Quasi-generalized cross-validation score.

    Weighted deviance over the working correlation, corrected for model
    complexity through the effective parameter count and the effective
    number of observations N_df = sum T_i^2 / |R_i| (|R_i| = sum of the
    correlation matrix entries).
    """
    blocks = _deviance_residuals(fit, data, model)
    spec = CorrelationSpec(model.correlation.kind, fit.correlation_alpha)
    wdev = 0.0
    n_df = 0.0
    for r in blocks:
        Ti = len(r)
        R = build_correlation(spec, Ti)
        wdev += float(r @ np.linalg.solve(R, r))
        n_df += Ti ** 2 / float(R.sum())
    p_eff = effective_parameters(fit, data, fit.penalty)
    if p_eff >= n_df:
        raise SolverError("model too complex for QGCV correction")
    return wdev / (data.n * (1.0 - p_eff / n_df))


@dataclass(frozen=True)
class PathResult:
    alpha: float
    lambda_values: tuple        # descending
    coefficients: np.ndarray    # (p, len(lambda_values)), non-naive, standardized
    valid: tuple                # per-column flag

    def top_k(self, k: int = 10):
        """Indices of the k largest |coefficient| at the smallest lambda."""
        last = np.abs(self.coefficients[:, -1])
        order = np.argsort(-last, kind="stable")
        return tuple(int(j) for j in order[:k])


def penalization_path(data, model: ModelSpec, penalty_family: str, alpha: float,
                      lambda_seq, control: SolverControl = SolverControl()) -> PathResult:
    """Fits along a descending lambda sequence at fixed alpha.

    Every fit is independently warm-started from the ridge problem; chaining
    sparse solutions would freeze the active set because removed coordinates
    cannot re-enter the quadratic approximation.
    """
    lams = [float(l) for l in lambda_seq]
    if len(lams) > 1 and np.any(np.diff(lams) >= 0):
        raise ValueError("lambda sequence must be strictly descending")
    p = data.p
    coefs = np.zeros((p, len(lams)))
    valid = []
    for k, lam in enumerate(lams):
        try:
            penalty = PenaltySpec.from_reparam(penalty_family, lam, alpha)
            fit = fit_pgee(data, model, penalty, control)
            coefs[:, k] = fit.beta_nonnaive
            valid.append(bool(fit.converged))
        except (SolverError, ValueError):
            coefs[:, k] = np.nan
            valid.append(False)
    return PathResult(alpha=float(alpha), lambda_values=tuple(lams),
                      coefficients=coefs, valid=tuple(valid))
