"""Data generators, benchmark metrics, cluster bootstrap, study harness.

Two longitudinal designs are provided: a cross-sectional one (response
driven by same-time covariates only) and a lagged one where the response
also depends on the previous time point and the target of inference is the
implied cross-sectional coefficient vector. A binomial variant reuses the
lagged covariate process with a logit mean.
"""
from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace

import numpy as np

from .correlation import CorrelationSpec, VarianceModel
from .data import LongitudinalDataset, standardize
from .penalties import PenaltySpec
from .solver import (ModelSpec, SolverControl, SolverError, fit_gee, fit_pgee)
from .tuning import default_grid, loso_cv, select_tuning

SIGMA1_PRINTED = np.array([[1.0, 0.2, 0.5],
                           [0.3, 1.0, 0.4],
                           [0.5, 0.4, 1.0]])


def _sigma1(mode: str = "sym") -> np.ndarray:
    """The 3x3 covariate block; the printed source is asymmetric, so it is
    symmetrized by default (alternatives keep one triangle)."""
    A = SIGMA1_PRINTED
    if mode == "sym":
        return (A + A.T) / 2.0
    if mode == "upper":
        U = np.triu(A)
        return U + np.triu(A, 1).T
    if mode == "lower":
        L = np.tril(A)
        return L + np.tril(A, -1).T
    raise ValueError(f"unknown sigma mode {mode!r}")


def lagged_sigma(mode: str = "sym") -> np.ndarray:
    """Block-diagonal 20x20 cross-sectional covariate covariance."""
    S1 = _sigma1(mode)
    out = np.eye(20)
    for b in range(3):
        out[3 * b:3 * b + 3, 3 * b:3 * b + 3] = S1
    return out


def cross_sectional_sigma() -> np.ndarray:
    S = np.eye(8)
    S[0, 1] = S[1, 0] = 0.6
    S[2, 3] = S[3, 2] = 0.3
    return S


@dataclass(frozen=True)
class CrossSectionalConfig:
    n: int = 20
    T: int = 5
    beta: tuple = (-1.0, -1.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.0)
    error_rho: float = 0.7
    Sigma: np.ndarray = field(default_factory=cross_sectional_sigma)

    def __post_init__(self):
        S = np.asarray(self.Sigma, dtype=float)
        if not np.allclose(S, S.T):
            raise ValueError("Sigma must be symmetric")
        if np.any(np.linalg.eigvalsh(S) <= 0):
            raise ValueError("Sigma must be positive definite")
        if not -1.0 < self.error_rho < 1.0:
            raise ValueError("|error_rho| must be < 1")
        if len(self.beta) != S.shape[0]:
            raise ValueError("beta length must match Sigma dimension")


@dataclass(frozen=True)
class LaggedConfig:
    n: int = 20
    T: int = 5
    gamma1: tuple = ((2.0,) * 3 + (1.0,) * 3 + (0.1,) * 3 + (0.0,) * 11)
    gamma2: tuple = ((2.0,) * 3 + (1.0,) * 3 + (0.1,) * 3 + (0.0,) * 11)
    rho: tuple = (0.5,) * 20
    sigma_mode: str = "sym"

    def __post_init__(self):
        if not (len(self.gamma1) == len(self.gamma2) == len(self.rho) == 20):
            raise ValueError("gamma1, gamma2 and rho must have length 20")
        if np.any(np.abs(np.asarray(self.rho)) >= 1):
            raise ValueError("all |rho_j| must be < 1")
        _sigma1(self.sigma_mode)

    @property
    def Sigma(self) -> np.ndarray:
        return lagged_sigma(self.sigma_mode)

    @classmethod
    def scenario(cls, which: int, n: int = 20, T: int = 5) -> "LaggedConfig":
        if which == 1:
            return cls(n=n, T=T)
        if which == 2:
            g = (1.0,) * 6 + (0.0,) * 14
            rho = (0.3,) * 3 + (0.6,) * 3 + (0.5,) * 14
            return cls(n=n, T=T, gamma1=g, gamma2=g, rho=rho)
        raise ValueError("scenario must be 1 or 2")


def _blocks_to_dataset(y, X, T) -> LongitudinalDataset:
    """y: (n, T), X: (n, T, p) -> dataset with subjects s1..sn, times 1..T."""
    n = y.shape[0]
    times = np.arange(1.0, T + 1.0)
    return LongitudinalDataset(
        subjects=tuple(f"s{i + 1}" for i in range(n)),
        times=tuple(times.copy() for _ in range(n)),
        y=tuple(y[i].copy() for i in range(n)),
        X=tuple(X[i].copy() for i in range(n)),
        covariate_names=tuple(f"x{j + 1}" for j in range(X.shape[2])),
    )


def simulate_cross_sectional(cfg: CrossSectionalConfig, seed) -> LongitudinalDataset:
    """Y_it = X_it' beta + e_it with AR(1) errors and iid-over-time covariates."""
    rng = np.random.default_rng(seed)
    n, T = cfg.n, cfg.T
    Sigma = np.asarray(cfg.Sigma, dtype=float)
    p = Sigma.shape[0]
    L = np.linalg.cholesky(Sigma)
    X = rng.standard_normal((n, T, p)) @ L.T
    rho = cfg.error_rho
    e = np.empty((n, T))
    e[:, 0] = rng.standard_normal(n)
    innov_sd = np.sqrt(1.0 - rho ** 2)
    for t in range(1, T):
        e[:, t] = rho * e[:, t - 1] + innov_sd * rng.standard_normal(n)
    y = X @ np.asarray(cfg.beta, dtype=float) + e
    return _blocks_to_dataset(y, X, T)


def _lagged_covariates(cfg: LaggedConfig, rng):
    """Stationary AR(1) covariates with cross-sectional covariance Sigma.

    Innovations are drawn jointly with covariance Sigma - R Sigma R
    (R = diag(rho)), the unique choice keeping X_t ~ N(0, Sigma) at every t.
    Returns (X, Xlag) with shape (n, T, 20); Xlag[i, t] = X_{i, t-1}.
    """
    n, T = cfg.n, cfg.T
    Sigma = cfg.Sigma
    rho = np.asarray(cfg.rho, dtype=float)
    innov_cov = Sigma - rho[:, None] * Sigma * rho[None, :]
    eig = np.linalg.eigvalsh(innov_cov)
    if np.any(eig < -1e-12):
        raise ValueError("implied innovation covariance is not PSD")
    L0 = np.linalg.cholesky(Sigma)
    Li = np.linalg.cholesky(innov_cov + 1e-14 * np.eye(20))
    X = np.empty((n, T, 20))
    Xlag = np.empty((n, T, 20))
    prev = rng.standard_normal((n, 20)) @ L0.T   # burn-in X_{i0}
    for t in range(T):
        Xlag[:, t] = prev
        cur = prev * rho + rng.standard_normal((n, 20)) @ Li.T
        X[:, t] = cur
        prev = cur
    return X, Xlag


def simulate_lagged(cfg: LaggedConfig, seed) -> LongitudinalDataset:
    """Y_it = X_it' g1 + X_{it-1}' g2 + b_i + e_it; only (y, X_it) is emitted."""
    rng = np.random.default_rng(seed)
    X, Xlag = _lagged_covariates(cfg, rng)
    g1 = np.asarray(cfg.gamma1, dtype=float)
    g2 = np.asarray(cfg.gamma2, dtype=float)
    b = rng.standard_normal(cfg.n)
    e = rng.standard_normal((cfg.n, cfg.T))
    y = X @ g1 + Xlag @ g2 + b[:, None] + e
    return _blocks_to_dataset(y, X, cfg.T)


def simulate_binomial(cfg: LaggedConfig, seed) -> LongitudinalDataset:
    """Bernoulli responses with logit mean on the lagged covariate process."""
    rng = np.random.default_rng(seed)
    X, Xlag = _lagged_covariates(cfg, rng)
    g1 = np.asarray(cfg.gamma1, dtype=float)
    g2 = np.asarray(cfg.gamma2, dtype=float)
    b = rng.standard_normal(cfg.n)
    eta = X @ g1 + Xlag @ g2 + b[:, None]
    prob = 1.0 / (1.0 + np.exp(-eta))
    y = (rng.random((cfg.n, cfg.T)) < prob).astype(float)
    return _blocks_to_dataset(y, X, cfg.T)


def implied_beta(gamma1, gamma2, rho) -> np.ndarray:
    """Cross-sectional coefficients implied by the lagged process:
    beta_j = gamma1_j + rho_j * gamma2_j (elementwise)."""
    g1 = np.asarray(gamma1, dtype=float)
    g2 = np.asarray(gamma2, dtype=float)
    r = np.asarray(rho, dtype=float)
    if not g1.shape == g2.shape == r.shape:
        raise ValueError("gamma1, gamma2 and rho must have equal lengths")
    return g1 + r * g2


def model_error(beta_hat, beta_true, second_moment) -> float:
    """Quadratic estimator loss (bhat - b)' E(XX') (bhat - b)."""
    d = np.asarray(beta_hat, dtype=float) - np.asarray(beta_true, dtype=float)
    M = np.asarray(second_moment, dtype=float)
    if M.shape != (d.size, d.size):
        raise ValueError("second_moment dimension mismatch")
    return float(d @ M @ d)


def selection_metrics(beta_hat, beta_true):
    """(correct-deletion ratio, incorrect-deletion ratio); None when the
    corresponding denominator is empty."""
    bh = np.asarray(beta_hat, dtype=float)
    bt = np.asarray(beta_true, dtype=float)
    if bh.shape != bt.shape:
        raise ValueError("coefficient vectors must have equal lengths")
    true_zero = bt == 0
    true_nonzero = ~true_zero
    cd = (float(np.mean(bh[true_zero] == 0)) if true_zero.any() else None)
    idr = (float(np.mean(bh[true_nonzero] == 0)) if true_nonzero.any() else None)
    return cd, idr


def _resample(data: LongitudinalDataset, rng) -> LongitudinalDataset:
    idx = rng.integers(0, data.n, size=data.n)
    return LongitudinalDataset(
        subjects=tuple(f"b{k}" for k in range(data.n)),
        times=tuple(data.times[i] for i in idx),
        y=tuple(data.y[i] for i in idx),
        X=tuple(data.X[i] for i in idx),
        covariate_names=data.covariate_names,
    )


def bootstrap_se(data, model: ModelSpec, penalty: PenaltySpec, B: int, seed,
                 control: SolverControl = SolverControl()) -> np.ndarray:
    """Cluster-bootstrap standard errors of the non-naive coefficients.

    Resamples whole subjects with replacement and refits at fixed tuning
    parameters. Errors out when more than 20% of replicates fail.
    """
    if B < 2:
        raise ValueError("bootstrap needs B >= 2 replicates")
    rng = np.random.default_rng(seed)
    control = replace(control, warn_nonstandard=False)
    coefs = []
    failures = 0
    for _ in range(B):
        boot = _resample(data, rng)
        try:
            fit = fit_pgee(boot, model, penalty, control)
        except SolverError:
            failures += 1
            continue
        if not fit.converged:
            failures += 1
            continue
        coefs.append(fit.beta_nonnaive)
    if failures > 0.2 * B:
        raise SolverError(
            f"bootstrap unstable: {failures}/{B} replicates failed to converge")
    return np.vstack(coefs).std(axis=0, ddof=1)


# Marginal (population-averaged) logit coefficients for the binomial designs.
# On the logit scale the subject effect and the lagged term attenuate the
# conditional coefficients, so the benchmark target is the logit-linear
# projection of the true mean. Values frozen from pooled logistic fits of the
# exact success probabilities on 2e5 subjects (two independent seeds each;
# per-coordinate Monte-Carlo error below 0.005).
BINOMIAL_MARGINAL_BETA = {
    1: (1.064,) * 3 + (0.533,) * 3 + (0.053,) * 3 + (0.0,) * 11,
    2: (0.638,) * 3 + (0.786,) * 3 + (0.0,) * 14,
}


@dataclass(frozen=True)
class StudyDesign:
    """One simulation setting: generator config plus the estimation target."""
    name: str
    kind: str                      # cross_sectional | lagged | binomial
    config: object
    beta_target: tuple | None = None   # overrides the implied coefficients

    def __post_init__(self):
        if self.kind not in ("cross_sectional", "lagged", "binomial"):
            raise ValueError(f"unknown design kind {self.kind!r}")

    def simulate(self, seed) -> LongitudinalDataset:
        if self.kind == "cross_sectional":
            return simulate_cross_sectional(self.config, seed)
        if self.kind == "lagged":
            return simulate_lagged(self.config, seed)
        return simulate_binomial(self.config, seed)

    @property
    def beta_true(self) -> np.ndarray:
        if self.beta_target is not None:
            return np.asarray(self.beta_target, dtype=float)
        if self.kind == "cross_sectional":
            return np.asarray(self.config.beta, dtype=float)
        return implied_beta(self.config.gamma1, self.config.gamma2,
                            self.config.rho)

    @property
    def second_moment(self) -> np.ndarray:
        return np.asarray(self.config.Sigma, dtype=float)

    @property
    def model(self) -> ModelSpec:
        if self.kind == "binomial":
            return ModelSpec("logit", VarianceModel("binomial"),
                             CorrelationSpec("independence"))
        return ModelSpec("identity", VarianceModel("gaussian"),
                         CorrelationSpec("independence"))


DESIGNS = {
    "table1": StudyDesign("table1", "cross_sectional", CrossSectionalConfig()),
    "scenario1-n20": StudyDesign("scenario1-n20", "lagged", LaggedConfig.scenario(1, n=20)),
    "scenario1-n100": StudyDesign("scenario1-n100", "lagged", LaggedConfig.scenario(1, n=100)),
    "scenario2-n20": StudyDesign("scenario2-n20", "lagged", LaggedConfig.scenario(2, n=20)),
    "scenario2-n100": StudyDesign("scenario2-n100", "lagged", LaggedConfig.scenario(2, n=100)),
    "scenario1-binomial": StudyDesign("scenario1-binomial", "binomial",
                                      LaggedConfig.scenario(1, n=100),
                                      BINOMIAL_MARGINAL_BETA[1]),
    "scenario2-binomial": StudyDesign("scenario2-binomial", "binomial",
                                      LaggedConfig.scenario(2, n=100),
                                      BINOMIAL_MARGINAL_BETA[2]),
}

# alpha grids per family: sparse-only and ridge-only families are one-dimensional
_FAMILY_ALPHAS = {
    "none": (1.0,),
    "lasso": (1.0,),
    "scad": (1.0,),
    "ridge": (0.0,),
}


@dataclass(frozen=True)
class FamilyResult:
    family: str
    me_mean: float
    me_se: float | None
    lambda_median: float | None
    alpha_median: float | None
    cd_ratio: float | None
    id_ratio: float | None
    rel_bias_first: float
    replicates: int
    failed: int


@dataclass(frozen=True)
class SimReport:
    design: str
    replicates: int
    families: tuple          # FamilyResult per penalty family
    detail: tuple            # per replicate: dict family -> record


def _study_replicate(design: StudyDesign, families, sub_seed, control,
                     n_lambda, n_alpha, rule):
    data = design.simulate(sub_seed)
    gaussian = design.kind != "binomial"
    std, info = standardize(data, scale_response=gaussian)
    model = design.model
    beta_true = design.beta_true
    control = replace(control, warn_nonstandard=False)
    out = {}
    for family in families:
        try:
            if family == "none":
                lam = alpha = None
                fit = fit_gee(std, model, control)
            else:
                alphas = _FAMILY_ALPHAS.get(
                    family, tuple(k / (n_alpha - 1) for k in range(n_alpha)))
                grid = default_grid(std, n_lambda=n_lambda, alpha_values=alphas)
                surface = loso_cv(std, model, family, grid, control)
                lam, alpha = select_tuning(surface, rule)
                fit = fit_pgee(std, model,
                               PenaltySpec.from_reparam(family, lam, alpha),
                               control)
        except SolverError as e:
            out[family] = {"failed": True, "error": str(e)}
            continue
        beta_orig, _ = info.coefficients_original_scale(fit.beta_nonnaive)
        cd, idr = selection_metrics(beta_orig, beta_true)
        out[family] = {
            "failed": False,
            "me": model_error(beta_orig, beta_true, design.second_moment),
            "lambda": lam,
            "alpha": alpha,
            "cd": cd,
            "id": idr,
            "beta1": float(beta_orig[0]),
        }
    return out


def run_study(design: StudyDesign, penalties, replicates: int,
              control: SolverControl = SolverControl(), seed=0,
              n_lambda: int = 10, n_alpha: int = 5, rule: str = "min",
              threads: int = 1) -> SimReport:
    """Monte-Carlo benchmark: simulate, standardize, CV-tune, fit, score.

    Replicates draw independent sub-seeds from a single seed sequence; the
    result is identical for any thread count (results are merged by
    replicate index).
    """
    sub_seeds = np.random.SeedSequence(seed).spawn(replicates)
    args = [(design, penalties, s, control, n_lambda, n_alpha, rule)
            for s in sub_seeds]
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
            detail = list(ex.map(lambda a: _study_replicate(*a), args))
    else:
        detail = [_study_replicate(*a) for a in args]

    families = []
    for family in penalties:
        recs = [d[family] for d in detail if not d[family]["failed"]]
        failed = replicates - len(recs)
        if not recs:
            raise SolverError(f"all replicates failed for family {family!r}")
        mes = np.array([r["me"] for r in recs])
        cds = [r["cd"] for r in recs if r["cd"] is not None]
        ids = [r["id"] for r in recs if r["id"] is not None]
        lams = [r["lambda"] for r in recs if r["lambda"] is not None]
        alphas = [r["alpha"] for r in recs if r["alpha"] is not None]
        beta1 = np.array([r["beta1"] for r in recs])
        beta1_true = design.beta_true[0]
        families.append(FamilyResult(
            family=family,
            me_mean=float(mes.mean()),
            me_se=(float(mes.std(ddof=1) / np.sqrt(len(mes)))
                   if len(mes) > 1 else None),
            lambda_median=float(np.median(lams)) if lams else None,
            alpha_median=float(np.median(alphas)) if alphas else None,
            cd_ratio=float(np.mean(cds)) if cds else None,
            id_ratio=float(np.mean(ids)) if ids else None,
            rel_bias_first=float((beta1.mean() - beta1_true) / beta1_true)
            if beta1_true != 0 else float(beta1.mean()),
            replicates=replicates,
            failed=failed,
        ))
    return SimReport(design=design.name, replicates=replicates,
                     families=tuple(families), detail=tuple(detail))
