"""Top-level acceptance checks: closed-form oracles, structural guarantees
of the penalties, stochastic benchmark reproductions, and determinism."""
import time

import numpy as np
import pytest

from conftest import make_dataset, make_orthonormal_dataset
from pgee.cli import main
from pgee.correlation import CorrelationSpec, VarianceModel
from pgee.data import from_arrays, standardize, to_frame
from pgee.penalties import PenaltySpec, penalty_value
from pgee.simulate import (DESIGNS, LaggedConfig, StudyDesign,
                           _lagged_covariates, implied_beta, run_study)
from pgee.solver import ModelSpec, SolverControl, fit_pgee
from pgee.tuning import TuningGrid, loso_cv, qgcv

GAUSS = ModelSpec("identity", VarianceModel("gaussian"),
                  CorrelationSpec("independence"))
QUIET = SolverControl(warn_nonstandard=False)
TIGHT = SolverControl(convergence_c=1e-12, max_iterations=100_000,
                      warn_nonstandard=False)


# -- 1. unpenalized estimator equals pooled least squares --------------------

def test_acceptance_ols_oracle():
    start = time.monotonic()
    for seed in range(50):
        d = make_dataset(n=10, T=4, p=5, seed=seed, standardized=True)
        fit = fit_pgee(d, GAUSS, PenaltySpec("none"), QUIET)
        ols = np.linalg.lstsq(d.stacked_X, d.stacked_y, rcond=None)[0]
        np.testing.assert_allclose(fit.beta_naive, ols, atol=1e-8)
    assert time.monotonic() - start < 5.0


# -- 2. lasso on an orthonormal pooled design soft-thresholds ----------------

def test_acceptance_soft_threshold_oracle():
    start = time.monotonic()
    d = make_orthonormal_dataset(n=10, T=4, p=5, seed=7)
    ols = d.stacked_X.T @ d.stacked_y / d.N
    # keep every lambda clear of the |ols_j| kinks where the quadratic
    # approximation converges only at a vanishing linear rate
    lams = [lam for lam in np.geomspace(0.02, 1.4 * np.abs(ols).max(), 60)
            if np.min(np.abs(np.abs(ols) - lam)) > 0.02][:20]
    assert len(lams) == 20
    for lam in lams:
        fit = fit_pgee(d, GAUSS, PenaltySpec("lasso", lambda1=lam), TIGHT)
        soft = np.sign(ols) * np.maximum(np.abs(ols) - lam, 0.0)
        np.testing.assert_allclose(fit.beta_naive, soft, atol=1e-6)
    assert time.monotonic() - start < 5.0


# -- 3. strictly convex penalties force equal duplicate coefficients --------

def _duplicated_dataset(seed):
    # fixed coefficients keep the duplicated column relevant in every instance
    base = make_dataset(n=10, T=4, p=4, seed=seed, beta=(1.2, -0.8, 0.6, -0.9))
    X = np.column_stack([base.stacked_X, base.stacked_X[:, 0]])
    d = from_arrays(np.repeat(np.arange(base.n), 4),
                    np.tile(np.arange(4), base.n), base.stacked_y, X)
    std, _ = standardize(d)
    return std


def test_acceptance_grouping_effect():
    start = time.monotonic()
    for seed in range(100, 120):
        d = _duplicated_dataset(seed)
        for pen in (PenaltySpec("scad_l2", lambda1=0.05, lambda2=0.2),
                    PenaltySpec("en", lambda1=0.05, lambda2=0.1)):
            fit = fit_pgee(d, GAUSS, pen, TIGHT)
            assert abs(fit.beta_naive[0] - fit.beta_naive[4]) < 1e-8
            assert fit.beta_naive[0] != 0.0   # the pair actually survives
    # without the ridge term the split between duplicates is arbitrary:
    # an asymmetric start settles on an asymmetric stationary point
    d = _duplicated_dataset(100)
    init = np.zeros(5)
    init[0] = 2.0
    fit = fit_pgee(d, GAUSS, PenaltySpec("scad", lambda1=0.3),
                   SolverControl(init=init, convergence_c=1e-12,
                                 max_iterations=100_000,
                                 warn_nonstandard=False))
    assert abs(fit.beta_naive[0] - fit.beta_naive[4]) >= 1e-8
    assert time.monotonic() - start < 10.0


# -- 4. midpoint convexity of the ridge-augmented scad penalty --------------

def _scalar_penalty(theta, lam2):
    pen = PenaltySpec("scad_l2", lambda1=1.0, lambda2=lam2)
    return penalty_value(pen, np.array([theta]))


def test_acceptance_convexity_threshold():
    start = time.monotonic()
    rng = np.random.default_rng(4)
    xs = rng.uniform(-10, 10, 1000)
    ys = rng.uniform(-10, 10, 1000)
    for x, y in zip(xs, ys):
        mid = _scalar_penalty((x + y) / 2, 0.19)
        assert mid <= (_scalar_penalty(x, 0.19) + _scalar_penalty(y, 0.19)) / 2 + 1e-12
    # below the threshold the concave scad region wins for some pair
    grid = np.linspace(0.5, 6.0, 40)
    violated = any(
        _scalar_penalty((x + y) / 2, 0.10)
        > (_scalar_penalty(x, 0.10) + _scalar_penalty(y, 0.10)) / 2 + 1e-12
        for x in grid for y in grid)
    assert violated
    assert time.monotonic() - start < 1.0


# -- 5. cross-sectional benchmark: error ordering and deletion rates ---------

def test_acceptance_cross_sectional_benchmark():
    report = run_study(DESIGNS["table1"], ["none", "scad", "scad_l2"],
                       100, seed=20260823, threads=4)
    by = {f.family: f for f in report.families}
    assert by["scad_l2"].me_mean < by["scad"].me_mean < by["none"].me_mean
    assert 0.05 <= by["scad_l2"].me_mean <= 0.12
    assert 0.50 <= by["scad_l2"].cd_ratio <= 0.80


# -- 6. lagged design, n=100: error ratio and deletion behaviour -------------

def test_acceptance_lagged_benchmark_smoke():
    start = time.monotonic()
    report = run_study(DESIGNS["scenario1-n100"], ["none", "lasso", "scad_l2"],
                       25, seed=101, threads=4)
    by = {f.family: f for f in report.families}
    assert by["scad_l2"].me_mean < 0.75 * by["none"].me_mean
    assert by["lasso"].id_ratio > by["none"].id_ratio
    assert time.monotonic() - start < 900.0


@pytest.mark.slow
def test_acceptance_lagged_benchmark_full():
    report = run_study(DESIGNS["scenario1-n100"], ["none", "lasso", "scad_l2"],
                       100, seed=102, threads=4)
    by = {f.family: f for f in report.families}
    assert by["scad_l2"].me_mean < 0.6 * by["none"].me_mean
    assert by["lasso"].id_ratio > by["none"].id_ratio


# -- 7. quadrupling the subject count shrinks the error ~fourfold ------------

def test_acceptance_consistency_scaling():
    n400 = StudyDesign("scenario2-n400", "lagged", LaggedConfig.scenario(2, n=400))
    r100 = run_study(DESIGNS["scenario2-n100"], ["none", "scad_l2"],
                     50, seed=77, threads=4)
    r400 = run_study(n400, ["none", "scad_l2"], 50, seed=78, threads=4)

    def median_me(report, family):
        return float(np.median([d[family]["me"] for d in report.detail
                                if not d[family]["failed"]]))

    for family in ("none", "scad_l2"):
        assert median_me(r400, family) < median_me(r100, family)
    ratio = median_me(r400, "none") / median_me(r100, "none")
    assert 0.15 <= ratio <= 0.45


# -- 8. cross-validation equals an independent fold loop ---------------------

def test_acceptance_cv_oracle():
    d = make_dataset(n=3, T=3, p=2, seed=33, standardized=True)
    lam, alpha = 0.1, 0.5
    surface = loso_cv(d, GAUSS, "en", TuningGrid((lam,), (alpha,)), QUIET)
    pen = PenaltySpec.from_reparam("en", lam, alpha)
    total = 0.0
    for i in range(3):
        keep = [j for j in range(3) if j != i]
        train = from_arrays(
            np.repeat(keep, 3),
            np.concatenate([d.times[j] for j in keep]),
            np.concatenate([d.y[j] for j in keep]),
            np.vstack([d.X[j] for j in keep]))
        fit = fit_pgee(train, GAUSS, pen, QUIET)
        r = d.y[i] - d.X[i] @ fit.beta_nonnaive
        total += float(r @ r) / len(r)
    assert abs(surface.points[0].pl_cv - total) < 1e-10


# -- 9. complexity-corrected deviance matches the hand formula ---------------

def test_acceptance_qgcv_fixture():
    from pgee.penalties import lqa_weights
    d = make_dataset(n=2, T=3, p=2, seed=42, standardized=True)
    pen = PenaltySpec("lasso", lambda1=0.05)
    fit = fit_pgee(d, GAUSS, pen, QUIET)
    resid = d.stacked_y - d.stacked_X @ fit.beta_nonnaive
    rss = float(resid @ resid)
    active = list(fit.active_set)
    H = d.stacked_X.T @ d.stacked_X
    Ha = H[np.ix_(active, active)]
    sigma, _ = lqa_weights(pen, fit.beta_naive[active])
    p_eff = float(np.trace(np.linalg.solve(Ha + d.N * np.diag(sigma), Ha)))
    expect = rss / (d.n * (1 - p_eff / d.N))
    assert abs(qgcv(fit, d, GAUSS) - expect) < 1e-10


# -- 10. byte-identical output across runs and thread counts -----------------

def test_acceptance_determinism(tmp_path):
    d = make_dataset(n=8, T=4, p=4, seed=50)
    csv = tmp_path / "d.csv"
    csv.write_text(to_frame(d).to_csv(index=False))

    fits = []
    for name in ("f1", "f2"):
        out = tmp_path / f"{name}.json"
        assert main(["fit", "--input", str(csv), "--penalty", "scad_l2",
                     "--lambda1", "0.1", "--lambda2", "0.2",
                     "--format", "json", "--output", str(out)]) == 0
        fits.append(out.read_bytes())
    assert fits[0] == fits[1]

    cvs = []
    for name in ("c1", "c2"):
        out = tmp_path / f"{name}.csv"
        assert main(["cv", "--input", str(csv), "--penalty", "lasso",
                     "--grid-lambdas", "4", "--format", "csv",
                     "--output", str(out)]) == 0
        cvs.append(out.read_bytes())
    assert cvs[0] == cvs[1]

    benches = []
    for name, threads in (("b1", "1"), ("b2", "1"), ("b3", "4")):
        out = tmp_path / f"{name}.json"
        assert main(["bench", "--design", "table1", "--penalties",
                     "none,lasso", "--replicates", "4", "--grid-lambdas", "4",
                     "--seed", "9", "--threads", threads, "--format", "json",
                     "--output", str(out)]) == 0
        benches.append(out.read_bytes())
    assert benches[0] == benches[1] == benches[2]


# -- 11. implied cross-sectional coefficients against direct Monte Carlo -----

def test_acceptance_implied_beta_monte_carlo():
    for which in (1, 2):
        cfg = LaggedConfig.scenario(which, n=10_000)
        g1 = np.asarray(cfg.gamma1)
        g2 = np.asarray(cfg.gamma2)
        rng = np.random.default_rng(900 + which)
        XtX = np.zeros((20, 20))
        Xty = np.zeros(20)
        for _ in range(10):          # 1e5 subjects in chunks
            X, Xlag = _lagged_covariates(cfg, rng)
            b = rng.standard_normal(cfg.n)
            e = rng.standard_normal((cfg.n, cfg.T))
            y = X @ g1 + Xlag @ g2 + b[:, None] + e
            Xf = X.reshape(-1, 20)
            XtX += Xf.T @ Xf
            Xty += Xf.T @ y.ravel()
        pooled = np.linalg.solve(XtX, Xty)
        target = implied_beta(cfg.gamma1, cfg.gamma2, cfg.rho)
        np.testing.assert_allclose(pooled, target, atol=0.05)


# -- binomial supplement: 25-replicate smoke ordering -------------------------

def test_acceptance_binomial_smoke():
    report = run_study(DESIGNS["scenario1-binomial"], ["none", "scad_l2"],
                       25, seed=103, rule="one_se", threads=4)
    by = {f.family: f for f in report.families}
    assert by["scad_l2"].me_mean <= by["none"].me_mean
