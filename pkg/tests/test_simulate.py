"""Simulation designs, benchmark metrics, bootstrap, and the study harness."""
import numpy as np
import pytest

from pgee.correlation import CorrelationSpec, VarianceModel
from pgee.penalties import PenaltySpec
from pgee.solver import ModelSpec, fit_gee
from pgee.simulate import (BINOMIAL_MARGINAL_BETA, CrossSectionalConfig,
                           DESIGNS, LaggedConfig, StudyDesign, bootstrap_se,
                           cross_sectional_sigma, implied_beta, lagged_sigma,
                           model_error, run_study, selection_metrics,
                           simulate_binomial, simulate_cross_sectional,
                           simulate_lagged)

GAUSS = ModelSpec("identity", VarianceModel("gaussian"),
                  CorrelationSpec("independence"))


def test_generators_deterministic():
    cfg = CrossSectionalConfig(n=5)
    a = simulate_cross_sectional(cfg, 3)
    b = simulate_cross_sectional(cfg, 3)
    c = simulate_cross_sectional(cfg, 4)
    np.testing.assert_array_equal(a.stacked_y, b.stacked_y)
    assert not np.array_equal(a.stacked_y, c.stacked_y)
    lc = LaggedConfig(n=5)
    np.testing.assert_array_equal(simulate_lagged(lc, 9).stacked_X,
                                  simulate_lagged(lc, 9).stacked_X)


def test_cross_sectional_moments():
    d = simulate_cross_sectional(CrossSectionalConfig(n=10_000), 1)
    X = d.stacked_X
    C = np.corrcoef(X, rowvar=False)
    assert C[0, 1] == pytest.approx(0.6, abs=0.02)
    assert C[2, 3] == pytest.approx(0.3, abs=0.02)
    assert C[0, 2] == pytest.approx(0.0, abs=0.02)
    np.testing.assert_allclose(X.var(axis=0), 1.0, atol=0.05)
    resid = np.vstack(d.y) - np.array(
        [Xi @ np.asarray(CrossSectionalConfig().beta) for Xi in d.X])
    lag1 = np.mean(resid[:, 1:] * resid[:, :-1]) / resid.var()
    assert lag1 == pytest.approx(0.7, abs=0.02)


def test_lagged_covariate_moments():
    cfg = LaggedConfig.scenario(2, n=10_000)
    d = simulate_lagged(cfg, 2)
    X = np.vstack(d.X)
    np.testing.assert_allclose(X.var(axis=0), 1.0, atol=0.05)
    C = np.corrcoef(X, rowvar=False)
    np.testing.assert_allclose(C[:3, :3], (lagged_sigma()[:3, :3]), atol=0.03)
    # stationary lag-1 autocorrelation of x4..x6 equals rho = 0.6
    blocks = np.stack(d.X)            # (n, T, 20)
    x4 = blocks[:, :, 3]
    lag1 = np.mean(x4[:, 1:] * x4[:, :-1])
    assert lag1 == pytest.approx(0.6, abs=0.03)


def test_scenario_presets():
    s1 = LaggedConfig.scenario(1)
    assert s1.gamma1 == (2.0,) * 3 + (1.0,) * 3 + (0.1,) * 3 + (0.0,) * 11
    assert s1.rho == (0.5,) * 20
    s2 = LaggedConfig.scenario(2, n=100)
    assert s2.n == 100
    assert s2.gamma1 == (1.0,) * 6 + (0.0,) * 14
    assert s2.rho == (0.3,) * 3 + (0.6,) * 3 + (0.5,) * 14
    with pytest.raises(ValueError):
        LaggedConfig.scenario(3)


def test_config_validation():
    with pytest.raises(ValueError, match="symmetric"):
        CrossSectionalConfig(Sigma=np.array([[1.0, 0.5], [0.2, 1.0]]),
                             beta=(1.0, 0.0))
    with pytest.raises(ValueError, match="beta length"):
        CrossSectionalConfig(beta=(1.0, 2.0))
    with pytest.raises(ValueError, match="error_rho"):
        CrossSectionalConfig(error_rho=1.0)
    with pytest.raises(ValueError, match="length 20"):
        LaggedConfig(gamma1=(1.0,) * 3)
    with pytest.raises(ValueError, match="rho_j"):
        LaggedConfig(rho=(1.0,) * 20)
    with pytest.raises(ValueError, match="sigma mode"):
        LaggedConfig(sigma_mode="diag")


def test_sigma_modes():
    for mode in ("sym", "upper", "lower"):
        S = lagged_sigma(mode)
        np.testing.assert_allclose(S, S.T)
        assert np.all(np.linalg.eigvalsh(S) > 0)
    assert lagged_sigma("sym")[0, 1] == pytest.approx(0.25)
    assert lagged_sigma("upper")[0, 1] == pytest.approx(0.2)
    assert lagged_sigma("lower")[0, 1] == pytest.approx(0.3)
    assert cross_sectional_sigma()[0, 1] == 0.6


def test_binomial_generator():
    d = simulate_binomial(LaggedConfig(n=500), 5)
    y = np.concatenate(d.y)
    assert set(np.unique(y)) <= {0.0, 1.0}
    null = LaggedConfig(gamma1=(0.0,) * 20, gamma2=(0.0,) * 20)
    y0 = np.concatenate(simulate_binomial(null, 6).y)
    # eta = b_i only, symmetric around zero
    assert np.mean(y0) == pytest.approx(0.5, abs=0.05)


def test_implied_beta():
    np.testing.assert_allclose(
        implied_beta((2.0, 1.0), (2.0, 0.0), (0.5, 0.9)), [3.0, 1.0])
    np.testing.assert_allclose(implied_beta((0.0,), (5.0,), (0.0,)), [0.0])
    with pytest.raises(ValueError):
        implied_beta((1.0,), (1.0, 2.0), (0.5,))
    s1 = DESIGNS["scenario1-n20"]
    np.testing.assert_allclose(
        s1.beta_true, (3.0,) * 3 + (1.5,) * 3 + (0.15,) * 3 + (0.0,) * 11)


def test_model_error_values():
    assert model_error((1.0, 0.0), (0.0, 0.0), np.eye(2)) == pytest.approx(1.0)
    # unit errors on the first two coordinates of the 3x3 block: 2 + 2*0.25
    d = np.zeros(20)
    d[:2] = 1.0
    assert model_error(d, np.zeros(20), lagged_sigma()) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        model_error((1.0,), (0.0,), np.eye(2))


def test_selection_metrics_conventions():
    cd, idr = selection_metrics((0.0, 1.0, 0.0, 2.0), (0.0, 3.0, 1.0, 0.0))
    assert cd == pytest.approx(0.5)   # one of two true zeros kept at zero...
    assert idr == pytest.approx(0.5)  # one of two true signals deleted
    cd, idr = selection_metrics((1.0,), (2.0,))
    assert cd is None and idr == 0.0
    cd, idr = selection_metrics((0.0,), (0.0,))
    assert cd == 1.0 and idr is None
    with pytest.raises(ValueError):
        selection_metrics((1.0,), (1.0, 2.0))


def test_bootstrap_deterministic_and_degenerate():
    d = simulate_cross_sectional(CrossSectionalConfig(n=30), 11)
    pen = PenaltySpec("none")
    se1 = bootstrap_se(d, GAUSS, pen, 25, seed=1)
    se2 = bootstrap_se(d, GAUSS, pen, 25, seed=1)
    np.testing.assert_array_equal(se1, se2)
    with pytest.raises(ValueError):
        bootstrap_se(d, GAUSS, pen, 1, seed=1)


def test_bootstrap_matches_cluster_sandwich():
    d = simulate_cross_sectional(CrossSectionalConfig(n=200), 12)
    se = bootstrap_se(d, GAUSS, PenaltySpec("none"), 400, seed=2)
    fit = fit_gee(d, GAUSS)
    H = d.stacked_X.T @ d.stacked_X
    meat = np.zeros((d.p, d.p))
    for yi, Xi in zip(d.y, d.X):
        g = Xi.T @ (yi - Xi @ fit.beta_naive)
        meat += np.outer(g, g)
    cov = np.linalg.solve(H, np.linalg.solve(H, meat).T)
    np.testing.assert_allclose(se, np.sqrt(np.diag(cov)), rtol=0.2)


def test_design_registry_and_targets():
    assert set(DESIGNS) >= {"table1", "scenario1-n20", "scenario1-n100",
                            "scenario2-n20", "scenario2-n100",
                            "scenario1-binomial", "scenario2-binomial"}
    with pytest.raises(ValueError, match="design kind"):
        StudyDesign("x", "survival", CrossSectionalConfig())
    b1 = DESIGNS["scenario1-binomial"]
    np.testing.assert_allclose(b1.beta_true, BINOMIAL_MARGINAL_BETA[1])
    assert b1.model.link == "logit"
    assert DESIGNS["table1"].model.link == "identity"


def test_run_study_small():
    report = run_study(DESIGNS["table1"], ["none", "lasso"], 3, seed=5,
                       n_lambda=4)
    assert report.replicates == 3 and len(report.detail) == 3
    by = {f.family: f for f in report.families}
    assert by["none"].me_se is not None
    assert by["none"].lambda_median is None
    assert by["lasso"].lambda_median is not None
    assert by["lasso"].alpha_median == 1.0
    assert 0.0 <= by["lasso"].cd_ratio <= 1.0
    assert by["none"].failed == 0


def test_run_study_single_replicate_has_no_se():
    report = run_study(DESIGNS["table1"], ["none"], 1, seed=6)
    assert report.families[0].me_se is None


def test_run_study_thread_invariance():
    kw = dict(replicates=4, seed=7, n_lambda=4)
    r1 = run_study(DESIGNS["table1"], ["none", "lasso"], threads=1, **kw)
    r3 = run_study(DESIGNS["table1"], ["none", "lasso"], threads=3, **kw)
    assert r1.detail == r3.detail
    assert r1.families == r3.families
