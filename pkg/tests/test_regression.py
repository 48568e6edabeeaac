import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from shrinkreg.regression import (
    MULTIVARIATE_NOTE,
    SingularDesignError,
    cluster_omega,
    ehw_omega,
    make_report,
    ols_fit,
    regress,
    reports_to_csv,
    sandwich_omega,
)
from shrinkreg.shrinkage import estimate_cw, estimate_fe
from shrinkreg.simulation import DgpSpec, FixedJ, NormalTheta, UniformTwoPoint, run_monte_carlo

from .conftest import random_panel


def test_hand_example():
    fit = ols_fit([0, 1, 2], [1, 3, 4])
    assert fit.beta_hat == pytest.approx(1.5, abs=1e-12)
    assert fit.alpha_hat == pytest.approx(7 / 6, abs=1e-12)
    np.testing.assert_allclose(fit.residuals, [-1 / 6, 1 / 3, -1 / 6], atol=1e-12)


def test_ehw_hand_value():
    # d = (-1, 0, 1), sxx = 2/3; scores (-1, 0, 1) -> mean s^2 = 2/3 -> Omega = 1.5
    assert ehw_omega([0, 1, 2], [1, -2, 1]) == pytest.approx(1.5, abs=1e-12)


def test_report_hand_example():
    r = regress([0, 1, 2], [1, 3, 4])
    omega = ehw_omega([0, 1, 2], r.residuals)
    assert r.se_beta == pytest.approx(math.sqrt(omega / 3), abs=1e-12)
    assert r.ci_high - r.beta_hat == pytest.approx(1.959963984540054 * r.se_beta, rel=1e-12)
    assert r.beta_hat - r.ci_low == pytest.approx(1.959963984540054 * r.se_beta, rel=1e-12)
    assert r.p_value == pytest.approx(math.erfc(abs(r.beta_hat / r.se_beta) / math.sqrt(2)))
    assert r.variance_estimator == "EHW"
    assert r.note is None


def _sandwich_slope(t, y):
    X = np.column_stack([np.ones_like(t), t])
    b = np.linalg.solve(X.T @ X, X.T @ y)
    u = y - X @ b
    bread = np.linalg.inv(X.T @ X)
    V = bread @ (X.T * u**2) @ X @ bread
    return b[1], V[1, 1]


@pytest.mark.parametrize("seed", range(100))
def test_matches_matrix_sandwich(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 60))
    t = rng.normal(size=n)
    y = 1 + 2 * t + rng.normal(size=n) * (1 + np.abs(t))
    b, v = _sandwich_slope(t, y)
    r = regress(t, y)
    assert r.beta_hat == pytest.approx(b, abs=1e-10)
    assert r.se_beta**2 == pytest.approx(v, rel=1e-10)
    fit = ols_fit(t, y)
    assert sandwich_omega(fit) == pytest.approx(ehw_omega(t, fit.residuals), rel=1e-10)


def test_singleton_clusters_equal_ehw():
    rng = np.random.default_rng(5)
    t = rng.normal(size=40)
    y = t + rng.normal(size=40)
    a = regress(t, y)
    b = regress(t, y, clusters=[f"c{i}" for i in range(40)])
    assert b.se_beta == a.se_beta
    assert b.variance_estimator == "CLUSTER"


def test_cluster_brute_force():
    t = np.array([0.0, 1.0, 2.0, 4.0])
    y = np.array([1.0, 0.0, 3.0, 5.0])
    cl = ["a", "b", "a", "b"]
    fit = ols_fit(t, y)
    d = t - t.mean()
    u = fit.residuals
    sa = d[0] * u[0] + d[2] * u[2]
    sb = d[1] * u[1] + d[3] * u[3]
    sxx = np.mean(d * d)
    expected = (sa**2 + sb**2) / 4 / sxx**2
    assert cluster_omega(t, u, cl) == pytest.approx(expected, rel=1e-12)
    assert sandwich_omega(fit, cl) == pytest.approx(expected, rel=1e-10)


def test_cluster_needs_two_groups():
    with pytest.raises(ValueError, match="at least 2 clusters"):
        regress([0, 1, 2], [1, 2, 4], clusters=["g"] * 3)


def test_controls_use_full_sandwich():
    rng = np.random.default_rng(1)
    n = 200
    t = rng.normal(size=n)
    c = rng.normal(size=(n, 2))
    y = 1 + 2 * t + c @ [0.5, -1] + rng.normal(size=n)
    r = regress(t, y, controls=c)
    X = np.column_stack([np.ones(n), t, c])
    b = np.linalg.solve(X.T @ X, X.T @ y)
    u = y - X @ b
    bread = np.linalg.inv(X.T @ X)
    V = bread @ (X.T * u**2) @ X @ bread
    assert r.beta_hat == pytest.approx(b[1], abs=1e-10)
    assert r.control_coefs == pytest.approx(tuple(b[2:]), abs=1e-10)
    assert r.se_beta == pytest.approx(math.sqrt(V[1, 1]), rel=1e-10)
    assert r.note == MULTIVARIATE_NOTE


def test_singular_design():
    with pytest.raises(SingularDesignError):
        regress([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(SingularDesignError):
        regress([0, 1, 2, 3], [1, 2, 3, 5], controls=[[0], [2], [4], [6]])


def test_too_few_observations():
    with pytest.raises(ValueError, match="at least 3"):
        ols_fit([0, 1], [1, 2])


def test_zero_se_p_value():
    r = regress([0, 1, 2, 3], [1, 3, 5, 7])
    assert r.se_beta == pytest.approx(0, abs=1e-12)
    assert r.beta_hat == pytest.approx(2.0)


def test_level_validation():
    fit = ols_fit([0, 1, 2], [1, 3, 4])
    with pytest.raises(ValueError, match="level"):
        make_report(fit, 1.0, level=1.0)
    r = make_report(fit, 1.0, level=0.10)
    assert (r.ci_high - r.ci_low) / 2 == pytest.approx(1.6448536269514722 * math.sqrt(1 / 3), rel=1e-12)


def test_report_serialisation():
    r = regress([0, 1, 2], [1, 3, 4], method="FE")
    d = json.loads(r.to_json())
    assert d["beta_hat"] == r.beta_hat
    assert d["residuals"] == pytest.approx(list(r.residuals))
    rows = reports_to_csv([r, r]).splitlines()
    assert rows[0] == "method,beta,se,ci_low,ci_high,p"
    assert len(rows) == 3
    cells = rows[1].split(",")
    assert cells[0] == "FE"
    assert [float(c) for c in cells[1:]] == [r.beta_hat, r.se_beta, r.ci_low, r.ci_high, r.p_value]


finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.tuples(finite, finite), min_size=4, max_size=30),
    st.floats(-10, 10),
    st.floats(0.1, 10) | st.floats(-10, -0.1),
)
def test_affine_invariance(pairs, shift, scale):
    t = np.array([a for a, _ in pairs])
    y = np.array([b for _, b in pairs])
    assume(np.var(t) > 1e-2)
    r = regress(t, y)
    s = regress(scale * t + shift, y)
    assume(r.se_beta > 1e-8 * (1 + abs(r.beta_hat)))
    assert s.beta_hat == pytest.approx(r.beta_hat / scale, rel=1e-10, abs=1e-12)
    assert s.se_beta == pytest.approx(r.se_beta / abs(scale), rel=1e-10)
    assert s.beta_hat / s.se_beta == pytest.approx(math.copysign(1, scale) * r.beta_hat / r.se_beta, rel=1e-10, abs=1e-12)
    assert s.p_value == pytest.approx(r.p_value, rel=1e-10, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 40))
def test_common_weight_rescales_fe_slope(seed, n):
    # theta_hat under one common weight w is affine in Xbar_i: beta_CW = beta_FE / w
    rng = np.random.default_rng(seed)
    p = random_panel(rng, n, 6)
    try:
        cw = estimate_cw(p, "BC")
    except ValueError:
        return
    w = float(cw.weights[0])
    fe = regress(estimate_fe(p).estimates, p.y)
    r = regress(cw.estimates, p.y)
    assert r.beta_hat == pytest.approx(fe.beta_hat / w, rel=1e-9)
    assert r.se_beta == pytest.approx(fe.se_beta / w, rel=1e-9)


def test_large_sample_se_matches_analytic():
    rng = np.random.default_rng(9)
    n = 20_000
    t = rng.normal(size=n)
    y = 1 + t + rng.normal(size=n)
    r = regress(t, y)
    assert r.se_beta == pytest.approx(math.sqrt(1.0 / (n * np.var(t))), rel=0.05)


def test_exact_fit():
    r = regress([1, 2, 3], [1, 2, 3])
    assert r.alpha_hat == pytest.approx(0, abs=1e-12)
    assert r.beta_hat == pytest.approx(1, abs=1e-12)
    np.testing.assert_allclose(r.residuals, 0, atol=1e-12)
    assert ehw_omega([1, 2, 3], [0, 0, 0]) == 0.0
    assert cluster_omega([1, 2, 3], [0, 0, 0], ["a", "b", "a"]) == 0.0


def test_degenerate_reports():
    fit = ols_fit([0, 1, 2], [1, 3, 4])
    r = make_report(fit, 0.0)
    assert r.ci_low == r.ci_high == r.beta_hat and r.p_value == 0.0
    zero = ols_fit([0, 1, 2], [1, 1, 1])
    r = make_report(zero, 0.0)
    assert r.beta_hat == pytest.approx(0, abs=1e-15)


def test_residuals_mean_zero():
    rng = np.random.default_rng(2)
    y = 1e3 * rng.normal(size=50)
    r = regress(rng.normal(size=50), y, controls=rng.normal(size=(50, 2)))
    assert abs(r.residuals.mean()) < 1e-10 * np.abs(y).max()
    assert r.ci_low <= r.beta_hat <= r.ci_high


def test_oracle_coverage_within_exact_binomial_band():
    from scipy import stats

    S = 3000
    spec = DgpSpec(n=1000, j_law=FixedJ(2), sigma2_law=UniformTwoPoint(1, 10), theta_law=NormalTheta(0, 1))
    rep = run_monte_carlo(spec, "ORACLE", S, master_seed=2025)
    lo, hi = stats.binom.ppf([0.005, 0.995], S, 0.95)
    covered = round(rep.stats["ORACLE"].coverage_pct * S / 100)
    assert lo <= covered <= hi
