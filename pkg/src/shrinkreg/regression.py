"""Downstream OLS of an outcome on estimated unit effects, with robust inference.

The variance of the slope is reported in the normalisation

    Omega = mean((t_i - tbar)^2 * u_i^2) / mean((t_i - tbar)^2)^2,   SE = sqrt(Omega / n),

i.e. the Eicker-Huber-White sandwich with plain ``1/n`` scaling and no
degrees-of-freedom correction. Confidence intervals and p-values use the
normal distribution.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .normal import norm_ppf, two_sided_p

__all__ = [
    "SingularDesignError",
    "OLSFit",
    "RegressionReport",
    "ols_fit",
    "ehw_omega",
    "cluster_omega",
    "sandwich_omega",
    "make_report",
    "regress",
    "reports_to_csv",
]

MULTIVARIATE_NOTE = "controls present: beta variance taken from the full sandwich matrix"


class SingularDesignError(ValueError):
    """The regressor matrix does not have full column rank."""


@dataclass(frozen=True)
class OLSFit:
    alpha_hat: float
    beta_hat: float
    control_coefs: tuple[float, ...]
    residuals: np.ndarray
    design: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    @property
    def theta_hat(self) -> np.ndarray:
        return self.design[:, 1]


def ols_fit(theta_hat, y, controls=None) -> OLSFit:
    """Least squares of ``y`` on an intercept, ``theta_hat`` and optional controls."""
    t = np.asarray(theta_hat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n = t.shape[0]
    cols = [np.ones(n), t]
    if controls is not None:
        c = np.asarray(controls, dtype=np.float64)
        if c.ndim == 1:
            c = c.reshape(n, -1)
        cols.extend(c.T)
    X = np.column_stack(cols)
    k = X.shape[1]
    if y.shape[0] != n:
        raise ValueError(f"theta_hat and y differ in length ({n} vs {y.shape[0]})")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} observations for {k} coefficients, got {n}")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < k:
        raise SingularDesignError(f"singular design: rank {rank} < {k} columns")
    resid = y - X @ coef
    return OLSFit(
        alpha_hat=float(coef[0]),
        beta_hat=float(coef[1]),
        control_coefs=tuple(float(b) for b in coef[2:]),
        residuals=resid,
        design=X,
    )


def _centered(theta_hat) -> tuple[np.ndarray, float]:
    t = np.asarray(theta_hat, dtype=np.float64).ravel()
    d = t - t.mean()
    sxx = float(np.mean(d * d))
    if not sxx > 0:
        raise SingularDesignError("zero-variance regressor")
    return d, sxx


def ehw_omega(theta_hat, residuals) -> float:
    """Heteroskedasticity-robust variance of ``sqrt(n) * beta_hat`` (bivariate case)."""
    d, sxx = _centered(theta_hat)
    s = d * np.asarray(residuals, dtype=np.float64).ravel()
    return float(np.mean(s * s) / sxx**2)


def _cluster_codes(clusters: Sequence) -> tuple[np.ndarray, int]:
    # codes follow first-appearance order so singleton clusters reproduce EHW bit for bit
    labels = np.asarray([str(c) for c in clusters])
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first, kind="stable"), kind="stable")
    return order[inverse], first.shape[0]


def cluster_omega(theta_hat, residuals, clusters: Sequence) -> float:
    """One-way cluster-robust analogue of :func:`ehw_omega` (no small-sample factor)."""
    d, sxx = _centered(theta_hat)
    u = np.asarray(residuals, dtype=np.float64).ravel()
    if len(clusters) != d.shape[0]:
        raise ValueError("one cluster label per observation is required")
    codes, G = _cluster_codes(clusters)
    if G < 2:
        raise ValueError("cluster-robust variance needs at least 2 clusters")
    S = np.bincount(codes, weights=d * u, minlength=G)
    return float(np.sum(S * S) / d.shape[0] / sxx**2)


def sandwich_omega(fit: OLSFit, clusters: Sequence | None = None) -> float:
    """``n`` times the slope entry of the full HC0 (or cluster) sandwich matrix."""
    X = fit.design
    u = fit.residuals
    bread = np.linalg.inv(X.T @ X)
    scores = X * u[:, None]
    if clusters is not None:
        codes, G = _cluster_codes(clusters)
        if G < 2:
            raise ValueError("cluster-robust variance needs at least 2 clusters")
        scores = np.vstack([np.bincount(codes, weights=scores[:, j], minlength=G) for j in range(X.shape[1])]).T
    meat = scores.T @ scores
    cov = bread @ meat @ bread
    return float(fit.n * cov[1, 1])


@dataclass(frozen=True)
class RegressionReport:
    alpha_hat: float
    beta_hat: float
    control_coefs: tuple[float, ...]
    se_beta: float
    variance_estimator: str
    ci_low: float
    ci_high: float
    p_value: float
    residuals: np.ndarray = field(repr=False)
    n: int
    level: float = 0.05
    method: str | None = None
    note: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["control_coefs"] = list(self.control_coefs)
        d["residuals"] = [float(r) for r in self.residuals]
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def summary_row(self) -> list:
        return [self.method or "", self.beta_hat, self.se_beta, self.ci_low, self.ci_high, self.p_value]


def make_report(
    fit: OLSFit,
    omega: float,
    level: float = 0.05,
    variance_estimator: str = "EHW",
    method: str | None = None,
) -> RegressionReport:
    """Wrap a fit and its variance into a report with a level ``1 - level`` interval."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level!r}")
    beta = fit.beta_hat
    se = math.sqrt(omega / fit.n)
    half = norm_ppf(1.0 - level / 2.0) * se
    if se > 0:
        p = two_sided_p(beta / se)
    else:
        p = 0.0 if beta != 0 else 1.0
    return RegressionReport(
        alpha_hat=fit.alpha_hat,
        beta_hat=beta,
        control_coefs=fit.control_coefs,
        se_beta=se,
        variance_estimator=variance_estimator,
        ci_low=beta - half,
        ci_high=beta + half,
        p_value=p,
        residuals=fit.residuals,
        n=fit.n,
        level=level,
        method=method,
        note=MULTIVARIATE_NOTE if fit.control_coefs else None,
    )


def regress(
    theta_hat,
    y,
    controls=None,
    clusters: Sequence | None = None,
    level: float = 0.05,
    method: str | None = None,
) -> RegressionReport:
    """OLS plus EHW (or cluster, when ``clusters`` is given) inference in one call."""
    fit = ols_fit(theta_hat, y, controls)
    if fit.control_coefs:
        omega = sandwich_omega(fit, clusters)
    elif clusters is not None:
        omega = cluster_omega(fit.theta_hat, fit.residuals, clusters)
    else:
        omega = ehw_omega(fit.theta_hat, fit.residuals)
    vce = "CLUSTER" if clusters is not None else "EHW"
    return make_report(fit, omega, level, vce, method)


def reports_to_csv(reports: Sequence[RegressionReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "beta", "se", "ci_low", "ci_high", "p"])
    for r in reports:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r.summary_row()])
    return buf.getvalue()
