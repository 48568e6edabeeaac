"""Variance components and linear shrinkage estimators of unit effects.

Every estimator returns unit-level estimates of the form

    theta_hat_i = w_i * Xbar_i + (1 - w_i) * Xbar

where ``Xbar_i`` is the unit mean and ``Xbar`` the unweighted grand mean of the
unit means. The estimators differ only in how the weights ``w_i`` are built:

* ``FE``: no shrinkage, ``w_i = 1``.
* ``HO``: ``w_i = s2_theta / (s2 / J_i + s2_theta)`` with a pooled noise
  variance ``s2`` and a split-half signal variance ``s2_theta``.
* ``HE``: ``w_i = V / (s2_i / J_i + V)`` with unit-specific noise variances.
* ``CW_BC``: one common weight ``V / var(Xbar_i)`` (bias correction).
* ``CW_IV``: one common weight, the split-half covariance over ``var(Xbar_i)``.

Undefined weights (non-positive variance estimates) raise
:class:`EstimatorUndefinedError`; nothing is floored or clipped.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .panel import PanelData, unit_means

__all__ = [
    "Method",
    "EstimatorUndefinedError",
    "VarianceComponents",
    "ShrinkageResult",
    "sigma2_within",
    "sigma2_within_units",
    "v_hat",
    "split_half_means",
    "split_half_unit_means",
    "ho_components",
    "variance_components",
    "kappa_hat",
    "estimate_fe",
    "estimate_ho",
    "estimate_he",
    "estimate_cw",
    "estimate",
]


class Method(str, enum.Enum):
    FE = "FE"
    HO = "HO"
    HE = "HE"
    CW_BC = "CW_BC"
    CW_IV = "CW_IV"

    @classmethod
    def parse(cls, name: str) -> "Method":
        try:
            return cls(name.strip().upper())
        except ValueError:
            raise ValueError(f"unknown shrinkage method {name!r}") from None


class EstimatorUndefinedError(ValueError):
    """An estimator cannot be formed on this panel.

    ``quantity`` names the offending statistic and ``value`` holds its computed
    value (``None`` when the statistic itself could not be computed).
    """

    def __init__(self, message: str, quantity: str, value: float | None = None):
        super().__init__(message)
        self.quantity = quantity
        self.value = value


def _require_two(p: PanelData) -> None:
    if np.any(p.sizes < 2):
        i = int(np.argmax(p.sizes < 2))
        raise EstimatorUndefinedError(
            f"insufficient measurements for within-variance: unit {p.ids[i]!r} has J=1",
            quantity="J_i",
            value=1.0,
        )


def sigma2_within(measurements) -> float:
    """Unbiased within-unit variance (divisor ``J - 1``)."""
    x = np.asarray(measurements, dtype=np.float64)
    if x.shape[0] < 2:
        raise EstimatorUndefinedError(
            "insufficient measurements for within-variance", quantity="J_i", value=float(x.shape[0])
        )
    return float(np.sum((x - x.mean()) ** 2) / (x.shape[0] - 1))


def _within_ss(p: PanelData, means: np.ndarray) -> np.ndarray:
    dev = p.values - np.repeat(means, p.sizes)
    return np.add.reduceat(dev * dev, p.offsets)


def sigma2_within_units(p: PanelData) -> np.ndarray:
    """``sigma2_within`` for every unit of ``p``."""
    _require_two(p)
    return _within_ss(p, unit_means(p)) / (p.sizes - 1)


def v_hat(p: PanelData) -> float:
    """Signal variance estimate: dispersion of unit means minus average noise.

    Returned exactly as computed; it may be negative in finite samples.
    """
    n = p.n
    xbar_i = unit_means(p)
    s2_i = sigma2_within_units(p)
    spread = np.mean((xbar_i - xbar_i.mean()) ** 2)
    return float(spread - (n - 1) / n**2 * np.sum(s2_i / p.sizes))


def split_half_means(measurements) -> tuple[float, float]:
    """Means of the first ``ceil(J/2)`` measurements and of the remainder."""
    x = np.asarray(measurements, dtype=np.float64)
    J = x.shape[0]
    if J < 2:
        raise EstimatorUndefinedError("cannot split fewer than 2 measurements", quantity="J_i", value=float(J))
    h = (J + 1) // 2
    return float(x[:h].mean()), float(x[h:].mean())


def split_half_unit_means(p: PanelData) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`split_half_means` over all units."""
    _require_two(p)
    first = (p.sizes + 1) // 2
    pos = np.arange(p.values.shape[0]) - np.repeat(p.offsets, p.sizes)
    in_first = pos < np.repeat(first, p.sizes)
    idx = p.unit_index()
    s1 = np.bincount(idx, weights=np.where(in_first, p.values, 0.0), minlength=p.n)
    s2 = np.bincount(idx, weights=np.where(in_first, 0.0, p.values), minlength=p.n)
    return s1 / first, s2 / (p.sizes - first)


def _cov(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum((a - a.mean()) * (b - b.mean())) / (a.shape[0] - 1))


def ho_components(p: PanelData) -> tuple[float, float]:
    """Pooled within variance and split-half signal covariance.

    Returns ``(sigma2_pooled, sigma2_theta)``: the pooled unbiased within-unit
    variance ``sum_i sum_j (X_ij - Xbar_i)^2 / sum_i (J_i - 1)`` and the sample
    covariance (divisor ``n - 1``) of the two split-half means across units.
    """
    _require_two(p)
    ss = _within_ss(p, unit_means(p))
    pooled = float(np.sum(ss) / np.sum(p.sizes - 1))
    a, b = split_half_unit_means(p)
    return pooled, _cov(a, b)


def kappa_hat(p: PanelData) -> float:
    """``sqrt(n) * mean(1 / J_i)``: measurement-error scale relative to sampling error."""
    return math.sqrt(p.n) * float(np.mean(1.0 / p.sizes))


@dataclass(frozen=True)
class VarianceComponents:
    sigma2_i: np.ndarray
    sigma2_pooled: float
    sigma2_theta: float
    v_hat: float
    kappa_hat: float

    def to_dict(self) -> dict:
        return {
            "sigma2_i": [float(s) for s in self.sigma2_i],
            "sigma2_pooled": self.sigma2_pooled,
            "sigma2_theta": self.sigma2_theta,
            "v_hat": self.v_hat,
            "kappa_hat": self.kappa_hat,
        }


def variance_components(p: PanelData) -> VarianceComponents:
    s2_i = sigma2_within_units(p)
    pooled, s2_theta = ho_components(p)
    return VarianceComponents(
        sigma2_i=s2_i,
        sigma2_pooled=pooled,
        sigma2_theta=s2_theta,
        v_hat=v_hat(p),
        kappa_hat=kappa_hat(p),
    )


@dataclass(frozen=True)
class ShrinkageResult:
    method: Method
    weights: np.ndarray
    estimates: np.ndarray
    target: float


def _shrink(method: Method, p: PanelData, weights) -> ShrinkageResult:
    xbar_i = unit_means(p)
    target = float(xbar_i.mean())
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), xbar_i.shape).copy()
    return ShrinkageResult(method, w, w * xbar_i + (1.0 - w) * target, target)


def estimate_fe(p: PanelData) -> ShrinkageResult:
    return _shrink(Method.FE, p, 1.0)


def estimate_ho(p: PanelData) -> ShrinkageResult:
    pooled, s2_theta = ho_components(p)
    if not s2_theta > 0:
        raise EstimatorUndefinedError(
            f"non-positive signal variance: HO undefined (sigma2_theta = {s2_theta:.6g} <= 0)",
            quantity="sigma2_theta",
            value=s2_theta,
        )
    return _shrink(Method.HO, p, s2_theta / (pooled / p.sizes + s2_theta))


def estimate_he(p: PanelData) -> ShrinkageResult:
    V = v_hat(p)
    if not V > 0:
        raise EstimatorUndefinedError(
            f"non-positive V_hat: HE undefined (V_hat = {V:.6g} <= 0)", quantity="v_hat", value=V
        )
    s2_i = sigma2_within_units(p)
    return _shrink(Method.HE, p, V / (s2_i / p.sizes + V))


def cw_weight(p: PanelData, flavor: str) -> float:
    """Common shrinkage weight for the bias-correction (``"BC"``) or IV flavour."""
    flavor = flavor.upper()
    if flavor == "BC":
        xbar_i = unit_means(p)
        spread = float(np.mean((xbar_i - xbar_i.mean()) ** 2))
        V = v_hat(p)
        if not (spread > 0 and V > 0):
            raise EstimatorUndefinedError(
                f"CW weight undefined (V_hat = {V:.6g}, var(Xbar_i) = {spread:.6g})",
                quantity="v_hat" if not V > 0 else "var_xbar",
                value=V if not V > 0 else spread,
            )
        return V / spread
    if flavor == "IV":
        # split-half covariance estimates Var(theta); dividing by the variance of the
        # full-sample means (not of one half) keeps the weight consistent for Xbar_i
        a, b = split_half_unit_means(p)
        xbar_i = unit_means(p)
        var_x = _cov(xbar_i, xbar_i)
        w = _cov(a, b) / var_x if var_x > 0 else math.nan
        if not w > 0:
            raise EstimatorUndefinedError(
                f"CW weight undefined (split-half weight = {w:.6g})",
                quantity="split_half_weight",
                value=w,
            )
        return w
    raise ValueError(f"unknown CW flavor {flavor!r}")


def estimate_cw(p: PanelData, flavor: str = "BC") -> ShrinkageResult:
    method = Method.CW_BC if flavor.upper() == "BC" else Method.CW_IV
    return _shrink(method, p, cw_weight(p, flavor))


def estimate(p: PanelData, method: Method | str) -> ShrinkageResult:
    """Dispatch on ``method``."""
    method = method if isinstance(method, Method) else Method.parse(method)
    if method is Method.FE:
        return estimate_fe(p)
    if method is Method.HO:
        return estimate_ho(p)
    if method is Method.HE:
        return estimate_he(p)
    if method is Method.CW_BC:
        return estimate_cw(p, "BC")
    return estimate_cw(p, "IV")
