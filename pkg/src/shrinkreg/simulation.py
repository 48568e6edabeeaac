"""Seeded data-generating processes and the Monte Carlo coverage engine.

Replication ``r`` of a run with master seed ``m`` draws its panel from a numpy
``Generator`` seeded with the ``r``-th output of a splitmix64 stream started at
``m``. Each replication is therefore reproducible in isolation, and the
aggregated report does not depend on how replications are spread over worker
processes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .panel import PanelData, unit_means
from .regression import SingularDesignError, ehw_omega, make_report, ols_fit
from .shrinkage import EstimatorUndefinedError, Method, estimate, sigma2_within_units

__all__ = [
    "FixedJ",
    "PoissonJ",
    "CorrelatedPairJ",
    "NormalTheta",
    "ChiSq1",
    "UniformTwoPoint",
    "CorrelatedPairSigma2",
    "DgpSpec",
    "Truth",
    "MethodStats",
    "SimReport",
    "ORACLE",
    "SEMI_ORACLE",
    "ALL_METHODS",
    "splitmix64",
    "replication_seed",
    "draw_panel",
    "run_monte_carlo",
    "coverage_curve",
    "parse_methods",
]

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

ORACLE = "ORACLE"
SEMI_ORACLE = "SEMI_ORACLE"
ALL_METHODS = (ORACLE, SEMI_ORACLE) + tuple(m.value for m in Method)


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replication_seed(master_seed: int, r: int) -> int:
    """The ``r``-th output of a splitmix64 stream started at ``master_seed``."""
    return splitmix64((master_seed + _GOLDEN * r) & MASK64)


# ---------------------------------------------------------------------------
# DGP specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedJ:
    J: int
    kind = "fixed"

    def __post_init__(self):
        if self.J < 2:
            raise ValueError("fixed J must be at least 2")


@dataclass(frozen=True)
class PoissonJ:
    mean: float
    floor: int = 2
    kind = "poisson"

    def __post_init__(self):
        if self.mean <= 0 or self.floor < 2:
            raise ValueError("Poisson J needs mean > 0 and floor >= 2")


@dataclass(frozen=True)
class CorrelatedPairJ:
    kind = "correlated_pair"


@dataclass(frozen=True)
class NormalTheta:
    mean: float = 0.0
    sd: float = 1.0
    kind = "normal"

    @property
    def variance(self) -> float:
        return self.sd**2


@dataclass(frozen=True)
class ChiSq1:
    kind = "chisq1"


@dataclass(frozen=True)
class UniformTwoPoint:
    lo: float
    hi: float
    kind = "uniform_two_point"


@dataclass(frozen=True)
class CorrelatedPairSigma2:
    gamma: float
    kind = "correlated_pair"


_J_LAWS = {c.kind: c for c in (FixedJ, PoissonJ, CorrelatedPairJ)}
_SIGMA2_LAWS = {c.kind: c for c in (ChiSq1, UniformTwoPoint, CorrelatedPairSigma2)}
NOISE_FAMILIES = ("normal", "gamma_centered")
DEPENDENCE = ("independent", "j_sigma_correlated")


def _law_to_dict(law) -> dict:
    d = {"kind": law.kind}
    d.update({k: getattr(law, k) for k in law.__dataclass_fields__})
    return d


def _law_from_dict(d: dict, table: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in table:
        raise ValueError(f"unknown law kind {kind!r}; expected one of {sorted(table)}")
    return table[kind](**d)


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process for one Monte Carlo design.

    Unit effects ``theta_i`` come from ``theta_law``; noise variances and
    measurement counts from ``sigma2_law`` and ``j_law`` (drawn jointly when
    ``dependence == "j_sigma_correlated"``). Measurements are
    ``X_ij = theta_i + sigma_i * z_ij`` with ``z`` standard normal or a
    centred, unit-variance chi-square(2) variable, and the outcome is
    ``Y_i = alpha + beta * theta_i + u_i`` with ``u_i ~ N(0, u_sd^2)``.
    """

    n: int
    j_law: FixedJ | PoissonJ | CorrelatedPairJ
    sigma2_law: ChiSq1 | UniformTwoPoint | CorrelatedPairSigma2
    theta_law: NormalTheta = NormalTheta()
    noise_family: str = "normal"
    alpha: float = 0.0
    beta: float = 1.0
    u_sd: float = 1.0
    dependence: str = "independent"

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be at least 3 (the outcome regression has two coefficients)")
        if self.noise_family not in NOISE_FAMILIES:
            raise ValueError(f"noise_family must be one of {NOISE_FAMILIES}")
        if self.dependence not in DEPENDENCE:
            raise ValueError(f"dependence must be one of {DEPENDENCE}")
        paired = (isinstance(self.j_law, CorrelatedPairJ), isinstance(self.sigma2_law, CorrelatedPairSigma2))
        if self.dependence == "j_sigma_correlated":
            if not all(paired):
                raise ValueError("j_sigma_correlated needs correlated_pair laws for both J and sigma2")
            if not self.sigma2_law.gamma > 0:
                raise ValueError("correlated pair needs gamma > 0")
            if math.floor(2.0 / 3.0 * math.sqrt(self.n)) < 2:
                raise ValueError("correlated pair needs n large enough that floor(2/3 sqrt(n)) >= 2")
        elif any(paired):
            raise ValueError("correlated_pair laws require dependence = 'j_sigma_correlated'")
        if self.u_sd < 0 or self.theta_law.sd <= 0:
            raise ValueError("standard deviations must be positive")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "j_law": _law_to_dict(self.j_law),
            "theta_law": _law_to_dict(self.theta_law),
            "sigma2_law": _law_to_dict(self.sigma2_law),
            "noise_family": self.noise_family,
            "alpha": self.alpha,
            "beta": self.beta,
            "u_law": {"kind": "normal", "sd": self.u_sd},
            "dependence": self.dependence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        d = dict(d)
        u = d.pop("u_law", {"kind": "normal", "sd": 1.0})
        if u.get("kind", "normal") != "normal":
            raise ValueError("only normal u_law is supported")
        theta = d.pop("theta_law", {"kind": "normal"})
        if theta.get("kind", "normal") != "normal":
            raise ValueError("only normal theta_law is supported")
        return cls(
            n=int(d.pop("n")),
            j_law=_law_from_dict(d.pop("j_law"), _J_LAWS),
            sigma2_law=_law_from_dict(d.pop("sigma2_law"), _SIGMA2_LAWS),
            theta_law=NormalTheta(**{k: v for k, v in theta.items() if k != "kind"}),
            u_sd=float(u.get("sd", 1.0)),
            **d,
        )

    def correlated_pairs(self) -> tuple[tuple[float, int], tuple[float, int]]:
        """The two (sigma2, J) support points of the correlated design."""
        V = self.theta_law.variance
        g = self.sigma2_law.gamma
        rn = math.sqrt(self.n)
        return (12 * g * V, math.floor(2 * rn)), (8 * g * V, math.floor(2.0 / 3.0 * rn))


@dataclass(frozen=True)
class Truth:
    theta: np.ndarray
    sigma2: np.ndarray
    J: np.ndarray


def draw_panel(spec: DgpSpec, seed: int) -> tuple[PanelData, Truth]:
    """Draw one panel (and the latent truth behind it) from ``spec``."""
    rng = np.random.default_rng(seed & MASK64)
    n = spec.n
    theta = rng.normal(spec.theta_law.mean, spec.theta_law.sd, n)

    if spec.dependence == "j_sigma_correlated":
        (s_hi, j_hi), (s_lo, j_lo) = spec.correlated_pairs()
        high = rng.random(n) < 0.5
        sigma2 = np.where(high, s_hi, s_lo)
        J = np.where(high, j_hi, j_lo).astype(np.int64)
    else:
        law = spec.sigma2_law
        if isinstance(law, ChiSq1):
            sigma2 = rng.chisquare(1.0, n)
        else:
            sigma2 = np.where(rng.random(n) < 0.5, law.lo, law.hi).astype(np.float64)
        jl = spec.j_law
        if isinstance(jl, FixedJ):
            J = np.full(n, jl.J, dtype=np.int64)
        else:
            J = np.maximum(rng.poisson(jl.mean, n), jl.floor).astype(np.int64)

    u = rng.normal(0.0, spec.u_sd, n)
    total = int(J.sum())
    if spec.noise_family == "normal":
        z = rng.standard_normal(total)
    else:
        z = (rng.chisquare(2.0, total) - 2.0) / 2.0
    x = np.repeat(theta, J) + np.repeat(np.sqrt(sigma2), J) * z
    y = spec.alpha + spec.beta * theta + u
    panel = PanelData([f"u{i}" for i in range(n)], x, J, y)
    return panel, Truth(theta, sigma2, J)


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------


def parse_methods(methods: Iterable[str] | str) -> tuple[str, ...]:
    if isinstance(methods, str):
        methods = methods.split(",")
    out = []
    for m in methods:
        m = m.strip().upper().replace("-", "_")
        if not m:
            continue
        if m == "CW":
            m = "CW_BC"
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {', '.join(ALL_METHODS)}")
        if m not in out:
            out.append(m)
    if not out:
        raise ValueError("no methods given")
    return tuple(out)


def _semi_oracle(p: PanelData, var_theta: float) -> np.ndarray:
    # infeasible benchmark: true Var(theta) in place of V_hat
    xbar_i = unit_means(p)
    c = var_theta / (sigma2_within_units(p) / p.sizes + var_theta)
    return c * xbar_i + (1.0 - c) * xbar_i.mean()


# per-replication record columns
_BETA, _LO, _HI, _MSE_THETA = range(4)


def _replicate(spec: DgpSpec, methods: Sequence[str], level: float, seed: int) -> np.ndarray:
    panel, truth = draw_panel(spec, seed)
    out = np.full((len(methods), 4), np.nan)
    for k, m in enumerate(methods):
        try:
            if m == ORACLE:
                theta_hat = truth.theta
            elif m == SEMI_ORACLE:
                theta_hat = _semi_oracle(panel, spec.theta_law.variance)
            else:
                theta_hat = estimate(panel, m).estimates
            fit = ols_fit(theta_hat, panel.y)
            rep = make_report(fit, ehw_omega(theta_hat, fit.residuals), level)
        except (EstimatorUndefinedError, SingularDesignError):
            continue
        out[k] = (rep.beta_hat, rep.ci_low, rep.ci_high, np.mean((theta_hat - truth.theta) ** 2))
    return out


def _run_chunk(spec, methods, level, master_seed, start, stop) -> np.ndarray:
    return np.stack(
        [_replicate(spec, methods, level, replication_seed(master_seed, r)) for r in range(start, stop)]
    )


def _run_all(spec, methods, S, level, master_seed, workers) -> np.ndarray:
    if workers <= 1 or S < 2:
        return _run_chunk(spec, methods, level, master_seed, 0, S)
    n_chunks = min(S, workers * 4)
    bounds = np.linspace(0, S, n_chunks + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_run_chunk, spec, methods, level, master_seed, int(a), int(b))
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        return np.concatenate([f.result() for f in futures])


@dataclass(frozen=True)
class MethodStats:
    sqrt_n_mse_beta: float
    coverage_pct: float
    abs_bias: float
    mse_theta: float
    mean_abs_error: float
    mean_beta: float
    sd_beta: float
    successful_reps: int
    failed_reps: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _aggregate(records: np.ndarray, n: int, beta: float) -> MethodStats:
    S = records.shape[0]
    ok = ~np.isnan(records[:, _BETA])
    r = records[ok]
    s = r.shape[0]
    if s == 0:
        nan = math.nan
        return MethodStats(nan, nan, nan, nan, nan, nan, nan, 0, S)
    b = r[:, _BETA]
    err = b - beta
    covered = (r[:, _LO] <= beta) & (beta <= r[:, _HI])
    return MethodStats(
        sqrt_n_mse_beta=math.sqrt(n * float(np.mean(err * err))),
        coverage_pct=100.0 * int(covered.sum()) / s,
        abs_bias=abs(float(np.mean(b)) - beta),
        mse_theta=float(np.mean(r[:, _MSE_THETA])),
        mean_abs_error=float(np.mean(np.abs(err))),
        mean_beta=float(np.mean(b)),
        sd_beta=float(np.std(b, ddof=1)) if s > 1 else 0.0,
        successful_reps=s,
        failed_reps=S - s,
    )


TABLE_COLUMNS = (
    "sqrt_n_mse_beta",
    "coverage_pct",
    "abs_bias",
    "mse_theta",
    "mean_abs_error",
    "successful_reps",
    "failed_reps",
)


@dataclass
class SimReport:
    spec: DgpSpec
    S: int
    master_seed: int
    level: float
    stats: dict[str, MethodStats]
    curves: dict[str, list[tuple[float, float]]] | None = None
    replications: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def betas(self, method: str) -> np.ndarray:
        """Per-replication slope estimates (NaN where the method failed)."""
        return self.replications[method][:, _BETA]

    def intervals(self, method: str) -> np.ndarray:
        return self.replications[method][:, [_LO, _HI]]

    def to_dict(self) -> dict:
        d = {
            "schema_version": 1,
            "spec": self.spec.to_dict(),
            "S": self.S,
            "master_seed": self.master_seed,
            "level": self.level,
            "methods": {m: s.to_dict() for m, s in self.stats.items()},
        }
        if self.curves is not None:
            d["curves"] = {m: [[b, c] for b, c in pts] for m, pts in self.curves.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("method",) + TABLE_COLUMNS)
        for m, s in self.stats.items():
            w.writerow([m] + [repr(getattr(s, c)) for c in TABLE_COLUMNS])
        return buf.getvalue()

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["beta", "method", "coverage"])
        for m, pts in (self.curves or {}).items():
            for b, c in pts:
                w.writerow([repr(b), m, repr(c)])
        return buf.getvalue()

    def format_table(self) -> str:
        """Aligned text table: sqrt(n*MSE), coverage %, bias, MSE(theta), then extras."""
        head = ("method", "sqrt(n*MSE(b))", "coverage %", "bias", "MSE(theta)", "mean|err|", "failed")
        rows = [head]
        for m, s in self.stats.items():
            rows.append(
                (
                    m,
                    f"{s.sqrt_n_mse_beta:.3f}",
                    f"{s.coverage_pct:.2f}",
                    f"{s.abs_bias:.3f}",
                    f"{s.mse_theta:.3f}",
                    f"{s.mean_abs_error:.3f}",
                    str(s.failed_reps),
                )
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = []
        for r in rows:
            cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
            lines.append("  ".join(cells))
        return "\n".join(lines)


def run_monte_carlo(
    spec: DgpSpec,
    methods: Iterable[str] | str,
    S: int,
    level: float = 0.05,
    master_seed: int = 0,
    workers: int = 1,
) -> SimReport:
    """Run ``S`` replications of ``spec`` and aggregate per-method metrics.

    Replications in which a method is undefined (for example a non-positive
    variance estimate) are dropped from that method's aggregates and counted
    in ``failed_reps``.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    methods = parse_methods(methods)
    master_seed = int(master_seed) & MASK64
    records = _run_all(spec, methods, S, level, master_seed, workers)
    reps = {m: records[:, k, :] for k, m in enumerate(methods)}
    stats = {m: _aggregate(reps[m], spec.n, spec.beta) for m in methods}
    return SimReport(spec, S, master_seed, level, stats, None, reps)


def _curve(records: np.ndarray, grid: np.ndarray) -> list[tuple[float, float]]:
    r = records[~np.isnan(records[:, _BETA])]
    if r.shape[0] == 0:
        return [(float(b), math.nan) for b in grid]
    inside = (r[:, _LO][:, None] <= grid[None, :]) & (grid[None, :] <= r[:, _HI][:, None])
    cov = inside.mean(axis=0)
    return [(float(b), float(c)) for b, c in zip(grid, cov)]


def coverage_curve(
    spec: DgpSpec,
    methods: Iterable[str] | str,
    beta_grid: Sequence[float],
    S: int,
    level: float = 0.05,
    master_seed: int = 0,
    workers: int = 1,
) -> SimReport:
    """Monte Carlo run plus, per method, the share of intervals containing each grid value."""
    grid = np.asarray(list(beta_grid), dtype=np.float64)
    if grid.size == 0:
        raise ValueError("beta_grid must be nonempty")
    report = run_monte_carlo(spec, methods, S, level, master_seed, workers)
    report.curves = {m: _curve(report.replications[m], grid) for m in report.stats}
    return report
