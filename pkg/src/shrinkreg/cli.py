"""Command-line interface: ``shrinkreg {estimate,simulate,coverage}``.

Exit codes
----------
0  success
1  usage or configuration error (unknown flags, bad values)
2  panel ingestion error
3  an estimator is undefined on the panel (e.g. non-positive V_hat)
4  every replication failed for some requested method
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .panel import PanelError, load_panel
from .regression import SingularDesignError, regress, reports_to_csv
from .shrinkage import EstimatorUndefinedError, Method, estimate, kappa_hat, variance_components
from .simulation import MASK64, DgpSpec, coverage_curve, parse_methods, run_monte_carlo

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INGEST = 2
EXIT_UNDEFINED = 3
EXIT_ALL_FAILED = 4

SCHEMA_VERSION = 1
SEED_ENV = "SHRINKREG_SEED"
DEFAULT_GRID = "0.5:1.5:0.05"
PRESETS = (
    "fig1_normal",
    "fig1_gamma",
    "table1_n50",
    "table1_n225",
    "table1_n1000",
    "fig2_independent",
    "fig2_correlated",
)


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    command: str
    methods: tuple[str, ...]
    level: float = 0.05
    seed: int = 0
    S: int = 3000
    output_dir: Path = Path(".")
    format: str = "both"
    workers: int = 1
    measurements: Path | None = None
    outcomes: Path | None = None
    vce: str = "ehw"
    dgp: DgpSpec | None = None
    grid: list[float] = field(default_factory=list)


def parse_grid(text: str) -> list[float]:
    """``"LO:HI:STEP"`` to an inclusive, evenly spaced grid."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"grid must look like LO:HI:STEP, got {text!r}") from None
    if not (step > 0 and hi >= lo):
        raise ConfigError("grid needs STEP > 0 and HI >= LO")
    k = int(math.floor((hi - lo) / step + 1e-9))
    return [round(lo + i * step, 12) for i in range(k + 1)]


def _parse_seed(value) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {value!r}") from None
    if not 0 <= seed <= MASK64:
        raise ConfigError(f"seed out of range for an unsigned 64-bit integer: {seed}")
    return seed


def resolve_config_path(name: str) -> Path:
    """A config file path, or the name of a bundled preset (with or without ``.json``)."""
    path = Path(name)
    if path.exists():
        return path
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    if stem in PRESETS:
        return Path(str(resources.files("shrinkreg") / "presets" / f"{stem}.json"))
    raise ConfigError(f"config not found: {name} (bundled presets: {', '.join(PRESETS)})")


def load_config_file(name: str) -> tuple[dict, Path]:
    path = resolve_config_path(name)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    return data, path.parent


def build_config(args: argparse.Namespace) -> RunConfig:
    file_cfg: dict = {}
    base = Path(".")
    if args.config:
        file_cfg, base = load_config_file(args.config)
        cmd = file_cfg.get("command")
        if cmd is not None and cmd != args.command and not (
            {cmd, args.command} <= {"simulate", "coverage"}
        ):
            raise ConfigError(f"config is for command {cmd!r}, not {args.command!r}")

    def pick(flag, key, default=None):
        value = getattr(args, flag, None)
        if value is not None:
            return value
        return file_cfg.get(key, default)

    default_methods = "FE,HO,HE,CW_BC,CW_IV" if args.command == "estimate" else "ORACLE,HE,CW_BC,FE"
    methods_raw = pick("methods", "methods", default_methods)
    try:
        methods = parse_methods(methods_raw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    level = float(pick("level", "level", 0.05))
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    fmt = pick("format", "format", "both")
    if fmt not in ("json", "csv", "both"):
        raise ConfigError(f"format must be json, csv or both, got {fmt!r}")

    cfg = RunConfig(
        command=args.command,
        methods=methods,
        level=level,
        output_dir=Path(pick("out", "out", ".")),
        format=fmt,
    )

    if args.command == "estimate":
        bad = [m for m in methods if m not in Method.__members__]
        if bad:
            raise ConfigError(f"methods not available for estimate: {', '.join(bad)}")
        m_path = pick("measurements", "measurements")
        o_path = pick("outcomes", "outcomes")
        if not (m_path and o_path):
            raise ConfigError("estimate needs --measurements and --outcomes (or a config naming them)")
        cfg.measurements = Path(m_path) if args.measurements else base / m_path
        cfg.outcomes = Path(o_path) if args.outcomes else base / o_path
        cfg.vce = pick("vce", "vce", "ehw")
        return cfg

    seed = getattr(args, "seed", None)
    if seed is None:
        seed = file_cfg.get("seed")
    if seed is None:
        seed = os.environ.get(SEED_ENV, 0)
    cfg.seed = _parse_seed(seed)
    cfg.S = int(pick("reps", "reps", 3000))
    if cfg.S < 1:
        raise ConfigError("--reps must be at least 1")
    workers = pick("workers", "workers", os.cpu_count() or 1)
    cfg.workers = max(1, int(workers))
    if "dgp" not in file_cfg:
        raise ConfigError(f"{args.command} needs --config with a 'dgp' block (or a preset name)")
    try:
        cfg.dgp = DgpSpec.from_dict(file_cfg["dgp"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid dgp block: {exc}") from None
    if args.command == "coverage":
        cfg.grid = parse_grid(pick("grid", "grid", DEFAULT_GRID))
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _want(cfg: RunConfig, kind: str) -> bool:
    return cfg.format in (kind, "both")


def cmd_estimate(cfg: RunConfig) -> int:
    try:
        panel = load_panel(cfg.measurements, cfg.outcomes)
    except PanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    if cfg.vce == "cluster" and panel.clusters is None:
        print("error: --vce cluster needs a 'cluster' column in the outcomes file", file=sys.stderr)
        return EXIT_INGEST

    results = []
    reports = []
    try:
        for m in cfg.methods:
            res = estimate(panel, m)
            rep = regress(
                res.estimates,
                panel.y,
                controls=panel.controls if panel.n_controls else None,
                clusters=panel.clusters if cfg.vce == "cluster" else None,
                level=cfg.level,
                method=m,
            )
            results.append(res)
            reports.append(rep)
    except EstimatorUndefinedError as exc:
        print(f"error: {m}: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except SingularDesignError as exc:
        print(f"error: {m}: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED

    try:
        components = variance_components(panel).to_dict()
    except EstimatorUndefinedError:
        # FE-only panels may contain J_i = 1 units
        components = {"sigma2_i": None, "sigma2_pooled": None, "sigma2_theta": None, "v_hat": None}
        components["kappa_hat"] = kappa_hat(panel)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with (out / "shrinkage.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "method", "weight", "theta_hat"])
        for res in results:
            for uid, wt, th in zip(panel.ids, res.weights, res.estimates):
                w.writerow([uid, res.method.value, repr(float(wt)), repr(float(th))])
    (out / "variance_components.json").write_text(json.dumps(components, indent=2) + "\n", encoding="utf-8")
    if _want(cfg, "json"):
        payload = [r.to_dict() for r in reports]
        (out / "regression.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if _want(cfg, "csv"):
        (out / "regression.csv").write_text(reports_to_csv(reports), encoding="utf-8")

    print(f"n = {panel.n}, kappa_hat = {components['kappa_hat']:.4f}")
    for r in reports:
        print(
            f"{r.method:<6} beta = {r.beta_hat: .4f}  se = {r.se_beta:.4f}  "
            f"CI = [{r.ci_low: .4f}, {r.ci_high: .4f}]  p = {r.p_value:.4f}  ({r.variance_estimator})"
        )
    return EXIT_OK


def _write_sim(cfg: RunConfig, report) -> int:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if _want(cfg, "json"):
        (out / "sim_report.json").write_text(report.to_json(), encoding="utf-8")
    if _want(cfg, "csv"):
        (out / "sim_table.csv").write_text(report.table_csv(), encoding="utf-8")
        if report.curves is not None:
            (out / "coverage_curve.csv").write_text(report.curves_csv(), encoding="utf-8")
    print(report.format_table())
    failed = [m for m, s in report.stats.items() if s.successful_reps == 0]
    if failed:
        print(f"error: every replication failed for {', '.join(failed)}", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    report = run_monte_carlo(cfg.dgp, cfg.methods, cfg.S, cfg.level, cfg.seed, cfg.workers)
    return _write_sim(cfg, report)


def cmd_coverage(cfg: RunConfig) -> int:
    report = coverage_curve(cfg.dgp, cfg.methods, cfg.grid, cfg.S, cfg.level, cfg.seed, cfg.workers)
    return _write_sim(cfg, report)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run config or bundled preset name")
    p.add_argument("--methods", metavar="LIST", help="comma-separated methods, e.g. fe,he,cw_bc")
    p.add_argument("--level", type=float, metavar="F", help="significance level of the intervals (default 0.05)")
    p.add_argument("--out", metavar="DIR", help="output directory (default: current directory)")
    p.add_argument("--format", choices=("json", "csv", "both"), help="report format (default both)")


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", metavar="U64", help=f"master seed (fallback: ${SEED_ENV}, then 0)")
    p.add_argument("--reps", type=int, metavar="S", help="number of replications (default 3000)")
    p.add_argument("--workers", type=int, metavar="N", help="worker processes (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="shrinkreg",
        description="Shrinkage estimates of unit effects and downstream regression inference.",
        epilog="Exit codes: 0 ok, 1 usage, 2 ingestion, 3 estimator undefined, 4 all replications failed.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate unit effects from CSV files and regress Y on them")
    _common(p)
    p.add_argument("--measurements", metavar="PATH", help="long CSV with header unit_id,x")
    p.add_argument("--outcomes", metavar="PATH", help="CSV with header unit_id,y[,cluster][,c1,...]")
    p.add_argument("--vce", choices=("ehw", "cluster"), help="variance estimator (default ehw)")

    p = sub.add_parser("simulate", help="Monte Carlo bias / MSE / coverage table")
    _common(p)
    _sim_flags(p)

    p = sub.add_parser("coverage", help="Monte Carlo coverage curves over a grid of beta values")
    _common(p)
    _sim_flags(p)
    p.add_argument("--grid", metavar="LO:HI:STEP", help=f"beta grid (default {DEFAULT_GRID})")
    return parser


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "coverage": cmd_coverage}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return COMMANDS[cfg.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
