import functools
import json
from importlib import resources

import numpy as np
import pytest

from shrinkreg.panel import PanelData, Unit
from shrinkreg.simulation import DgpSpec, coverage_curve, run_monte_carlo
from shrinkreg.cli import parse_grid


def make_panel(groups, y=None, **kw) -> PanelData:
    """Panel from a list of measurement lists; outcomes default to 0, 1, 2, ..."""
    y = list(range(len(groups))) if y is None else y
    units = [Unit(f"u{i}", tuple(map(float, g)), float(yi)) for i, (g, yi) in enumerate(zip(groups, y))]
    return PanelData.from_units(units)


@pytest.fixture
def two_unit():
    # the hand-worked two-unit example: {[0,2],[2,4]}, Y = (1, 2)
    return make_panel([[0, 2], [2, 4]], y=[1.0, 2.0])


def load_preset(name: str) -> dict:
    path = resources.files("shrinkreg") / "presets" / f"{name}.json"
    return json.loads(path.read_text())


@functools.lru_cache(maxsize=None)
def preset_report(name: str, workers: int = 1):
    """Run a bundled preset once per test session (Monte Carlo runs are shared)."""
    cfg = load_preset(name)
    spec = DgpSpec.from_dict(cfg["dgp"])
    if cfg["command"] == "coverage":
        return coverage_curve(
            spec, cfg["methods"], parse_grid(cfg["grid"]), cfg["reps"], cfg["level"], cfg["seed"], workers
        )
    return run_monte_carlo(spec, cfg["methods"], cfg["reps"], cfg["level"], cfg["seed"], workers)


@pytest.fixture(scope="session")
def preset():
    return preset_report


def random_panel(rng: np.random.Generator, n: int, jmax: int, jmin: int = 2) -> PanelData:
    groups = [rng.normal(rng.normal(), rng.uniform(0.2, 2.0), rng.integers(jmin, jmax + 1)) for _ in range(n)]
    return make_panel(groups, y=list(rng.normal(size=n)))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
