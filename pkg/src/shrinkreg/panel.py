"""Grouped measurement panels: units observed through repeated noisy measurements.

A panel holds, for each unit ``i``, the measurements ``X_{i,1..J_i}``, a scalar
outcome ``Y_i``, an optional cluster label and an optional vector of controls.
Internally everything is stored as flat read-only numpy arrays so that the
estimators (and the Monte Carlo engine, which builds thousands of panels) can
work with segment reductions instead of Python loops.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PanelError",
    "Unit",
    "PanelData",
    "load_panel",
    "write_panel",
    "unit_means",
    "grand_mean",
]


class PanelError(ValueError):
    """Raised for malformed panels and ingestion failures."""


@dataclass(frozen=True)
class Unit:
    """One unit with its ordered measurements and outcome."""

    id: str
    measurements: tuple[float, ...]
    outcome: float
    cluster: str | None = None
    controls: tuple[float, ...] = ()

    @property
    def J(self) -> int:
        return len(self.measurements)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class PanelData:
    """Immutable panel of ``n >= 2`` units.

    Parameters
    ----------
    ids : sequence of str
        Unique unit identifiers.
    values : array_like
        All measurements concatenated unit by unit, in stored order.
    sizes : array_like of int
        Number of measurements ``J_i`` for each unit; ``sum(sizes) == len(values)``.
    y : array_like
        Outcome per unit.
    clusters : sequence of str, optional
        Cluster label per unit.
    controls : array_like, optional
        ``(n, k)`` matrix of controls; ``k`` may be zero.
    """

    __slots__ = ("ids", "values", "sizes", "offsets", "y", "clusters", "controls")

    def __init__(
        self,
        ids: Sequence[str],
        values,
        sizes,
        y,
        clusters: Sequence[str] | None = None,
        controls=None,
    ):
        ids = tuple(str(i) for i in ids)
        values = np.array(values, dtype=np.float64).ravel()
        sizes = np.array(sizes, dtype=np.int64).ravel()
        y = np.array(y, dtype=np.float64).ravel()
        n = len(ids)

        if n < 2:
            raise PanelError(f"a panel needs at least 2 units, got n={n}")
        if len(set(ids)) != n:
            raise PanelError("unit ids must be unique")
        if sizes.shape[0] != n or y.shape[0] != n:
            raise PanelError("ids, sizes and y must have one entry per unit")
        if np.any(sizes < 1):
            raise PanelError("every unit needs at least one measurement")
        if int(sizes.sum()) != values.shape[0]:
            raise PanelError("sizes do not add up to the number of measurements")
        if not np.all(np.isfinite(values)):
            raise PanelError("measurements must be finite")
        if not np.all(np.isfinite(y)):
            raise PanelError("outcomes must be finite")

        if clusters is not None:
            clusters = tuple(str(c) for c in clusters)
            if len(clusters) != n:
                raise PanelError("one cluster label per unit is required")
        if controls is None:
            controls = np.empty((n, 0))
        else:
            controls = np.array(controls, dtype=np.float64)
            if controls.ndim == 1:
                controls = controls.reshape(n, -1) if controls.size else np.empty((n, 0))
            if controls.shape[0] != n:
                raise PanelError("controls must have one row per unit")
            if not np.all(np.isfinite(controls)):
                raise PanelError("controls must be finite")

        offsets = np.zeros(n, dtype=np.int64)
        np.cumsum(sizes[:-1], out=offsets[1:])

        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "sizes", _readonly(sizes))
        object.__setattr__(self, "offsets", _readonly(offsets))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "controls", _readonly(controls))

    def __setattr__(self, name, value):
        raise AttributeError("PanelData is immutable")

    @classmethod
    def from_units(cls, units: Iterable[Unit]) -> "PanelData":
        units = list(units)
        if not units:
            raise PanelError("a panel needs at least 2 units, got n=0")
        for u in units:
            if len(u.measurements) == 0:
                raise PanelError(f"unit {u.id!r} has no measurements")
        k = {len(u.controls) for u in units}
        if len(k) > 1:
            raise PanelError("all units must carry the same number of controls")
        has_cluster = [u.cluster is not None for u in units]
        if any(has_cluster) and not all(has_cluster):
            raise PanelError("cluster labels must be given for all units or none")
        return cls(
            ids=[u.id for u in units],
            values=[x for u in units for x in u.measurements],
            sizes=[len(u.measurements) for u in units],
            y=[u.outcome for u in units],
            clusters=[u.cluster for u in units] if all(has_cluster) else None,
            controls=[list(u.controls) for u in units],
        )

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_controls(self) -> int:
        return self.controls.shape[1]

    @property
    def units(self) -> list[Unit]:
        out = []
        for i, uid in enumerate(self.ids):
            out.append(
                Unit(
                    id=uid,
                    measurements=tuple(float(x) for x in self.measurements(i)),
                    outcome=float(self.y[i]),
                    cluster=None if self.clusters is None else self.clusters[i],
                    controls=tuple(float(c) for c in self.controls[i]),
                )
            )
        return out

    def measurements(self, i: int) -> np.ndarray:
        start = self.offsets[i]
        return self.values[start : start + self.sizes[i]]

    def unit_index(self) -> np.ndarray:
        """Unit position of every entry of ``values``."""
        return np.repeat(np.arange(self.n), self.sizes)

    def __eq__(self, other):
        if not isinstance(other, PanelData):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.clusters == other.clusters
            and np.array_equal(self.sizes, other.sizes)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.controls, other.controls)
        )

    __hash__ = None

    def __repr__(self):
        return f"PanelData(n={self.n}, measurements={self.values.shape[0]}, controls={self.n_controls})"


def unit_means(p: PanelData) -> np.ndarray:
    """Arithmetic mean of each unit's measurements."""
    return np.add.reduceat(p.values, p.offsets) / p.sizes


def grand_mean(p: PanelData) -> float:
    """Unweighted mean of the unit means (every unit counts once, whatever its J_i)."""
    return float(np.mean(unit_means(p)))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _parse_float(cell: str, where: str) -> float:
    try:
        value = float(cell)
    except (TypeError, ValueError):
        raise PanelError(f"non-numeric cell {cell!r} at {where}") from None
    if not math.isfinite(value):
        raise PanelError(f"non-finite value {cell!r} at {where}")
    return value


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise PanelError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise PanelError(f"empty file: {path}")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise PanelError(f"no data rows in {path}")
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise PanelError(f"{path.name}:{lineno}: expected {len(header)} cells, got {len(row)}")
    return header, body


def load_panel(measurements_path, outcomes_path) -> PanelData:
    """Read a panel from a long measurements CSV and a wide outcomes CSV.

    ``measurements_path`` has header ``unit_id,x`` with one row per measurement;
    ``outcomes_path`` has header ``unit_id,y[,cluster][,c1,c2,...]`` with one row
    per unit. Units are ordered by first appearance in the outcomes file and keep
    their measurements in file order.
    """
    m_header, m_rows = _read_rows(Path(measurements_path))
    if m_header != ["unit_id", "x"]:
        raise PanelError(f"measurements header must be 'unit_id,x', got {','.join(m_header)!r}")
    o_header, o_rows = _read_rows(Path(outcomes_path))
    if o_header[:2] != ["unit_id", "y"]:
        raise PanelError("outcomes header must start with 'unit_id,y'")
    rest = o_header[2:]
    has_cluster = bool(rest) and rest[0] == "cluster"
    control_cols = rest[1:] if has_cluster else rest
    expected = [f"c{k}" for k in range(1, len(control_cols) + 1)]
    if control_cols != expected:
        raise PanelError(
            f"control columns must be named c1..c{len(control_cols)} and contiguous, got {control_cols}"
        )

    xs: dict[str, list[float]] = {}
    for lineno, (uid, cell) in enumerate(m_rows, start=2):
        uid = uid.strip()
        if not uid:
            raise PanelError(f"measurements:{lineno}: missing unit_id")
        xs.setdefault(uid, []).append(_parse_float(cell, f"measurements:{lineno}"))

    units = []
    seen = set()
    for lineno, row in enumerate(o_rows, start=2):
        uid = row[0].strip()
        if not uid:
            raise PanelError(f"outcomes:{lineno}: missing unit_id")
        if uid in seen:
            raise PanelError(f"duplicate unit_id {uid!r} in outcomes file")
        seen.add(uid)
        if uid not in xs:
            raise PanelError(f"unit without measurements: {uid!r}")
        y = _parse_float(row[1], f"outcomes:{lineno}")
        cluster = row[2].strip() if has_cluster else None
        first_control = 3 if has_cluster else 2
        controls = tuple(
            _parse_float(c, f"outcomes:{lineno}") for c in row[first_control:]
        )
        units.append(Unit(uid, tuple(xs[uid]), y, cluster, controls))

    orphans = [uid for uid in xs if uid not in seen]
    if orphans:
        raise PanelError(f"unit without outcome: {orphans[0]!r}")
    return PanelData.from_units(units)


def write_panel(p: PanelData, measurements_path, outcomes_path) -> None:
    """Write ``p`` as the CSV pair read by :func:`load_panel`."""
    with Path(measurements_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "x"])
        for i, uid in enumerate(p.ids):
            for x in p.measurements(i):
                w.writerow([uid, repr(float(x))])
    header = ["unit_id", "y"]
    if p.clusters is not None:
        header.append("cluster")
    header += [f"c{k}" for k in range(1, p.n_controls + 1)]
    with Path(outcomes_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, uid in enumerate(p.ids):
            row = [uid, repr(float(p.y[i]))]
            if p.clusters is not None:
                row.append(p.clusters[i])
            row += [repr(float(c)) for c in p.controls[i]]
            w.writerow(row)
