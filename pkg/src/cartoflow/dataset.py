"""Station demand ingestion, grid coarse-graining and multi-resolution inputs.

Hours are 1-based throughout (``t = 1..T``), matching the CSV schema; the
demand arrays themselves are ordinary 0-based numpy arrays, so hour ``t``
lives at column ``t - 1``.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InsufficientHistory,
    NegativeCount,
    NonUniformT,
    OutOfBounds,
    SchemaError,
    ValidationError,
    WindowOutOfRange,
)

CSV_COLUMNS = ("station_id", "kind", "timestamp_hour", "count", "x_km", "y_km")
KINDS = ("rental", "return")
RESOLUTIONS = ("h", "d", "w")


@dataclass
class StationRecord:
    station_id: str
    position: np.ndarray
    demand: np.ndarray
    kind: str = "rental"

    @property
    def T(self) -> int:
        return len(self.demand)


# ---------------------------------------------------------------------------
# CSV io


def ingest_csv(path) -> list[StationRecord]:
    """Read station-hour rows into one :class:`StationRecord` per (station, kind).

    Every (station, kind) must cover hours ``1..T`` exactly once with the
    same ``T``; there is no gap filling.
    """
    rows: dict[tuple[str, str], dict[int, int]] = defaultdict(dict)
    positions: dict[str, tuple[float, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                sid = row["station_id"].strip()
                kind = row["kind"].strip()
                hour = int(row["timestamp_hour"])
                count = int(row["count"])
                pos = (float(row["x_km"]), float(row["y_km"]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            if kind not in KINDS:
                raise SchemaError(f"{path}:{lineno}: kind must be rental or return, got {kind!r}")
            if hour < 1:
                raise SchemaError(f"{path}:{lineno}: timestamp_hour must be >= 1")
            if count < 0:
                raise NegativeCount(f"{path}:{lineno}: negative count {count}")
            if not all(np.isfinite(pos)):
                raise SchemaError(f"{path}:{lineno}: non-finite coordinates")
            if positions.setdefault(sid, pos) != pos:
                raise SchemaError(f"{path}:{lineno}: station {sid} changes position")
            if hour in rows[(sid, kind)]:
                raise NonUniformT(f"{path}:{lineno}: duplicate hour {hour} for {sid}/{kind}")
            rows[(sid, kind)][hour] = count
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    T = max(max(h) for h in rows.values())
    records = []
    for (sid, kind), hours in rows.items():
        if len(hours) != T:
            absent = sorted(set(range(1, T + 1)) - set(hours))
            raise NonUniformT(f"{sid}/{kind}: missing hours {absent[:5]}{'...' if len(absent) > 5 else ''}")
        demand = np.array([hours[t] for t in range(1, T + 1)], dtype=np.int64)
        records.append(StationRecord(sid, np.array(positions[sid]), demand, kind))
    return records


def write_csv(records: list[StationRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in records:
            x, y = (repr(float(v)) for v in rec.position)
            for t, c in enumerate(rec.demand, start=1):
                w.writerow([rec.station_id, rec.kind, t, int(c), x, y])


def select_kind(records: list[StationRecord], kind: str) -> list[StationRecord]:
    return [r for r in records if r.kind == kind]


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GridSpec:
    """``rows x cols`` cells anchored at ``origin`` (lower-left corner).

    Cell ``i = row * cols + col`` with row 0 at the bottom.  Cells are
    ``cell_size`` wide and ``cell_height`` tall (square when omitted).
    """

    rows: int
    cols: int
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    cell_height: float | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("grid needs at least one row and one column")
        if not self.cell_size > 0 or (self.cell_height is not None and not self.cell_height > 0):
            raise ValidationError("cell size must be positive")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def dy(self) -> float:
        return self.cell_size if self.cell_height is None else self.cell_height

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, y0, x0 + self.cols * self.cell_size, y0 + self.rows * self.dy)

    @classmethod
    def covering(cls, bbox, rows: int, cols: int) -> "GridSpec":
        """Divide ``bbox`` into ``rows x cols`` equal cells."""
        x0, y0, x1, y1 = (float(b) for b in bbox)
        return cls(rows, cols, (x1 - x0) / cols, (x0, y0), (y1 - y0) / rows)

    def cell_index(self, points) -> np.ndarray:
        """Cell of every point: half-open ``[left, right)`` bins, the far
        edges folded into the last row/column."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x0, y0, x1, y1 = self.extent
        tol_x, tol_y = 1e-9 * (x1 - x0), 1e-9 * (y1 - y0)
        bad = (
            (pts[:, 0] < x0 - tol_x) | (pts[:, 0] > x1 + tol_x)
            | (pts[:, 1] < y0 - tol_y) | (pts[:, 1] > y1 + tol_y)
        )
        if bad.any():
            raise OutOfBounds(f"{int(bad.sum())} station(s) lie outside the grid extent {self.extent}")
        col = np.clip(np.floor((pts[:, 0] - x0) / self.cell_size).astype(int), 0, self.cols - 1)
        row = np.clip(np.floor((pts[:, 1] - y0) / self.dy).astype(int), 0, self.rows - 1)
        return row * self.cols + col

    def to_dict(self) -> dict:
        d = asdict(self)
        d["origin"] = list(self.origin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["rows"]), int(d["cols"]), float(d["cell_size"]),
                   tuple(d.get("origin", (0.0, 0.0))), d.get("cell_height"))


@dataclass
class GridSeries:
    X: np.ndarray  # (n_cells, T) coarse-grained counts
    membership: list[np.ndarray]  # station indices per cell
    grid: GridSpec
    station_ids: list[str] = field(default_factory=list)
    cell_of_station: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def n_cells(self) -> int:
        return self.X.shape[0]

    def empty_cells(self) -> np.ndarray:
        return np.array([i for i, m in enumerate(self.membership) if len(m) == 0], dtype=int)

    def at(self, t) -> np.ndarray:
        """Cell demands at 1-based hour(s) ``t``."""
        return self.X[:, np.asarray(t) - 1]


def _positions_from(stations: list[StationRecord], coords) -> np.ndarray:
    if coords is None or (isinstance(coords, str) and coords == "original"):
        return np.array([s.position for s in stations], dtype=float).reshape(-1, 2)
    points = getattr(coords, "points", coords)
    ids = getattr(coords, "station_ids", None)
    points = np.asarray(points, dtype=float)
    if ids is not None:
        lookup = {sid: k for k, sid in enumerate(ids)}
        try:
            return points[[lookup[s.station_id] for s in stations]]
        except KeyError as exc:
            raise ValidationError(f"station {exc.args[0]} is not in the cartogram layout") from None
    if len(points) != len(stations):
        raise ValidationError("layout has a different number of points than stations")
    return points


def bin_to_grid(stations: list[StationRecord], grid: GridSpec, coords=None) -> GridSeries:
    """Sum station demands per grid cell.

    ``coords`` selects the positions used for binning: ``None``/``"original"``
    for the recorded coordinates, or a cartogram layout (matched by
    ``station_ids`` when it has them, else by order) / an ``(n, 2)`` array.
    """
    if not stations:
        raise ValidationError("no stations")
    T = stations[0].T
    if any(s.T != T for s in stations):
        raise NonUniformT("stations have different series lengths")
    pos = _positions_from(stations, coords)
    cells = grid.cell_index(pos)
    D = np.stack([np.asarray(s.demand, dtype=np.int64) for s in stations])
    X = np.zeros((grid.n_cells, T), dtype=np.int64)
    np.add.at(X, cells, D)
    membership = [np.flatnonzero(cells == i) for i in range(grid.n_cells)]
    return GridSeries(X, membership, grid, [s.station_id for s in stations], cells)


def write_grid_series(series: GridSeries, path) -> None:
    """``cell_index,t,X`` rows plus a ``<stem>.grid.json`` sidecar with the grid."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_index", "t", "X"])
        for i in range(series.n_cells):
            for t in range(series.T):
                w.writerow([i, t + 1, int(series.X[i, t])])
    sidecar = {
        "grid": series.grid.to_dict(),
        "T": series.T,
        "station_ids": series.station_ids,
        "cell_of_station": None if series.cell_of_station is None else series.cell_of_station.tolist(),
    }
    path.with_suffix(".grid.json").write_text(json.dumps(sidecar, indent=1))


def read_grid_series(path) -> GridSeries:
    path = Path(path)
    side = json.loads(path.with_suffix(".grid.json").read_text())
    grid = GridSpec.from_dict(side["grid"])
    T = int(side["T"])
    X = np.zeros((grid.n_cells, T), dtype=np.int64)
    seen = np.zeros_like(X, dtype=bool)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i, t = int(row["cell_index"]), int(row["t"])
            X[i, t - 1] = int(row["X"])
            seen[i, t - 1] = True
    if not seen.all():
        raise SchemaError(f"{path}: incomplete grid series")
    cos = side.get("cell_of_station")
    cos = None if cos is None else np.array(cos, dtype=int)
    membership = [np.flatnonzero(cos == i) if cos is not None else np.array([], dtype=int)
                  for i in range(grid.n_cells)]
    return GridSeries(X, membership, grid, list(side.get("station_ids", [])), cos)


# ---------------------------------------------------------------------------
# multi-resolution sequences


@dataclass(frozen=True)
class ResolutionConfig:
    """Lag spacing per resolution (hours) and how many lags to keep."""

    tau_h: int = 3
    tau_d: int = 3
    tau_w: int = 2
    dt_h: int = 1
    dt_d: int = 24
    dt_w: int = 168

    def __post_init__(self):
        if self.dt_d != 24 * self.dt_h or self.dt_w != 7 * self.dt_d:
            raise ValidationError("resolutions must satisfy dt_d = 24 dt_h and dt_w = 7 dt_d")
        if min(self.tau_h, self.tau_d, self.tau_w) < 1:
            raise ValidationError("truncation depths must be >= 1")

    def tau(self, r: str) -> int:
        return {"h": self.tau_h, "d": self.tau_d, "w": self.tau_w}[r]

    def step(self, r: str) -> int:
        return {"h": self.dt_h, "d": self.dt_d, "w": self.dt_w}[r]

    @property
    def taus(self) -> tuple[int, int, int]:
        return (self.tau_h, self.tau_d, self.tau_w)

    @property
    def history(self) -> int:
        """Deepest lag, in hours, reached back from ``t + dt_h``."""
        return max(self.tau(r) * self.step(r) for r in RESOLUTIONS)

    def first_pivot(self) -> int:
        return self.history - self.dt_h + 1


def _demand_matrix(X) -> np.ndarray:
    return X.X if isinstance(X, GridSeries) else np.asarray(X)


def build_sequence(X, cell: int, t: int, resolution: str, config: ResolutionConfig | None = None,
                   tau: int | None = None) -> np.ndarray:
    """Lags ``[X_i(t+dt_h-dt_r), ..., X_i(t+dt_h-tau*dt_r)]`` of one cell."""
    config = config or ResolutionConfig()
    Xm = _demand_matrix(X)
    T = Xm.shape[1]
    step = config.step(resolution)
    tau = config.tau(resolution) if tau is None else tau
    lead = t + config.dt_h
    if lead - tau * step < 1 or lead - step > T:
        raise WindowOutOfRange(
            f"pivot {t} with {tau} lags of {step} h needs hours {lead - tau * step}..{lead - step} of 1..{T}")
    hours = lead - step * np.arange(1, tau + 1)
    return Xm[cell, hours - 1].copy()


@dataclass
class InputTriplet:
    pivot_times: np.ndarray  # (B,)
    X_h: np.ndarray  # (B, MN, tau_h)
    X_d: np.ndarray
    X_w: np.ndarray
    target: np.ndarray  # (B, MN), demand at pivot + dt_h

    def __getitem__(self, r: str) -> np.ndarray:
        return {"h": self.X_h, "d": self.X_d, "w": self.X_w}[r]

    @property
    def B(self) -> int:
        return len(self.pivot_times)


def admissible_pivots(T: int, config: ResolutionConfig) -> np.ndarray:
    """Pivots with a full window at every resolution and an observed target."""
    return np.arange(config.first_pivot(), T - config.dt_h + 1)


def make_triplet(X, pivots, config: ResolutionConfig | None = None) -> InputTriplet:
    """Assemble the three lag tensors and the targets for explicit pivots."""
    config = config or ResolutionConfig()
    Xm = _demand_matrix(X)
    T = Xm.shape[1]
    pivots = np.asarray(pivots, dtype=int).reshape(-1)
    lo, hi = config.first_pivot(), T - config.dt_h
    bad = pivots[(pivots < lo) | (pivots > hi)]
    if len(bad):
        raise InsufficientHistory(f"pivots {bad[:5].tolist()} outside the admissible range {lo}..{hi}")
    parts = {}
    for r in RESOLUTIONS:
        lags = config.step(r) * np.arange(1, config.tau(r) + 1)
        hours = pivots[:, None] + config.dt_h - lags[None, :]  # (B, tau)
        parts[r] = np.transpose(Xm[:, hours - 1], (1, 0, 2)).astype(float)  # (B, MN, tau)
    target = Xm[:, pivots + config.dt_h - 1].T.astype(float)
    return InputTriplet(pivots, parts["h"], parts["d"], parts["w"], target)


def sample_batch(X, config: ResolutionConfig, B: int, rng_seed=None, pivots=None) -> InputTriplet:
    """Draw ``B`` distinct pivots uniformly (without replacement).

    ``rng_seed`` may be an int or a ``numpy.random.Generator``; ``pivots``
    restricts the candidate set (e.g. to a training period).
    """
    Xm = _demand_matrix(X)
    candidates = admissible_pivots(Xm.shape[1], config) if pivots is None else np.asarray(pivots)
    if len(candidates) < B:
        raise InsufficientHistory(f"need {B} admissible pivots, only {len(candidates)} available")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    chosen = rng.choice(candidates, size=B, replace=False)
    return make_triplet(Xm, chosen, config)
