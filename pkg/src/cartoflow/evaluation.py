"""Forecast metrics, within-cell similarity, per-station estimates and the
attention-score cluster report."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import EmptyCell, LengthMismatch, NoScoresCollected, ZeroVariance


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    if a.shape[-1] < 1:
        raise LengthMismatch("need at least one time step")
    return a, b


def rmse(x, xhat, axis: int = -1):
    x, xhat = _pair(x, xhat)
    return np.sqrt(np.mean((x - xhat) ** 2, axis=axis))


def mae(x, xhat, axis: int = -1):
    x, xhat = _pair(x, xhat)
    return np.mean(np.abs(x - xhat), axis=axis)


def pearson(a, b) -> float:
    """Plain Pearson correlation; ``nan`` when either series is constant."""
    a, b = _pair(a, b)
    da, db = a - a.mean(), b - b.mean()
    den = np.sqrt((da * da).sum() * (db * db).sum())
    return float((da * db).sum() / den) if den > 0 else float("nan")


def coefficient_of_variation(demands) -> float:
    """Time-average of the within-cell std/mean ratio.

    ``demands`` is ``(|R_i|, T)``.  The std is the population one; hours
    where the cell mean is zero are left out of the average.
    """
    d = np.asarray(demands, dtype=float)
    if d.ndim == 1:
        d = d[None, :]
    if d.shape[0] == 0:
        raise EmptyCell("cell has no stations")
    mu = d.mean(axis=0)
    sigma = d.std(axis=0)
    ok = mu > 0
    if not ok.any():
        return 0.0
    return float(np.mean(sigma[ok] / mu[ok]))


def moving_average_weights(window: int) -> np.ndarray:
    """Centred moving-average weights; even windows use the 2xW form."""
    if window % 2:
        return np.full(window, 1.0 / window)
    w = np.full(window + 1, 1.0 / window)
    w[0] = w[-1] = 0.5 / window
    return w


def detrend(series, window: int = 24) -> np.ndarray:
    """Series minus its centred moving average; the edges that lack a full
    window are dropped."""
    x = np.asarray(series, dtype=float)
    w = moving_average_weights(window)
    half = len(w) // 2
    trend = np.convolve(x, w, mode="valid")
    return x[half:len(x) - half] - trend


def detrended_pearson(a, b, window: int = 24) -> float:
    a, b = _pair(a, b)
    if a.ndim != 1:
        raise LengthMismatch("expected 1-D series")
    if len(a) < 2 * window:
        raise LengthMismatch(f"series of length {len(a)} too short for a {window} h detrending window")
    da, db = detrend(a, window), detrend(b, window)
    da, db = da - da.mean(), db - db.mean()
    den = np.sqrt((da * da).sum() * (db * db).sum())
    if den == 0:
        raise ZeroVariance("a detrended series is constant")
    return float((da * db).sum() / den)


# ---------------------------------------------------------------------------


@dataclass
class CellSimilarity:
    rho: np.ndarray  # mean pairwise detrended Pearson per cell (nan if empty)
    cv: np.ndarray
    n_stations: np.ndarray

    def summary(self) -> dict:
        multi = self.n_stations > 1
        out = {}
        for name, v in (("rho", self.rho), ("cv", self.cv)):
            vals = v[multi & np.isfinite(v)]
            out[name] = {"mean": float(vals.mean()) if len(vals) else None,
                         "std": float(vals.std()) if len(vals) else None}
        return out


def cell_similarity(station_demand, membership, window: int = 24) -> CellSimilarity:
    """Within-cell similarity of station series.

    Single-station cells get ``rho = 1`` and ``cv = 0``; empty cells ``nan``.
    Station pairs with a constant detrended series are skipped.
    """
    D = np.asarray(station_demand, dtype=float)
    n = len(membership)
    rho = np.full(n, np.nan)
    cv = np.full(n, np.nan)
    counts = np.array([len(m) for m in membership])
    for i, members in enumerate(membership):
        if len(members) == 0:
            continue
        if len(members) == 1:
            rho[i], cv[i] = 1.0, 0.0
            continue
        cv[i] = coefficient_of_variation(D[members])
        vals = []
        for j, k in combinations(members, 2):
            try:
                vals.append(detrended_pearson(D[j], D[k], window))
            except ZeroVariance:
                pass
        rho[i] = np.mean(vals) if vals else np.nan
    return CellSimilarity(rho, cv, counts)


def station_estimate(cell_forecast, membership) -> dict[int, np.ndarray]:
    """Share each cell forecast equally among the cell's stations.

    ``cell_forecast`` is ``(MN, ...)``; returns station index -> its share.
    """
    Xhat = np.asarray(cell_forecast, dtype=float)
    out = {}
    for i, members in enumerate(membership):
        for j in members:
            out[int(j)] = Xhat[i] / len(members)
    return out


def station_estimate_for(cell_forecast_i, n_members: int) -> np.ndarray:
    if n_members < 1:
        raise EmptyCell("cannot share a forecast over an empty cell")
    return np.asarray(cell_forecast_i, dtype=float) / n_members


# ---------------------------------------------------------------------------


def persistence_forecast(X, pivots) -> np.ndarray:
    """Next hour equals the current hour: ``(len(pivots), MN)``."""
    X = getattr(X, "X", X)
    return np.asarray(X)[:, np.asarray(pivots) - 1].T.astype(float)


@dataclass
class MetricsReport:
    rmse: np.ndarray
    mae: np.ndarray
    pearson: np.ndarray
    cells: np.ndarray  # which cells enter the aggregates
    scenario: str = "original"
    extra: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        out = {}
        for name in ("rmse", "mae", "pearson"):
            v = getattr(self, name)[self.cells]
            v = v[np.isfinite(v)]
            out[name] = {"mean": float(v.mean()) if len(v) else None,
                         "std": float(v.std()) if len(v) else None}
        return out

    def to_dict(self) -> dict:
        clean = lambda a: [None if not np.isfinite(x) else float(x) for x in a]
        return {
            "scenario": self.scenario,
            "aggregate": self.aggregate(),
            "cells": self.cells.tolist(),
            "e_rmse": clean(self.rmse),
            "e_mae": clean(self.mae),
            "pearson": clean(self.pearson),
            **self.extra,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def write_cell_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "e_rmse", "e_mae", "pearson"])
            for i in range(len(self.rmse)):
                w.writerow([i, repr(float(self.rmse[i])), repr(float(self.mae[i])),
                            "" if not np.isfinite(self.pearson[i]) else repr(float(self.pearson[i]))])


def evaluate_forecast(truth, forecast, scenario: str = "original", cells=None) -> MetricsReport:
    """Per-cell errors of a ``(time, MN)`` forecast.

    ``cells`` picks the cells averaged in the aggregates (default: all);
    pass the non-empty cells so cells without stations do not count.
    """
    truth, forecast = _pair(truth, forecast)
    r = rmse(truth.T, forecast.T)
    m = mae(truth.T, forecast.T)
    p = np.array([pearson(truth[:, i], forecast[:, i]) for i in range(truth.shape[1])])
    cells = np.arange(truth.shape[1]) if cells is None else np.asarray(cells, dtype=int)
    return MetricsReport(r, m, p, cells, scenario)


# ---------------------------------------------------------------------------


@dataclass
class AttentionReport:
    matrix: np.ndarray  # (MN, MN), rows sum to 1
    received: np.ndarray  # column means: how strongly each cell is attended to
    order: np.ndarray
    low_cells: np.ndarray
    high_cells: np.ndarray
    degenerate: bool
    low_stations: list = field(default_factory=list)  # (station_id, x, y)
    high_stations: list = field(default_factory=list)

    def write_edges_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_u", "cell_v", "alpha_mean"])
            n = len(self.matrix)
            for u in range(n):
                for v in range(n):
                    w.writerow([u, v, repr(float(self.matrix[u, v]))])

    def write_clusters_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cluster", "cell", "station_id", "x_km", "y_km"])
            for label, rows in (("low", self.low_stations), ("high", self.high_stations)):
                for cell, sid, x, y in rows:
                    w.writerow([label, cell, sid, repr(float(x)), repr(float(y))])


def cell_attention_matrix(scores, n_cells: int) -> np.ndarray:
    """Fold ``(MN*B, MN*B)`` score matrices into one ``(MN, MN)`` cell matrix.

    Column blocks (target pivots) are summed and row blocks (source pivots)
    and batches averaged, which keeps every row summing to one.
    """
    if not scores:
        raise NoScoresCollected("no attention scores to average")
    total = np.zeros((n_cells, n_cells))
    count = 0
    for a in scores:
        a = np.asarray(a, dtype=float)
        B = a.shape[0] // n_cells
        blocks = a.reshape(B, n_cells, B, n_cells)
        total += blocks.sum(axis=2).sum(axis=0)
        count += B
    return total / count


def attention_report(scores, n_cells: int, k: int = 5, membership=None, station_ids=None,
                     positions=None, tol: float = 1e-12) -> AttentionReport:
    """Cells reordered by the mean attention they receive; the ``k`` weakest
    and ``k`` strongest form the low/high clusters.

    With ``membership`` and ``positions`` the member stations of both
    clusters are listed with their (original) coordinates for plotting.
    """
    A = cell_attention_matrix(scores, n_cells)
    received = A.mean(axis=0)
    order = np.argsort(received, kind="stable")
    degenerate = bool(np.ptp(received) <= tol)
    k = min(k, n_cells)
    low, high = order[:k], order[::-1][:k][::-1]
    report = AttentionReport(A, received, order, low, high, degenerate)
    if membership is not None and positions is not None:
        pos = np.asarray(positions, dtype=float)
        ids = station_ids or [str(j) for j in range(len(pos))]
        for cells, sink in ((low, report.low_stations), (high, report.high_stations)):
            for c in cells:
                for j in membership[c]:
                    sink.append((int(c), ids[j], pos[j, 0], pos[j, 1]))
    return report
