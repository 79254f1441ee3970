"""End-to-end helpers: bin stations with or without the cartogram, train on
the early part of the series, forecast the rest, and score it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import GridSeries, GridSpec, ResolutionConfig, StationRecord, admissible_pivots, bin_to_grid
from .evaluation import MetricsReport, evaluate_forecast, persistence_forecast
from .geometry import CartogramLayout, build_cartogram, padded_bbox
from .model.network import ModelConfig, ModelState, predict
from .model.training import TrainConfig, TrainResult, train


def unique_stations(records: list[StationRecord]) -> tuple[list[str], np.ndarray]:
    ids, pos = [], []
    seen = set()
    for r in records:
        if r.station_id not in seen:
            seen.add(r.station_id)
            ids.append(r.station_id)
            pos.append(r.position)
    return ids, np.array(pos, dtype=float)


def cartogram_for(records: list[StationRecord], max_iter: int = 100, tol_displacement=None) -> CartogramLayout:
    ids, pos = unique_stations(records)
    return build_cartogram(pos, padded_bbox(pos), tol_displacement, max_iter, station_ids=ids)


def grid_series(records, rows: int, cols: int, layout: CartogramLayout | None = None, bbox=None) -> GridSeries:
    """Bin onto ``rows x cols`` cells covering the padded station extent (or
    the layout's box, which is the same box when the layout was built from
    these stations)."""
    if bbox is None:
        bbox = layout.bbox if layout is not None else padded_bbox(unique_stations(records)[1])
    grid = GridSpec.covering(bbox, rows, cols)
    return bin_to_grid(records, grid, layout)


def split_pivots(T: int, config: ResolutionConfig, train_until: int) -> tuple[np.ndarray, np.ndarray]:
    """Pivots whose target hour is ``<= train_until`` versus the rest."""
    piv = admissible_pivots(T, config)
    target = piv + config.dt_h
    return piv[target <= train_until], piv[target > train_until]


@dataclass
class ForecastRun:
    series: GridSeries
    state: ModelState
    training: TrainResult
    test_pivots: np.ndarray
    forecast: np.ndarray  # (len(test_pivots), MN)
    truth: np.ndarray
    report: MetricsReport
    persistence: MetricsReport


def forecast_experiment(series: GridSeries, model_config: ModelConfig, epochs: int, seed: int = 0,
                        train_config: TrainConfig | None = None, train_until: int | None = None,
                        scenario: str = "original") -> ForecastRun:
    """Train on targets up to ``train_until`` (default 70% of T), forecast the
    remaining hours, and score non-empty cells against the truth."""
    res = model_config.resolution
    if train_until is None:
        train_until = int(0.7 * series.T)
    train_piv, test_piv = split_pivots(series.T, res, train_until)
    result = train(series, model_config, epochs, seed=seed, train_config=train_config, pivots=train_piv)
    fc = predict(result.state, series, test_piv)
    truth = series.at(test_piv + res.dt_h).T.astype(float)
    occupied = np.array([i for i, m in enumerate(series.membership) if len(m)], dtype=int)
    if len(occupied) == 0:
        occupied = np.arange(series.n_cells)
    report = evaluate_forecast(truth, fc, scenario, cells=occupied)
    base = evaluate_forecast(truth, persistence_forecast(series, test_piv), scenario + "-persistence",
                             cells=occupied)
    return ForecastRun(series, result.state, result, test_piv, fc, truth, report, base)


def compare_cartogram(records, rows: int, cols: int, model_config: ModelConfig, epochs: int, seed: int = 0,
                      train_config: TrainConfig | None = None, train_until: int | None = None,
                      max_iter: int = 100) -> dict:
    """Run the same forecaster on the original and on the cartogram binning."""
    layout = cartogram_for(records, max_iter=max_iter)
    original = grid_series(records, rows, cols, bbox=layout.bbox)
    carto = grid_series(records, rows, cols, layout=layout)
    return {
        "layout": layout,
        "original": forecast_experiment(original, model_config, epochs, seed, train_config, train_until, "original"),
        "cartogram": forecast_experiment(carto, model_config, epochs, seed, train_config, train_until, "cartogram"),
    }
