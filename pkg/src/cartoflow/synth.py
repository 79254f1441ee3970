"""Synthetic open-system demand with known ground-truth rates.

Station ``j`` has hourly rate

    lambda_j(t) = base_j * (1 + a_d * daily(t) + a_w * weekly(t))

with a 24 h and a 168 h cycle, clipped at zero.  Counts are Poisson draws
around the rate; ``noise`` blends between the rounded rate (0) and the
full Poisson count (1).  Stations of one spatial cluster share a base rate
up to +-20%.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataset import StationRecord
from .errors import InvalidConfig


@dataclass(frozen=True)
class NewStation:
    """A station that starts operating at ``activation_hour`` (1-based)."""

    position: tuple[float, float]
    activation_hour: int
    base_rate: float | None = None  # default: base of the nearest cluster
    station_id: str = "new"


@dataclass(frozen=True)
class ScenarioConfig:
    n_stations: int = 200
    layout: str = "clustered"  # or "uniform"
    T: int = 2000
    daily_amplitude: float = 0.6
    weekly_amplitude: float = 0.2
    noise: float = 1.0
    width_km: float = 30.0
    height_km: float = 30.0
    n_clusters: int = 5
    cluster_spread_km: float = 1.5
    base_rate: float = 3.0
    base_rate_spread: float = 0.2
    cluster_rate_sigma: float = 0.5
    daily_phase: float = 0.0
    kinds: tuple[str, ...] = ("rental",)
    new_station: NewStation | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.n_stations < 1 or self.T < 1:
            raise InvalidConfig("n_stations and T must be positive")
        if self.daily_amplitude < 0 or self.weekly_amplitude < 0:
            raise InvalidConfig("amplitudes must be non-negative")
        if not 0.0 <= self.noise <= 1.0:
            raise InvalidConfig("noise must lie in [0, 1]")
        if self.layout not in ("clustered", "uniform"):
            raise InvalidConfig(f"unknown layout {self.layout!r}")
        if not 0 <= self.base_rate_spread < 1:
            raise InvalidConfig("base_rate_spread must lie in [0, 1)")
        if any(k not in ("rental", "return") for k in self.kinds):
            raise InvalidConfig("kinds must be rental and/or return")
        ns = self.new_station
        if ns is not None:
            if not 1 <= ns.activation_hour <= self.T:
                raise InvalidConfig("activation hour must lie in [1, T]")
            x, y = ns.position
            if not (0 <= x <= self.width_km and 0 <= y <= self.height_km):
                raise InvalidConfig("new station lies outside the city")


@dataclass
class Scenario:
    records: list[StationRecord]
    rates: np.ndarray  # (len(records), T), ground truth
    positions: np.ndarray  # one row per station (not per record)
    station_ids: list[str]
    cluster: np.ndarray
    config: ScenarioConfig = field(repr=False, default=None)


def daily_cycle(t: np.ndarray, phase: float = 0.0) -> np.ndarray:
    return np.sin(2 * np.pi * (t - phase) / 24.0)


def weekly_cycle(t: np.ndarray) -> np.ndarray:
    return np.sin(2 * np.pi * t / 168.0)


def _layout(cfg: ScenarioConfig, rng: np.random.Generator):
    size = np.array([cfg.width_km, cfg.height_km])
    if cfg.layout == "uniform":
        pts = rng.uniform(0, 1, (cfg.n_stations, 2)) * size
        return pts, np.zeros(cfg.n_stations, dtype=int), np.zeros((1, 2))
    margin = 3 * cfg.cluster_spread_km
    centres = margin + rng.uniform(0, 1, (cfg.n_clusters, 2)) * (size - 2 * margin)
    labels = rng.integers(0, cfg.n_clusters, cfg.n_stations)
    pts = centres[labels] + rng.normal(0, cfg.cluster_spread_km, (cfg.n_stations, 2))
    pts = np.clip(pts, 0, size)
    return pts, labels, centres


def generate(cfg: ScenarioConfig) -> Scenario:
    """Draw station positions, rates and counts; deterministic given ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pts, labels, centres = _layout(cfg, rng)
    n_clusters = len(centres)
    cluster_base = cfg.base_rate * np.exp(rng.normal(0, cfg.cluster_rate_sigma, n_clusters))
    spread = cfg.base_rate_spread
    base = cluster_base[labels] * rng.uniform(1 - spread, 1 + spread, cfg.n_stations)
    ids = [f"s{j:04d}" for j in range(cfg.n_stations)]
    activation = np.ones(cfg.n_stations, dtype=int)

    ns = cfg.new_station
    if ns is not None:
        pos = np.asarray(ns.position, dtype=float)
        nearest = int(np.argmin(np.linalg.norm(centres - pos, axis=1))) if cfg.layout == "clustered" else 0
        rate = cluster_base[nearest] if ns.base_rate is None else ns.base_rate
        pts = np.vstack([pts, pos])
        labels = np.append(labels, nearest)
        base = np.append(base, rate)
        ids.append(ns.station_id)
        activation = np.append(activation, ns.activation_hour)

    t = np.arange(1, cfg.T + 1)
    records, rates = [], []
    for kind in cfg.kinds:
        # returns lag rentals by a few hours
        phase = cfg.daily_phase + (3.0 if kind == "return" else 0.0)
        shape = 1 + cfg.daily_amplitude * daily_cycle(t, phase) + cfg.weekly_amplitude * weekly_cycle(t)
        lam = np.clip(base[:, None] * shape[None, :], 0, None)
        lam[t[None, :] < activation[:, None]] = 0.0
        draws = rng.poisson(lam)
        counts = np.rint(lam + cfg.noise * (draws - lam)).astype(np.int64)
        counts = np.clip(counts, 0, None)
        for j, sid in enumerate(ids):
            records.append(StationRecord(sid, pts[j].copy(), counts[j], kind))
        rates.append(lam)
    return Scenario(records, np.vstack(rates), pts, ids, labels, cfg)


def write_rates_csv(scenario: Scenario, path) -> None:
    """Ground-truth sidecar: ``station_id,kind,timestamp_hour,lambda``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "kind", "timestamp_hour", "lambda"])
        for rec, lam in zip(scenario.records, scenario.rates):
            for t, v in enumerate(lam, start=1):
                w.writerow([rec.station_id, rec.kind, t, repr(float(v))])
