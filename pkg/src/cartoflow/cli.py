"""Command-line entry point.

Every subcommand writes its outputs plus ``config.json`` (the fully resolved
run configuration, including the argv that produced it) into ``--out``.
``cartoflow --from-config DIR/config.json`` repeats a run exactly.

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    GridSpec,
    ResolutionConfig,
    admissible_pivots,
    bin_to_grid,
    ingest_csv,
    read_grid_series,
    select_kind,
    write_csv,
    write_grid_series,
)
from .errors import CartoflowError, NumericFailure, ValidationError
from .evaluation import (
    attention_report,
    cell_attention_matrix,
    cell_similarity,
    evaluate_forecast,
    persistence_forecast,
    station_estimate,
)
from .geometry import (
    build_cartogram,
    layout_from_json,
    layout_to_json,
    padded_bbox,
    polygons_to_csv,
    relative_area_distribution,
    voronoi_cells,
)
from .model.network import ModelConfig, predict
from .model.training import TrainConfig, load_checkpoint, save_checkpoint, train, write_loss_trace
from .pipeline import unique_stations
from .synth import NewStation, ScenarioConfig, generate, write_rates_csv

log = logging.getLogger("cartoflow")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


@dataclass
class RunConfig:
    subcommand: str
    inputs: dict
    out: str
    seed: int = 0
    scenario: str = "original"
    grid: dict | None = None
    resolution: dict | None = None
    model: dict | None = None
    options: dict = field(default_factory=dict)
    argv: list = field(default_factory=list)
    threads: int | None = None
    version: str = __version__

    def write(self, directory: Path) -> None:
        (directory / "config.json").write_text(json.dumps(asdict(self), indent=1))


# ---------------------------------------------------------------------------
# flag parsing helpers


def parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValidationError(f"--grid expects ROWSxCOLS, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise ValidationError("--grid needs positive sizes")
    return rows, cols


def parse_tau(text: str) -> ResolutionConfig:
    try:
        h, d, w = (int(v) for v in text.split(","))
    except ValueError:
        raise ValidationError(f"--tau expects H,D,W, got {text!r}") from None
    return ResolutionConfig(tau_h=h, tau_d=d, tau_w=w)


def parse_range(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise ValidationError(f"--pivots expects START:END, got {text!r}") from None
    if b < a:
        raise ValidationError("--pivots range is empty")
    return a, b


def _require(path: str | None, flag: str) -> Path:
    if not path:
        raise ValidationError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{flag}: {p} does not exist")
    return p


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _f(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: RunConfig) -> None:
    new = None
    if args.new_station:
        try:
            x, y, hour = args.new_station.split(",")
            new = NewStation((float(x), float(y)), int(hour), args.new_station_rate)
        except ValueError:
            raise ValidationError("--new-station expects X,Y,HOUR") from None
    sc = ScenarioConfig(
        n_stations=args.stations, layout=args.layout, T=args.hours,
        daily_amplitude=args.daily_amplitude, weekly_amplitude=args.weekly_amplitude,
        noise=args.noise, width_km=args.width_km, height_km=args.height_km,
        n_clusters=args.clusters, cluster_spread_km=args.cluster_spread_km,
        base_rate=args.base_rate, kinds=tuple(args.kinds.split(",")), new_station=new, seed=args.seed,
    )
    sc.validate()
    cfg.options["scenario_config"] = asdict(sc)
    out = _outdir(args)
    cfg.write(out)
    scenario = generate(sc)
    write_csv(scenario.records, out / "stations.csv")
    write_rates_csv(scenario, out / "rates.csv")


def cmd_cartogram(args, cfg: RunConfig) -> None:
    records = ingest_csv(_require(args.stations, "--stations"))
    ids, pos = unique_stations(records)
    out = _outdir(args)
    cfg.write(out)
    bbox = padded_bbox(pos)
    layout = build_cartogram(pos, bbox, args.tol, args.max_iter, station_ids=ids)
    layout_to_json(layout, out / "layout.json")
    polygons_to_csv(layout.polygons, out / "polygons.csv")
    initial = voronoi_cells(pos, bbox)
    polygons_to_csv(initial, out / "polygons_initial.csv")
    # both histograms relative to the largest original cell
    ref = max(p.area for p in initial)
    h0 = relative_area_distribution(initial, args.bins, ref)
    top = float(h0.edges[-1])
    h1_rel = np.array([p.area for p in layout.polygons]) / ref
    c1, _ = np.histogram(h1_rel, bins=h0.edges)
    c1[-1] += int((h1_rel > top).sum())
    with open(out / "area_distribution.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "initial_count", "final_count"])
        for k in range(args.bins):
            w.writerow([_f(h0.edges[k]), _f(h0.edges[k + 1]), int(h0.counts[k]), int(c1[k])])
    summary = {
        "n_stations": len(ids),
        "iterations_run": layout.iterations_run,
        "initial_area_cv": layout.area_cv_trace[0],
        "final_area_cv": layout.area_cv_trace[-1],
        "cv_ratio": layout.area_cv_trace[-1] / layout.area_cv_trace[0] if layout.area_cv_trace[0] > 0 else None,
        "bbox": list(layout.bbox),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))


def cmd_prepare(args, cfg: RunConfig) -> None:
    records = select_kind(ingest_csv(_require(args.stations, "--stations")), args.kind)
    if not records:
        raise ValidationError(f"no {args.kind} records in {args.stations}")
    rows, cols = parse_grid(args.grid)
    layout = layout_from_json(_require(args.layout, "--layout")) if args.layout else None
    ids, pos = unique_stations(records)
    bbox = layout.bbox if layout is not None else padded_bbox(pos)
    if args.cell_km:
        grid = GridSpec(rows, cols, args.cell_km, (bbox[0], bbox[1]))
    else:
        grid = GridSpec.covering(bbox, rows, cols)
    cfg.grid = grid.to_dict()
    cfg.scenario = "cartogram" if layout is not None else "original"
    out = _outdir(args)
    cfg.write(out)
    series = bin_to_grid(records, grid, layout)
    write_grid_series(series, out / "grid_series.csv")
    if layout is None:
        mapped = pos
    elif layout.station_ids:
        lookup = {sid: k for k, sid in enumerate(layout.station_ids)}
        mapped = layout.points[[lookup[s] for s in ids]]
    else:
        mapped = layout.points
    with open(out / "membership.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "cell", "x_km", "y_km", "x_map", "y_map"])
        for j, rec in enumerate(records):
            w.writerow([rec.station_id, int(series.cell_of_station[j]), _f(rec.position[0]), _f(rec.position[1]),
                        _f(mapped[j, 0]), _f(mapped[j, 1])])
    demand = np.stack([r.demand for r in records])
    sim = cell_similarity(demand, series.membership, args.detrend_window)
    with open(out / "cell_similarity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "n_stations", "rho", "cv"])
        for i in range(grid.n_cells):
            w.writerow([i, int(sim.n_stations[i]),
                        "" if not np.isfinite(sim.rho[i]) else _f(sim.rho[i]),
                        "" if not np.isfinite(sim.cv[i]) else _f(sim.cv[i])])
    summary = {"scenario": cfg.scenario, "empty_cells": series.empty_cells().tolist(),
               "similarity": sim.summary(), "T": series.T}
    (out / "summary.json").write_text(json.dumps(summary, indent=1))


def _model_config(args, rows: int, cols: int) -> ModelConfig:
    return ModelConfig(
        rows=rows, cols=cols, latent=args.latent, gat_dim=args.gat_dim or args.latent,
        conv_channels=args.conv_channels, gate_hidden=args.gate_hidden, c_out=args.c_out,
        teleport=args.teleport, batch=args.batch, resolution=parse_tau(args.tau), normalize=args.normalize,
    )


def cmd_train(args, cfg: RunConfig) -> None:
    series = read_grid_series(_require(args.series, "--series"))
    mc = _model_config(args, series.grid.rows, series.grid.cols)
    tc = TrainConfig(lr=args.lr, steps_per_epoch=args.steps_per_epoch, checkpoint_every=args.checkpoint_every)
    if args.epochs < 0 or args.steps_per_epoch < 1:
        raise ValidationError("--epochs must be >= 0 and --steps-per-epoch >= 1")
    train_until = args.train_until or int(0.7 * series.T)
    piv = admissible_pivots(series.T, mc.resolution)
    piv = piv[piv + mc.resolution.dt_h <= train_until]
    cfg.model, cfg.resolution = mc.to_dict(), asdict(mc.resolution)
    cfg.options.update(train_config=asdict(tc), train_until=train_until)
    out = _outdir(args)
    cfg.write(out)
    result = train(series, mc, args.epochs, seed=args.seed, train_config=tc, pivots=piv,
                   checkpoint_path=out / "checkpoint.json")
    save_checkpoint(result.state, out / "checkpoint.json", tc,
                    metadata={"train_until": train_until, "seed": args.seed, "epochs": args.epochs})
    write_loss_trace(result.loss_trace, out / "loss_trace.csv")


def cmd_predict(args, cfg: RunConfig) -> None:
    ckpt = _require(args.checkpoint, "--checkpoint")
    state = load_checkpoint(ckpt)
    series = read_grid_series(_require(args.series, "--series"))
    mc = state.config
    if series.n_cells != mc.n_cells:
        raise ValidationError(f"series has {series.n_cells} cells, checkpoint expects {mc.n_cells}")
    res = mc.resolution
    piv = admissible_pivots(series.T, res)
    if args.pivots:
        a, b = parse_range(args.pivots)
        if a < res.first_pivot() or b > series.T - res.dt_h:
            raise ValidationError(f"pivots must lie in [{res.first_pivot()}, {series.T - res.dt_h}]")
        piv = np.arange(a, b + 1)
    else:
        meta = json.loads(ckpt.read_text()).get("metadata", {})
        until = meta.get("train_until")
        if until is not None:
            piv = piv[piv + res.dt_h > until]
    if len(piv) == 0:
        raise ValidationError("no pivots to predict")
    cfg.options["pivots"] = [int(piv[0]), int(piv[-1])]
    cfg.resolution = asdict(res)
    out = _outdir(args)
    cfg.write(out)
    fc, scores = predict(state, series, piv, group_seed=args.group_seed, return_scores=True)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pivot", "cell", "xhat"])
        for k, p in enumerate(piv):
            for i in range(series.n_cells):
                w.writerow([int(p), i, _f(fc[k, i])])
    attn = {r: cell_attention_matrix([s[r] for s in scores], series.n_cells).tolist() for r in ("h", "d", "w")}
    (out / "attention.json").write_text(json.dumps({"n_cells": series.n_cells, "matrices": attn}))


def _read_predictions(path: Path, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    rows: dict[int, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in ("pivot", "cell", "xhat")):
            raise ValidationError(f"{path}: expected columns pivot,cell,xhat")
        for row in reader:
            rows.setdefault(int(row["pivot"]), {})[int(row["cell"])] = float(row["xhat"])
    piv = np.array(sorted(rows), dtype=int)
    fc = np.full((len(piv), n_cells), np.nan)
    for k, p in enumerate(piv):
        for i, v in rows[p].items():
            if not 0 <= i < n_cells:
                raise ValidationError(f"{path}: cell {i} out of range")
            fc[k, i] = v
    if np.isnan(fc).any():
        raise ValidationError(f"{path}: some pivot/cell predictions are missing")
    return piv, fc


def cmd_evaluate(args, cfg: RunConfig) -> None:
    series = read_grid_series(_require(args.series, "--series"))
    piv, fc = _read_predictions(_require(args.predictions, "--predictions"), series.n_cells)
    hours = piv + args.dt_h
    if hours.min() < 1 or hours.max() > series.T:
        raise ValidationError("predicted hours fall outside the series")
    out = _outdir(args)
    cfg.write(out)
    truth = series.at(hours).T.astype(float)
    occupied = np.array([i for i, m in enumerate(series.membership) if len(m)], dtype=int)
    if len(occupied) == 0:
        occupied = np.arange(series.n_cells)
    report = evaluate_forecast(truth, fc, args.scenario, occupied)
    base = evaluate_forecast(truth, persistence_forecast(series, hours - 1), args.scenario, occupied)
    report.extra["persistence"] = base.aggregate()
    report.extra["n_hours"] = len(piv)
    report.write_json(out / "metrics.json")
    report.write_cell_csv(out / "cell_metrics.csv")

    records = None
    if args.stations:
        records = select_kind(ingest_csv(_require(args.stations, "--stations")), args.kind)
        by_id = {r.station_id: r for r in records}
    ids = series.station_ids
    est = station_estimate(fc.T, series.membership)
    with open(out / "station_estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "cell", "t", "xhat", "x"])
        for j in sorted(est):
            sid = ids[j] if j < len(ids) else str(j)
            rec = by_id.get(sid) if records else None
            for k, t in enumerate(hours):
                x = "" if rec is None else int(rec.demand[t - 1])
                w.writerow([sid, int(series.cell_of_station[j]), int(t), _f(est[j][k]), x])

    if args.attention:
        doc = json.loads(_require(args.attention, "--attention").read_text())
        A = np.array(doc["matrices"][args.attention_resolution], dtype=float)
        pos = None
        if records:
            pos = np.array([by_id[s].position if s in by_id else (np.nan, np.nan) for s in ids])
        rep = attention_report([A], series.n_cells, args.k, series.membership, ids, pos)
        rep.write_edges_csv(out / "attention_edges.csv")
        if pos is not None:
            rep.write_clusters_csv(out / "attention_clusters.csv")
        (out / "attention_summary.json").write_text(json.dumps({
            "resolution": args.attention_resolution,
            "received": rep.received.tolist(),
            "order": rep.order.tolist(),
            "low_cells": rep.low_cells.tolist(),
            "high_cells": rep.high_cells.tolist(),
            "degenerate": rep.degenerate,
        }, indent=1))


COMMANDS = {
    "synth": cmd_synth,
    "cartogram": cmd_cartogram,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cartoflow", description=__doc__.splitlines()[0],
                                 allow_abbrev=False)
    ap.add_argument("--from-config", help="repeat the run recorded in a config.json")
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="subcommand")

    def add(name, help_):
        p = sub.add_parser(name, help=help_, allow_abbrev=False)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("synth", "generate a synthetic city in the station CSV format")
    p.add_argument("--stations", type=int, default=200)
    p.add_argument("--layout", default="clustered", choices=("clustered", "uniform"))
    p.add_argument("--hours", type=int, default=2000)
    p.add_argument("--daily-amplitude", type=float, default=0.6)
    p.add_argument("--weekly-amplitude", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--width-km", type=float, default=30.0)
    p.add_argument("--height-km", type=float, default=30.0)
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--cluster-spread-km", type=float, default=1.5)
    p.add_argument("--base-rate", type=float, default=3.0)
    p.add_argument("--kinds", default="rental")
    p.add_argument("--new-station", help="X,Y,HOUR of a station opening mid-series")
    p.add_argument("--new-station-rate", type=float)

    p = add("cartogram", "relax station positions into a cartogram")
    p.add_argument("--stations", required=True)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, help="stop when no point moves more than this (km)")
    p.add_argument("--bins", type=int, default=20)

    p = add("prepare", "coarse-grain station demand onto a grid")
    p.add_argument("--stations", required=True)
    p.add_argument("--layout", help="cartogram layout.json; omit for original coordinates")
    p.add_argument("--grid", required=True, help="ROWSxCOLS")
    p.add_argument("--cell-km", type=float, help="cell size; default divides the station box evenly")
    p.add_argument("--kind", default="rental", choices=("rental", "return"))
    p.add_argument("--detrend-window", type=int, default=24)

    p = add("train", "train the forecaster on a grid series")
    p.add_argument("--series", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--steps-per-epoch", type=int, default=1000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--tau", default="3,3,2")
    p.add_argument("--latent", type=int, default=32)
    p.add_argument("--gat-dim", type=int, help="defaults to --latent")
    p.add_argument("--conv-channels", type=int, default=16)
    p.add_argument("--gate-hidden", type=int, default=8)
    p.add_argument("--c-out", type=int, default=8)
    p.add_argument("--teleport", type=float, default=0.3)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--train-until", type=int, help="last target hour used for training (default 70%% of T)")
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = add("predict", "forecast the hour after each pivot")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--series", required=True)
    p.add_argument("--pivots", help="START:END, 1-based and inclusive (default: the held-out tail)")
    p.add_argument("--group-seed", type=int, default=0)

    p = add("evaluate", "score predictions and share them among stations")
    p.add_argument("--predictions", required=True)
    p.add_argument("--series", required=True)
    p.add_argument("--stations", help="station CSV, for per-station truth and coordinates")
    p.add_argument("--kind", default="rental", choices=("rental", "return"))
    p.add_argument("--attention", help="attention.json written by predict")
    p.add_argument("--attention-resolution", default="h", choices=("h", "d", "w"))
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--scenario", default="original")
    p.add_argument("--dt-h", type=int, default=1)
    return ap


def _threads() -> int | None:
    raw = os.environ.get("CARTOFLOW_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"CARTOFLOW_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError("CARTOFLOW_THREADS must be >= 1")
    return n


def run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.from_config:
        doc = json.loads(_require(args.from_config, "--from-config").read_text())
        return run(doc["argv"])
    if not args.subcommand:
        parser.print_help()
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = _threads()
    inputs = {k: getattr(args, k) for k in ("stations", "layout", "series", "checkpoint", "predictions", "attention")
              if isinstance(getattr(args, k, None), str)}
    options = {k: v for k, v in vars(args).items()
               if k not in inputs and k not in ("subcommand", "out", "seed", "from_config", "verbose")}
    cfg = RunConfig(args.subcommand, inputs, args.out, args.seed, options=options, argv=list(argv),
                    threads=threads, scenario=getattr(args, "scenario", "original"))
    if threads is None:
        COMMANDS[args.subcommand](args, cfg)
    else:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            COMMANDS[args.subcommand](args, cfg)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except ValidationError as exc:
        print(f"cartoflow: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericFailure as exc:
        print(f"cartoflow: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CartoflowError as exc:
        print(f"cartoflow: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
