"""Adam training loop, checkpoints and loss traces."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import GridSeries, admissible_pivots, sample_batch
from ..errors import InsufficientHistory, NonFiniteActivation, NonFiniteLoss, SchemaError
from .layers import loss
from .network import ModelConfig, ModelState, backward, forward, init_state

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cartoflow-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps_per_epoch: int = 1000
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints


@dataclass
class TrainResult:
    state: ModelState
    loss_trace: list[float] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)


def adam_update(state: ModelState, cfg: TrainConfig) -> None:
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in state.grads.items():
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        state.params[name] -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def fit_normalization(series: GridSeries | np.ndarray, pivots=None) -> tuple[float, float]:
    """Mean and standard deviation of the cell-hours a model trains on.

    Only hours up to the last pivot's target are looked at, so a held-out
    tail does not leak into the statistics.
    """
    X = series.X if isinstance(series, GridSeries) else np.asarray(series)
    if pivots is not None and len(pivots):
        X = X[:, : int(np.max(pivots)) + 1]
    mean = float(X.mean())
    std = float(X.std())
    return mean, (std if std > 0 else 1.0)


def train(
    series: GridSeries | np.ndarray,
    model_config: ModelConfig,
    epochs: int,
    seed: int = 0,
    train_config: TrainConfig | None = None,
    pivots=None,
    state: ModelState | None = None,
    checkpoint_path=None,
) -> TrainResult:
    """Minimise the summed squared error with Adam on random pivot batches.

    ``pivots`` restricts sampling (e.g. hold out the tail of the series).
    The weight initialisation and the batch sequence both derive from
    ``seed``, so identical calls give bit-identical traces.
    """
    tc = train_config or TrainConfig()
    X = series.X if isinstance(series, GridSeries) else np.asarray(series)
    res = model_config.resolution
    candidates = admissible_pivots(X.shape[1], res) if pivots is None else np.asarray(pivots, dtype=int)
    if len(candidates) < model_config.batch:
        raise InsufficientHistory(f"{len(candidates)} admissible pivots < batch size {model_config.batch}")
    init_rng, batch_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    if state is None:
        state = init_state(model_config, init_rng)
        if model_config.normalize:
            state.input_shift, state.input_scale = fit_normalization(X, candidates)
    result = TrainResult(state)
    for epoch in range(epochs):
        epoch_losses = []
        for _ in range(tc.steps_per_epoch):
            batch = sample_batch(X, res, model_config.batch, batch_rng, pivots=candidates)
            try:
                pred, cache = forward(state, batch)
            except NonFiniteActivation as exc:
                raise NonFiniteLoss(f"step {state.step}: {exc}") from exc
            value = loss(pred, batch.target)
            if not np.isfinite(value):
                raise NonFiniteLoss(f"step {state.step}: loss is {value}")
            backward(state, cache, batch.target)
            adam_update(state, tc)
            epoch_losses.append(value)
        result.loss_trace.extend(epoch_losses)
        result.epoch_means.append(float(np.mean(epoch_losses)))
        log.info("epoch %d mean loss %.6g", epoch + 1, result.epoch_means[-1])
        if checkpoint_path and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path, train_config=tc)
    return result


# ---------------------------------------------------------------------------
# serialisation


def _tensor(name: str, a: np.ndarray) -> dict:
    return {"name": name, "shape": list(a.shape), "values": a.reshape(-1).tolist()}


def _untensor(d: dict) -> np.ndarray:
    return np.array(d["values"], dtype=float).reshape(d["shape"])


def save_checkpoint(state: ModelState, path, train_config: TrainConfig | None = None, metadata=None) -> None:
    """JSON container: config block plus named row-major tensors."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "train_config": asdict(train_config) if train_config else None,
        "step": state.step,
        "input_shift": state.input_shift,
        "input_scale": state.input_scale,
        "metadata": metadata or {},
        "parameters": [_tensor(k, v) for k, v in state.params.items()],
        "adam_m": [_tensor(k, v) for k, v in state.adam_m.items()],
        "adam_v": [_tensor(k, v) for k, v in state.adam_v.items()],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelState:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path} is not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = ModelConfig.from_dict(doc["config"])
    params = {t["name"]: _untensor(t) for t in doc["parameters"]}
    m = {t["name"]: _untensor(t) for t in doc.get("adam_m", [])}
    v = {t["name"]: _untensor(t) for t in doc.get("adam_v", [])}
    zeros = {k: np.zeros_like(a) for k, a in params.items()}
    return ModelState(cfg, params, dict(zeros), m or dict(zeros), v or dict(zeros),
                      int(doc.get("step", 0)), float(doc.get("input_shift", 0.0)),
                      float(doc.get("input_scale", 1.0)))


def write_loss_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for k, v in enumerate(trace, start=1):
            w.writerow([k, repr(float(v))])
