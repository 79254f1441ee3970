"""The three-branch forecasting network and its exact reverse-mode gradient.

Each resolution branch (hour, day, week) runs

    lags -> embedding -> batch attention -> 3 graph-attention layers
         -> conv head (2x conv3x3, channel gate, 1x1 projection)

and the three branch outputs are concatenated per cell and mapped to one
value by a shared merge matrix.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import RESOLUTIONS, GridSeries, InputTriplet, ResolutionConfig, make_triplet
from ..errors import MissingForwardCache, ShapeMismatch
from . import layers

HEAD_KEYS = ("conv1.k", "conv1.b", "conv2.k", "conv2.b", "gate1.w", "gate1.b",
             "gate2.w", "gate2.b", "proj.w", "proj.b")


@dataclass(frozen=True)
class ModelConfig:
    rows: int
    cols: int
    latent: int = 32
    gat_dim: int = 32
    conv_channels: int = 16
    gate_hidden: int = 8
    c_out: int = 8
    gat_layers: int = 3
    teleport: float = 0.3
    batch: int = 16
    resolution: ResolutionConfig = field(default_factory=ResolutionConfig)
    normalize: bool = False

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["resolution"] = ResolutionConfig(**d.get("resolution", {}))
        return cls(**d)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    L, Lp, C, G, co = cfg.latent, cfg.gat_dim, cfg.conv_channels, cfg.gate_hidden, cfg.c_out
    shapes: dict[str, tuple[int, ...]] = {}
    for r in RESOLUTIONS:
        tau = cfg.resolution.tau(r)
        shapes.update({
            f"{r}.emb": (tau, L),
            f"{r}.wq": (L, L),
            f"{r}.wk": (L, L),
            f"{r}.wv": (L, L),
            f"{r}.w0": (L, Lp),
            f"{r}.att": (2 * Lp,),
            f"{r}.conv1.k": (3, 3, Lp, C),
            f"{r}.conv1.b": (C,),
            f"{r}.conv2.k": (3, 3, C, C),
            f"{r}.conv2.b": (C,),
            f"{r}.gate1.w": (C, G),
            f"{r}.gate1.b": (G,),
            f"{r}.gate2.w": (G, C),
            f"{r}.gate2.b": (C,),
            f"{r}.proj.w": (C, co),
            f"{r}.proj.b": (co,),
        })
    shapes["merge.w"] = (3 * co, 1)
    return shapes


def _fan_in(name: str, shape) -> int:
    if name.endswith(".k"):
        return shape[0] * shape[1] * shape[2]
    if name.endswith(".att"):
        return shape[0] // 2
    return shape[0]


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    # inputs enter as (x - shift) / scale, outputs leave as y * scale + shift
    input_shift: float = 0.0
    input_scale: float = 1.0

    def copy(self) -> "ModelState":
        cp = lambda d: {k: v.copy() for k, v in d.items()}
        return ModelState(self.config, cp(self.params), cp(self.grads), cp(self.adam_m),
                          cp(self.adam_v), self.step, self.input_shift, self.input_scale)


def init_state(cfg: ModelConfig, seed=0) -> ModelState:
    """Gaussian weights with std ``1/sqrt(fan_in)``; biases start at zero."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(_fan_in(name, shape)), size=shape)
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(cfg, params, {k: v.copy() for k, v in zeros.items()},
                      {k: v.copy() for k, v in zeros.items()}, {k: v.copy() for k, v in zeros.items()})


# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    branches: dict
    merge: tuple
    prediction: np.ndarray
    scale: float
    alphas: dict[str, np.ndarray]


def _branch_forward(p: dict, r: str, x: np.ndarray, cfg: ModelConfig):
    B = x.shape[0]
    e, emb_c = layers.embed_forward(x, p[f"{r}.emb"])
    y, att_c = layers.batch_attention_forward(e, p[f"{r}.wq"], p[f"{r}.wk"], p[f"{r}.wv"], cfg.latent)
    g, gat_c = layers.gat_forward(y, p[f"{r}.w0"], p[f"{r}.att"], cfg.gat_layers, cfg.teleport)
    img = g.reshape(B, cfg.rows, cfg.cols, cfg.gat_dim)
    head = {k: p[f"{r}.{k}"] for k in HEAD_KEYS}
    d, head_c = layers.conv_head_forward(img, head)
    return d, (emb_c, att_c, gat_c, head_c), gat_c[1]


def forward(state: ModelState, triplet: InputTriplet):
    """Predicted demand ``(B, MN)`` at ``pivot + dt_h`` plus the backward cache."""
    cfg, p = state.config, state.params
    for r in RESOLUTIONS:
        x = triplet[r]
        if x.ndim != 3 or x.shape[1] != cfg.n_cells or x.shape[2] != cfg.resolution.tau(r):
            raise ShapeMismatch(f"{r}-lags have shape {x.shape}, model expects (B, {cfg.n_cells}, "
                                f"{cfg.resolution.tau(r)})")
    shift, scale = state.input_shift, state.input_scale
    outs, caches, alphas = {}, {}, {}
    for r in RESOLUTIONS:
        outs[r], caches[r], alphas[r] = _branch_forward(p, r, (triplet[r] - shift) / scale, cfg)
    net, merge_c = layers.merge_forward(outs["h"], outs["d"], outs["w"], p["merge.w"])
    pred = net * scale + shift
    return pred, ForwardCache(caches, merge_c, pred, scale, alphas)


def backward(state: ModelState, cache: ForwardCache | None, target: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the summed squared error w.r.t. every parameter.

    Also stored in ``state.grads``.
    """
    if cache is None:
        raise MissingForwardCache("run forward() before backward()")
    dpred = layers.loss_backward(cache.prediction, target)
    dnet = dpred * cache.scale
    (dd_h, dd_d, dd_w), grads = layers.merge_backward(dnet, cache.merge)
    cfg = state.config
    for r, dd in zip(RESOLUTIONS, (dd_h, dd_d, dd_w)):
        emb_c, att_c, gat_c, head_c = cache.branches[r]
        dimg, g_head = layers.conv_head_backward(dd, head_c)
        dy, g_gat = layers.gat_backward(dimg.reshape(-1, cfg.gat_dim), gat_c)
        de, g_att = layers.batch_attention_backward(dy, att_c)
        g_emb = layers.embed_backward(de, emb_c)
        for part in (g_head, g_gat, g_att, g_emb):
            for k, v in part.items():
                grads[f"{r}.{k}"] = v
    state.grads = grads
    return grads


def loss_and_grads(state: ModelState, triplet: InputTriplet):
    pred, cache = forward(state, triplet)
    value = layers.loss(pred, triplet.target)
    return value, backward(state, cache, triplet.target)


def predict(state: ModelState, series: GridSeries | np.ndarray, pivot_times, batch: int | None = None,
            group_seed: int | None = 0, return_scores: bool = False):
    """Forecast ``(len(pivots), MN)`` for the hour after each pivot.

    Pivots are processed in groups of ``batch``.  Pivots of one group attend
    to each other, so a forecast depends on its group mates; groups are
    formed from a permutation seeded by ``group_seed`` so they resemble the
    random training batches (``None`` keeps consecutive groups).  With
    ``return_scores`` the per-group graph-attention matrices come back too.
    """
    cfg = state.config
    batch = batch or cfg.batch
    X = series.X if isinstance(series, GridSeries) else np.asarray(series)
    pivots = np.asarray(pivot_times, dtype=int).reshape(-1)
    order = np.arange(len(pivots)) if group_seed is None else np.random.default_rng(group_seed).permutation(len(pivots))
    out = np.empty((len(pivots), X.shape[0]))
    scores = []
    for start in range(0, len(pivots), batch):
        idx = order[start:start + batch]
        trip = make_triplet(X, pivots[idx], cfg.resolution)
        pred, cache = forward(state, trip)
        out[idx] = pred
        if return_scores:
            scores.append(cache.alphas)
    return (out, scores) if return_scores else out
