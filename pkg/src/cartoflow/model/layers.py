"""Forward/backward primitives of the forecasting network.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes the upstream gradient plus that cache.  The bare-named functions are
the forward maps without the cache.  Row ``u = i + b * MN`` of a node
matrix is cell ``i`` at pivot ``b``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NonFiniteActivation, ShapeMismatch

LEAKY_SLOPE = 0.2


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


def _finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NonFiniteActivation(f"non-finite values in {what}")
    return a


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so large |z| never overflows
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def leaky_relu(z: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


# ---------------------------------------------------------------------------
# embedding


def embed_forward(x: np.ndarray, w_emb: np.ndarray):
    """``(B, MN, tau)`` lags -> ``(B*MN, L)`` embedded rows."""
    _require(x.ndim == 3 and w_emb.ndim == 2 and x.shape[2] == w_emb.shape[0],
             f"cannot embed {x.shape} with {w_emb.shape}")
    flat = x.reshape(-1, x.shape[2])
    return flat @ w_emb, (flat, w_emb)


def embed_backward(dout, cache):
    flat, w_emb = cache
    return {"emb": flat.T @ dout}


def embed(x, w_emb):
    return embed_forward(x, w_emb)[0]


# ---------------------------------------------------------------------------
# batch attention


def batch_attention_forward(e: np.ndarray, wq, wk, wv, latent: int | None = None):
    """``softmax(Q K^T / sqrt(L)) V`` over all ``B*MN`` rows at once."""
    _require(e.ndim == 2, "embedded input must be 2-D")
    L = e.shape[1] if latent is None else latent
    for w in (wq, wk, wv):
        _require(w.shape[0] == e.shape[1], f"importance matrix {w.shape} vs embedded {e.shape}")
    q, k, v = e @ wq, e @ wk, e @ wv
    s = (q @ k.T) / np.sqrt(L)
    p = softmax_rows(_finite(s, "attention logits"))
    y = _finite(p @ v, "attention output")
    return y, (e, wq, wk, wv, q, k, v, p, np.sqrt(L))


def batch_attention_backward(dy, cache):
    e, wq, wk, wv, q, k, v, p, scale = cache
    dp = dy @ v.T
    dv = p.T @ dy
    ds = softmax_rows_backward(dp, p) / scale
    dq = ds @ k
    dk = ds.T @ q
    de = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return de, {"wq": e.T @ dq, "wk": e.T @ dk, "wv": e.T @ dv}


def batch_attention(e, wq, wk, wv, latent=None):
    return batch_attention_forward(e, wq, wk, wv, latent)[0]


# ---------------------------------------------------------------------------
# graph attention


def attention_scores_forward(y: np.ndarray, w0: np.ndarray, a: np.ndarray, slope: float = LEAKY_SLOPE):
    """``alpha_uv = softmax_v LeakyReLU(a . [W0 y_u || W0 y_v])``."""
    _finite(y, "node features")
    _require(y.shape[1] == w0.shape[0], f"W0 {w0.shape} vs features {y.shape}")
    _require(a.shape == (2 * w0.shape[1],), f"attention vector must have length {2 * w0.shape[1]}")
    h = y @ w0
    lp = w0.shape[1]
    src, dst = h @ a[:lp], h @ a[lp:]
    z = src[:, None] + dst[None, :]
    alpha = softmax_rows(_finite(leaky_relu(z, slope), "attention logits"))
    return alpha, (y, w0, a, h, z, alpha, slope)


def attention_scores_backward(dalpha, cache):
    """Returns ``(dh, grads)``: ``dh`` is the part of the gradient reaching
    ``h = y W0`` through the scores alone."""
    y, w0, a, h, z, alpha, slope = cache
    lp = w0.shape[1]
    dz = softmax_rows_backward(dalpha, alpha) * np.where(z > 0, 1.0, slope)
    dsrc, ddst = dz.sum(axis=1), dz.sum(axis=0)
    dh = np.outer(dsrc, a[:lp]) + np.outer(ddst, a[lp:])
    da = np.concatenate([h.T @ dsrc, h.T @ ddst])
    return dh, {"att": da}


def attention_scores(y, w0, a, slope=LEAKY_SLOPE):
    return attention_scores_forward(y, w0, a, slope)[0]


def gat_layer(y: np.ndarray, alpha: np.ndarray, layer_index: int, w0: np.ndarray | None = None,
              h0: np.ndarray | None = None, teleport: float = 0.0):
    """Neighbour aggregation ``y'_u = sum_v alpha_uv y_v`` (times W0 on layer 1).

    With ``teleport > 0`` a share of each node's projected input ``h0``
    is added back: ``y' = (1 - teleport) * alpha y + teleport * h0``.
    """
    _require(alpha.shape == (y.shape[0], y.shape[0]), f"scores {alpha.shape} vs features {y.shape}")
    if layer_index == 1:
        _require(w0 is not None, "layer 1 needs the importance matrix")
        y = y @ w0
        if h0 is None:
            h0 = y
    out = alpha @ y
    if teleport:
        _require(h0 is not None and h0.shape == out.shape, "teleport needs h0 shaped like the output")
        out = (1.0 - teleport) * out + teleport * h0
    return out


def gat_forward(y: np.ndarray, w0: np.ndarray, a: np.ndarray, n_layers: int = 3, teleport: float = 0.0):
    """Scores from the first layer, reused by all ``n_layers`` aggregations."""
    alpha, score_cache = attention_scores_forward(y, w0, a)
    h = score_cache[3]
    states = [h]
    for _ in range(n_layers):
        nxt = alpha @ states[-1]
        if teleport:
            nxt = (1.0 - teleport) * nxt + teleport * h
        states.append(nxt)
    return states[-1], (score_cache, alpha, states, teleport)


def gat_backward(dout, cache):
    score_cache, alpha, states, teleport = cache
    y, w0 = score_cache[0], score_cache[1]
    keep = 1.0 - teleport
    dalpha = np.zeros_like(alpha)
    dh = np.zeros_like(states[0])
    g = dout
    for prev in reversed(states[:-1]):
        if teleport:
            dh += teleport * g
        dalpha += keep * (g @ prev.T)
        g = keep * (alpha.T @ g)
    dh_scores, grads = attention_scores_backward(dalpha, score_cache)
    dh += g + dh_scores
    grads["w0"] = y.T @ dh
    return dh @ w0.T, grads


# ---------------------------------------------------------------------------
# convolutional head


def _im2col(x: np.ndarray) -> np.ndarray:
    """``(B, M, N, C)`` -> ``(B, M, N, 9*C)`` 3x3 same-padded patches."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, M, N, C, 3, 3)
    B, M, N, C = x.shape
    return np.ascontiguousarray(np.transpose(win, (0, 1, 2, 4, 5, 3))).reshape(B, M, N, 9 * C)


def _col2im(dcols: np.ndarray, shape) -> np.ndarray:
    B, M, N, C = shape
    d = dcols.reshape(B, M, N, 3, 3, C)
    dxp = np.zeros((B, M + 2, N + 2, C))
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + M, dj:dj + N, :] += d[:, :, :, di, dj, :]
    return dxp[:, 1:-1, 1:-1, :]


def conv3x3_forward(x: np.ndarray, k: np.ndarray, b: np.ndarray):
    """Same-padded 3x3 convolution; kernel ``(3, 3, C_in, C_out)``."""
    _require(x.ndim == 4 and k.shape[:3] == (3, 3, x.shape[3]), f"kernel {k.shape} vs input {x.shape}")
    cols = _im2col(x)
    out = cols @ k.reshape(-1, k.shape[3]) + b
    return out, (cols, x.shape, k)


def conv3x3_backward(dout, cache):
    cols, shape, k = cache
    cout = k.shape[3]
    flat_cols = cols.reshape(-1, cols.shape[-1])
    flat_d = dout.reshape(-1, cout)
    dk = (flat_cols.T @ flat_d).reshape(k.shape)
    db = flat_d.sum(axis=0)
    dx = _col2im(dout @ k.reshape(-1, cout).T, shape)
    return dx, dk, db


def conv_head_forward(img: np.ndarray, p: dict):
    """Two 3x3 conv+ReLU, a feed-forward channel gate, then a 1x1 projection.

    ``img`` is ``(B, M, N, C)``; ``p`` holds ``conv1.k/b``, ``conv2.k/b``,
    ``gate1.w/b``, ``gate2.w/b`` and ``proj.w/b``.
    """
    z1, c1_cache = conv3x3_forward(img, p["conv1.k"], p["conv1.b"])
    a1 = np.maximum(z1, 0.0)
    z2, c2_cache = conv3x3_forward(a1, p["conv2.k"], p["conv2.b"])
    a2 = np.maximum(z2, 0.0)
    m = a2.mean(axis=(1, 2))  # (B, C)
    g1z = m @ p["gate1.w"] + p["gate1.b"]
    g1 = np.maximum(g1z, 0.0)
    gate = sigmoid(g1 @ p["gate2.w"] + p["gate2.b"])
    f = a2 * gate[:, None, None, :]
    out = f @ p["proj.w"] + p["proj.b"]
    return out, (c1_cache, z1, a1, c2_cache, z2, a2, m, g1z, g1, gate, f, p)


def conv_head_backward(dout, cache):
    c1_cache, z1, a1, c2_cache, z2, a2, m, g1z, g1, gate, f, p = cache
    B, M, N, _ = a2.shape
    g = {}
    flat_f = f.reshape(-1, f.shape[-1])
    flat_d = dout.reshape(-1, dout.shape[-1])
    g["proj.w"] = flat_f.T @ flat_d
    g["proj.b"] = flat_d.sum(axis=0)
    df = dout @ p["proj.w"].T
    dgate = (df * a2).sum(axis=(1, 2))
    da2 = df * gate[:, None, None, :]
    dgz = dgate * gate * (1.0 - gate)
    g["gate2.w"] = g1.T @ dgz
    g["gate2.b"] = dgz.sum(axis=0)
    dg1z = (dgz @ p["gate2.w"].T) * (g1z > 0)
    g["gate1.w"] = m.T @ dg1z
    g["gate1.b"] = dg1z.sum(axis=0)
    dm = dg1z @ p["gate1.w"].T
    da2 = da2 + dm[:, None, None, :] / (M * N)
    dz2 = da2 * (z2 > 0)
    da1, g["conv2.k"], g["conv2.b"] = conv3x3_backward(dz2, c2_cache)
    dz1 = da1 * (z1 > 0)
    dimg, g["conv1.k"], g["conv1.b"] = conv3x3_backward(dz1, c1_cache)
    return dimg, g


def conv_head(img, p):
    return conv_head_forward(img, p)[0]


# ---------------------------------------------------------------------------
# merge and loss


def merge_forward(d_h: np.ndarray, d_d: np.ndarray, d_w: np.ndarray, w: np.ndarray):
    """``(D_h || D_d || D_w) W`` per cell, flattened to ``(B, MN)``."""
    _require(d_h.shape == d_d.shape == d_w.shape, "resolution outputs differ in shape")
    cat = np.concatenate([d_h, d_d, d_w], axis=-1)
    _require(w.shape == (cat.shape[-1], 1), f"merge matrix must be ({cat.shape[-1]}, 1)")
    out = (cat @ w)[..., 0]
    return out.reshape(out.shape[0], -1), (cat, w)


def merge_backward(dout, cache):
    cat, w = cache
    d = dout.reshape(cat.shape[:-1])[..., None]
    dw = cat.reshape(-1, cat.shape[-1]).T @ d.reshape(-1, 1)
    dcat = d @ w.T
    c = cat.shape[-1] // 3
    return (dcat[..., :c], dcat[..., c:2 * c], dcat[..., 2 * c:]), {"merge.w": dw}


def merge(d_h, d_d, d_w, w):
    return merge_forward(d_h, d_d, d_w, w)[0]


def loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Summed (not averaged) squared error over pivots and cells."""
    _require(pred.shape == target.shape, f"prediction {pred.shape} vs target {target.shape}")
    return float(((pred - target) ** 2).sum())


def loss_backward(pred, target):
    return 2.0 * (pred - target)
