import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cartoflow.errors import NonFiniteActivation
from cartoflow.model import layers

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def _attention_loop(e, wq, wk, wv):
    q, k, v = e @ wq, e @ wk, e @ wv
    L = e.shape[1]
    out = np.zeros_like(v)
    for u in range(len(e)):
        s = np.array([q[u] @ k[w] / np.sqrt(L) for w in range(len(e))])
        s = np.exp(s - s.max())
        out[u] = (s / s.sum()) @ v
    return out


def _scores_loop(y, w0, a, slope=0.2):
    h = y @ w0
    n, lp = h.shape
    A = np.zeros((n, n))
    for u in range(n):
        z = np.array([a @ np.concatenate([h[u], h[v]]) for v in range(n)])
        z = np.where(z > 0, z, slope * z)
        z = np.exp(z - z.max())
        A[u] = z / z.sum()
    return A


def _conv_loop(x, k, b):
    B, M, N, C = x.shape
    out = np.zeros((B, M, N, k.shape[3])) + b
    for bi in range(B):
        for i in range(M):
            for j in range(N):
                for di in range(3):
                    for dj in range(3):
                        ii, jj = i + di - 1, j + dj - 1
                        if 0 <= ii < M and 0 <= jj < N:
                            out[bi, i, j] += x[bi, ii, jj] @ k[di, dj]
    return out


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite))
def test_softmax_rows_sum_to_one(z):
    p = layers.softmax_rows(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert (p >= 0).all()


def test_softmax_shift_invariant():
    z = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_allclose(layers.softmax_rows(z), layers.softmax_rows(z + 1e3), atol=1e-14)


def test_sigmoid_is_stable():
    s = layers.sigmoid(np.array([-800.0, 0.0, 800.0]))
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


def test_leaky_relu_slope():
    np.testing.assert_allclose(layers.leaky_relu(np.array([-1.0, 2.0])), [-0.2, 2.0])


def test_batch_attention_matches_loop():
    rng = np.random.default_rng(1)
    e = rng.normal(size=(7, 4))
    w = [rng.normal(size=(4, 4)) for _ in range(3)]
    np.testing.assert_allclose(layers.batch_attention(e, *w), _attention_loop(e, *w), atol=1e-12)


def test_batch_attention_mixes_pivots():
    # two pivots attend to each other: changing one changes the other's output
    rng = np.random.default_rng(2)
    e = rng.normal(size=(6, 3))
    w = [rng.normal(size=(3, 3)) for _ in range(3)]
    y0 = layers.batch_attention(e, *w)
    e2 = e.copy()
    e2[3:] += 1.0
    y1 = layers.batch_attention(e2, *w)
    assert np.abs(y0[:3] - y1[:3]).max() > 1e-6


def test_attention_scores_match_loop():
    rng = np.random.default_rng(3)
    y = rng.normal(size=(6, 4))
    w0 = rng.normal(size=(4, 3))
    a = rng.normal(size=6)
    np.testing.assert_allclose(layers.attention_scores(y, w0, a), _scores_loop(y, w0, a), atol=1e-12)


def test_gat_layers_plain_aggregation():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(5, 4))
    w0 = rng.normal(size=(4, 3))
    a = rng.normal(size=6)
    alpha = _scores_loop(y, w0, a)
    expect = alpha @ (alpha @ (alpha @ (y @ w0)))
    out, _ = layers.gat_forward(y, w0, a, 3, teleport=0.0)
    np.testing.assert_allclose(out, expect, atol=1e-12)
    step = layers.gat_layer(layers.gat_layer(layers.gat_layer(y, alpha, 1, w0), alpha, 2), alpha, 3)
    np.testing.assert_allclose(step, expect, atol=1e-12)


def test_gat_teleport_form():
    rng = np.random.default_rng(5)
    y = rng.normal(size=(5, 4))
    w0 = rng.normal(size=(4, 3))
    a = rng.normal(size=6)
    alpha = _scores_loop(y, w0, a)
    h = y @ w0
    z = h
    for _ in range(3):
        z = 0.7 * alpha @ z + 0.3 * h
    np.testing.assert_allclose(layers.gat_forward(y, w0, a, 3, teleport=0.3)[0], z, atol=1e-12)


def test_gat_layer_one_needs_w0():
    with pytest.raises(ValueError):
        layers.gat_layer(np.ones((3, 2)), np.full((3, 3), 1 / 3), 1)


def test_conv3x3_matches_loop():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 4, 2))
    k = rng.normal(size=(3, 3, 2, 5))
    b = rng.normal(size=5)
    np.testing.assert_allclose(layers.conv3x3_forward(x, k, b)[0], _conv_loop(x, k, b), atol=1e-12)


def test_conv_head_shapes_and_gate_range():
    rng = np.random.default_rng(7)
    p = {"conv1.k": rng.normal(size=(3, 3, 4, 6)), "conv1.b": np.zeros(6),
         "conv2.k": rng.normal(size=(3, 3, 6, 6)), "conv2.b": np.zeros(6),
         "gate1.w": rng.normal(size=(6, 2)), "gate1.b": np.zeros(2),
         "gate2.w": rng.normal(size=(2, 6)), "gate2.b": np.zeros(6),
         "proj.w": rng.normal(size=(6, 3)), "proj.b": np.zeros(3)}
    out, cache = layers.conv_head_forward(rng.normal(size=(2, 3, 3, 4)), p)
    assert out.shape == (2, 3, 3, 3)
    gate = cache[9]
    assert ((gate > 0) & (gate < 1)).all()


def test_merge_is_concat_times_w():
    rng = np.random.default_rng(8)
    d = [rng.normal(size=(2, 2, 3, 2)) for _ in range(3)]
    w = rng.normal(size=(6, 1))
    out = layers.merge(*d, w)
    cat = np.concatenate(d, axis=-1).reshape(2, 6, 6)
    np.testing.assert_allclose(out, (cat @ w)[..., 0], atol=1e-12)


def test_loss_is_summed_squared_error():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    target = np.array([[0.0, 2.0], [5.0, 4.0]])
    assert layers.loss(pred, target) == 5.0
    np.testing.assert_allclose(layers.loss_backward(pred, target), 2 * (pred - target))


def test_nonfinite_activation_raises():
    e = np.full((3, 2), 1e200)
    w = np.ones((2, 2))
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NonFiniteActivation):
        layers.batch_attention(e, w, w, w)
