import numpy as np
import pytest

from cartoflow.dataset import ResolutionConfig, make_triplet
from cartoflow.errors import InsufficientHistory, MissingForwardCache, NonFiniteLoss, ShapeMismatch
from cartoflow.model import layers
from cartoflow.model.network import ModelConfig, backward, forward, init_state, parameter_shapes, predict
from cartoflow.model.training import (
    TrainConfig,
    adam_update,
    fit_normalization,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_trace,
)

from fdcheck import TINY_RES, tiny_config, tiny_problem


def _series(seed=0, n_cells=9, T=260):
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    rate = 3 + 2 * np.sin(2 * np.pi * t / 24)
    return rng.poisson(np.tile(rate, (n_cells, 1)))


def test_parameter_shapes_follow_config():
    cfg = ModelConfig(rows=2, cols=3, latent=5, gat_dim=4, conv_channels=6, c_out=3)
    sh = parameter_shapes(cfg)
    assert sh["h.emb"] == (3, 5) and sh["w.emb"] == (2, 5)
    assert sh["d.w0"] == (5, 4) and sh["d.att"] == (8,)
    assert sh["h.conv1.k"] == (3, 3, 4, 6)
    assert sh["merge.w"] == (9, 1)


def test_init_scale_and_zero_biases():
    st = init_state(ModelConfig(rows=4, cols=4, latent=64), seed=0)
    assert np.std(st.params["h.wq"]) == pytest.approx(1 / 8, rel=0.1)
    assert all((v == 0).all() for k, v in st.params.items() if k.endswith(".b"))


def test_forward_shape_and_shape_checks():
    state, trip = tiny_problem()
    pred, cache = forward(state, trip)
    assert pred.shape == (2, 9)
    bad = make_triplet(np.ones((9, 200)), [180, 181, 182], ResolutionConfig(tau_h=3, tau_d=1, tau_w=1))
    with pytest.raises(ShapeMismatch):
        forward(state, bad)


def test_backward_needs_forward_cache():
    state, trip = tiny_problem()
    with pytest.raises(MissingForwardCache):
        backward(state, None, trip.target)


def test_input_shift_passes_through_to_output():
    # with normalisation the raw output is mapped back: y * scale + shift
    state, trip = tiny_problem(shift=0.0, scale=1.0)
    p0, _ = forward(state, trip)
    state.input_shift = 5.0
    trip_shifted = type(trip)(trip.pivot_times, trip.X_h + 5.0, trip.X_d + 5.0, trip.X_w + 5.0, trip.target)
    p1, _ = forward(state, trip_shifted)
    np.testing.assert_allclose(p1, p0 + 5.0, atol=1e-12)


def test_single_pivot_is_self_attention():
    rng = np.random.default_rng(0)
    e = rng.normal(size=(9, 4))
    w = [rng.normal(size=(4, 4)) for _ in range(3)]
    q, k, v = (e @ m for m in w)
    ref = layers.softmax_rows(q @ k.T / 2.0) @ v
    np.testing.assert_allclose(layers.batch_attention(e, *w), ref, atol=1e-12)


def test_adam_first_step_moves_by_lr():
    state, trip = tiny_problem()
    before = {k: v.copy() for k, v in state.params.items()}
    pred, cache = forward(state, trip)
    backward(state, cache, trip.target)
    adam_update(state, TrainConfig(lr=1e-3))
    for k, g in state.grads.items():
        step = np.abs(state.params[k] - before[k])
        live = np.abs(g) > 1e-6
        np.testing.assert_allclose(step[live], 1e-3, rtol=1e-2)


def test_fit_normalization_uses_training_hours():
    X = np.zeros((2, 10))
    X[:, 5:] = 100.0
    mean, std = fit_normalization(X, pivots=[2, 3])
    assert mean == 0.0 and std == 1.0
    mean, std = fit_normalization(X)
    assert mean == 50.0 and std == 50.0


def test_training_is_deterministic_and_learns():
    X = _series()
    cfg = tiny_config(normalize=True, batch=4)
    tc = TrainConfig(lr=1e-2, steps_per_epoch=20)
    a = train(X, cfg, epochs=3, seed=1, train_config=tc)
    b = train(X, cfg, epochs=3, seed=1, train_config=tc)
    assert a.loss_trace == b.loss_trace
    for k in a.state.params:
        np.testing.assert_array_equal(a.state.params[k], b.state.params[k])
    assert a.epoch_means[-1] < a.epoch_means[0]
    c = train(X, cfg, epochs=1, seed=2, train_config=tc)
    assert c.loss_trace != a.loss_trace[:20]


def test_train_rejects_short_series():
    with pytest.raises(InsufficientHistory):
        train(np.ones((9, 169)), tiny_config(), epochs=1)


def test_nonfinite_loss_raises():
    X = _series()
    cfg = tiny_config(batch=2)
    state = init_state(cfg, 0)
    state.params["merge.w"][:] = np.inf
    with np.errstate(all="ignore"), pytest.raises(NonFiniteLoss):
        train(X, cfg, epochs=1, state=state, train_config=TrainConfig(steps_per_epoch=1))


def test_predict_covers_every_pivot_once():
    X = _series()
    state, _ = tiny_problem()
    piv = np.arange(170, 181)
    out = predict(state, X, piv, batch=4)
    assert out.shape == (11, 9)
    # a group of one is just forward() on that pivot
    single = predict(state, X, [175], batch=1)
    np.testing.assert_allclose(single[0], forward(state, make_triplet(X, [175], TINY_RES))[0][0], atol=1e-12)
    again, scores = predict(state, X, piv, batch=4, return_scores=True)
    np.testing.assert_array_equal(out, again)
    assert len(scores) == 3 and scores[0]["h"].shape == (36, 36)


def test_checkpoint_roundtrip(tmp_path):
    X = _series()
    cfg = tiny_config(normalize=True, batch=4)
    res = train(X, cfg, epochs=1, train_config=TrainConfig(steps_per_epoch=3))
    save_checkpoint(res.state, tmp_path / "c.json", metadata={"note": 1})
    back = load_checkpoint(tmp_path / "c.json")
    assert back.config == cfg and back.step == 3
    assert back.input_shift == res.state.input_shift
    for k in res.state.params:
        np.testing.assert_array_equal(back.params[k], res.state.params[k])
        np.testing.assert_array_equal(back.adam_v[k], res.state.adam_v[k])
    write_loss_trace(res.loss_trace, tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "step,loss"


def test_training_continues_from_checkpoint(tmp_path):
    X = _series()
    cfg = tiny_config(batch=4)
    tc = TrainConfig(steps_per_epoch=5)
    first = train(X, cfg, epochs=1, seed=3, train_config=tc)
    save_checkpoint(first.state, tmp_path / "c.json")
    more = train(X, cfg, epochs=1, seed=4, train_config=tc, state=load_checkpoint(tmp_path / "c.json"))
    assert more.state.step == 10
    assert not np.array_equal(more.state.params["merge.w"], first.state.params["merge.w"])
