import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imsat import nn
from imsat.errors import ConfigError, DataFormatError, ShapeError, StateError

from oracles import central_difference, max_rel_error


def _weighted_loss(probs, weights):
    return sum(float(np.sum(w * np.log(p))) for p, w in zip(probs, weights))


def _loss_grads(probs, weights):
    return [w / p for p, w in zip(probs, weights)]


# -- init --------------------------------------------------------------------------

def test_default_scales_give_expected_std_on_wide_net():
    m = nn.init_params([784, 1200, 1200, 10], seed=0)
    assert 0.1 * np.sqrt(2 / 784) == pytest.approx(0.005051, abs=1e-6)
    assert m.layers[0].W.std() == pytest.approx(0.1 * np.sqrt(2 / 784), rel=0.01)
    assert m.layers[1].W.std() == pytest.approx(0.1 * np.sqrt(2 / 1200), rel=0.01)
    assert m.layers[2].W.std() == pytest.approx(1e-4 * np.sqrt(2 / 1200), rel=0.05)


def test_empirical_std_matches_scale():
    m = nn.init_params([2, 50_000], scales=[0.1], seed=3)
    assert m.layers[0].W.size == 100_000
    assert abs(m.layers[0].W.std() / 0.1 - 1) < 0.03


def test_init_is_deterministic():
    a = nn.init_params([5, 7, 3], seed=11)
    b = nn.init_params([5, 7, 3], seed=11)
    for (ka, va), (kb, vb) in zip(a.params().items(), b.params().items()):
        assert ka == kb
        assert np.array_equal(va, vb)


def test_biases_and_batchnorm_start_neutral():
    m = nn.init_params([4, 6, 3], seed=0)
    assert np.all(m.layers[0].b == 0) and np.all(m.layers[0].bn_beta == 0)
    assert np.all(m.layers[0].bn_gamma == 1)
    assert not m.layers[-1].batchnorm


@pytest.mark.parametrize("dims,scales", [([], None), ([3], None), ([3, 0, 2], None), ([3, 4, 2], [0.1])])
def test_init_rejects_bad_configuration(dims, scales):
    with pytest.raises(ConfigError):
        nn.init_params(dims, scales)


# -- forward -----------------------------------------------------------------------

def test_zero_linear_model_is_uniform():
    m = nn.init_params([3, 4], scales=[0.0])
    probs, _ = nn.forward(m, np.random.default_rng(0).normal(size=(5, 3)))
    assert np.allclose(probs[0], 0.25)


def test_linear_model_matches_hand_softmax():
    m = nn.init_params([2, 3], scales=[1.0])
    m.layers[0].W[:] = [[1.0, 0.0, -1.0], [0.5, 2.0, 0.0]]
    m.layers[0].b[:] = [0.0, -1.0, 0.5]
    probs, _ = nn.forward(m, np.array([[1.0, 2.0]]))
    z = np.array([1 + 1.0, 4 - 1.0, -1 + 0.5])
    expect = np.exp(z) / np.exp(z).sum()
    assert np.allclose(probs[0][0], expect, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(depth, k, n, seed):
    rng = np.random.default_rng(seed)
    dims = [3] + [int(rng.integers(2, 8)) for _ in range(depth - 1)] + [k]
    m = nn.init_params(dims, scales=[1.0] * (len(dims) - 1), seed=seed)
    x = rng.normal(scale=5.0, size=(n, 3))
    for mode in ("train", "infer"):
        probs, _ = nn.forward(m, x, mode=mode)
        assert np.all(np.isfinite(probs[0]))
        assert np.allclose(probs[0].sum(axis=1), 1.0, atol=1e-6)


def test_sigmoid_heads_stay_inside_unit_interval():
    m = nn.init_params([2, 5, 4], scales=[1.0, 50.0], heads="sigmoid", seed=1)
    probs, _ = nn.forward(m, np.random.default_rng(0).normal(scale=100, size=(20, 2)))
    for p in probs:
        assert p.shape == (20, 2)
        assert np.all(p > 0) and np.all(p < 1)
        assert np.allclose(p.sum(axis=1), 1.0)


def test_forward_rejects_wrong_width():
    m = nn.init_params([3, 2])
    with pytest.raises(ShapeError):
        nn.forward(m, np.zeros((2, 4)))


def test_infer_mode_does_not_depend_on_batch_composition():
    rng = np.random.default_rng(0)
    m = nn.init_params([3, 8, 8, 4], scales=[1, 1, 1], seed=0)
    x = rng.normal(size=(40, 3))
    for _ in range(5):
        nn.forward(m, x[rng.permutation(40)[:16]])
    whole = nn.predict(m, x)[0]
    parts = np.concatenate([nn.predict(m, x[i:i + 7])[0] for i in range(0, 40, 7)])
    assert np.all(np.isfinite(whole))
    assert np.array_equal(whole, parts)


def test_update_stats_flag_leaves_running_averages_alone():
    m = nn.init_params([3, 5, 2], seed=0)
    before = m.layers[0].bn_running_mean.copy()
    nn.forward(m, np.random.default_rng(1).normal(size=(6, 3)), update_stats=False)
    assert np.array_equal(before, m.layers[0].bn_running_mean)
    nn.forward(m, np.random.default_rng(1).normal(size=(6, 3)))
    assert not np.array_equal(before, m.layers[0].bn_running_mean)


# -- backward ----------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["train", "infer"])
def test_parameter_and_input_gradients_match_finite_differences(mode):
    rng = np.random.default_rng(4)
    m = nn.init_params([3, 5, 4], scales=[1.0, 1.0], seed=2)
    m.layers[0].bn_running_var[:] = rng.uniform(0.5, 2.0, 5)
    m.layers[0].bn_running_mean[:] = rng.normal(size=5)
    x = rng.normal(size=(7, 3))
    weights = [rng.uniform(0.1, 1.0, size=(7, 4))]

    def loss():
        probs, _ = nn.forward(m, x, mode=mode, update_stats=False)
        return _weighted_loss(probs, weights)

    probs, cache = nn.forward(m, x, mode=mode, update_stats=False)
    grads, dx = nn.backward(m, cache, _loss_grads(probs, weights))
    for name, p in m.params().items():
        assert max_rel_error(grads[name], central_difference(loss, p)) < 1e-4, name
    assert max_rel_error(dx, central_difference(loss, x)) < 1e-4


def test_zero_loss_gradient_gives_zero_gradients():
    m = nn.init_params([3, 5, 4], scales=[1.0, 1.0], seed=0)
    probs, cache = nn.forward(m, np.random.default_rng(0).normal(size=(6, 3)))
    grads, dx = nn.backward(m, cache, [np.zeros_like(probs[0])])
    assert all(np.all(g == 0) for g in grads.values())
    assert np.all(dx == 0)


def test_input_gradient_of_linear_cross_entropy_is_closed_form():
    rng = np.random.default_rng(0)
    m = nn.init_params([4, 3], scales=[1.0], seed=5)
    x = rng.normal(size=(5, 4))
    y = np.eye(3)[[0, 2, 1, 1, 0]]
    probs, cache = nn.forward(m, x)
    # loss = -sum_i log p_i[y_i]
    _, dx = nn.backward(m, cache, [-y / probs[0]])
    assert np.allclose(dx, (probs[0] - y) @ m.layers[0].W.T, atol=1e-12)


def test_switching_off_gradient_parts():
    m = nn.init_params([3, 5, 4], scales=[1.0, 1.0], seed=0)
    x = np.random.default_rng(0).normal(size=(6, 3))
    probs, cache = nn.forward(m, x)
    full, dx = nn.backward(m, cache, [np.ones_like(probs[0])])
    only_params, none = nn.backward(m, cache, [np.ones_like(probs[0])], input_grad=False)
    no_params, dx2 = nn.backward(m, cache, [np.ones_like(probs[0])], param_grads=False)
    assert none is None and no_params == {}
    assert np.array_equal(dx, dx2)
    assert all(np.array_equal(full[k], only_params[k]) for k in full)


def test_stale_or_foreign_cache_is_rejected():
    m = nn.init_params([3, 4], seed=0)
    other = nn.init_params([3, 4], seed=0)
    probs, cache = nn.forward(m, np.ones((2, 3)))
    with pytest.raises(StateError):
        nn.backward(other, cache, [np.ones_like(probs[0])])
    grads, _ = nn.backward(m, cache, [np.ones_like(probs[0])])
    nn.adam_step(nn.AdamState(), m, grads)
    with pytest.raises(StateError):
        nn.backward(m, cache, [np.ones_like(probs[0])])


def test_sigmoid_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    m = nn.init_params([3, 6, 3], scales=[1.0, 1.0], heads="sigmoid", seed=1)
    x = rng.normal(size=(8, 3))
    weights = [rng.uniform(0.1, 1.0, size=(8, 2)) for _ in range(3)]

    def loss():
        probs, _ = nn.forward(m, x, update_stats=False)
        return _weighted_loss(probs, weights)

    probs, cache = nn.forward(m, x, update_stats=False)
    grads, dx = nn.backward(m, cache, _loss_grads(probs, weights))
    for name, p in m.params().items():
        assert max_rel_error(grads[name], central_difference(loss, p)) < 1e-4, name
    assert max_rel_error(dx, central_difference(loss, x)) < 1e-4


# -- Adam ----------------------------------------------------------------------------

def test_first_adam_step_moves_by_step_size():
    p = {"layers.0.W": np.array([[1.0, -2.0]])}
    nn.adam_step(nn.AdamState(), p, {"layers.0.W": np.ones((1, 2))})
    assert np.allclose(p["layers.0.W"], [[1.0 - 0.002, -2.0 - 0.002]], atol=1e-9)


def test_zero_gradient_without_decay_leaves_parameters():
    p = {"layers.0.W": np.array([[0.3]]), "layers.0.b": np.array([0.1])}
    st_ = nn.AdamState()
    for _ in range(3):
        nn.adam_step(st_, p, {"layers.0.W": np.zeros((1, 1)), "layers.0.b": np.zeros(1)})
    assert p["layers.0.W"][0, 0] == 0.3 and p["layers.0.b"][0] == 0.1
    assert st_.step == 3


def test_weight_decay_adds_to_weight_gradient_only():
    p = {"layers.0.W": np.array([[1.0]]), "layers.0.b": np.array([1.0])}
    state = nn.AdamState(weight_decay=0.005)
    nn.adam_step(state, p, {"layers.0.W": np.zeros((1, 1)), "layers.0.b": np.zeros(1)})
    # first moment after one step is (1 - beta1) * effective gradient
    assert state.m["layers.0.W"][0, 0] == pytest.approx(0.1 * 0.005)
    assert p["layers.0.W"][0, 0] < 1.0
    assert p["layers.0.b"][0] == 1.0


def test_adam_rejects_mismatched_gradient():
    with pytest.raises(ShapeError):
        nn.adam_step(nn.AdamState(), {"w.W": np.zeros((2, 2))}, {"w.W": np.zeros(3)})


# -- checkpoint ------------------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    m = nn.init_params([4, 6, 5, 3], scales=[1.0, 1.0, 1.0], seed=9)
    nn.forward(m, np.random.default_rng(0).normal(size=(10, 4)))
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(m, path)
    back = nn.load_checkpoint(path)
    assert back.layer_dims == m.layer_dims and back.heads == m.heads
    for a, b in zip(m.layers, back.layers):
        for attr in ("W", "b", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var"):
            assert np.array_equal(getattr(a, attr), getattr(b, attr))
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert np.array_equal(nn.predict(m, x)[0], nn.predict(back, x)[0])
    raw = path.read_bytes()
    assert len(raw) >= 16 and raw[:12] == b"IMSAT-CKPT\x00\x00"


def test_sigmoid_checkpoint_keeps_heads(tmp_path):
    m = nn.init_params([2, 4, 3], heads="sigmoid", seed=0)
    nn.save_checkpoint(m, tmp_path / "h.ckpt")
    assert nn.load_checkpoint(tmp_path / "h.ckpt").heads == m.heads


def test_truncated_checkpoint_names_offset(tmp_path):
    m = nn.init_params([2, 3], seed=0)
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(m, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(DataFormatError, match="offset"):
        nn.load_checkpoint(path)
