import numpy as np
import pytest

from dmwp import autodiff as ad


def _param(rng, *shape):
    return ad.Tensor(rng.normal(size=shape), requires_grad=True)


def grad_check(build, inputs, h=1e-5):
    """Max relative error over every input between backward and central differences."""
    def loss_value():
        with ad.no_grad():
            return float(build(*inputs).data)

    with ad.Tape() as tape:
        loss = build(*inputs)
    ad.backward(tape, loss)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, ad.relative_error(analytic, ad.numeric_grad(loss_value, t.data, h)))
    return worst


def _weighted_sum(t, w):
    return ad.sum(ad.mul(t, w))


OPS = {
    "add": (lambda a, b: ad.add(a, b), [(4, 5), (4, 5)]),
    "bias_add": (lambda a, b: ad.add(a, b), [(6, 3), (3,)]),
    "sub": (lambda a, b: ad.sub(a, b), [(3, 4), (3, 4)]),
    "mul": (lambda a, b: ad.mul(a, b), [(5, 2), (5, 2)]),
    "scale": (lambda a: ad.scale(a, -2.5), [(7,)]),
    "sigmoid": (lambda a: ad.sigmoid(a), [(4, 4)]),
    "tanh": (lambda a: ad.tanh(a), [(16, 16)]),
    "log": (lambda a: ad.log(ad.add(ad.mul(a, a), 1.0)), [(6,)]),
    "log_sigmoid": (lambda a: ad.log_sigmoid(a), [(9,)]),
    "softmax": (lambda a: ad.softmax(a), [(3, 7)]),
    "log_softmax": (lambda a: ad.log_softmax(a), [(3, 7)]),
    "matmul": (lambda a, b: ad.matmul(a, b), [(5, 4), (4, 3)]),
    "batched_matmul": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 2)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [(3, 2), (3, 4)]),
    "mean": (lambda a: ad.mean(a, axis=0), [(6, 3)]),
    "sum": (lambda a: ad.sum(a, axis=1), [(6, 3)]),
    "reshape": (lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
    "take": (lambda a: ad.take(a, np.array([2, 0, 2, 1])), [(3, 5)]),
    "embedding": (lambda a: ad.embedding_lookup(a, np.array([1, 1, 0])), [(4, 3)]),
    "getitem": (lambda a: ad.getitem(a, slice(1, 3)), [(4, 3)]),
    "pick": (lambda a: ad.pick(a, np.array([0, 2, 1])), [(3, 4)]),
    "gated": (lambda x, w, b: ad.gated(x, w, b), [(4, 6), (6, 8), (8,)]),
    "gather_rows": (lambda a, b: ad.gather_rows([a, b], [1, 0, 1], [0, 2, 1]), [(3, 4), (2, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    inputs = [_param(rng, *s) for s in shapes]
    out_shape = fn(*[ad.Tensor(t.data) for t in inputs]).shape
    w = rng.normal(size=out_shape)
    assert grad_check(lambda *xs: _weighted_sum(fn(*xs), w), inputs) < 1e-4


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_gradients_and_padding(reverse):
    rng = np.random.default_rng(7)
    B, T, D, H = 3, 5, 4, 3
    x = _param(rng, B, T, D)
    wx, wh, b = _param(rng, D, 3 * H), _param(rng, H, 3 * H), _param(rng, 3 * H)
    mask = np.zeros((B, T))
    for i, n in enumerate([5, 3, 2]):
        mask[i, :n] = 1
    w = rng.normal(size=(B, T, H))
    err = grad_check(lambda *a: _weighted_sum(ad.gru(a[0], mask, a[1], a[2], a[3], reverse=reverse), w),
                     [x, wx, wh, b])
    assert err < 1e-4
    out = ad.gru(ad.Tensor(x.data), mask, wx, wh, b, reverse=reverse).data
    assert np.all(out[mask == 0] == 0)
    # padding must not leak into real positions
    x2 = x.data.copy()
    x2[mask == 0] = 99.0
    out2 = ad.gru(ad.Tensor(x2), mask, wx, wh, b, reverse=reverse).data
    assert np.array_equal(out, out2)


def test_gru_rejects_holes_in_mask():
    rng = np.random.default_rng(0)
    mask = np.array([[1, 0, 1.0]])
    with pytest.raises(ad.ShapeError):
        ad.gru(ad.Tensor(rng.normal(size=(1, 3, 2))), mask, _param(rng, 2, 6), _param(rng, 2, 6), _param(rng, 6))


def test_three_layer_network_gradients():
    rng = np.random.default_rng(3)
    x = ad.Tensor(rng.normal(size=(8, 5)))
    y = rng.normal(size=(8, 2))
    ws = [_param(rng, 5, 7), _param(rng, 7), _param(rng, 7, 6), _param(rng, 6), _param(rng, 6, 2), _param(rng, 2)]

    def net(w1, b1, w2, b2, w3, b3):
        h = ad.tanh(ad.add(ad.matmul(x, w1), b1))
        h = ad.sigmoid(ad.add(ad.matmul(h, w2), b2))
        out = ad.add(ad.matmul(h, w3), b3)
        d = ad.sub(out, ad.Tensor(y))
        return ad.mean(ad.reshape(ad.mul(d, d), (16,)))

    assert grad_check(net, ws) < 1e-4


def test_analytic_values():
    assert ad.sigmoid(ad.Tensor(0.0)).data == 0.5
    x = ad.Tensor(np.zeros(1), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(ad.sigmoid(x))
    ad.backward(tape, loss)
    assert x.grad[0] == pytest.approx(0.25)

    v = ad.Tensor(np.arange(5.0), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.mean(v)
    ad.backward(tape, loss)
    assert np.allclose(v.grad, 0.2)

    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(ad.Tensor(a), ad.Tensor(np.eye(2))).data, a)


def test_softmax_normalizes():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s = ad.softmax(ad.Tensor(rng.normal(scale=30, size=17))).data
        assert abs(s.sum() - 1.0) <= 1e-12


def test_errors():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((3, 2))))
    with pytest.raises(ad.NonFiniteError):
        ad.log(ad.Tensor(np.zeros(2)))
    t = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        out = ad.mul(t, 2.0)
    with pytest.raises(ad.ShapeError):
        ad.backward(tape, out)


def test_unreached_parameter_gets_zero_grad():
    rng = np.random.default_rng(0)
    store = ad.ParamStore()
    a = store.create("a", (3,), rng)
    store.create("b", (2,), rng)
    with ad.Tape() as tape:
        loss = ad.sum(ad.mul(a, a))
    grads = ad.backward(tape, loss, store)
    assert np.allclose(grads["a"], 2 * a.data)
    assert np.array_equal(grads["b"], np.zeros(2))


def test_adam_basics():
    rng = np.random.default_rng(0)
    store = ad.ParamStore()
    w = store.create("w", (1,), rng)
    w.data = np.array([1.0])
    before = w.data.copy()
    ad.adam_step(store, {"w": np.zeros(1)}, 1e-3)
    assert np.array_equal(w.data, before) and store.step == 1

    with ad.Tape() as tape:
        loss = ad.sum(ad.mul(w, w))
    ad.adam_step(store, ad.backward(tape, loss, store), 1e-3)
    assert w.data[0] < 1.0

    with pytest.raises(ad.NonFiniteError):
        ad.adam_step(store, {"w": np.array([np.nan])}, 1e-3)


def test_adam_least_squares_converges():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 2))
    y = X @ np.array([[1.5], [-0.7]])
    store = ad.ParamStore()
    w = store.create("w", (2, 1), rng)
    for _ in range(500):
        with ad.Tape() as tape:
            d = ad.sub(ad.matmul(ad.Tensor(X), w), ad.Tensor(y))
            loss = ad.mean(ad.mul(d, d))
        ad.adam_step(store, ad.backward(tape, loss, store), 0.05)
    assert float(loss.data) < 1e-6


def test_tape_replay_is_bit_identical():
    rng = np.random.default_rng(2)
    x = ad.Tensor(rng.normal(size=(4, 3)))
    w = ad.Tensor(rng.normal(size=(3, 3)))

    def f():
        return float(ad.sum(ad.tanh(ad.matmul(x, w))).data)

    assert f() == f()


def test_checkpoint_round_trip(tmp_path):
    arrays = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([np.pi]), "s": np.array(2.0)}
    ad.save_checkpoint(tmp_path / "m.ckpt", arrays)
    back = ad.load_checkpoint(tmp_path / "m.ckpt")
    assert set(back) == set(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k]) and back[k].shape == np.shape(arrays[k])
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        ad.load_checkpoint(tmp_path / "bad")
