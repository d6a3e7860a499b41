import math

import numpy as np
import pytest

from dmwp import autodiff as ad
from dmwp.augment import ContrastBatch
from dmwp.discriminator import DiscConfig, Discriminator, roc_auc
from dmwp.expr import parse_infix, to_prefix
from dmwp.solver import OutputVocab
from dmwp.expr import OPS, DEFAULT_CONSTANTS
from helpers import fd_check, random_expr

TOKENS = OutputVocab(OPS, DEFAULT_CONSTANTS, 6).tokens


def _disc(seed=0, emb=8, hidden=12, dim=10):
    return Discriminator(DiscConfig(emb, hidden, dim), TOKENS, np.random.default_rng(seed))


def test_encoding_shapes():
    d = _disc()
    z, mean = d.encode_solution(parse_infix("N1+N2*N3"))
    assert z.shape == (5, 12) and mean.shape == (12,)
    z2, _ = d.encode_solution(parse_infix("N1+N2*N3"))
    assert np.array_equal(z, z2)
    _, a = d.encode_solution(parse_infix("N1+N2"))
    _, b = d.encode_solution(parse_infix("N2+N1"))
    assert not np.allclose(a, b)


def test_unknown_token():
    with pytest.raises(ValueError):
        _disc().encode_solution(["+", "N1", "N9"])


def test_score_properties():
    d = _disc()
    rng = np.random.default_rng(0)
    zw = rng.normal(size=10)
    sols = [parse_infix(s) for s in ("N1+N2", "N1*N2-N3", "pi*N1")]
    t = d.score(zw, sols)
    assert np.all((t > 0) & (t < 1))
    base = d.params["x_t"].data.copy()
    d.params["x_t"].data[:] = 0.0
    assert np.array_equal(d.score(zw, sols), np.full(3, 0.5))
    d.params["x_t"].data = base
    sign = np.sign(d.score(zw, sols) - 0.5)
    prev = d.score(zw, sols)
    for f in (2.0, 4.0, 8.0, 16.0):
        d.params["x_t"].data = base * f
        cur = d.score(zw, sols)
        assert np.all(sign * (cur - prev) >= 0)
        prev = cur


def test_loss_limits():
    d = _disc()
    zw = ad.Tensor(np.ones((3, 10)))
    sols = [parse_infix("N1+N2")] * 3
    d.params["x_t"].data[:] = 0.0
    loss = d.contrastive_loss(zw, sols, [1, 0, 0])
    assert float(loss.data) == pytest.approx(3 * math.log(2))
    with pytest.raises(ValueError):
        d.contrastive_loss(zw, sols, [1, 1, 1])


def test_separated_scores_give_small_loss():
    d = _disc()
    zw = np.ones(10)
    pos, neg = parse_infix("N1+N2"), parse_infix("N1-N2")
    _, zp = d.encode_solution(pos)
    _, zn = d.encode_solution(neg)
    # X_t aligned with (zp - zn) makes the bilinear form positive for pos, negative for neg
    direction = np.outer(zw, zp - zn)
    losses = []
    for scale in (1.0, 10.0, 100.0):
        d.params["x_t"].data = direction * scale
        batch = ContrastBatch("p", [pos], [neg])
        losses.append(float(d.batch_loss(batch, zw).data))
    assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-3


def test_gradients():
    d = _disc(seed=3)
    rng = np.random.default_rng(1)
    sols = [parse_infix(s) for s in ("N1+N2", "N1*N2-N3", "pi*N1*N1", "N3/N1")]
    zw = ad.Tensor(rng.normal(size=(4, 10)))
    err = fd_check(lambda: d.contrastive_loss(zw, sols, [1, 0, 1, 0]), d.params, rng)
    assert err < 1e-4


def test_problem_vector_gradient_when_enabled():
    d = _disc(seed=4)
    rng = np.random.default_rng(2)
    zw = ad.Tensor(rng.normal(size=(1, 10)), requires_grad=True)
    batch = ContrastBatch("p", [parse_infix("N1+N2")], [parse_infix("N1-N2")])
    with ad.Tape() as tape:
        loss = d.batch_loss(batch, zw)
    ad.backward(tape, loss)
    assert zw.grad is not None and np.abs(zw.grad).sum() > 0


def test_fresh_scores_centred():
    d = _disc(seed=5, emb=32, hidden=64, dim=64)
    rng = np.random.default_rng(6)
    sols = [random_expr(rng, 3, n_quant=5) for _ in range(1000)]
    zw = rng.uniform(-1, 1, size=(1000, 64))
    assert abs(d.score(zw, sols).mean() - 0.5) < 0.1


def test_training_separates_toy_batches():
    d = _disc(seed=7)
    rng = np.random.default_rng(8)
    zw = np.tanh(rng.normal(size=10))
    pos = [parse_infix(s) for s in ("N1+N2", "N2+N1", "N1*N2")]
    neg = [parse_infix(s) for s in ("N1-N2", "N2/N1", "N1^N2")]
    batch = ContrastBatch("p", pos, neg)
    for _ in range(200):
        with ad.Tape() as tape:
            loss = d.batch_loss(batch, zw)
        ad.adam_step(d.params, ad.backward(tape, loss, d.params), 0.01)
    assert d.score(zw, pos).mean() - d.score(zw, neg).mean() > 0.3


def test_roc_auc():
    assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0


def test_state_round_trip():
    a, b = _disc(seed=1), _disc(seed=2)
    b.load_state(a.state())
    s = [parse_infix("N1+N2")]
    assert np.array_equal(a.score(np.ones(10), s), b.score(np.ones(10), s))
    assert to_prefix(s[0]) == ["+", "N1", "N2"]
