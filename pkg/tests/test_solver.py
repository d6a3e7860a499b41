import itertools
import math

import numpy as np
import pytest

from dmwp import autodiff as ad
from dmwp.expr import Op, from_prefix, parse_infix
from dmwp.solver import Solver, SolverConfig, build_input_vocab
from dmwp.synth import synth_corpus
from conftest import make_problem
from helpers import fd_check


def _solver(problems, seed=0, emb=8, hidden=16, **kw):
    return Solver(SolverConfig(emb, hidden, **kw), build_input_vocab(problems), np.random.default_rng(seed))


@pytest.fixture
def corpus():
    return synth_corpus(None, 12, seed=4)


def test_encoding_shapes_and_determinism(corpus):
    s = _solver(corpus.problems)
    p = corpus.problems[0]
    enc = s.encode([p, p])
    m = len(p.tokens)
    assert enc.outputs.shape[:2] == (2, m)
    assert np.array_equal(enc.outputs.data[0], enc.outputs.data[1])
    assert np.array_equal(enc.pooled.data, s.encode([p, p]).pooled.data)


def test_encoding_is_order_sensitive():
    p = make_problem([3, 4], 7)
    toks = list(p.tokens)
    toks[0], toks[2] = toks[2], toks[0]
    q = type(p)(p.id, p.raw_text, tuple(toks), p.mapping, p.answer)
    s = _solver([p])
    assert not np.allclose(s.encode([p]).outputs.data, s.encode([q]).outputs.data)


def test_log_prob_nonpositive(corpus):
    s = _solver(corpus.problems)
    for p in corpus:
        assert s.sequence_log_prob(p, p.gold) <= 0


def test_uniform_scorer_gives_n_log_c():
    p = make_problem([3, 4, 5], 35, "(N1+N2)*N3")
    s = _solver([p])
    for name in ("op_w", "op_b", "leaf_w"):
        s.params[name].data[:] = 0.0
    c = s.out.n_ops + len(s.out.constants) + p.num_count
    n = 5
    assert s.sequence_log_prob(p, p.gold) == pytest.approx(n * math.log(1.0 / c), abs=1e-9)


def test_weighted_loss_reductions(corpus):
    s = _solver(corpus.problems)
    p = corpus.problems[0]
    alt = parse_infix("N1+N2") if p.num_count >= 2 else parse_infix("N1*1")
    lp_g = s.sequence_log_prob(p, p.gold)
    lp_a = s.sequence_log_prob(p, alt)
    with ad.no_grad():
        one, _ = s.weighted_loss([p], [[p.gold]], [[1.0]])
        half, _ = s.weighted_loss([p], [[p.gold, alt]], [[0.5, 0.5]])
    assert float(one.data) == pytest.approx(-lp_g, abs=1e-12)
    assert float(half.data) == pytest.approx(-(lp_g + lp_a) / 2, abs=1e-12)

    with ad.Tape() as tape:
        zero, _ = s.weighted_loss([p], [[p.gold, alt]], [[0.0, 0.0]])
    grads = ad.backward(tape, zero, s.params)
    assert float(zero.data) == 0.0
    assert all(not g.any() for g in grads.values())

    with pytest.raises(ValueError):
        s.weighted_loss([p], [[]], [[]])
    with pytest.raises(ValueError):
        s.weighted_loss([p], [[p.gold]], [[-1.0]])


def test_loss_linear_in_weights(corpus):
    s = _solver(corpus.problems)
    probs = corpus.problems[:3]
    targets = [[p.gold, parse_infix("N1*N1")] for p in probs]
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(3, 2)).tolist()
    b = rng.uniform(size=(3, 2)).tolist()
    ab = (np.array(a) + np.array(b)).tolist()
    with ad.no_grad():
        la = float(s.weighted_loss(probs, targets, a)[0].data)
        lb = float(s.weighted_loss(probs, targets, b)[0].data)
        lab = float(s.weighted_loss(probs, targets, ab)[0].data)
    assert lab == pytest.approx(la + lb, rel=1e-12)


def test_weighted_loss_gradients(corpus):
    s = _solver(corpus.problems[:4], seed=1)
    probs = corpus.problems[:4]
    targets = [[p.gold, parse_infix("N1*N1-N1")] if i % 2 else [p.gold] for i, p in enumerate(probs)]
    weights = [[0.7, 0.3] if len(t) == 2 else [1.0] for t in targets]
    err = fd_check(lambda: s.weighted_loss(probs, targets, weights)[0], s.params, np.random.default_rng(2))
    assert err < 1e-4


def test_beam_contracts(corpus):
    s = _solver(corpus.problems, seed=3)
    probs = corpus.problems
    beams = s.beam_decode(probs, 5)
    for p, bs in zip(probs, beams):
        assert 1 <= len(bs) <= 5
        lps = [lp for _, lp in bs]
        assert all(a >= b for a, b in zip(lps, lps[1:])) and all(lp <= 0 for lp in lps)
        for toks, lp in bs:
            e = from_prefix(toks)
            assert len(toks) <= s.max_len(p)
            assert s.sequence_log_prob(p, e) == pytest.approx(lp, abs=1e-9)
        greedy = s.greedy_decode(p)
        one = s.beam_decode([p], 1)[0][0]
        assert one[0] == greedy[0] and one[1] == pytest.approx(greedy[1], abs=1e-9)


def _toy():
    """Decoder over the three tokens {+, N1, N2}."""
    p = make_problem([3, 4], 7)
    s = Solver(SolverConfig(4, 6, ops=(Op.ADD,), constants=(), max_quantities=2), build_input_vocab([p]),
               np.random.default_rng(0))
    return p, s


def _all_sequences(limit):
    out = []
    for n in range(1, limit + 1):
        for seq in itertools.product(["+", "N1", "N2"], repeat=n):
            try:
                from_prefix(list(seq))
            except ValueError:
                continue
            out.append(list(seq))
    return out


def _brute_force(s, p, limit):
    seqs = _all_sequences(limit)
    scored = [(s.sequence_log_prob(p, from_prefix(q)), q) for q in seqs]
    return sorted(scored, key=lambda x: -x[0])


@pytest.mark.parametrize("k", [2, 3, 4])
def test_toy_beam_matches_enumeration(k):
    p, s = _toy()
    # hand-set: damp "+" and make the two quantities distinguishable
    s.params["op_b"].data[:] = -1.0
    s.params["leaf_w"].data[:] = np.eye(6) * 3.0
    ranked = _brute_force(s, p, 3)
    got = s.beam_decode([p], k, max_len=[3])[0]
    assert [t for t, _ in got] == [q for _, q in ranked[:k]]
    assert [lp for _, lp in got] == pytest.approx([lp for lp, _ in ranked[:k]], abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_wide_beam_is_exhaustive(seed):
    p, s = _toy()
    for t in s.params.values():
        t.data = np.random.default_rng(seed).normal(scale=2.0, size=t.shape)
    ranked = _brute_force(s, p, 3)
    got = s.beam_decode([p], len(ranked), max_len=[3])[0]
    assert [t for t, _ in got] == [q for _, q in ranked]


def test_overfit_single_pair():
    p = make_problem([6, 2, 5], 8, "N1/N2+N3")
    s = _solver([p], seed=5, emb=16, hidden=32)
    for _ in range(200):
        with ad.Tape() as tape:
            loss, _ = s.weighted_loss([p], [[p.gold]], [[1.0]])
        ad.adam_step(s.params, ad.backward(tape, loss, s.params), 0.01)
    gold_lp = s.sequence_log_prob(p, p.gold)
    rng = np.random.default_rng(0)
    toks = s.out.tokens[:s.out.n_ops + len(s.out.constants) + p.num_count]
    n_ops = s.out.n_ops
    for _ in range(50):
        seq, need = [], 1
        while need:
            t = toks[int(rng.integers(len(toks)))] if len(seq) < 5 else toks[n_ops + int(rng.integers(len(toks) - n_ops))]
            seq.append(t)
            need += 1 if t in toks[:n_ops] else -1
        e = from_prefix(seq)
        if e != p.gold:
            assert s.sequence_log_prob(p, e) < gold_lp


def test_state_round_trip(corpus, tmp_path):
    s = _solver(corpus.problems, seed=1)
    ad.save_checkpoint(tmp_path / "s.ckpt", s.state())
    t = _solver(corpus.problems, seed=2)
    t.load_state(ad.load_checkpoint(tmp_path / "s.ckpt"))
    p = corpus.problems[0]
    assert s.sequence_log_prob(p, p.gold) == t.sequence_log_prob(p, p.gold)


def test_too_many_quantities():
    p = make_problem(list(range(1, 11)), 3, "N1+N2")
    s = _solver([p])
    with pytest.raises(ValueError):
        s.encode([p])
