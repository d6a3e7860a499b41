import numpy as np
import pytest

from dmwp.dataio import Corpus, Mode
from dmwp.expr import depth, evaluate, matches_answer, op_count, parse_infix, render_infix
from dmwp.synth import synth_corpus
from dmwp.wda import WdaConfig, batch_augment, passes_pruning, wda_search
from conftest import make_problem
from oracles import exhaustive_solvable, literal_search


def test_students_instance(students):
    r = wda_search(students)
    assert r.ok and r.status == "found"
    assert evaluate(r.expr, students.values) == pytest.approx(15)
    assert passes_pruning(r.expr)
    assert r.iterations <= 50000


def test_product_reachable_in_first_layer():
    r = wda_search([3, 4], 12)
    assert r.ok and r.depth == 1 and evaluate(r.expr, [3, 4]) == 12


def test_budget_failure():
    r = wda_search([2], 1e9, WdaConfig(max_iterations=100))
    assert not r.ok and r.status == "budget" and r.iterations == 100


def test_bare_quantity_found_before_loop():
    r = wda_search([7, 9], 9)
    assert render_infix(r.expr) == "N2" and r.iterations == 0 and r.depth == 0


def test_exhausted_search_space():
    # one quantity, no constants, plus only: N1, N1+N1, ... never reaches a non-multiple
    cfg = WdaConfig(max_iterations=50, constants=(), ops=tuple(WdaConfig().ops[:1]))
    r = wda_search([2.0], 3.0, cfg)
    assert not r.ok


def test_pruning_rules():
    assert not passes_pruning(parse_infix("N1-N1"))
    assert not passes_pruning(parse_infix("(N1+N2)/(N1+N2)"))
    assert passes_pruning(parse_infix("(N1+N2)/(N2+N1)"))
    assert not passes_pruning(parse_infix("1+1"))
    assert passes_pruning(parse_infix("pi*N1"))
    assert not passes_pruning(parse_infix("pi+N1"))


def test_config_validation():
    with pytest.raises(ValueError):
        WdaConfig(max_iterations=0)


def test_matches_literal_transcription():
    rng = np.random.default_rng(5)
    for _ in range(40):
        n = int(rng.integers(1, 4))
        vals = rng.integers(1, 30, size=n).tolist()
        answer = float(rng.integers(1, 200))
        r = wda_search(vals, answer, WdaConfig(max_iterations=3000))
        e, attempts = literal_search(vals, answer, max_iter=3000)
        assert r.ok == (e is not None)
        assert r.iterations == attempts
        if e is not None:
            assert render_infix(r.expr) == render_infix(e)


def test_soundness_and_layering():
    corpus = synth_corpus(None, 150, seed=21).as_weak()
    for p in corpus:
        r = wda_search(p, cfg=WdaConfig(max_iterations=20000))
        assert r.iterations <= 20000
        if r.ok:
            assert matches_answer(evaluate(r.expr, p.values), p.answer)
            assert passes_pruning(r.expr)
            # a layer-L node always has a child from layer L-1, so its height is L
            assert depth(r.expr) == r.depth
            assert exhaustive_solvable(p.values, p.answer, max_ops=max(op_count(r.expr), 1))


def test_batch_augment_products_all_succeed():
    probs = [make_problem([a, b], a * b, pid=f"q{i}") for i, (a, b) in enumerate([(3, 4), (6, 7), (2, 11), (5, 5)])]
    s = batch_augment(Corpus(probs, Mode.WEAK))
    assert s.success_rate == 1.0 and list(s.results) == ["q0", "q1", "q2", "q3"]
    assert s.stats()["problems"] == 4


def test_batch_augment_empty_and_gold_skipped():
    assert batch_augment(Corpus([], Mode.WEAK)).results == {}
    full = synth_corpus(None, 5, seed=1)
    assert batch_augment(full).results == {}


def test_parallel_matches_serial():
    corpus = synth_corpus(None, 30, seed=8).as_weak()
    cfg = WdaConfig(max_iterations=5000)
    a = batch_augment(corpus, cfg, workers=1)
    b = batch_augment(corpus, cfg, workers=2)
    assert list(a.results) == list(b.results)
    assert [(r.iterations, r.ok and render_infix(r.expr)) for r in a.results.values()] == \
           [(r.iterations, r.ok and render_infix(r.expr)) for r in b.results.values()]
