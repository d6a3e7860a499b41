import math

import numpy as np
import pytest

from dmwp.expr import (
    Binary,
    Constant,
    EvaluationError,
    ExprError,
    ExprSyntaxError,
    Op,
    Quantity,
    Vocabulary,
    canonical_key,
    evaluate,
    from_prefix,
    matches_answer,
    number_map,
    parse_infix,
    render_infix,
    to_prefix,
    try_evaluate,
)
from helpers import postfix_eval, random_expr


def test_literal_equation_evaluates_to_15():
    e = parse_infix("25+20-(40-10)", literals=True)
    assert evaluate(e, []) == 15


def test_single_quantity():
    assert parse_infix("N1", Vocabulary(num_count=1)) == Quantity(1)


def test_syntax_error_reports_position():
    with pytest.raises(ExprSyntaxError):
        parse_infix("N1+*N2")


def test_quantity_out_of_range():
    with pytest.raises(ExprError):
        parse_infix("N3", Vocabulary(num_count=2))


def test_left_assoc_division():
    assert evaluate(parse_infix("840/6/70+630", literals=True), []) == pytest.approx(632)


def test_division_by_zero():
    with pytest.raises(EvaluationError):
        evaluate(parse_infix("N1/(N1-N1)"), [3.0])
    assert try_evaluate(parse_infix("N1/(N1-N1)"), [3.0]) is None


def test_pow_errors_and_precedence():
    with pytest.raises(EvaluationError):
        evaluate(parse_infix("N1^N2"), [0.0, -1.0])
    with pytest.raises(EvaluationError):
        evaluate(parse_infix("N1^N2"), [10.0, 400.0])
    assert evaluate(parse_infix("N1^N2^N3"), [2, 3, 2]) == 2 ** 9
    assert evaluate(parse_infix("N1*N2^N3"), [2, 3, 2]) == 18


def test_pi_constant():
    e = parse_infix("pi*N1*N1")
    assert evaluate(e, [2.0]) == pytest.approx(4 * math.pi)
    assert to_prefix(e) == ["*", "*", "C2", "N1", "N1"]


def test_prefix_examples():
    assert to_prefix(parse_infix("N1+N2")) == ["+", "N1", "N2"]
    assert from_prefix(["-", "+", "N1", "N2", "N3"]) == parse_infix("(N1+N2)-N3")
    with pytest.raises(ExprError):
        from_prefix(["+", "N1"])
    with pytest.raises(ExprError):
        from_prefix(["N1", "N2"])


def test_canonical_key():
    assert canonical_key(parse_infix("N1+N2")) != canonical_key(parse_infix("N2+N1"))
    e = parse_infix("N1+N2")
    assert canonical_key(e) == canonical_key(parse_infix(render_infix(e)))
    assert canonical_key(parse_infix("(N1+N2)+N3")) != canonical_key(parse_infix("N1+(N2+N3)"))


def test_number_map():
    text = ("There are 40 students taking Chinese and math exams , 25 students passed the Chinese exam , "
            "20 students passed the math exam , 10 students failed both exams .")
    toks, mapping = number_map(text)
    assert [m.value for m in mapping] == [40, 25, 20, 10]
    assert [t for t in toks if t.startswith("N")] == ["N1", "N2", "N3", "N4"]
    spans = [m.span for m in mapping]
    assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))

    toks, mapping = number_map("no numbers here")
    assert toks == ["no", "numbers", "here"] and mapping == ()

    _, mapping = number_map("3.5 km in 0.5 h")
    assert [m.value for m in mapping] == [3.5, 0.5]


def test_percent_numeral():
    _, mapping = number_map("a 20% discount")
    assert mapping[0].value == pytest.approx(0.2)


def test_matches_answer_tolerance():
    assert matches_answer(15.0014, 15.0)
    assert not matches_answer(15.002, 15.0)
    assert matches_answer(1000.05, 1000.0)
    assert not matches_answer(1000.2, 1000.0)
    assert not matches_answer(None, 1.0)


def test_render_parenthesization():
    e = Binary(Op.SUB, Quantity(1), Binary(Op.SUB, Quantity(2), Quantity(3)))
    assert render_infix(e) == "N1-(N2-N3)"
    e = Binary(Op.POW, Binary(Op.POW, Quantity(1), Quantity(2)), Quantity(3))
    assert render_infix(e) == "(N1^N2)^N3"
    assert render_infix(Binary(Op.MUL, Constant(math.pi), Quantity(1))) == "pi*N1"


def test_round_trips_10k_random_exprs():
    rng = np.random.default_rng(0)
    vocab = Vocabulary(num_count=6)
    for _ in range(10_000):
        e = random_expr(rng, 6, n_quant=6)
        assert parse_infix(render_infix(e), vocab) == e
        assert from_prefix(to_prefix(e)) == e


def test_evaluation_matches_postfix_oracle():
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(3000):
        e = random_expr(rng, 5, n_quant=4)
        vals = rng.uniform(0.5, 9.0, size=4).round(2).tolist()
        v = try_evaluate(e, vals)
        ref = postfix_eval(to_prefix(e), vals)
        if v is None:
            assert ref is None
            continue
        assert ref is not None
        assert abs(v - ref) <= 1e-12 * max(1.0, abs(ref))
        assert evaluate(e, vals) == v  # bit-identical on repeat
        checked += 1
    assert checked > 1000


def test_negative_base_with_near_integer_power():
    vals = [2.0, 9.0, 0.1]
    # 1 + 0.1 - 0.1 is not exactly 1 in floating point
    assert evaluate(parse_infix("(N1-N2)^(1+N3-N3)"), vals) == pytest.approx(-7.0)
    assert try_evaluate(parse_infix("(N1-N2)^(N3)"), vals) is None
