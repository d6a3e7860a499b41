"""Built-in parametric word-problem templates for desk-scale experiments."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .dataio import Corpus, DataError, Mode, Problem, build_problem, infer_mode, strip_gold
from .expr import evaluate, parse_infix

NAMES = ["Tom", "Lily", "Sam", "Mia", "Ben", "Ana", "Leo", "Zoe"]
OBJECTS = ["apples", "pencils", "marbles", "stickers", "books", "cards", "shells", "stamps"]
VEHICLES = ["car", "bus", "train", "truck", "cyclist"]


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _distinct(rng, lo, hi, k):
    return [int(v) for v in rng.choice(np.arange(lo, hi + 1), size=k, replace=False)]


def sum_parts(rng):
    a, b = _distinct(rng, 3, 90, 2)
    name, obj = _pick(rng, NAMES), _pick(rng, OBJECTS)
    if rng.random() < 0.5:
        return f"{name} has {a} {obj} and buys {b} more {obj} . How many {obj} does {name} have now ?", "N1+N2"
    return f"There are {a} red {obj} and {b} blue {obj} in a box . How many {obj} are there in total ?", "N1+N2"


def remove(rng):
    b, a = sorted(_distinct(rng, 3, 95, 2))
    name, obj = _pick(rng, NAMES), _pick(rng, OBJECTS)
    if rng.random() < 0.5:
        return f"{name} had {a} {obj} and gave away {b} of them . How many {obj} are left ?", "N1-N2"
    return (f"{name} gave away {b} {obj} from a collection of {a} {obj} . How many {obj} remain ?",
            "N2-N1")


def rate_time(rng):
    a = int(rng.integers(20, 120))
    b = int(rng.integers(2, 12))
    veh = _pick(rng, VEHICLES)
    if rng.random() < 0.5:
        return f"A {veh} travels at {a} km per hour for {b} hours . How far does it travel ?", "N1*N2"
    return f"A {veh} drives for {b} hours at a speed of {a} km per hour . What distance does it cover ?", "N1*N2"


def share(rng):
    b = int(rng.integers(2, 12))
    q = int(rng.integers(2, 15))
    a = b * q
    obj = _pick(rng, OBJECTS)
    if rng.random() < 0.5:
        return f"{a} {obj} are shared equally among {b} children . How many {obj} does each child get ?", "N1/N2"
    return f"{b} children share {a} {obj} equally . How many {obj} does each child receive ?", "N2/N1"


def inclusion_exclusion(rng):
    both, only_c, only_m, none = _distinct(rng, 2, 40, 4)
    total = both + only_c + only_m + none
    chinese, math_ = both + only_c, both + only_m
    return (f"There are {total} students taking Chinese and math exams , {chinese} students passed the "
            f"Chinese exam , {math_} students passed the math exam , {none} students failed both exams . "
            f"How many students pass both exams ?", "N2+N3-(N1-N4)")


def unit_price_total(rng):
    a = int(rng.integers(2, 15))
    b = int(rng.integers(2, 20))
    c = int(rng.integers(3, 40))
    name, obj = _pick(rng, NAMES), _pick(rng, OBJECTS)
    return (f"{name} buys {a} {obj} at {b} dollars each and a bag for {c} dollars . "
            f"How much does {name} pay in total ?", "N1*N2+N3")


def change(rng):
    b = int(rng.integers(2, 10))
    c = int(rng.integers(2, 12))
    a = b * c + int(rng.integers(1, 60))
    name, obj = _pick(rng, NAMES), _pick(rng, OBJECTS)
    return (f"{name} has {a} dollars and spends it on {b} {obj} costing {c} dollars each . "
            f"How much money is left ?", "N1-N2*N3")


def pack_boxes(rng):
    c = int(rng.integers(2, 10))
    total = c * int(rng.integers(3, 20))
    a = int(rng.integers(1, total))
    b = total - a
    obj = _pick(rng, OBJECTS)
    return (f"A class collects {a} {obj} on Monday and {b} {obj} on Tuesday , then packs them into "
            f"{c} equal boxes . How many {obj} are in each box ?", "(N1+N2)/N3")


def circle(rng):
    a = int(rng.integers(2, 30))
    if rng.random() < 0.5:
        return f"A circular garden has a radius of {a} meters . What is the area of the garden ?", "pi*N1*N1"
    return f"A wheel has a diameter of {a} cm . How long is the circumference of the wheel ?", "pi*N1"


def rope_cut(rng):
    b = int(rng.integers(2, 30))
    c = int(rng.integers(2, 30))
    a = b + c + int(rng.integers(1, 40))
    return (f"A rope is {a} meters long . {b} meters are cut off , and then another {c} meters are cut off . "
            f"How long is the rope now ?", "N1-N2-N3")


def workers(rng):
    a = int(rng.integers(2, 12))
    b = int(rng.integers(2, 15))
    c = int(rng.integers(2, 10))
    obj = _pick(rng, OBJECTS)
    return (f"{a} workers each pack {b} boxes of {obj} per day . How many boxes do they pack in {c} days ?",
            "N1*N2*N3")


def profit(rng):
    a = int(rng.integers(2, 20))
    b = int(rng.integers(2, 30))
    c = b + int(rng.integers(1, 20))
    name, obj = _pick(rng, NAMES), _pick(rng, OBJECTS)
    return (f"{name} buys {a} {obj} for {b} dollars each and sells each one for {c} dollars . "
            f"What is the total profit ?", "N1*(N3-N2)")


def fence_posts(rng):
    b = int(rng.integers(2, 10))
    a = b * int(rng.integers(2, 20))
    return (f"A straight fence is {a} meters long with a post every {b} meters , including both ends . "
            f"How many posts are there ?", "N1/N2+1")


def two_items(rng):
    a, b, c, d = (int(rng.integers(2, 13)) for _ in range(4))
    name = _pick(rng, NAMES)
    return (f"{name} buys {a} pens at {b} dollars each and {c} notebooks at {d} dollars each . "
            f"How much money is spent ?", "N1*N2+N3*N4")


TEMPLATES: dict[str, Callable] = {
    "sum_parts": sum_parts,
    "remove": remove,
    "rate_time": rate_time,
    "share": share,
    "inclusion_exclusion": inclusion_exclusion,
    "unit_price_total": unit_price_total,
    "change": change,
    "pack_boxes": pack_boxes,
    "circle": circle,
    "rope_cut": rope_cut,
    "workers": workers,
    "profit": profit,
    "fence_posts": fence_posts,
    "two_items": two_items,
}

# the ten templates of the desk-scale experiments
DESK_TEMPLATES = ("sum_parts", "remove", "rate_time", "share", "inclusion_exclusion", "unit_price_total",
                  "change", "pack_boxes", "circle", "profit")


def synth_corpus(template_set: Sequence[str] | None, n: int, seed: int, mode: Mode | str = Mode.FULL) -> Corpus:
    """Deterministic synthetic corpus; ``template_set=None`` uses every template."""
    if n < 1:
        raise ValueError("n must be at least 1")
    names = list(TEMPLATES) if template_set is None else list(template_set)
    for t in names:
        if t not in TEMPLATES:
            raise DataError(f"unknown template id {t!r}")
    rng = np.random.default_rng(seed)
    problems: list[Problem] = []
    for i in range(n):
        tid = names[int(rng.integers(len(names)))]
        text, eq = TEMPLATES[tid](rng)
        tmp = build_problem(f"s{seed}-{i:05d}", text, 0.0, None, template=tid)
        gold = parse_infix(eq, tmp.vocab())
        answer = evaluate(gold, tmp.values)
        problems.append(Problem(tmp.id, text, tmp.tokens, tmp.mapping, answer, gold, False, tid))
    corpus = Corpus(problems, Mode.FULL)
    mode = Mode.parse(mode)
    if mode is Mode.WEAK:
        return corpus.as_weak()
    return corpus


def semi_weak(corpus: Corpus, weak_fraction: float, seed: int) -> Corpus:
    """Drop gold equations from a random ``weak_fraction`` of problems."""
    rng = np.random.default_rng(seed)
    drop = rng.random(len(corpus)) < weak_fraction
    probs = [strip_gold(p) if d else p for p, d in zip(corpus.problems, drop)]
    return Corpus(probs, infer_mode(probs))


def instance(template: str, text_values: Sequence[float]) -> Problem:
    """Rebuild an inclusion-exclusion instance with chosen slot values (total, first, second, neither)."""
    if template != "inclusion_exclusion":
        raise DataError("only the inclusion_exclusion template supports explicit slots")
    total, chinese, math_, none = text_values
    text = (f"There are {total} students taking Chinese and math exams , {chinese} students passed the "
            f"Chinese exam , {math_} students passed the math exam , {none} students failed both exams . "
            f"How many students pass both exams ?")
    return build_problem("ie", text, chinese + math_ - (total - none), "N2+N3-(N1-N4)", template=template)
