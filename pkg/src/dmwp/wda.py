"""Layered answer-driven equation search used to seed buffers of answer-only problems.

Layer 0 holds the quantities followed by the constants.  Each layer combines
every expression discovered in the previous layer with every expression
found so far, under every operator, until one hits the answer or the
attempt budget runs out.  Expressions are hash-consed into an arena, so two
nodes are structurally identical iff they share an id.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .dataio import Corpus, Problem
from .expr import (
    DEFAULT_CONSTANTS,
    EPS,
    OPS,
    Binary,
    Constant,
    EvaluationError,
    Expr,
    Op,
    Quantity,
    apply_op,
    leaves,
    matches_answer,
    ops_in,
)

COMMUTATIVE = (Op.ADD, Op.MUL)


@dataclass(frozen=True)
class WdaConfig:
    max_iterations: int = 50000
    constants: tuple[float, ...] = DEFAULT_CONSTANTS
    ops: tuple[Op, ...] = OPS
    eps: float = EPS

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class WdaResult:
    expr: Expr | None
    iterations: int
    depth: int  # layer that produced the hit; 0 for a bare quantity
    status: str  # "found" | "budget" | "exhausted"
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.expr is not None


def passes_pruning(e: Expr) -> bool:
    """False for ``X-X`` / ``X/X`` subtrees, no quantity, or pi without a multiplication."""
    if _has_self_cancel(e):
        return False
    lv = leaves(e)
    if not any(isinstance(x, Quantity) for x in lv):
        return False
    if any(isinstance(x, Constant) and x.value == math.pi for x in lv) and Op.MUL not in ops_in(e):
        return False
    return True


def _has_self_cancel(e: Expr) -> bool:
    if not isinstance(e, Binary):
        return False
    if e.op in (Op.SUB, Op.DIV) and e.left == e.right:
        return True
    return _has_self_cancel(e.left) or _has_self_cancel(e.right)


class _Arena:
    """Flat node store: value, flags and children per id."""

    __slots__ = ("value", "has_q", "has_pi", "has_mul", "kids", "leaf")

    def __init__(self):
        self.value: list[float] = []
        self.has_q: list[bool] = []
        self.has_pi: list[bool] = []
        self.has_mul: list[bool] = []
        self.kids: list[tuple | None] = []
        self.leaf: list[Expr | None] = []

    def add_leaf(self, e: Expr, value: float) -> int:
        self.value.append(value)
        self.has_q.append(isinstance(e, Quantity))
        self.has_pi.append(isinstance(e, Constant) and e.value == math.pi)
        self.has_mul.append(False)
        self.kids.append(None)
        self.leaf.append(e)
        return len(self.value) - 1

    def add(self, op: Op, a: int, b: int, value: float) -> int:
        self.value.append(value)
        self.has_q.append(self.has_q[a] or self.has_q[b])
        self.has_pi.append(self.has_pi[a] or self.has_pi[b])
        self.has_mul.append(op is Op.MUL or self.has_mul[a] or self.has_mul[b])
        self.kids.append((op, a, b))
        self.leaf.append(None)
        return len(self.value) - 1

    def expr(self, i: int) -> Expr:
        k = self.kids[i]
        if k is None:
            return self.leaf[i]
        return Binary(k[0], self.expr(k[1]), self.expr(k[2]))


def wda_search(problem: Problem | Sequence[float], answer: float | None = None,
               cfg: WdaConfig = WdaConfig()) -> WdaResult:
    """Search for an equation over the problem's quantities reaching its answer.

    ``problem`` may also be a plain list of quantity values, with ``answer``
    given separately.
    """
    t0 = time.perf_counter()
    if isinstance(problem, Problem):
        values = list(problem.values)
        answer = problem.answer if answer is None else answer
    else:
        values = [float(v) for v in problem]
    if answer is None:
        raise ValueError("an answer is required")
    if not values:
        return WdaResult(None, 0, 0, "exhausted", time.perf_counter() - t0)

    arena = _Arena()
    seeds = [arena.add_leaf(Quantity(i), v) for i, v in enumerate(values, 1)]
    seeds += [arena.add_leaf(Constant(c), c) for c in cfg.constants]
    for s in seeds:
        if arena.has_q[s] and matches_answer(arena.value[s], answer, cfg.eps):
            return WdaResult(arena.expr(s), 0, 0, "found", time.perf_counter() - t0)

    def hit(i: int) -> bool:
        return (arena.has_q[i] and (arena.has_mul[i] or not arena.has_pi[i])
                and matches_answer(arena.value[i], answer, cfg.eps))

    value = arena.value
    r1 = list(seeds)
    r3_old: list[int] = []  # everything discovered before the current r1
    it = 0
    layer = 0
    while r1:
        layer += 1
        r2: list[int] = []
        for a, i in enumerate(r1):
            # unordered pairs: partners from older layers, then r1 from position a on
            for j in r3_old + r1[a:]:
                for op in cfg.ops:
                    orders = ((i, j),) if (op in COMMUTATIVE or i == j) else ((i, j), (j, i))
                    for x, y in orders:
                        if it == cfg.max_iterations:
                            return WdaResult(None, it, layer, "budget", time.perf_counter() - t0)
                        it += 1
                        if x == y and op in (Op.SUB, Op.DIV):
                            continue
                        try:
                            v = apply_op(op, value[x], value[y])
                        except EvaluationError:
                            continue
                        n = arena.add(op, x, y, v)
                        if hit(n):
                            return WdaResult(arena.expr(n), it, layer, "found", time.perf_counter() - t0)
                        r2.append(n)
        r3_old = r3_old + r1
        r1 = r2
    return WdaResult(None, it, layer, "exhausted", time.perf_counter() - t0)


@dataclass
class AugmentSummary:
    results: dict[str, WdaResult] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def success_rate(self) -> float:
        if not self.results:
            return 0.0
        return sum(r.ok for r in self.results.values()) / len(self.results)

    @property
    def mean_iterations(self) -> float:
        if not self.results:
            return 0.0
        return sum(r.iterations for r in self.results.values()) / len(self.results)

    def depth_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for r in self.results.values():
            if r.ok:
                hist[r.depth] = hist.get(r.depth, 0) + 1
        return dict(sorted(hist.items()))

    def stats(self) -> dict:
        return {"problems": len(self.results), "success_rate": self.success_rate,
                "mean_iterations": self.mean_iterations, "depths": self.depth_histogram(),
                "seconds": self.seconds}


def _search_one(args):
    p, cfg = args
    return p.id, wda_search(p, cfg=cfg)


def batch_augment(corpus: Corpus | Sequence[Problem], cfg: WdaConfig = WdaConfig(),
                  workers: int = 1) -> AugmentSummary:
    """Run the search on every problem without a gold equation."""
    t0 = time.perf_counter()
    probs = corpus.problems if isinstance(corpus, Corpus) else list(corpus)
    todo = [p for p in probs if p.gold is None]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            found = dict(pool.map(_search_one, [(p, cfg) for p in todo], chunksize=8))
    else:
        found = dict(_search_one((p, cfg)) for p in todo)
    # merge in corpus order so output does not depend on completion order
    results = {p.id: found[p.id] for p in todo}
    return AugmentSummary(results, time.perf_counter() - t0)
