"""Positive variants (commutative / associative swaps) and disturbed negatives."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .dataio import Problem
from .expr import (
    DEFAULT_CONSTANTS,
    EPS,
    OPS,
    Binary,
    Expr,
    Op,
    canonical_key,
    from_prefix,
    matches_answer,
    render_infix,
    to_prefix,
    try_evaluate,
)


class NegativeSamplingError(RuntimeError):
    """No acceptable negative could be drawn within the retry budget."""


@dataclass(frozen=True)
class AugmentConfig:
    disturbance: float = 0.3  # per-token mutation probability
    max_positive_variants: int = 32
    negatives_per_positive: int = 2
    max_retries: int = 100
    ops: tuple[Op, ...] = OPS
    constants: tuple[float, ...] = DEFAULT_CONSTANTS

    def __post_init__(self):
        if not 0.0 <= self.disturbance <= 1.0:
            raise ValueError("disturbance must lie in [0, 1]")
        if self.max_positive_variants < 1 or self.negatives_per_positive < 1:
            raise ValueError("variant and negative counts must be at least 1")


@dataclass
class ContrastBatch:
    problem_id: str
    positives: list[Expr]
    negatives: list[Expr]

    def to_record(self, constants: Sequence[float] = DEFAULT_CONSTANTS) -> dict:
        return {"id": self.problem_id,
                "positives": [render_infix(e) for e in self.positives],
                "negatives": [render_infix(e) for e in self.negatives]}


# -- positives ---------------------------------------------------------------

def _local_rewrites(e: Binary) -> Iterator[Expr]:
    """Rewrites applicable at the root of ``e``."""
    op, a, b = e.op, e.left, e.right
    if op in (Op.ADD, Op.MUL):
        yield Binary(op, b, a)
    if op is Op.SUB and isinstance(a, Binary) and a.op in (Op.ADD, Op.SUB):
        # (A +- B) - C  ->  (A - C) +- B
        yield Binary(a.op, Binary(Op.SUB, a.left, b), a.right)
    if op in (Op.ADD, Op.SUB) and isinstance(a, Binary) and a.op is Op.SUB:
        # (A - C) +- B  ->  (A +- B) - C
        yield Binary(Op.SUB, Binary(op, a.left, b), a.right)
    if op is Op.DIV and isinstance(a, Binary) and a.op in (Op.MUL, Op.DIV):
        # (A * B) / C -> (A / C) * B ;  (A / B) / C -> (A / C) / B
        yield Binary(a.op, Binary(Op.DIV, a.left, b), a.right)
    if op is Op.MUL and isinstance(a, Binary) and a.op is Op.DIV:
        # (A / C) * B -> (A * B) / C
        yield Binary(Op.DIV, Binary(Op.MUL, a.left, b), a.right)


def _rewrites(e: Expr) -> Iterator[Expr]:
    """One rewrite applied at any single subtree."""
    if not isinstance(e, Binary):
        return
    yield from _local_rewrites(e)
    for sub in _rewrites(e.left):
        yield Binary(e.op, sub, e.right)
    for sub in _rewrites(e.right):
        yield Binary(e.op, e.left, sub)


def gen_positives(gold: Expr, cfg: AugmentConfig = AugmentConfig()) -> list[Expr]:
    """Breadth-first closure of the swap rules, gold first, capped at ``max_positive_variants``."""
    out = [gold]
    seen = {canonical_key(gold)}
    queue = deque([gold])
    while queue and len(out) < cfg.max_positive_variants:
        cur = queue.popleft()
        for nxt in _rewrites(cur):
            k = canonical_key(nxt)
            if k in seen:
                continue
            seen.add(k)
            out.append(nxt)
            queue.append(nxt)
            if len(out) >= cfg.max_positive_variants:
                break
    return out


# -- negatives ---------------------------------------------------------------

def _leaf_tokens(problem: Problem, constants: Sequence[float]) -> list[str]:
    return [f"N{i}" for i in range(1, problem.num_count + 1)] + [f"C{j}" for j in range(1, len(constants) + 1)]


def disturb(positive: Expr, problem: Problem, rng: np.random.Generator,
            cfg: AugmentConfig = AugmentConfig()) -> Expr:
    """Replace each prefix token with probability ``cfg.disturbance`` by a same-arity alternative."""
    tokens = to_prefix(positive, cfg.constants)
    op_syms = [op.value for op in cfg.ops]
    leaf_syms = _leaf_tokens(problem, cfg.constants)
    out = []
    for tok in tokens:
        pool = op_syms if tok in op_syms else leaf_syms
        if rng.random() < cfg.disturbance:
            alts = [t for t in pool if t != tok]
            if alts:
                tok = alts[int(rng.integers(len(alts)))]
        out.append(tok)
    return from_prefix(out, cfg.constants)


def gen_negatives(positive: Expr, problem: Problem, rng: np.random.Generator,
                  cfg: AugmentConfig = AugmentConfig(), count: int | None = None) -> list[Expr]:
    """Disturbed copies of ``positive`` whose value misses the answer by more than the tolerance.

    Candidates reaching the answer, or failing to evaluate, are redrawn.
    """
    count = cfg.negatives_per_positive if count is None else count
    out: list[Expr] = []
    for _ in range(count):
        for _attempt in range(cfg.max_retries):
            cand = disturb(positive, problem, rng, cfg)
            v = try_evaluate(cand, problem.values)
            if v is not None and not matches_answer(v, problem.answer, EPS):
                out.append(cand)
                break
        else:
            raise NegativeSamplingError(
                f"problem {problem.id}: no negative after {cfg.max_retries} draws "
                f"(disturbance={cfg.disturbance})")
    return out


def make_batch(problem: Problem, positives: Sequence[Expr], rng: np.random.Generator,
               cfg: AugmentConfig = AugmentConfig()) -> ContrastBatch:
    pos = []
    seen = set()
    for e in positives:
        k = canonical_key(e)
        if k not in seen:
            seen.add(k)
            pos.append(e)
    if not pos:
        raise ValueError(f"problem {problem.id}: no positives")
    for e in pos:
        if not matches_answer(try_evaluate(e, problem.values), problem.answer, EPS):
            raise ValueError(f"problem {problem.id}: positive {render_infix(e)} misses the answer")
    neg = [n for e in pos for n in gen_negatives(e, problem, rng, cfg)]
    return ContrastBatch(problem.id, pos, neg)


def write_batches(batches: Sequence[ContrastBatch], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in batches:
            fh.write(json.dumps(b.to_record()) + "\n")

