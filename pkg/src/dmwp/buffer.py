"""Per-problem solution buffers and their weighting schedule."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataio import Corpus, DataError, Mode
from .expr import (
    DEFAULT_CONSTANTS,
    EPS,
    Expr,
    ExprError,
    canonical_key,
    from_prefix,
    matches_answer,
    render_infix,
    to_prefix,
    try_evaluate,
)

log = logging.getLogger(__name__)

GOLD, WDA, MODEL = "gold", "wda", "model"
VARIANTS = ("full_method", "one_stage", "non_probabilistic", "gold_only")


@dataclass
class BufferEntry:
    expr: Expr
    key: str
    origin: str
    epoch: int | None = None  # epoch at which the model produced it
    logp: float | None = None
    t: float | None = None
    weight: float = 1.0


@dataclass
class SolutionBuffer:
    problem_id: str
    answer: float
    values: tuple[float, ...]
    entries: list[BufferEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self) -> set[str]:
        return {e.key for e in self.entries}

    def add(self, expr: Expr, origin: str, epoch: int | None = None) -> BufferEntry | None:
        """Append ``expr`` if it reaches the answer and is new; returns the entry or None."""
        if not matches_answer(try_evaluate(expr, self.values), self.answer, EPS):
            return None
        key = canonical_key(expr)
        if any(e.key == key for e in self.entries):
            return None
        entry = BufferEntry(expr, key, origin, epoch)
        self.entries.append(entry)
        return entry

    @property
    def exprs(self) -> list[Expr]:
        return [e.expr for e in self.entries]


def init_buffers(corpus: Corpus, mode: Mode | str, wda_results: Mapping | None = None) -> dict[str, SolutionBuffer]:
    """One buffer per problem: gold equations, WDA hits, or empty."""
    mode = Mode.parse(mode)
    if mode is Mode.FULL and corpus.mode is not Mode.FULL:
        raise DataError("full supervision needs an equation for every problem")
    if mode is Mode.WEAK:
        if corpus.mode is not Mode.WEAK:
            raise DataError("weak supervision expects an answer-only corpus")
        if wda_results is None:
            raise DataError("weak supervision needs search results to seed the buffers")
    out: dict[str, SolutionBuffer] = {}
    for p in corpus:
        buf = SolutionBuffer(p.id, p.answer, p.values)
        if p.gold is not None and mode is not Mode.WEAK:
            buf.add(p.gold, GOLD)
        elif wda_results is not None:
            r = wda_results.get(p.id)
            e = getattr(r, "expr", r)
            if e is not None:
                buf.add(e, WDA)
        for entry in buf.entries:
            entry.weight = 1.0
        out[p.id] = buf
    return out


def update_from_beams(buf: SolutionBuffer, beams: Sequence[tuple[Sequence[str], float]], epoch: int,
                      constants: Sequence[float] = DEFAULT_CONSTANTS) -> list[BufferEntry]:
    """Append value-correct, previously unseen beam outputs; refresh logP of known ones."""
    added = []
    by_key = {e.key: e for e in buf.entries}
    for tokens, logp in beams:
        try:
            expr = from_prefix(list(tokens), constants)
        except ExprError:
            continue
        key = canonical_key(expr)
        if key in by_key:
            by_key[key].logp = float(logp)
            continue
        entry = buf.add(expr, MODEL, epoch)
        if entry is not None:
            entry.logp = float(logp)
            by_key[key] = entry
            added.append(entry)
    return added


def normalized_probs(logps: Sequence[float]) -> np.ndarray:
    """``exp(logp_i) / sum_j exp(logp_j)`` with a log-sum-exp shift."""
    lp = np.asarray(logps, dtype=np.float64)
    if lp.size == 0:
        raise ValueError("empty buffer")
    if not np.isfinite(lp).any():
        log.warning("all buffer probabilities underflow; using uniform weights")
        return np.full(lp.shape, 1.0 / lp.size)
    m = lp[np.isfinite(lp)].max()
    w = np.exp(np.where(np.isfinite(lp), lp - m, -np.inf))
    return w / w.sum()


def compute_weights(logps: Sequence[float], ts: Sequence[float] | None, epoch: int,
                    stage_switch: int = 100, variant: str = "full_method") -> tuple[np.ndarray, np.ndarray]:
    """Return ``(s, a)``: normalized model probabilities and the loss weights."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    s = normalized_probs(logps)
    if variant == "non_probabilistic":
        return s, np.ones_like(s)
    if variant in ("one_stage", "gold_only") or epoch < stage_switch:
        return s, s.copy()
    if ts is None or any(t is None for t in ts):
        raise ValueError("discriminator scores are required after the stage switch")
    return s, (s + np.asarray(ts, dtype=np.float64)) / 2.0


def apply_cap(buf: SolutionBuffer, cap: int | None) -> int:
    """Evict lowest-weight model entries beyond ``cap``; gold and WDA entries always stay."""
    if cap is None or len(buf) <= cap:
        return 0
    model = sorted((e for e in buf.entries if e.origin == MODEL), key=lambda e: e.weight)
    drop = {id(e) for e in model[:len(buf) - cap]}
    buf.entries = [e for e in buf.entries if id(e) not in drop]
    return len(drop)


def spurious_risk(buf: SolutionBuffer) -> bool:
    """A lone search-found entry the model has never re-derived."""
    return len(buf) == 1 and buf.entries[0].origin == WDA and buf.entries[0].logp is None


# -- persistence ------------------------------------------------------------------

def _entry_record(e: BufferEntry) -> dict:
    return {"equation": render_infix(e.expr), "prefix": " ".join(to_prefix(e.expr)), "origin": e.origin,
            "epoch": e.epoch, "logp": e.logp, "t": e.t, "a": e.weight}


def save_buffers(buffers: Mapping[str, SolutionBuffer], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pid, buf in buffers.items():
            rec = {"id": pid, "answer": buf.answer, "values": list(buf.values),
                   "entries": [_entry_record(e) for e in buf.entries]}
            fh.write(json.dumps(rec) + "\n")


def load_buffers(path) -> dict[str, SolutionBuffer]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            buf = SolutionBuffer(rec["id"], rec["answer"], tuple(rec["values"]))
            for r in rec["entries"]:
                expr = from_prefix(r["prefix"].split())
                buf.entries.append(BufferEntry(expr, canonical_key(expr), r["origin"], r.get("epoch"),
                                               r.get("logp"), r.get("t"), r.get("a", 1.0)))
            out[buf.problem_id] = buf
    return out


def inspect(buf: SolutionBuffer) -> str:
    lines = [f"problem {buf.problem_id}  answer={buf.answer:g}  entries={len(buf)}"]
    for e in buf.entries:
        lp = "-" if e.logp is None else f"{e.logp:.4f}"
        t = "-" if e.t is None else f"{e.t:.4f}"
        ep = "" if e.epoch is None else f"@{e.epoch}"
        lines.append(f"  {render_infix(e.expr):<28} {e.origin + ep:<10} logP={lp:<10} t={t:<8} a={e.weight:.4f}")
    return "\n".join(lines)

