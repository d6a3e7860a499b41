"""Problems, corpora, JSONL ingestion and k-fold splitting."""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .expr import (
    EPS,
    Binary,
    Constant,
    Expr,
    ExprError,
    NumberMapping,
    PI_LITERALS,
    Quantity,
    Vocabulary,
    EvaluationError,
    evaluate,
    matches_answer,
    number_map,
    parse_infix,
    render_infix,
)


class Mode(str, enum.Enum):
    FULL = "full"
    SEMI_WEAK = "semi"
    WEAK = "weak"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {"full": cls.FULL, "semi": cls.SEMI_WEAK, "semiweak": cls.SEMI_WEAK,
                   "semi-weak": cls.SEMI_WEAK, "weak": cls.WEAK}
        try:
            return aliases[value.lower()]
        except KeyError:
            raise ValueError(f"unknown supervision mode {value!r}") from None


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Problem:
    id: str
    raw_text: str
    tokens: tuple[str, ...]
    mapping: NumberMapping
    answer: float
    gold: Expr | None = None
    trivial: bool = False
    template: str | None = None

    def __post_init__(self):
        if not self.tokens:
            raise DataError(f"problem {self.id}: empty token list")
        if self.gold is not None:
            try:
                v = evaluate(self.gold, self.values)
            except (EvaluationError, ExprError) as exc:
                raise DataError(f"problem {self.id}: gold does not evaluate ({exc})") from None
            if not matches_answer(v, self.answer):
                raise DataError(f"problem {self.id}: gold evaluates to {v}, answer is {self.answer}")

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(n.value for n in self.mapping)

    @property
    def num_count(self) -> int:
        return len(self.mapping)

    @property
    def quantity_positions(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if re.fullmatch(r"N\d+", t)]

    def vocab(self, base: Vocabulary | None = None) -> Vocabulary:
        return (base or Vocabulary()).with_count(self.num_count)

    def to_record(self) -> dict:
        rec = {"id": self.id, "text": self.raw_text, "answer": self.answer}
        if self.gold is not None:
            rec["equation"] = render_infix(self.gold)
        if self.template is not None:
            rec["template"] = self.template
        return rec


@dataclass
class Corpus:
    problems: list[Problem]
    mode: Mode = Mode.FULL
    rejected: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        golds = sum(p.gold is not None for p in self.problems)
        if self.mode is Mode.FULL and golds != len(self.problems):
            raise DataError("full supervision requires a gold equation for every problem")
        if self.mode is Mode.WEAK and golds:
            raise DataError("weak supervision must not carry gold equations")

    def __len__(self) -> int:
        return len(self.problems)

    def __iter__(self):
        return iter(self.problems)

    def by_id(self) -> dict[str, Problem]:
        return {p.id: p for p in self.problems}

    def subset(self, idx: Iterable[int]) -> "Corpus":
        probs = [self.problems[i] for i in idx]
        return Corpus(probs, infer_mode(probs))

    def as_weak(self) -> "Corpus":
        return Corpus([strip_gold(p) for p in self.problems], Mode.WEAK)

    def stats(self) -> dict:
        golds = sum(p.gold is not None for p in self.problems)
        return {
            "problems": len(self.problems),
            "mode": self.mode.value,
            "with_equation": golds,
            "answer_only": len(self.problems) - golds,
            "trivial": sum(p.trivial for p in self.problems),
            "rejected": len(self.rejected),
            "max_quantities": max((p.num_count for p in self.problems), default=0),
        }


def infer_mode(problems: Sequence[Problem]) -> Mode:
    golds = sum(p.gold is not None for p in problems)
    if golds == len(problems):
        return Mode.FULL
    if golds == 0:
        return Mode.WEAK
    return Mode.SEMI_WEAK


def strip_gold(p: Problem) -> Problem:
    return Problem(p.id, p.raw_text, p.tokens, p.mapping, p.answer, None, p.trivial, p.template)


# -- ingestion ---------------------------------------------------------------

def parse_answer(value) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        s = value.strip()
        try:
            if s.endswith("%"):
                return float(s[:-1]) / 100
            if re.fullmatch(r"\(?\s*-?\d+(\.\d+)?\s*\)?\s*/\s*\(?\s*\d+(\.\d+)?\s*\)?", s):
                num, den = (float(x.strip(" ()")) for x in s.split("/"))
                return num / den
            return float(s)
        except (ValueError, ZeroDivisionError):
            pass
    raise DataError(f"unparseable answer {value!r}")


def strip_unknown(equation: str) -> str:
    """``x = RHS`` becomes ``RHS``."""
    m = re.match(r"^\s*[a-zA-Z]\s*=\s*(.*)$", equation)
    return m.group(1) if m else equation


def map_literals(e: Expr, values: Sequence[float], constants: Sequence[float]) -> Expr:
    """Turn literal constants into quantity references by value."""
    if isinstance(e, Binary):
        return Binary(e.op, map_literals(e.left, values, constants), map_literals(e.right, values, constants))
    if isinstance(e, Constant):
        for i, v in enumerate(values, 1):
            if math.isclose(v, e.value, rel_tol=1e-12, abs_tol=0.0):
                return Quantity(i)
        if e.value in constants:
            return e
        if math.pi in constants and e.value in PI_LITERALS:
            return Constant(math.pi)
        raise DataError(f"literal {e.value!r} in equation is not a quantity of the problem")
    return e


def build_problem(pid: str, text: str, answer, equation: str | None = None,
                  vocab: Vocabulary | None = None, template: str | None = None) -> Problem:
    vocab = vocab or Vocabulary()
    tokens, mapping = number_map(text)
    ans = parse_answer(answer)
    gold = None
    trivial = False
    if equation:
        eq = strip_unknown(equation)
        try:
            parsed = parse_infix(eq, vocab.with_count(len(mapping)), literals=True)
        except ExprError as exc:
            raise DataError(f"problem {pid}: {exc}") from None
        gold = map_literals(parsed, [n.value for n in mapping], vocab.constants)
        trivial = _compact(eq) in _compact(text)
    if not tokens:
        raise DataError(f"problem {pid}: empty text")
    return Problem(pid, text, tuple(tokens), mapping, ans, gold, trivial, template)


def _compact(s: str) -> str:
    return re.sub(r"\s+", "", s).replace("×", "*").replace("÷", "/")


def load(path, strict: bool = True, vocab: Vocabulary | None = None) -> Corpus:
    """Read a JSONL corpus: one ``{"id", "text", "answer", "equation"?}`` per line.

    With ``strict`` any bad record raises :class:`DataError`; otherwise bad
    records are skipped and listed in ``Corpus.rejected``.
    """
    problems: list[Problem] = []
    rejected: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
                if not isinstance(rec, dict) or "text" not in rec or "answer" not in rec:
                    raise DataError(f"line {lineno}: record needs 'text' and 'answer'")
                p = build_problem(str(rec.get("id", lineno)), rec["text"], rec["answer"],
                                  rec.get("equation"), vocab, rec.get("template"))
            except DataError as exc:
                if strict:
                    raise DataError(f"line {lineno}: {exc}") from None
                rejected.append((lineno, str(exc)))
                continue
            problems.append(p)
    return Corpus(problems, infer_mode(problems), rejected)


def save(corpus: Corpus | Sequence[Problem], path) -> None:
    probs = corpus.problems if isinstance(corpus, Corpus) else corpus
    with open(path, "w", encoding="utf-8") as fh:
        for p in probs:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def convert_math23k(src, dst) -> dict:
    """Convert Math23k-style records (``original_text``/``segmented_text``,
    ``equation``, ``ans``) into the JSONL format.  Accepts a JSON array or
    JSON Lines input."""
    raw = Path(src).read_text(encoding="utf-8").strip()
    if raw.startswith("["):
        records = json.loads(raw)
    else:
        records = [json.loads(l) for l in raw.splitlines() if l.strip()]
    written = skipped = 0
    with open(dst, "w", encoding="utf-8") as out:
        for r in records:
            text = r.get("original_text") or r.get("text") or r.get("segmented_text", "")
            text = re.sub(r"\s+", " ", text).strip()
            ans = r.get("ans", r.get("answer"))
            rec = {"id": str(r.get("id", written + skipped)), "text": text, "answer": ans}
            if r.get("equation"):
                rec["equation"] = strip_unknown(r["equation"]).replace("[", "(").replace("]", ")")
            try:
                rec["answer"] = parse_answer(ans)
            except DataError:
                skipped += 1
                continue
            out.write(json.dumps(rec, ensure_ascii=False) + "\n")
            written += 1
    return {"written": written, "skipped": skipped}


# -- k-fold ------------------------------------------------------------------

def kfold(corpus: Corpus, k: int, seed: int) -> list[tuple[Corpus, Corpus]]:
    if k < 2:
        raise ValueError("k must be at least 2")
    n = len(corpus)
    if n < k:
        raise DataError(f"corpus of {n} problems is too small for {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i in range(k):
        test = sorted(folds[i].tolist())
        train = sorted(j for f, fold in enumerate(folds) if f != i for j in fold.tolist())
        out.append((corpus.subset(train), corpus.subset(test)))
    return out


def answer_tolerance(answer: float) -> float:
    return EPS * max(1.0, abs(answer))
