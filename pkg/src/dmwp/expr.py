"""Expression trees over problem quantities and constants.

Quantities are written ``N1..Nk`` (1-based, in reading order of the problem
text).  Constants default to ``1`` and ``pi``.  Trees are immutable and
compare structurally, so they can be used as dict keys directly.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

EPS = 1e-4
DEFAULT_CONSTANTS: tuple[float, ...] = (1.0, math.pi)


class Op(enum.Enum):
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"
    POW = "^"

    @property
    def symbol(self) -> str:
        return self.value


OPS: tuple[Op, ...] = (Op.ADD, Op.SUB, Op.MUL, Op.DIV, Op.POW)
_SYMBOL_TO_OP = {op.value: op for op in OPS}
_PREC = {Op.ADD: 1, Op.SUB: 1, Op.MUL: 2, Op.DIV: 2, Op.POW: 3}


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class EvaluationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Quantity:
    index: int  # 1-based, N1 is Quantity(1)


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Binary:
    op: Op
    left: "Expr"
    right: "Expr"
    _hash: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.op, self.left, self.right)))

    def __hash__(self) -> int:
        return self._hash


Expr = Union[Quantity, Constant, Binary]


@dataclass(frozen=True)
class Vocabulary:
    ops: tuple[Op, ...] = OPS
    constants: tuple[float, ...] = DEFAULT_CONSTANTS
    num_count: int = 0

    def __post_init__(self):
        if self.num_count < 0:
            raise ValueError("num_count must be >= 0")

    def with_count(self, num_count: int) -> "Vocabulary":
        return Vocabulary(self.ops, self.constants, num_count)


# -- arithmetic ------------------------------------------------------------

def apply_op(op: Op, a: float, b: float) -> float:
    """Apply one binary operator with the error contract of :func:`evaluate`."""
    if op is Op.ADD:
        r = a + b
    elif op is Op.SUB:
        r = a - b
    elif op is Op.MUL:
        r = a * b
    elif op is Op.DIV:
        if b == 0:
            raise EvaluationError("division by zero")
        r = a / b
    else:
        if a == 0 and b < 0:
            raise EvaluationError("0 raised to a negative power")
        if a < 0 and abs(b - round(b)) <= 1e-9 * max(1.0, abs(b)):
            # rounding noise such as 1+x-x must not turn an integer power undefined
            b = float(round(b))
        try:
            r = math.pow(a, b)
        except OverflowError:
            raise EvaluationError("overflow in power") from None
        except ValueError:
            raise EvaluationError("undefined power") from None
    if not math.isfinite(r):
        raise EvaluationError("non-finite result")
    return r


def evaluate(e: Expr, bindings: Sequence[float]) -> float:
    if isinstance(e, Binary):
        return apply_op(e.op, evaluate(e.left, bindings), evaluate(e.right, bindings))
    if isinstance(e, Quantity):
        if not 1 <= e.index <= len(bindings):
            raise ExprError(f"quantity N{e.index} is not bound")
        return float(bindings[e.index - 1])
    return float(e.value)


def try_evaluate(e: Expr, bindings: Sequence[float]) -> float | None:
    try:
        return evaluate(e, bindings)
    except EvaluationError:
        return None


def matches_answer(value: float | None, answer: float, eps: float = EPS) -> bool:
    if value is None:
        return False
    return abs(value - answer) <= eps * max(1.0, abs(answer))


# -- tree utilities --------------------------------------------------------

def size(e: Expr) -> int:
    if isinstance(e, Binary):
        return 1 + size(e.left) + size(e.right)
    return 1


def depth(e: Expr) -> int:
    if isinstance(e, Binary):
        return 1 + max(depth(e.left), depth(e.right))
    return 0


def op_count(e: Expr) -> int:
    if isinstance(e, Binary):
        return 1 + op_count(e.left) + op_count(e.right)
    return 0


def leaves(e: Expr) -> list[Expr]:
    if isinstance(e, Binary):
        return leaves(e.left) + leaves(e.right)
    return [e]


def ops_in(e: Expr) -> list[Op]:
    if isinstance(e, Binary):
        return [e.op] + ops_in(e.left) + ops_in(e.right)
    return []


def max_quantity(e: Expr) -> int:
    return max((x.index for x in leaves(e) if isinstance(x, Quantity)), default=0)


# -- prefix ----------------------------------------------------------------

def constant_token(value: float, constants: Sequence[float] = DEFAULT_CONSTANTS) -> str:
    for j, c in enumerate(constants, 1):
        if c == value:
            return f"C{j}"
    return repr(float(value))


def token_of(e: Expr, constants: Sequence[float] = DEFAULT_CONSTANTS) -> str:
    if isinstance(e, Binary):
        return e.op.value
    if isinstance(e, Quantity):
        return f"N{e.index}"
    return constant_token(e.value, constants)


def to_prefix(e: Expr, constants: Sequence[float] = DEFAULT_CONSTANTS) -> list[str]:
    out: list[str] = []
    stack = [e]
    while stack:
        node = stack.pop()
        out.append(token_of(node, constants))
        if isinstance(node, Binary):
            stack.append(node.right)
            stack.append(node.left)
    return out


_QTOK = re.compile(r"N(\d+)$")
_CTOK = re.compile(r"C(\d+)$")


def leaf_from_token(tok: str, constants: Sequence[float] = DEFAULT_CONSTANTS) -> Expr:
    m = _QTOK.match(tok)
    if m:
        idx = int(m.group(1))
        if idx < 1:
            raise ExprError(f"bad quantity token {tok!r}")
        return Quantity(idx)
    m = _CTOK.match(tok)
    if m:
        j = int(m.group(1))
        if not 1 <= j <= len(constants):
            raise ExprError(f"unknown constant token {tok!r}")
        return Constant(float(constants[j - 1]))
    try:
        return Constant(float(tok))
    except ValueError:
        raise ExprError(f"unknown token {tok!r}") from None


def from_prefix(tokens: Sequence[str], constants: Sequence[float] = DEFAULT_CONSTANTS) -> Expr:
    pos = 0

    def build() -> Expr:
        nonlocal pos
        if pos >= len(tokens):
            raise ExprError("truncated prefix sequence")
        tok = tokens[pos]
        pos += 1
        op = _SYMBOL_TO_OP.get(tok)
        if op is None:
            return leaf_from_token(tok, constants)
        left = build()
        right = build()
        return Binary(op, left, right)

    e = build()
    if pos != len(tokens):
        raise ExprError(f"over-long prefix sequence: {len(tokens) - pos} trailing tokens")
    return e


def is_complete_prefix(tokens: Sequence[str]) -> bool:
    need = 1
    for tok in tokens:
        if need == 0:
            return False
        need += 1 if tok in _SYMBOL_TO_OP else -1
    return need == 0


def canonical_key(e: Expr) -> str:
    return " ".join(to_prefix(e))


# -- infix -----------------------------------------------------------------

def _format_number(v: float) -> str:
    if v == math.pi:
        return "pi"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def render_infix(e: Expr) -> str:
    if isinstance(e, Quantity):
        return f"N{e.index}"
    if isinstance(e, Constant):
        return _format_number(e.value)
    p = _PREC[e.op]
    left = render_infix(e.left)
    right = render_infix(e.right)
    if isinstance(e.left, Binary):
        lp = _PREC[e.left.op]
        # ^ is right-associative
        if lp < p or (lp == p and e.op is Op.POW):
            left = f"({left})"
    if isinstance(e.right, Binary):
        rp = _PREC[e.right.op]
        if rp < p or (rp == p and e.op is not Op.POW):
            right = f"({right})"
    return f"{left}{e.op.value}{right}"


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][-+]?\d+)?%?)|(?P<q>N\d+)|(?P<c>C\d+)"
    r"|(?P<pi>pi|π|PI)|(?P<op>[-+*/^×÷])|(?P<lp>\()|(?P<rp>\)))"
)
_OP_ALIASES = {"×": "*", "÷": "/"}
PI_LITERALS = (3.14, 3.1416, 3.14159)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            bad = pos
            while bad < len(text) and text[bad].isspace():
                bad += 1
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), start))
        pos = m.end()
    return out


def parse_infix(text: str, vocab: Vocabulary | None = None, literals: bool = False) -> Expr:
    """Parse an infix equation.

    ``^`` binds tightest and is right-associative; ``* /`` bind tighter than
    ``+ -``; both levels are left-associative.  Numeric literals are only
    accepted when they equal a vocabulary constant, unless ``literals`` is
    set, in which case they become :class:`Constant` nodes carrying the
    literal value (used at ingestion before literals are mapped to
    quantities).  Quantity indices are range-checked only when a vocabulary
    is given.
    """
    check_range = vocab is not None
    vocab = vocab or Vocabulary()
    toks = _tokenize(text)
    if not toks:
        raise ExprSyntaxError("empty equation", 0)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def end_pos() -> int:
        return len(text)

    def primary() -> Expr:
        nonlocal pos
        t = peek()
        if t is None:
            raise ExprSyntaxError("unexpected end of input", end_pos())
        kind, val, at = t
        pos += 1
        if kind == "lp":
            e = additive()
            t2 = peek()
            if t2 is None or t2[0] != "rp":
                raise ExprSyntaxError("expected ')'", t2[2] if t2 else end_pos())
            pos += 1
            return e
        if kind == "q":
            idx = int(val[1:])
            if idx < 1 or (check_range and idx > vocab.num_count):
                raise ExprError(f"quantity index {val} out of range (num_count={vocab.num_count})")
            return Quantity(idx)
        if kind == "c":
            j = int(val[1:])
            if not 1 <= j <= len(vocab.constants):
                raise ExprError(f"unknown constant token {val!r}")
            return Constant(float(vocab.constants[j - 1]))
        if kind == "pi":
            if math.pi not in vocab.constants:
                raise ExprError("pi is not in the constant vocabulary")
            return Constant(math.pi)
        if kind == "num":
            v = float(val[:-1]) / 100 if val.endswith("%") else float(val)
            if v in vocab.constants:
                return Constant(v)
            if literals:
                return Constant(v)
            raise ExprError(f"unknown token {val!r} (literal numbers not allowed)")
        raise ExprSyntaxError(f"unexpected token {val!r}", at)

    def power() -> Expr:
        nonlocal pos
        base = primary()
        t = peek()
        if t is not None and t[0] == "op" and t[1] == "^":
            pos += 1
            return Binary(Op.POW, base, power())
        return base

    def binary_level(sub, symbols) -> Expr:
        nonlocal pos
        left = sub()
        while True:
            t = peek()
            if t is None or t[0] != "op":
                return left
            sym = _OP_ALIASES.get(t[1], t[1])
            if sym not in symbols:
                return left
            op = _SYMBOL_TO_OP[sym]
            if op not in vocab.ops:
                raise ExprError(f"operator {sym!r} not in vocabulary")
            pos += 1
            left = Binary(op, left, sub())

    def multiplicative() -> Expr:
        return binary_level(power, "*/")

    def additive() -> Expr:
        return binary_level(multiplicative, "+-")

    e = additive()
    if pos != len(toks):
        kind, val, at = toks[pos]
        raise ExprSyntaxError(f"unexpected token {val!r}", at)
    return e


# -- number mapping --------------------------------------------------------

@dataclass(frozen=True)
class Numeral:
    text: str
    value: float
    span: tuple[int, int]


NumberMapping = tuple[Numeral, ...]

_NUMERAL_RE = re.compile(r"\d+(?:\.\d+)?%?")
_WORD_RE = re.compile(r"\d+(?:\.\d+)?%?|[^\W\d_]+|[^\s\w]|_+", re.UNICODE)


def numeral_value(text: str) -> float:
    if text.endswith("%"):
        return float(text[:-1]) / 100
    return float(text)


def number_map(raw_text: str) -> tuple[list[str], NumberMapping]:
    """Replace every maximal numeral with ``N1..Nk`` in reading order."""
    tokens: list[str] = []
    mapping: list[Numeral] = []
    for m in _WORD_RE.finditer(raw_text):
        tok = m.group(0)
        if _NUMERAL_RE.fullmatch(tok):
            mapping.append(Numeral(tok, numeral_value(tok), (m.start(), m.end())))
            tokens.append(f"N{len(mapping)}")
        else:
            tokens.append(tok)
    return tokens, tuple(mapping)
