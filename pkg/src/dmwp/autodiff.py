"""A small reverse-mode autodiff over dense float64 numpy arrays.

Operations are recorded on the active :class:`Tape` whenever one of their
inputs requires a gradient.  ``backward`` walks the tape in reverse.  There
is no general broadcasting: elementwise ops accept equal shapes or a
right-aligned operand that numpy can broadcast (bias vectors, masks), and
the gradient of the broadcast operand is summed back to its shape.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


_local = threading.local()


def _current_tape() -> "Tape | None":
    return getattr(_local, "tape", None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records operations in execution (hence topological) order."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = _current_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev

    def __len__(self) -> int:
        return len(self.nodes)


class no_grad:
    def __enter__(self):
        self._prev = _current_tape()
        _local.tape = None

    def __exit__(self, *exc):
        _local.tape = self._prev


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(out: np.ndarray, opname: str) -> np.ndarray:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite output from {opname}")
    return out


def _make(out: np.ndarray, parents: Sequence[Tensor], backward, opname: str) -> Tensor:
    _check(out, opname)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    tape = _current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
        tape.nodes.append(t)
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_ok(a: tuple, b: tuple, opname: str) -> None:
    try:
        out = np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a} and {b}") from None
    if out != a and out != b:
        raise ShapeError(f"{opname}: shapes {a} and {b} need two-sided broadcasting")


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_ok(a.shape, b.shape, "add")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_ok(a.shape, b.shape, "sub")
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    return _make(out, (a, b), backward, "sub")


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * c

    def backward(g):
        a._accumulate(g * c)

    return _make(out, (a,), backward, "scale")


def mul(a, b) -> Tensor:
    """Pointwise product."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_ok(a.shape, b.shape, "mul")
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backward, "mul")


pointwise_mul = mul


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), backward, "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return _make(out, (a,), backward, "tanh")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise NonFiniteError("log of non-positive value")
    out = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(out, (a,), backward, "log")


def log_sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        a._accumulate(g * _sigmoid(-x))

    return _make(out, (a,), backward, "log_sigmoid")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse

    def backward(g):
        p = np.exp(out)
        a._accumulate(g - p * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), backward, "log_softmax")


# -- linear algebra and shape ------------------------------------------------

def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics; a 2-D right operand is shared across batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                k = a.shape[-1]
                b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out, (a, b), backward, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out, tensors, backward, "concat")


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = np.asarray(a.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(out, (a,), backward, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


mean_over_axis = mean


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape")


def take(a: Tensor, idx) -> Tensor:
    """Index along axis 0; with a 2-D table this is an embedding lookup."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take: index out of range for axis of size {a.shape[0]}")
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(out, (a,), backward, "take")


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice) indexing; the result shares no memory with ``a``."""
    out = np.array(a.data[index])

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accumulate(full)

    return _make(out, (a,), backward, "getitem")


def gated(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``tanh(x W1 + b1) * sigmoid(x W2 + b2)`` with ``W = [W1 | W2]``."""
    pre = x.data @ w.data + b.data
    hid = pre.shape[-1] // 2
    th = np.tanh(pre[..., :hid])
    sg = _sigmoid(pre[..., hid:])
    out = th * sg

    def backward(g):
        dpre = np.concatenate([g * sg * (1.0 - th * th), g * th * sg * (1.0 - sg)], axis=-1)
        if x.requires_grad:
            x._accumulate(dpre @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.reshape(-1, x.shape[-1]).T @ dpre.reshape(-1, dpre.shape[-1]))
        if b.requires_grad:
            b._accumulate(dpre.reshape(-1, dpre.shape[-1]).sum(axis=0))

    return _make(out, (x, w, b), backward, "gated")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    return take(table, ids)


def pick(a: Tensor, idx) -> Tensor:
    """``out[i] = a[i, idx[i]]`` for a 2-D input."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.shape[0])
    out = a.data[rows, idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        a._accumulate(full)

    return _make(out, (a,), backward, "pick")


def gather_rows(sources: Sequence[Tensor], src: Sequence[int], rows: Sequence[int]) -> Tensor:
    """Stack ``sources[src[i]][rows[i]]`` into a new matrix."""
    src = np.asarray(src, dtype=np.int64)
    rows = np.asarray(rows, dtype=np.int64)
    width = sources[0].shape[1:]
    out = np.empty((len(src),) + width)
    groups = []
    for s in np.unique(src):
        sel = np.nonzero(src == s)[0]
        out[sel] = sources[s].data[rows[sel]]
        groups.append((s, sel))

    def backward(g):
        for s, sel in groups:
            t = sources[s]
            if t.requires_grad:
                full = np.zeros_like(t.data)
                np.add.at(full, rows[sel], g[sel])
                t._accumulate(full)

    used = [sources[s] for s, _ in groups]
    return _make(out, used, backward, "gather_rows")


# -- recurrent ---------------------------------------------------------------

def gru(x: Tensor, mask: np.ndarray, wx: Tensor, wh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run a GRU over right-padded ``x`` of shape (B, T, D); returns hidden states (B, T, H).

    Gates follow ``r, z = sigmoid(.)`` and ``n = tanh(x Wn + b_n + r * (h Un))``.
    Padded steps (``mask == 0``) emit zeros; a reversed pass starts from each
    row's true last token.  Rows are processed longest-first so that each
    step only touches the rows that are still active.
    """
    bsz, steps, _ = x.shape
    hid = wh.shape[0]
    if wx.shape != (x.shape[2], 3 * hid) or wh.shape != (hid, 3 * hid) or b.shape != (3 * hid,):
        raise ShapeError("gru: weight shapes inconsistent with input")
    mask = np.asarray(mask, dtype=np.float64)
    lengths = mask.sum(axis=1).astype(np.int64)
    if not np.array_equal(mask, (np.arange(steps)[None, :] < lengths[:, None]).astype(np.float64)):
        raise ShapeError("gru: mask must mark a contiguous prefix of each row")
    perm = np.argsort(-lengths, kind="stable")
    active = [(lengths > t).sum() for t in range(steps)]
    gx = (x.data @ wx.data + b.data)[perm]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    h = np.zeros((bsz, hid))
    out = np.zeros((bsz, steps, hid))
    cache = {}
    W = wh.data
    for t in order:
        n = active[t]
        if n == 0:
            continue
        hp = h[:n]
        gh = hp @ W
        g = gx[:n, t]
        rz = _sigmoid(g[:, :2 * hid] + gh[:, :2 * hid])
        r, z = rz[:, :hid], rz[:, hid:]
        ghn = gh[:, 2 * hid:]
        nn_ = np.tanh(g[:, 2 * hid:] + r * ghn)
        hn = (1.0 - z) * nn_ + z * hp
        cache[t] = (hp.copy(), r, z, nn_, ghn)
        h[:n] = hn
        out[:n, t] = hn
    result = np.empty_like(out)
    result[perm] = out

    def backward(gout):
        gout = gout[perm]
        dgx = np.zeros_like(gx)
        dgh_all = np.zeros_like(gx)
        h_all = np.zeros((bsz, steps, hid))
        dh = np.zeros((bsz, hid))
        for t in reversed(list(order)):
            if t not in cache:
                continue
            h_prev, r, z, nn_, ghn = cache[t]
            n = h_prev.shape[0]
            d = dh[:n] + gout[:n, t]
            dn = d * (1.0 - z)
            dz = d * (h_prev - nn_)
            dan = dn * (1.0 - nn_ * nn_)
            dar = dan * ghn * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dgh = np.concatenate([dar, daz, dan * r], axis=1)
            dgx[:n, t, :2 * hid] = dgh[:, :2 * hid]
            dgx[:n, t, 2 * hid:] = dan
            dgh_all[:n, t] = dgh
            h_all[:n, t] = h_prev
            dh[:n] = d * z + dgh @ W.T
        dW = h_all.reshape(-1, hid).T @ dgh_all.reshape(-1, 3 * hid)
        dgx_orig = np.empty_like(dgx)
        dgx_orig[perm] = dgx
        if x.requires_grad:
            x._accumulate(dgx_orig @ wx.data.T)
        if wx.requires_grad:
            wx._accumulate(x.data.reshape(-1, x.shape[2]).T @ dgx_orig.reshape(-1, 3 * hid))
        if wh.requires_grad:
            wh._accumulate(dW)
        if b.requires_grad:
            b._accumulate(dgx.sum(axis=(0, 1)))

    return _make(result, (x, wx, wh, b), backward, "gru")


# -- backward / params -------------------------------------------------------

def backward(tape: Tape, loss: Tensor, params: "ParamStore | None" = None) -> dict[str, np.ndarray]:
    """Propagate from a scalar ``loss``; returns gradients for ``params``.

    Parameters the loss does not reach get zero gradients.  Gradients on
    the parameter tensors are reset first so repeated calls do not leak.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params.values():
            p.grad = None
    for node in tape.nodes:
        node.grad = None
        for p in node._parents:
            p.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    if params is None:
        return {}
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}


class ParamStore(dict):
    """Named parameters plus Adam moment buffers."""

    def __init__(self):
        super().__init__()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def create(self, name: str, shape: tuple[int, ...], rng: np.random.Generator, fan_in: int | None = None) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name}")
        fan_in = fan_in if fan_in is not None else shape[0]
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        t = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
        self[name] = t
        self.m[name] = np.zeros(shape)
        self.v[name] = np.zeros(shape)
        return t

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.items():
            if k not in arrays:
                raise KeyError(f"checkpoint is missing parameter {k}")
            if arrays[k].shape != t.shape:
                raise ShapeError(f"checkpoint shape mismatch for {k}: {arrays[k].shape} vs {t.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"DMWPCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named tensors: magic, version, count, then (name, shape, <f8 data)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        count_vals = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=count_vals, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count_vals
    return out


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` w.r.t. ``arr`` (modified in place and restored)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference scaled by the larger of the two tensors' max magnitude."""
    scale_ = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale_)
