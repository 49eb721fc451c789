"""Reverse-mode automatic differentiation over dense float64 arrays.

Deliberately minimal: exactly the primitives the pose networks and losses
need, nothing else (no convolutions, no higher-order derivatives). Usage:

    with Tape() as tape:
        y = sigmoid(affine(x, w, b))
        loss = bce(y, 1.0)
    grads = backward(loss, tape)       # dict keyed by Tensor identity

Recording happens only while a tape is active and only for operations that
touch a tensor with ``requires_grad=True``; outside a tape everything runs
forward-only. A tape admits exactly one backward pass.

Shapes: scalars are ``()``, vectors ``(n,)``, matrices ``(m, n)``. The
documented contracts are for rank-1 operands; every primitive additionally
accepts a leading batch axis (rank-2 input, one sample per row), which the
training and refinement loops rely on for speed.

Every forward primitive checks its output for NaN/Inf and raises
:class:`NonFiniteValue`, so numerical blow-ups surface at the op that
produced them.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ParamStore",
    "ShapeMismatch",
    "NonFiniteValue",
    "DoubleBackward",
    "DetachedLoss",
    "backward",
    "constant",
    "parameter",
    "detach",
    "add",
    "mul",
    "neg",
    "texp",
    "tsum",
    "tmean",
    "affine",
    "elu",
    "sigmoid",
    "bce",
    "l1_distance",
    "l1_rows",
    "concat",
    "tile_last",
    "vnormalize",
    "reshape",
]


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


class DoubleBackward(RuntimeError):
    pass


class DetachedLoss(RuntimeError):
    pass


# Largest float64 strictly below 1; sigmoid output is clipped into the open
# interval (0, 1) so downstream logs stay finite even at saturation.
_ONE_MINUS = float(np.nextafter(1.0, 0.0))
_TINY = float(np.finfo(np.float64).tiny)

_BCE_LO = 1e-7
_BCE_HI = 1.0 - 1e-7


class Tensor:
    """Dense float64 value with a gradient-participation flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # small operator surface so loss code reads like the math
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def detach(t: Tensor) -> Tensor:
    """Copy of t's values severed from any gradient path."""
    return Tensor(t.data.copy(), requires_grad=False)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications (operands precede users).

    Entries are ``(out, inputs, vjp)`` where ``vjp(gout)`` returns one
    gradient per input (None for inputs that do not require grad).
    """

    __slots__ = ("_records", "_out_ids", "_consumed")

    def __init__(self):
        self._records = []
        self._out_ids = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self, "tapes must unwind in LIFO order"
        return False

    def __len__(self):
        return len(self._records)

    def _record(self, out: Tensor, inputs: tuple, vjp) -> None:
        self._records.append((out, inputs, vjp))
        self._out_ids.add(id(out))


def _result(data: np.ndarray, inputs: tuple, vjp) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("primitive produced NaN/Inf")
    req = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=req)
    if req and _TAPES:
        _TAPES[-1]._record(out, inputs, vjp)
    return out


def backward(loss: Tensor, tape: Tape) -> dict:
    """Accumulate d(loss)/d(tensor) for every differentiable operand on tape.

    Returns a dict keyed by Tensor identity; leaves (parameters, inputs
    flagged differentiable) and intermediates all appear. Raises
    :class:`DoubleBackward` on a second call for the same tape and
    :class:`DetachedLoss` when the loss was not produced on this tape.
    """
    if tape._consumed:
        raise DoubleBackward("this tape has already been backpropagated")
    if loss.data.shape != ():
        raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
    if id(loss) not in tape._out_ids:
        raise DetachedLoss("loss tensor was not produced on this tape")
    tape._consumed = True

    pending: dict[int, np.ndarray] = {id(loss): np.ones(())}
    tensors: dict[int, Tensor] = {id(loss): loss}
    result: dict[Tensor, np.ndarray] = {}
    for out, inputs, vjp in reversed(tape._records):
        gout = pending.pop(id(out), None)
        if gout is None:
            continue
        if out.requires_grad:
            result[out] = gout
        for t, g in zip(inputs, vjp(gout)):
            if g is None or not t.requires_grad:
                continue
            tid = id(t)
            tensors[tid] = t
            acc = pending.get(tid)
            pending[tid] = g if acc is None else acc + g
    for tid, g in pending.items():
        result[tensors[tid]] = g
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to shape (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _result(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _result(data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    a = _lift(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def texp(a: Tensor) -> Tensor:
    """Elementwise exponential (overflow surfaces as NonFiniteValue)."""
    a = _lift(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def tsum(a: Tensor) -> Tensor:
    a = _lift(a)
    shape = a.data.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def tmean(a: Tensor) -> Tensor:
    a = _lift(a)
    shape = a.data.shape
    n = a.data.size

    def vjp(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _result(np.asarray(a.data.mean()), (a,), vjp)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = W x (+ b). x may be (n_in,) or batched (batch, n_in)."""
    x, w = _lift(x), _lift(w)
    if w.ndim != 2:
        raise ShapeMismatch(f"weight must be rank-2, got shape {w.shape}")
    n_out, n_in = w.data.shape
    if x.ndim not in (1, 2) or x.data.shape[-1] != n_in:
        raise ShapeMismatch(f"input shape {x.shape} does not match weight {w.shape}")
    if b is not None:
        b = _lift(b)
        if b.data.shape != (n_out,):
            raise ShapeMismatch(f"bias shape {b.shape} does not match weight {w.shape}")

    batched = x.ndim == 2
    data = x.data @ w.data.T if batched else w.data @ x.data
    if b is not None:
        data = data + b.data

    if b is None:

        def vjp(g):
            gx = (g @ w.data if batched else w.data.T @ g) if x.requires_grad else None
            gw = (g.T @ x.data if batched else np.outer(g, x.data)) if w.requires_grad else None
            return (gx, gw)

        return _result(data, (x, w), vjp)

    def vjp(g):
        gx = (g @ w.data if batched else w.data.T @ g) if x.requires_grad else None
        gw = (g.T @ x.data if batched else np.outer(g, x.data)) if w.requires_grad else None
        gb = (g.sum(axis=0) if batched else g) if b.requires_grad else None
        return (gx, gw, gb)

    return _result(data, (x, w, b), vjp)


def elu(x: Tensor) -> Tensor:
    """Exponential linear unit: x if x > 0 else exp(x) - 1."""
    x = _lift(x)
    pos = x.data > 0
    out = np.where(pos, x.data, np.exp(np.minimum(x.data, 0.0)) - 1.0)

    def vjp(g):
        return (g * np.where(pos, 1.0, out + 1.0),)

    return _result(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped into the open interval (0, 1)."""
    x = _lift(x)
    z = np.empty_like(x.data)
    p = x.data >= 0
    z[p] = 1.0 / (1.0 + np.exp(-x.data[p]))
    ex = np.exp(x.data[~p])
    z[~p] = ex / (1.0 + ex)
    z = np.clip(z, _TINY, _ONE_MINUS)

    def vjp(g):
        return (g * z * (1.0 - z),)

    return _result(z, (x,), vjp)


def bce(p: Tensor, c: float, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy against a constant class label c.

    p is clamped to [1e-7, 1 - 1e-7] first, so the loss is total; outside
    the clamp the subgradient is 0. Scalar p gives a scalar loss; vector p
    reduces over elements ("mean" for mini-batches, "sum" keeps per-element
    gradients exactly those of independent single-element calls).
    """
    p = _lift(p)
    c = float(c)
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    inside = (p.data > _BCE_LO) & (p.data < _BCE_HI)
    pc = np.clip(p.data, _BCE_LO, _BCE_HI)
    per = -(c * np.log(pc) + (1.0 - c) * np.log1p(-pc))
    n = p.data.size
    data = np.asarray(per.sum() if reduction == "sum" else per.mean())
    scale = 1.0 if reduction == "sum" else 1.0 / n

    def vjp(g):
        gp = np.where(inside, (pc - c) / (pc * (1.0 - pc)), 0.0)
        return ((g * scale) * gp,)

    return _result(data, (p,), vjp)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute componentwise differences (subgradient 0 at ties)."""
    a, b = _lift(a), _lift(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"l1_distance shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    sign = np.sign(diff)

    def vjp(g):
        return (
            g * sign if a.requires_grad else None,
            -g * sign if b.requires_grad else None,
        )

    return _result(np.asarray(np.abs(diff).sum()), (a, b), vjp)


def l1_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise l1 distance for (batch, n) operands -> (batch,)."""
    a, b = _lift(a), _lift(b)
    if a.data.shape != b.data.shape or a.ndim != 2:
        raise ShapeMismatch(f"l1_rows needs equal rank-2 shapes, got {a.shape} vs {b.shape}")
    diff = a.data - b.data
    sign = np.sign(diff)

    def vjp(g):
        g = g[:, None]
        return (
            g * sign if a.requires_grad else None,
            -g * sign if b.requires_grad else None,
        )

    return _result(np.abs(diff).sum(axis=1), (a, b), vjp)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; other axes must agree."""
    a, b = _lift(a), _lift(b)
    if a.ndim != b.ndim or a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeMismatch(f"concat shapes incompatible: {a.shape} vs {b.shape}")
    na = a.data.shape[-1]

    def vjp(g):
        return (
            g[..., :na].copy() if a.requires_grad else None,
            g[..., na:].copy() if b.requires_grad else None,
        )

    return _result(np.concatenate((a.data, b.data), axis=-1), (a, b), vjp)


def tile_last(x: Tensor, n: int) -> Tensor:
    """Repeat entries along the last axis to length n: out[i] = x[i % k].

    Gradients of all copies of a source entry are summed back into it.
    """
    x = _lift(x)
    k = x.data.shape[-1]
    if k == 0 or k > n:
        raise ShapeMismatch(f"cannot tile last axis of length {k} to {n}")
    idx = np.arange(n) % k
    data = np.take(x.data, idx, axis=-1)

    def vjp(g):
        gx = np.zeros(x.data.shape)
        for j in range(k):
            gx[..., j] = g[..., j::k].sum(axis=-1)
        return (gx,)

    return _result(data, (x,), vjp)


def vnormalize(x: Tensor) -> Tensor:
    """Project onto the unit sphere: x / |x| (row-wise when batched)."""
    x = _lift(x)
    if x.ndim == 1:
        n = np.linalg.norm(x.data)
        if n <= 1e-12:
            raise ValueError("cannot normalize a near-zero vector")
        unit = x.data / n

        def vjp(g):
            return ((g - np.dot(g, unit) * unit) / n,)

        return _result(unit, (x,), vjp)

    n = np.linalg.norm(x.data, axis=1, keepdims=True)
    if np.any(n <= 1e-12):
        raise ValueError("cannot normalize a near-zero row")
    unit = x.data / n

    def vjp(g):
        return ((g - (g * unit).sum(axis=1, keepdims=True) * unit) / n,)

    return _result(unit, (x,), vjp)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = _lift(x)
    old = x.data.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


class ParamStore:
    """Named map of trainable tensors with sorted, deterministic iteration."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in sorted(self._params):
            yield name, self._params[name]

    def tensors(self) -> list[Tensor]:
        return [self._params[n] for n in sorted(self._params)]

    def checksum(self) -> str:
        """SHA-256 over sorted names and raw little-endian parameter bytes."""
        h = hashlib.sha256()
        for name, t in self.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()
