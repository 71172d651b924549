"""Dense float64 arrays with reverse-mode gradients recorded on a tape.

A :class:`Tensor` is an immutable value. Tensors created through
:meth:`Tape.leaf` (and everything computed from them) are recorded on that
tape; tensors without a tape are constants and cost no bookkeeping, so the
same model code runs as a plain forward pass when nothing is being
differentiated.

Example:
    >>> tape = Tape()
    >>> x = tape.leaf([1.0, 2.0])
    >>> y = (x * x).sum()
    >>> tape.backward(y)[x.node]
    array([2., 4.])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Inputs of an op do not conform to its shape rules."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


@dataclass(frozen=True)
class OpRule:
    forward: Callable[..., np.ndarray]
    # vjp(g, out, *inputs, **attrs) -> one gradient (or None) per input
    vjp: Callable[..., tuple]


_OPS: dict[str, OpRule] = {}


def register_op(kind: str, forward: Callable, vjp: Callable) -> None:
    """Add (or replace) a primitive op."""
    _OPS[kind] = OpRule(forward, vjp)


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    vjp: Callable[[np.ndarray], tuple] | None


class Tape:
    """Ordered record of primitive ops; recording order is topological."""

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._values: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, value) -> Tensor:
        arr = _as_array(value)
        _check_finite("leaf", arr)
        return self._push(_Node("leaf", (), None), arr)

    def _push(self, node: _Node, value: np.ndarray) -> Tensor:
        self._nodes.append(node)
        self._values.append(value)
        return Tensor(value, self, len(self._nodes) - 1)

    def backward(self, output: Tensor) -> dict[int, np.ndarray]:
        """Gradients of a scalar output with respect to every leaf.

        Returns a map from leaf node id to gradient; leaves the output does
        not depend on get zeros.
        """
        if output.tape is not self:
            raise ValueError("output was not recorded on this tape")
        if output.value.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {output.node: np.ones_like(output.value)}
        for nid in range(output.node, -1, -1):
            g = grads.pop(nid, None)
            node = self._nodes[nid]
            if node.kind == "leaf":
                if g is not None:
                    grads[nid] = g
                continue
            if g is None:
                continue
            for src, gi in zip(node.inputs, node.vjp(g)):
                if src < 0 or gi is None:
                    continue
                if src in grads:
                    grads[src] = grads[src] + gi
                else:
                    grads[src] = gi
        out = {}
        for nid, node in enumerate(self._nodes):
            if node.kind == "leaf":
                out[nid] = grads.get(nid, np.zeros_like(self._values[nid]))
        return out

    def gradients(self, output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        grads = self.backward(output)
        return [grads[t.node] for t in wrt]


class Tensor:
    __slots__ = ("value", "tape", "node")
    __array_priority__ = 1000

    def __init__(self, value, tape: Tape | None = None, node: int = -1):
        self.value = value if isinstance(value, np.ndarray) else _as_array(value)
        self.tape = tape
        self.node = node

    def __repr__(self) -> str:
        tag = "const" if self.tape is None else f"node={self.node}"
        return f"Tensor({self.value!r}, {tag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return forward_op("add", self, other)

    def __radd__(self, other):
        return forward_op("add", other, self)

    def __sub__(self, other):
        return forward_op("sub", self, other)

    def __rsub__(self, other):
        return forward_op("sub", other, self)

    def __mul__(self, other):
        return forward_op("mul", self, other)

    def __rmul__(self, other):
        return forward_op("mul", other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by constants")
        return forward_op("mul", self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return forward_op("neg", self)

    def __matmul__(self, other):
        return forward_op("matmul", self, other)

    def __rmatmul__(self, other):
        return forward_op("matmul", other, self)

    def __getitem__(self, index):
        return forward_op("index", self, index=index)

    def sum(self, axis=None):
        return forward_op("sum", self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward_op("reshape", self, shape=shape)

    def tanh(self):
        return forward_op("tanh", self)

    def exp(self):
        return forward_op("exp", self)

    def log(self):
        return forward_op("log", self)

    def square(self):
        return forward_op("square", self)


def _as_array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


def _check_finite(kind: str, value: np.ndarray) -> None:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"op '{kind}' produced non-finite values")


def constant(value) -> Tensor:
    return Tensor(_as_array(value))


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    """Evaluate primitive ``kind`` and record it when any input is on a tape."""
    rule = _OPS.get(kind)
    if rule is None:
        raise KeyError(f"unknown op '{kind}'")
    tape = None
    values = []
    ids = []
    for x in inputs:
        if isinstance(x, Tensor):
            if x.tape is not None:
                if tape is not None and x.tape is not tape:
                    raise ValueError(f"op '{kind}' mixes tensors from different tapes")
                tape = x.tape
            values.append(x.value)
            ids.append(x.node if x.tape is not None else -1)
        else:
            values.append(_as_array(x))
            ids.append(-1)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = rule.forward(*values, **attrs)
    _check_finite(kind, out)
    if tape is None:
        return Tensor(out)
    vjp = rule.vjp

    def node_vjp(g, _out=out, _values=values, _attrs=attrs):
        return vjp(g, _out, *_values, **_attrs)

    return tape._push(_Node(kind, tuple(ids), node_vjp), out)


# --- primitive definitions -------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def _add(a, b):
    _broadcast_shape("add", a, b)
    return a + b


def _sub(a, b):
    _broadcast_shape("sub", a, b)
    return a - b


def _mul(a, b):
    _broadcast_shape("mul", a, b)
    return a * b


def _matmul(a, b):
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b


def _matmul_vjp(g, out, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if b.ndim == 1:
        ga = np.multiply.outer(g, b) if a.ndim == 2 else g[..., None] * b
        gb = a.T @ g if a.ndim == 2 else np.einsum("...i,...ij->j", g, a)
        return ga, gb
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def _softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_vjp(g, out, x, axis=-1):
    return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)


def _lse_vjp(g, out, x, axis=-1):
    return (np.expand_dims(g, axis) * _softmax(x, axis=axis),)


def _sum_vjp(g, out, x, axis=None):
    if axis is None:
        return (np.broadcast_to(g, x.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)


def _index_vjp(g, out, x, index=None):
    gx = np.zeros_like(x)
    np.add.at(gx, index, g)
    return (gx,)


def _reshape(x, shape=()):
    try:
        return x.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None


def _gather(x, indices=None, axis=0):
    return np.take(x, indices, axis=axis)


def _gather_vjp(g, out, x, indices=None, axis=0):
    gx = np.zeros_like(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = np.asarray(indices)
    np.add.at(gx, tuple(idx), g)
    return (gx,)


def _concat(*xs, axis=0):
    return np.concatenate(xs, axis=axis)


def _concat_vjp(g, out, *xs, axis=0):
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _clip(x, lo=-np.inf, hi=np.inf):
    return np.clip(x, lo, hi)


def _clip_vjp(g, out, x, lo=-np.inf, hi=np.inf):
    return (g * ((x >= lo) & (x <= hi)),)


def _log(x):
    if np.any(x <= 0):
        raise NonFiniteError("op 'log' got a non-positive input")
    return np.log(x)


register_op("add", _add, lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
register_op("sub", _sub, lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
register_op("mul", _mul, lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))
register_op("neg", lambda x: -x, lambda g, out, x: (-g,))
register_op("matmul", _matmul, _matmul_vjp)
register_op("tanh", np.tanh, lambda g, out, x: (g * (1.0 - out * out),))
register_op("exp", np.exp, lambda g, out, x: (g * out,))
register_op("log", _log, lambda g, out, x: (g / x,))
register_op("square", np.square, lambda g, out, x: (2.0 * g * x,))
register_op("softmax", _softmax, _softmax_vjp)
register_op("logsumexp", _logsumexp, _lse_vjp)
register_op("sum", lambda x, axis=None: np.sum(x, axis=axis), _sum_vjp)
register_op("reshape", _reshape, lambda g, out, x, shape=(): (g.reshape(x.shape),))
register_op("index", lambda x, index=None: x[index], _index_vjp)
register_op("gather", _gather, _gather_vjp)
register_op("concat", _concat, _concat_vjp)
register_op("clip", _clip, _clip_vjp)
register_op("transpose", lambda x: x.T, lambda g, out, x: (g.T,))


# --- functional spellings ----------------------------------------------------


def matmul(a, b) -> Tensor:
    return forward_op("matmul", a, b)


def tanh(x) -> Tensor:
    return forward_op("tanh", x)


def exp(x) -> Tensor:
    return forward_op("exp", x)


def log(x) -> Tensor:
    return forward_op("log", x)


def square(x) -> Tensor:
    return forward_op("square", x)


def softmax(x, axis: int = -1) -> Tensor:
    return forward_op("softmax", x, axis=axis)


def logsumexp(x, axis: int = -1) -> Tensor:
    return forward_op("logsumexp", x, axis=axis)


def reduce_sum(x, axis=None) -> Tensor:
    return forward_op("sum", x, axis=axis)


def gather(x, indices, axis: int = 0) -> Tensor:
    return forward_op("gather", x, indices=np.asarray(indices), axis=axis)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    return forward_op("concat", *xs, axis=axis)


def clip(x, lo: float, hi: float) -> Tensor:
    return forward_op("clip", x, lo=lo, hi=hi)


def transpose(x) -> Tensor:
    return forward_op("transpose", x)


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a Tensor to a scalar Tensor. The error per coordinate is
    ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    x0 = _as_array(x)
    tape = Tape()
    leaf = tape.leaf(x0)
    out = f(leaf)
    analytic = tape.backward(out)[leaf.node]
    numeric = np.empty_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += step
        xm[i] -= step
        fp = f(constant(xp.reshape(x0.shape))).item()
        fm = f(constant(xm.reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite near coordinate {i}")
        flat[i] = (fp - fm) / (2.0 * step)
    err = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
    return float(err.max()) if err.size else 0.0
