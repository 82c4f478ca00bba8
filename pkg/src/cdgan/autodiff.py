"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tape`` records every differentiable operation executed while it is
active (``with Tape() as tape: ...``).  ``backward`` replays the records
in reverse and deposits exact gradients on every leaf tensor that was
created with ``requires_grad=True``.  Tensors default to float32; float64
arrays pass through untouched, so identity checks can run at full
precision.

The op set is closed: matmul, add, subtract, multiply (tensor or python
scalar), leaky_relu, tanh, sigmoid, exp, log, log_sum_exp, sum, mean,
l2_normalize, concatenate, narrow.  Broadcasting is limited to adding a
row bias to a matrix.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError, ValidationError

Array = np.ndarray

_FLOAT_DTYPES = (np.float32, np.float64)


def _coerce(values) -> Array:
    arr = np.asarray(values)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """Dense n-dimensional real array, optionally tracked on a tape.

    ``node_id`` is the identifier on the most recent tape the tensor
    participated in; it is None for detached tensors.
    """

    __slots__ = ("values", "requires_grad", "grad", "node_id", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = _coerce(values)
        self.requires_grad = requires_grad
        self.grad: Optional[Array] = None
        self.node_id: Optional[int] = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad}{tag})"

    # sugar so loss code reads like the math
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(self, other)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    """One differentiable op on a tape: inputs precede the output by construction."""

    __slots__ = ("op", "input_ids", "output_id", "backward")

    def __init__(self, op: str, input_ids, output_id: int,
                 backward: Callable[[Array], tuple]):
        self.op = op
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward = backward


_ACTIVE = threading.local()


def _stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = _ACTIVE.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable ops; confined to one thread."""

    def __init__(self):
        self.records: list[_Record] = []
        self._n_nodes = 0
        self._ids: dict[int, int] = {}        # id(tensor) -> node id
        self._tensors: dict[int, Tensor] = {}  # node id -> tensor
        self._leaf_ids: set[int] = set()
        self._requires: list[bool] = []

    def _alloc(self, requires: bool) -> int:
        nid = self._n_nodes
        self._n_nodes += 1
        self._requires.append(requires)
        return nid

    def _bind(self, t: Tensor) -> int:
        """Register a pre-existing tensor (leaf) on this tape."""
        nid = self._ids.get(id(t))
        if nid is None:
            nid = self._alloc(t.requires_grad)
            self._ids[id(t)] = nid
            self._tensors[nid] = t
            self._leaf_ids.add(nid)
            t.node_id = nid
        return nid

    def _emit(self, op: str, inputs: Sequence[Tensor], out: Tensor, backward) -> None:
        input_ids = tuple(self._bind(t) for t in inputs)
        out_id = self._alloc(True)
        self._ids[id(out)] = out_id
        self._tensors[out_id] = out
        out.node_id = out_id
        self.records.append(_Record(op, input_ids, out_id, backward))

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self, "tapes must nest"
        return False

    def backward(self, loss: Tensor) -> dict[int, Array]:
        """Reverse sweep from a scalar loss.

        Sets ``t.grad`` on every requires_grad leaf bound to this tape
        (zeros for leaves the loss does not depend on) and returns the
        node-id -> gradient map for inspection.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss_id = self._ids.get(id(loss))
        if loss_id is None:
            raise ContractError("loss tensor was not produced on this tape")

        grads: dict[int, Array] = {loss_id: np.ones_like(loss.values)}
        for rec in reversed(self.records):
            gout = grads.get(rec.output_id)
            if gout is None:
                continue
            for nid, gin in zip(rec.input_ids, rec.backward(gout)):
                if gin is None or not self._requires[nid]:
                    continue
                acc = grads.get(nid)
                grads[nid] = gin if acc is None else acc + gin

        for nid in self._leaf_ids:
            t = self._tensors[nid]
            if t.requires_grad:
                g = grads.get(nid)
                t.grad = np.zeros_like(t.values) if g is None else g
        return grads


def backward(tape: Tape, loss: Tensor) -> dict[int, Array]:
    return tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: Sequence[Tensor], out_values: Array, backward) -> Tensor:
    """Create the output tensor, recording the op if a tape is listening."""
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_values, requires_grad=tracked)
    if tracked:
        tape._emit(op, inputs, out, backward)
    return out


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """a @ b, or a @ b.T when transpose_b (the Gram-matrix layout)."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    inner_b = bv.shape[1] if transpose_b else bv.shape[0]
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != inner_b:
        raise ShapeError(
            f"matmul: incompatible shapes {av.shape} x {bv.shape}"
            f"{' (b transposed)' if transpose_b else ''}")

    if transpose_b:
        def bwd(g):
            return g @ bv, g.T @ av
        out = av @ bv.T
    else:
        def bwd(g):
            return g @ bv.T, av.T @ g
        out = av @ bv

    return _emit("matmul", (a, b), out, bwd)


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        return _emit("add_scalar", (a,), a.values + c, lambda g: (g,))
    b = _as_tensor(b)
    av, bv = a.values, b.values
    if av.shape == bv.shape:
        return _emit("add", (a, b), av + bv, lambda g: (g, g))
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        # row bias: the one broadcast we support
        return _emit("add_bias", (a, b), av + bv, lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add: incompatible shapes {av.shape} + {bv.shape}")


def subtract(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        return _emit("sub_scalar", (a,), a.values - c, lambda g: (g,))
    b = _as_tensor(b)
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise ShapeError(f"subtract: incompatible shapes {av.shape} - {bv.shape}")
    return _emit("subtract", (a, b), av - bv, lambda g: (g, -g))


def multiply(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        return _emit("mul_scalar", (a,), a.values * c, lambda g: (g * c,))
    b = _as_tensor(b)
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise ShapeError(f"multiply: incompatible shapes {av.shape} * {bv.shape}")
    return _emit("multiply", (a, b), av * bv, lambda g: (g * bv, g * av))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValidationError(f"leaky_relu slope must be in [0, 1), got {slope}")
    x = _as_tensor(x)
    xv = x.values

    def bwd(g):
        # subgradient at 0 is the negative-side slope
        return (np.where(xv > 0, g, g * slope),)

    return _emit("leaky_relu", (x,), np.maximum(xv, xv * slope), bwd)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.values)
    return _emit("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = 0.5 * (np.tanh(0.5 * x.values) + 1.0)  # overflow-free logistic
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.values)
    return _emit("exp", (x,), out, lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _emit("log", (x,), np.log(x.values), lambda g: (g / x.values,))


def log_sum_exp(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """log(sum(exp(x))) with max-shift stabilization; exact softmax gradient."""
    x = _as_tensor(x)
    xv = x.values
    if xv.size == 0 or (axis is not None and xv.shape[axis] == 0):
        raise ShapeError("log_sum_exp over an empty axis")
    m = xv.max(axis=axis, keepdims=True)
    e = np.exp(xv - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).reshape(
        np.sum(xv, axis=axis).shape if axis is not None else ())
    softmax = e / s

    def bwd(g):
        if axis is None:
            return (g * softmax,)
        return (np.expand_dims(g, axis) * softmax,)

    return _emit("log_sum_exp", (x,), out, bwd)


def sum_(x: Tensor, axis: Optional[int] = None) -> Tensor:
    x = _as_tensor(x)
    xv = x.values
    out = xv.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy(),)

    return _emit("sum", (x,), out, bwd)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    x = _as_tensor(x)
    xv = x.values
    n = xv.size if axis is None else xv.shape[axis]
    out = xv.mean(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, xv.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, xv.shape).copy(),)

    return _emit("mean", (x,), out, bwd)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale rows (or a lone vector) to unit L2 norm; x/eps below the guard."""
    x = _as_tensor(x)
    xv = x.values
    vector = xv.ndim == 1
    x2 = xv[None, :] if vector else xv
    if x2.ndim != 2:
        raise ShapeError(f"l2_normalize expects a vector or matrix, got shape {xv.shape}")
    norms = np.sqrt((x2 * x2).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = x2 / denom

    def bwd(g):
        g2 = g[None, :] if vector else g
        dot = (g2 * y).sum(axis=1, keepdims=True)
        gin = np.where(norms >= eps, (g2 - y * dot) / denom, g2 / denom)
        return (gin[0] if vector else gin,)

    return _emit("l2_normalize", (x,), y[0] if vector else y, bwd)


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concatenate needs at least one tensor")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors)))

    return _emit("concatenate", tensors, out, bwd)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    x = _as_tensor(x)
    xv = x.values
    if not 0 <= start <= stop <= xv.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{stop}] out of range for axis {axis} of shape {xv.shape}")
    idx = [slice(None)] * xv.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(xv)
        full[idx] = g
        return (full,)

    return _emit("narrow", (x,), xv[idx].copy(), bwd)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) assembled from primitives, stable for any magnitude."""
    neg_abs = subtract(multiply(relu(x), -1.0), relu(multiply(x, -1.0)))
    return add(log(add(exp(neg_abs), 1.0)), relu(x))


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """Bias-corrected Adam over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValidationError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self, grads: Optional[Sequence[Array]] = None) -> None:
        """Apply one update in place; reads ``p.grad`` unless grads are passed."""
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ContractError(
                f"expected {len(self.params)} gradients, got {len(grads)}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1 ** self.t
        correct2 = 1.0 - b2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            if g is None:
                g = np.zeros_like(p.values)
            if g.shape != p.values.shape:
                raise ContractError(
                    f"gradient shape {g.shape} != parameter shape {p.values.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / correct1
            v_hat = v / correct2
            p.values -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.values.dtype, copy=False)


def adam_step(state: AdamState, params: Sequence[Tensor],
              grads: Optional[Sequence[Array]] = None) -> None:
    if list(params) != state.params:
        raise ContractError("params do not match the optimizer state")
    state.step(grads)
