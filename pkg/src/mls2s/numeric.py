"""Dense float64 tensors with tape-based reverse-mode differentiation and Adam.

Only the handful of operations the forecaster needs are provided. Every
operation checks shapes strictly: there is no broadcasting apart from scalar
scaling and the row-broadcast performed by :func:`add_bias`.

Usage::

    W = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(mul(W, W))
    backward(tape, loss)
    W.grad  # 2 * W
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor", "Tape", "AdamState",
    "matmul", "add", "sub", "mul", "scale", "add_scalar", "sigmoid", "tanh",
    "add_bias", "concat_cols", "propagate", "sum_all", "mean_all",
    "masked_mean_abs_error", "backward", "finite_difference_grad", "adam_step",
]

_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array of doubles.

    ``requires_grad`` marks a leaf (a parameter) whose gradient is written to
    ``grad`` by :func:`backward`. Intermediate results computed while a tape
    is active are tracked implicitly.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, data={self.data!r})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


VJP = Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of operations performed while the tape is active.

    A tape belongs to one forward pass and one thread. Records are appended in
    execution order, so every record's inputs were produced earlier.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], VJP]] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: VJP) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    out._tracked = False
    tape = _active_tape()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        tape.records.append((out, inputs, vjp))
    return out


def _require_2d(op: str, *ts: Tensor) -> None:
    for t in ts:
        if t.data.ndim != 2:
            raise ShapeError(f"{op}: expected a matrix, got shape {t.shape}")


def _require_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} disagree")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same("mul", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data + float(c), (a,), lambda g: (g,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a 1 x k row vector ``b`` to every row of the m x k matrix ``a``."""
    _require_2d("add_bias", a, b)
    if b.shape[0] != 1 or b.shape[1] != a.shape[1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match rows of {a.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("concat_cols", a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts of {a.shape} and {b.shape} differ")
    p = a.shape[1]
    return _result(np.concatenate([a.data, b.data], axis=1), (a, b),
                   lambda g: (g[:, :p], g[:, p:]))


def propagate(P: np.ndarray, h: Tensor) -> Tensor:
    """Left-multiply ``h`` by the constant n x n operator ``P``.

    ``h`` may stack several samples row-wise (``B*n`` rows); each n-row block
    is propagated independently.
    """
    _require_2d("propagate", h)
    P = np.asarray(P)
    n = P.shape[0]
    rows, f = h.shape
    if P.ndim != 2 or P.shape[1] != n or rows % n:
        raise ShapeError(f"propagate: operator {P.shape} incompatible with {h.shape}")
    if rows == n:
        return _result(P @ h.data, (h,), lambda g: (P.T @ g,))
    B = rows // n

    def vjp(g):
        return ((P.T @ g.reshape(B, n, f)).reshape(rows, f),)

    return _result((P @ h.data.reshape(B, n, f)).reshape(rows, f), (h,), vjp)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    shape, k = a.shape, a.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / k),))


def masked_mean_abs_error(pred: Tensor, target, mask=None) -> Tensor:
    """Mean of ``|pred - target|`` over entries where ``mask`` is true.

    ``target`` is a constant. The subgradient at an exact zero residual is 0.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeError(f"mae: prediction {pred.shape} and target {target.shape} differ")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape:
        raise ShapeError(f"mae: mask {mask.shape} does not match {pred.shape}")
    count = int(mask.sum())
    if count == 0:
        raise ContractError("mae: mask selects no entries")
    diff = np.where(mask, pred.data - np.where(mask, target, 0.0), 0.0)
    value = np.abs(diff).sum() / count
    return _result(np.asarray(value), (pred,), lambda g: (float(g) * np.sign(diff) / count,))


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf on ``tape``.

    Leaves listed in ``params`` that the loss does not reach receive a zero
    gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, vjp in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if not t._tracked:
                continue
            key = id(t)
            if t.requires_grad:
                leaves[key] = t
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    if loss.requires_grad:
        leaves[id(loss)] = loss
    for key, t in leaves.items():
        g = grads[key]
        t.grad = g.copy() if t.grad is None else t.grad + g
    for p in params or ():
        if p.grad is None:
            p.grad = np.zeros(p.shape)


def finite_difference_grad(f: Callable[[Tensor], object], x: Tensor, step: float = 1e-6) -> Tensor:
    """Central-difference estimate of the gradient of scalar ``f`` at ``x``.

    ``x.data`` is perturbed in place one entry at a time and restored, so ``f``
    may close over ``x`` (e.g. a model parameter).
    """
    if step <= 0:
        raise ContractError("finite_difference_grad: step must be positive")

    def value() -> float:
        v = f(x)
        return v.item() if isinstance(v, Tensor) else float(v)

    flat = x.data.reshape(-1)
    out = np.empty(flat.shape)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = value()
        flat[i] = orig - step
        fm = value()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * step)
    return Tensor(out.reshape(x.shape))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """Apply one bias-corrected Adam update in place and clear the gradients."""
    if lr <= 0:
        raise ContractError(f"adam_step: learning rate must be positive, got {lr}")
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
        if p.grad.shape != p.shape:
            raise ShapeError(f"adam_step: gradient of {name!r} has shape {p.grad.shape}, expected {p.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
