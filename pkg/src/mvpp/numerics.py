"""Dense 2-D matrices with tape-based reverse-mode differentiation and Adam.

Every trainable network in the package is written against this module.
Values are held as numpy arrays; a :class:`Matrix` optionally carries a
reference to the :class:`Tape` it was recorded on. Operations on untracked
matrices are plain eager computations.

Example::

    tape = Tape()
    w = tape.watch(np.array([[3.0]]))
    loss = mse_loss(w, Matrix.zeros(1, 1))
    grads = backward(tape, loss)[w.index]    # [[6.0]]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class ShapeError(ValueError):
    pass


class UsageError(ValueError):
    pass


class Matrix:
    """Immutable 2-D value, optionally a node on a tape."""

    __slots__ = ("data", "tape", "index")

    def __init__(self, data, tape: "Tape | None" = None, index: int = -1, check: bool = True):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"matrix must be 2-D, got shape {arr.shape}")
        if check and not np.all(np.isfinite(arr)):
            raise ValueError("matrix entries must be finite")
        arr = arr.view()
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.index = index

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on matrix of shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        tracked = "" if self.tape is None else f", node={self.index}"
        return f"Matrix({self.rows}x{self.cols}{tracked})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    # maps upstream grad -> tuple of input grads (aligned with inputs)
    vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None
    shape: tuple[int, int]


@dataclass
class Tape:
    """Append-only record of primitive ops; recording order is topological."""

    nodes: list[_Node] = field(default_factory=list)

    def watch(self, value) -> Matrix:
        """Register a leaf (parameter) and return its tracked matrix."""
        data = np.array(value.data if isinstance(value, Matrix) else value)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        m = Matrix(data, tape=self, index=len(self.nodes), check=False)
        self.nodes.append(_Node("leaf", (), None, m.shape))
        return m

    def _record(self, op: str, data: np.ndarray, inputs: tuple[Matrix, ...], vjp) -> Matrix:
        idx = len(self.nodes)
        for m in inputs:
            if m.tape is not None and m.tape is not self:
                raise UsageError("operands recorded on different tapes")
        tracked = tuple(m.index if m.tape is self else -1 for m in inputs)
        self.nodes.append(_Node(op, tracked, vjp, data.shape))
        return Matrix(data, tape=self, index=idx, check=False)

    def __len__(self) -> int:
        return len(self.nodes)


def _as_matrix(x) -> Matrix:
    return x if isinstance(x, Matrix) else Matrix(x, check=False)


def _tape_of(*ms: Matrix) -> Tape | None:
    for m in ms:
        if m.tape is not None:
            return m.tape
    return None


def _emit(op: str, data: np.ndarray, inputs: tuple[Matrix, ...], vjp) -> Matrix:
    tape = _tape_of(*inputs)
    if tape is None:
        return Matrix(data, check=False)
    return tape._record(op, data, inputs, vjp)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # reduce a broadcast gradient back to an operand of shape (1, n), (m, 1) or (1, 1)
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Matrix:
    a, b = _as_matrix(a), _as_matrix(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    ta, tb = a.tape is not None, b.tape is not None
    return _emit("matmul", A @ B, (a, b),
                 lambda g: (g @ B.T if ta else None, A.T @ g if tb else None))


def add(a, b) -> Matrix:
    """Elementwise sum; ``b`` may be a row (bias), column or scalar matrix."""
    a, b = _as_matrix(a), _as_matrix(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from None
    sa, sb = a.shape, b.shape
    return _emit("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Matrix:
    a, b = _as_matrix(a), _as_matrix(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}") from None
    sa, sb = a.shape, b.shape
    return _emit("sub", out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Matrix:
    """Elementwise (Hadamard) product with row/column broadcasting."""
    a, b = _as_matrix(a), _as_matrix(b)
    A, B = a.data, b.data
    try:
        out = A * B
    except ValueError:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from None
    ta, tb = a.tape is not None, b.tape is not None
    return _emit(
        "mul", out, (a, b),
        lambda g: (_unbroadcast(g * B, A.shape) if ta else None,
                   _unbroadcast(g * A, B.shape) if tb else None),
    )


def scale(a, c: float) -> Matrix:
    a = _as_matrix(a)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def activation(kind: str, m) -> Matrix:
    """Elementwise ``relu`` or ``tanh``. The relu subgradient at 0 is 0."""
    m = _as_matrix(m)
    x = m.data
    if kind == "relu":
        on = x > 0
        return _emit("relu", np.where(on, x, 0.0), (m,), lambda g: (g * on,))
    if kind == "tanh":
        y = np.tanh(x)
        return _emit("tanh", y, (m,), lambda g: (g * (1.0 - y * y),))
    raise UsageError(f"unknown activation {kind!r}")


def relu(m) -> Matrix:
    return activation("relu", m)


def tanh(m) -> Matrix:
    return activation("tanh", m)


def row_softmax(m) -> Matrix:
    m = _as_matrix(m)
    if m.data.size == 0:
        raise UsageError("row_softmax of empty matrix")
    x = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit("row_softmax", y, (m,), vjp)


def transpose(m) -> Matrix:
    m = _as_matrix(m)
    return _emit("transpose", m.data.T, (m,), lambda g: (g.T,))


def row_sum(m) -> Matrix:
    m = _as_matrix(m)
    cols = m.cols
    return _emit("row_sum", m.data.sum(axis=1, keepdims=True), (m,),
                 lambda g: (np.repeat(g, cols, axis=1),))


def reshape(m, rows: int, cols: int) -> Matrix:
    m = _as_matrix(m)
    shape = m.shape
    return _emit("reshape", m.data.reshape(rows, cols), (m,), lambda g: (g.reshape(shape),))


def concat_cols(*ms) -> Matrix:
    ms = tuple(_as_matrix(m) for m in ms)
    rows = {m.rows for m in ms}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols row mismatch: {[m.shape for m in ms]}")
    bounds = np.cumsum([0] + [m.cols for m in ms])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ms)))

    return _emit("concat", np.concatenate([m.data for m in ms], axis=1), ms, vjp)


def take_rows(m, idx) -> Matrix:
    """Gather rows ``m[idx]``; repeated indices accumulate gradient."""
    m = _as_matrix(m)
    idx = np.asarray(idx, dtype=np.intp)
    shape = m.shape

    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]]) if idx.size else np.zeros(0, np.intp)

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        if idx.size:
            out[sidx[starts]] = np.add.reduceat(g[order], starts, axis=0)
        return (out,)

    return _emit("take_rows", m.data[idx], (m,), vjp)


def repeat_rows(m, k: int) -> Matrix:
    """Each row repeated ``k`` times consecutively: (n, c) -> (n*k, c)."""
    m = _as_matrix(m)
    n, c = m.shape
    return _emit("repeat_rows", np.repeat(m.data, k, axis=0), (m,),
                 lambda g: (g.reshape(n, k, c).sum(axis=1),))


def group_sum_rows(m, k: int) -> Matrix:
    """Sum consecutive groups of ``k`` rows: (n*k, c) -> (n, c)."""
    m = _as_matrix(m)
    if m.rows % k:
        raise ShapeError(f"group_sum_rows: {m.rows} rows not divisible by {k}")
    n, c = m.rows // k, m.cols
    return _emit("group_sum_rows", m.data.reshape(n, k, c).sum(axis=1), (m,),
                 lambda g: (np.repeat(g, k, axis=0),))


def mse_loss(pred, target) -> Matrix:
    """Mean of squared elementwise differences, returned as a 1x1 matrix."""
    pred, target = _as_matrix(pred), _as_matrix(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    n = diff.size
    val = np.array([[np.dot(diff.ravel(), diff.ravel()) / n]]) if n else np.zeros((1, 1))

    def vjp(g):
        d = (2.0 / n) * g[0, 0] * diff
        return (d.astype(pred.data.dtype), (-d).astype(target.data.dtype))

    return _emit("mse_loss", val, (pred, target), vjp)


def weighted_mse_loss(pred, target, weights: np.ndarray, denom: float) -> Matrix:
    """``sum(w * (pred - target)^2) / denom``; ``weights`` is a constant mask."""
    pred, target = _as_matrix(pred), _as_matrix(target)
    if pred.shape != target.shape:
        raise ShapeError(f"weighted_mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), pred.shape)
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    if denom <= 0:
        val = np.zeros((1, 1))
        return _emit("wmse_loss", val, (pred, target),
                     lambda g: (np.zeros(pred.shape), np.zeros(target.shape)))
    val = np.array([[float((w * diff * diff).sum()) / denom]])

    def vjp(g):
        d = (2.0 / denom) * g[0, 0] * w * diff
        return (d.astype(pred.data.dtype), (-d).astype(target.data.dtype))

    return _emit("wmse_loss", val, (pred, target), vjp)


# ---------------------------------------------------------------------------
# differentiation and optimisation
# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Matrix) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Returns a mapping from leaf node index to its gradient. Every watched
    leaf gets an entry; leaves the loss does not depend on get zeros.
    """
    if loss.tape is not tape:
        raise UsageError("loss was not recorded on this tape")
    if loss.shape != (1, 1):
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.index] = np.ones((1, 1))
    for i in range(loss.index, -1, -1):
        node = tape.nodes[i]
        g = grads[i]
        if g is None or node.vjp is None:
            continue
        for j, gj in zip(node.inputs, node.vjp(g)):
            if j < 0 or gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj
    out = {}
    for i, node in enumerate(tape.nodes):
        if node.op == "leaf":
            out[i] = grads[i] if grads[i] is not None else np.zeros(node.shape)
    return out


Params = dict[str, np.ndarray]


def trace(params: Mapping[str, np.ndarray]) -> tuple[Tape, dict[str, Matrix]]:
    """Start a fresh tape with every parameter watched."""
    tape = Tape()
    return tape, {name: tape.watch(v) for name, v in params.items()}


def value_and_grad(build: Callable[[dict[str, Matrix]], Matrix], params: Params) -> tuple[float, Params]:
    tape, tracked = trace(params)
    loss = build(tracked)
    g = backward(tape, loss)
    return loss.item(), {name: g[m.index] for name, m in tracked.items()}


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0

    @classmethod
    def fresh(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
                   {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}, 0)


def adam_step(params: Params, grads: Params, state: AdamState,
              hyper: AdamHyper = AdamHyper()) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    t = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_p[name] = p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(new_m, new_v, t)


def finite_diff_check(build: Callable[[dict[str, Matrix]], Matrix], params: Params,
                      eps: float = 1e-5, max_coords: int | None = None,
                      rng: np.random.Generator | None = None, floor: float = 1e-6) -> float:
    """Worst relative error between backward() and central differences.

    ``build`` maps tracked parameters to a scalar loss. With ``max_coords``
    a random subset of coordinates is probed (per parameter, proportionally).
    Relative error is ``|a - n| / max(|a|, |n|, floor)``. The floor sits at
    the resolution of central differences on an O(1) loss (about 1e-11
    absolute), so vanishing gradients are judged on absolute error.
    """
    if eps <= 0:
        raise UsageError("eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = value_and_grad(build, params)

    def f(p):
        return build({k: Matrix(v, check=False) for k, v in p.items()}).item()

    total = sum(v.size for v in params.values())
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        coords = np.arange(p.size)
        if max_coords is not None and total > max_coords:
            take = max(1, int(round(max_coords * p.size / total)))
            coords = rng.choice(p.size, size=min(take, p.size), replace=False)
        flat = p.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = f(params)
            flat[c] = orig - eps
            down = f(params)
            flat[c] = orig
            num = (up - down) / (2 * eps)
            a = analytic[name].reshape(-1)[c]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def to_storage(params: Mapping[str, np.ndarray]) -> Params:
    """Round parameters to 32-bit storage precision."""
    return {k: np.asarray(v, dtype=np.float32) for k, v in params.items()}
