"""Dense 2-D reverse-mode automatic differentiation.

Operations are recorded on the innermost active :class:`Tape`. Outside a tape
every op is a plain numpy computation, which is how evaluation runs without
paying for gradient bookkeeping::

    with Tape():
        loss = mse(matmul(W, x), y)
    backward(loss)
    W.grad  # dLoss/dW

Tensors are always 2-D. Broadcasting is limited to scalars and to
row/column vectors (the bias-add case).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "Tensor",
    "Tape",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "transpose",
    "elementwise",
    "relu",
    "sum_all",
    "mean_all",
    "col_norm",
    "mse",
    "softmax_cross_entropy",
    "backward",
    "finite_diff_grad",
]


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class TapeError(AutodiffError, RuntimeError):
    pass


class Tensor:
    """A 2-D array of values with an optional accumulated gradient.

    ``grad`` is allocated only when ``requires_grad`` is set; for constants it
    stays ``None`` and is never touched by :func:`backward`.
    """

    __slots__ = ("values", "grad", "requires_grad", "name", "_tape", "_node")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(values, dtype=dtype if dtype is not None else np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got {arr.ndim}-D input")
        if arr.dtype not in (np.float64, np.float32):
            raise TypeError(f"unsupported dtype {arr.dtype}; use float64 or float32")
        _check_finite(arr, "tensor")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._tape: Tape | None = None
        self._node: int | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.values = arr
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._tape = None
        out._node = None
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def tape_id(self) -> int | None:
        return self._node

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad = np.zeros_like(self.values)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.values.copy())

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def tensor(values, requires_grad: bool = False, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(values, requires_grad=requires_grad, name=name, dtype=dtype)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nodes are appended in execution order, so the
    list is topologically sorted by construction. A tape can be replayed
    backward once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn) -> None:
        if self.consumed:
            raise TapeError("cannot record on a tape that has already been replayed")
        output.requires_grad = True
        output._tape = self
        output._node = len(self.nodes)
        self.nodes.append(_Node(op, tuple(inputs), output, backward_fn))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _emit(op: str, arr: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(arr, op)
    out = Tensor._wrap(arr)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        _ACTIVE[-1].record(op, inputs, out, backward_fn)
    return out


def _broadcast_ok(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a == b or b == (1, 1) or b == (a[0], 1) or b == (1, a[1])


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def back(g):
        return g @ bv.T, av.T @ g

    return _emit("matmul", av @ bv, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Sum of equal shapes, or of a matrix and a row/column vector (bias add)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")
    sb = b.shape

    def back(g):
        return g, _unbroadcast(g, sb)

    return _emit("add", a.values + b.values, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"sub shapes incompatible: {a.shape} - {b.shape}")
    sb = b.shape

    def back(g):
        return g, -_unbroadcast(g, sb)

    return _emit("sub", a.values - b.values, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be a row or column vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"mul shapes incompatible: {a.shape} * {b.shape}")
    av, bv = a.values, b.values

    def back(g):
        return g * bv, _unbroadcast(g * av, bv.shape)

    return _emit("mul", av * bv, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"div shapes incompatible: {a.shape} / {b.shape}")
    av, bv = a.values, b.values
    out = av / bv

    def back(g):
        return g / bv, _unbroadcast(-g * out / bv, bv.shape)

    return _emit("div", out, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def back(g):
        return (g * c,)

    return _emit("scale", a.values * c, (a,), back)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def back(g):
        return (g.T,)

    return _emit("transpose", a.values.T.copy(), (a,), back)


def elementwise(
    a: Tensor,
    f: Callable[[np.ndarray], np.ndarray],
    df: Callable[[np.ndarray], np.ndarray],
    op: str = "elementwise",
) -> Tensor:
    """Apply ``f`` pointwise; backward multiplies by ``df`` at the saved input."""
    a = _as_tensor(a)
    av = a.values

    def back(g):
        return (g * df(av),)

    return _emit(op, np.asarray(f(av), dtype=av.dtype), (a,), back)


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    return elementwise(a, lambda v: np.maximum(v, 0.0), lambda v: (v > 0).astype(v.dtype), "relu")


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def back(g):
        return (np.full(shape, g[0, 0], dtype=g.dtype),)

    return _emit("sum", a.values.sum().reshape(1, 1), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    n = a.values.size

    def back(g):
        return (np.full(shape, g[0, 0] / n, dtype=g.dtype),)

    return _emit("mean", (a.values.sum() / n).reshape(1, 1), (a,), back)


def col_norm(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-column L2 norm as a 1 x cols row, floored at ``eps``.

    Columns on the floor receive zero gradient.
    """
    a = _as_tensor(a)
    av = a.values
    raw = np.sqrt((av * av).sum(axis=0, keepdims=True))
    out = np.maximum(raw, eps)
    live = raw >= eps

    def back(g):
        safe = np.where(live, raw, 1.0)
        return (np.where(live, g / safe, 0.0) * av,)

    return _emit("col_norm", out, (a,), back)


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared errors over every entry."""
    pred = _as_tensor(pred)
    tv = target.values if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if tv.shape != pred.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {tv.shape}")
    diff = pred.values - tv
    n = diff.size

    def back(g):
        return (g[0, 0] * (2.0 / n) * diff,)

    return _emit("mse", np.array([[np.dot(diff.ravel(), diff.ravel()) / n]], dtype=diff.dtype), (pred,), back)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy; ``logits`` is classes x batch, ``labels`` holds class indices."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    k, n = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits.values - logits.values.max(axis=0, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=0, keepdims=True))
    cols = np.arange(n)
    loss = -logp[labels, cols].sum() / n

    def back(g):
        p = np.exp(logp)
        p[labels, cols] -= 1.0
        return (g[0, 0] * p / n,)

    return _emit("softmax_xent", np.array([[loss]], dtype=logits.dtype), (logits,), back)


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into the ``grad`` of every leaf that requires it.

    Gradients add to whatever is already stored; zero them between steps.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss is detached: it was not recorded on a tape")
    if tape.consumed:
        raise TapeError("tape has already been replayed; record a new forward pass")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {loss._node: np.ones((1, 1), dtype=loss.dtype)}
    for idx in range(loss._node, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        for inp, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._tape is tape:
                prev = grads.get(inp._node)
                grads[inp._node] = gi if prev is None else prev + gi
            else:
                _check_finite(gi, f"gradient of {node.op}")
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi


def finite_diff_grad(f: Callable[[Tensor], object], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` with respect to every entry of ``x``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = _as_tensor(x)
    vals = x.values
    out = np.zeros_like(vals)

    def ev() -> float:
        r = f(x)
        v = r.item() if isinstance(r, Tensor) else float(r)
        if not np.isfinite(v):
            raise NonFiniteError("f returned a non-finite value during finite differencing")
        return v

    for idx in np.ndindex(vals.shape):
        orig = vals[idx]
        vals[idx] = orig + h
        fp = ev()
        vals[idx] = orig - h
        fm = ev()
        vals[idx] = orig
        out[idx] = (fp - fm) / (2.0 * h)
    return Tensor(out)
