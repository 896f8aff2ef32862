"""Tape-based reverse-mode automatic differentiation on float64 numpy arrays.

A :class:`Tensor` wraps a dense row-major ``float64`` array. Operations
executed while a :class:`Tape` is active append their output node to the
tape; :func:`backward` then walks the tape once in reverse, accumulating
vector-Jacobian products into the leaves. Forward evaluation outside any
tape builds no graph and costs nothing extra.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand extents do not conform."""


_TAPES: list["Tape"] = []


class Tape:
    """Append-only record of differentiable operations, in execution order.

    Because an output can only be formed after its inputs, append order is
    a topological order, and one reverse sweep visits every node exactly
    once.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Tensors are treated as immutable once produced by a forward operation;
    only optimizers mutate parameter data, and only between tapes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._vjp = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut off from the graph."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Convenience operators; the module-level functions are the real API.
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(out: Tensor, vjp) -> Tensor:
    if out.requires_grad and _TAPES:
        out._vjp = vjp
        _TAPES[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (got, want) in enumerate(zip(g.shape, shape)) if want == 1 and got != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g, accum):
        if a.requires_grad:
            accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            accum(b, _unbroadcast(g, b.data.shape))

    return _finish(out, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g, accum):
        if a.requires_grad:
            accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            accum(b, _unbroadcast(-g, b.data.shape))

    return _finish(out, vjp)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, requires_grad=a.requires_grad)

    def vjp(g, accum):
        accum(a, -g)

    return _finish(out, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Componentwise (Hadamard) product, with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g, accum):
        if a.requires_grad:
            accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _finish(out, vjp)


hadamard = mul


def diag_scale(d: Tensor, x: Tensor) -> Tensor:
    """Scale row i of ``x`` by ``d[i]``; for 1-d ``x`` this is ``d * x``."""
    d, x = as_tensor(d), as_tensor(x)
    if d.ndim != 1 or x.shape[0] != d.shape[0]:
        raise ShapeError(f"diag_scale: diagonal {d.shape} does not fit operand {x.shape}")
    dv = d.data if x.ndim == 1 else d.data[:, None]
    out = Tensor(dv * x.data, requires_grad=d.requires_grad or x.requires_grad)

    def vjp(g, accum):
        if d.requires_grad:
            gd = g * x.data
            accum(d, gd if x.ndim == 1 else gd.sum(axis=tuple(range(1, x.ndim))))
        if x.requires_grad:
            accum(x, dv * g)

    return _finish(out, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2) or (A.ndim == 1 and B.ndim == 1):
        raise ShapeError(f"matmul: unsupported ranks {A.shape} @ {B.shape}")
    if A.shape[-1] != B.shape[0]:
        raise ShapeError(f"matmul: inner extents disagree: {A.shape} @ {B.shape}")
    out = Tensor(A @ B, requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g, accum):
        if a.requires_grad:
            if A.ndim == 2 and B.ndim == 1:
                accum(a, np.outer(g, B))
            else:
                accum(a, g @ B.T)
        if b.requires_grad:
            if A.ndim == 1 and B.ndim == 2:
                accum(b, np.outer(A, g))
            else:
                accum(b, A.T @ g)

    return _finish(out, vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # exp of a non-positive argument only, so no overflow for any input
    e = np.exp(-np.abs(x.data))
    data = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(data, requires_grad=x.requires_grad)

    def vjp(g, accum):
        accum(x, g * data * (1.0 - data))

    return _finish(out, vjp)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)
    out = Tensor(data, requires_grad=x.requires_grad)

    def vjp(g, accum):
        accum(x, g * (1.0 - data * data))

    return _finish(out, vjp)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), requires_grad=x.requires_grad)

    def vjp(g, accum):
        # derivative at exactly 0 is defined as 0
        accum(x, g * (x.data > 0))

    return _finish(out, vjp)


_ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def elementwise(kind: str, x: Tensor) -> Tensor:
    """Apply a named activation (``sigmoid``, ``tanh`` or ``relu``)."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# structure


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: need at least one part")
    ax = axis % parts[0].ndim if parts[0].ndim else 0
    base = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(base) or any(
            i != ax and e != base[i] for i, e in enumerate(p.shape)
        ):
            raise ShapeError(f"concat: extent mismatch between {base} and {p.shape} on axis {ax}")
    data = np.concatenate([p.data for p in parts], axis=ax)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parts))

    sizes = [p.shape[ax] for p in parts]

    def vjp(g, accum):
        offset = 0
        index = [slice(None)] * g.ndim
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                index[ax] = slice(offset, offset + n)
                accum(p, g[tuple(index)])
            offset += n

    return _finish(out, vjp)


def split(x: Tensor, sizes, axis: int = -1) -> list[Tensor]:
    """Inverse of :func:`concat`: ``split(concat(ps), [len(p) for p in ps]) == ps``."""
    x = as_tensor(x)
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split: sizes {list(sizes)} do not sum to extent {x.shape[ax]} of {x.shape}")
    outs = []
    offset = 0
    for n in sizes:
        index = [slice(None)] * x.ndim
        index[ax] = slice(offset, offset + n)
        index = tuple(index)
        part = Tensor(x.data[index], requires_grad=x.requires_grad)

        def vjp(g, accum, index=index):
            gx = np.zeros_like(x.data)
            gx[index] = g
            accum(x, gx)

        outs.append(_finish(part, vjp))
        offset += n
    return outs


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got {x.shape}")
    out = Tensor(x.data.T, requires_grad=x.requires_grad)

    def vjp(g, accum):
        accum(x, g.T)

    return _finish(out, vjp)


def embedding(table: Tensor, indices) -> Tensor:
    """Gather rows of ``table``; gradient scatter-adds back into the rows."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("embedding: indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding: index out of range for table with {table.shape[0]} rows"
        )
    out = Tensor(table.data[idx], requires_grad=table.requires_grad)

    def vjp(g, accum):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        accum(table, gt)

    return _finish(out, vjp)


# ---------------------------------------------------------------------------
# reductions and losses


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), requires_grad=x.requires_grad)

    def vjp(g, accum):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _finish(out, vjp)


def tmean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    out = Tensor(x.data.mean(), requires_grad=x.requires_grad)

    def vjp(g, accum):
        accum(x, np.full(x.data.shape, g / n))

    return _finish(out, vjp)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared difference, a scalar."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = Tensor((diff * diff).mean(), requires_grad=pred.requires_grad or target.requires_grad)

    def vjp(g, accum):
        gd = (2.0 / n) * g * diff
        if pred.requires_grad:
            accum(pred, gd)
        if target.requires_grad:
            accum(target, -gd)

    return _finish(out, vjp)


def softmax_xent(logits: Tensor, index, reduction: str = "mean") -> Tensor:
    """Cross entropy of softmax(logits) against integer class targets.

    ``logits`` may be a single row of scores or a batch of rows with one
    target per row. The result is a scalar (sum or mean over rows).
    """
    logits = as_tensor(logits)
    squeeze = logits.ndim == 1
    L = logits.data[None, :] if squeeze else logits.data
    if L.ndim != 2:
        raise ShapeError(f"softmax_xent: expected scores of rank 1 or 2, got {logits.shape}")
    idx = np.atleast_1d(np.asarray(index))
    if idx.shape != (L.shape[0],):
        raise ShapeError(f"softmax_xent: {L.shape[0]} rows but {idx.shape} targets")
    if idx.size and (idx.min() < 0 or idx.max() >= L.shape[1]):
        raise IndexError(f"softmax_xent: class index out of range [0, {L.shape[1]})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"softmax_xent: unknown reduction {reduction!r}")

    m = L.max(axis=1, keepdims=True)
    e = np.exp(L - m)
    z = e.sum(axis=1, keepdims=True)
    rows = np.arange(L.shape[0])
    losses = (m[:, 0] + np.log(z[:, 0])) - L[rows, idx]
    total = losses.sum()
    if reduction == "mean":
        total = total / L.shape[0]
    out = Tensor(total, requires_grad=logits.requires_grad)

    def vjp(g, accum):
        p = e / z
        p[rows, idx] -= 1.0
        if reduction == "mean":
            p /= L.shape[0]
        p *= g
        accum(logits, p[0] if squeeze else p)

    return _finish(out, vjp)


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor, params=None) -> dict[Tensor, np.ndarray]:
    """Run the reverse sweep over ``tape`` from a scalar ``loss``.

    Returns a map from leaf tensors (those with ``requires_grad`` and no
    recorded operation) to their gradients, and stores each gradient in the
    leaf's ``grad`` slot. If ``params`` is given, every listed tensor gets
    an entry, with zeros when the loss does not depend on it.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    slots: dict[int, np.ndarray] = {}
    grads: dict[Tensor, np.ndarray] = {}
    if loss._vjp is not None:
        slots[id(loss)] = np.ones_like(loss.data)
    elif loss.requires_grad:
        grads[loss] = np.ones_like(loss.data)

    def accum(t: Tensor, g: np.ndarray):
        if t._vjp is not None:
            k = id(t)
            prev = slots.get(k)
            slots[k] = g if prev is None else prev + g
        elif t.requires_grad:
            prev = grads.get(t)
            grads[t] = g if prev is None else prev + g

    for node in reversed(tape.nodes):
        g = slots.pop(id(node), None)
        if g is None:
            continue
        node._vjp(g, accum)

    if slots:
        raise RuntimeError(
            "backward: gradient reached nodes recorded on a different tape; "
            "detach state carried across tapes"
        )
    if params is not None:
        for p in params:
            if p not in grads:
                grads[p] = np.zeros_like(p.data)
    for t, g in grads.items():
        t.grad = g
    return grads
