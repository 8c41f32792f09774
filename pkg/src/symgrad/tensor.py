"""Dense float64 tensors with a reverse-mode gradient tape.

The engine only needs the handful of primitives used by probability
algebra and small perception models: broadcasted elementwise arithmetic,
clamp, axis reductions, concatenation, row gathering, affine maps, and a
softmax/relu/log trio for classifier heads.  Every primitive records a
backward rule onto the ``GradientTape`` owned by the executing context;
one call to :meth:`GradientTape.backward` fills in gradients for all
registered leaves.

Tensors are immutable after construction.  A tape is confined to a single
execution scope and must not be shared between concurrent runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "ShapeError",
    "DomainError",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "minimum",
    "clamp",
    "reduce",
    "reduce_sum",
    "reduce_prod",
    "reduce_max",
    "concat",
    "select_rows",
    "reshape",
    "affine",
    "softmax",
    "relu",
    "log",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class DomainError(ValueError):
    """Raised when an input lies outside an operation's domain."""


class Tensor:
    """Immutable dense array, optionally attached to a gradient tape.

    ``tape`` / ``node`` are None for constants.  Leaves are created
    through :meth:`GradientTape.leaf` and are the only tensors that
    receive gradients from :meth:`GradientTape.backward`.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None):
        arr = np.asarray(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")

    def __repr__(self):
        attached = "" if self.tape is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}{attached})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _shared_tape(*tensors):
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands belong to different gradient tapes")
    return tape


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class GradientTape:
    """Ordered record of primitive applications for reverse-mode autodiff.

    Records are appended in execution order, so a single reversed sweep
    visits consumers before producers.  Leaves unreachable from the loss
    receive zero gradients.
    """

    def __init__(self):
        self._records = []  # (out_node, input_nodes, backward_fn)
        self._next = 0
        self._leaves = []  # Tensor objects

    def leaf(self, data) -> Tensor:
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("gradient-tape leaves must be finite")
        t = Tensor(arr, tape=self, node=self._alloc())
        self._leaves.append(t)
        return t

    def _alloc(self) -> int:
        node = self._next
        self._next += 1
        return node

    def _record(self, data, inputs, backward) -> Tensor:
        """Wrap `data` as a taped tensor whose backward rule is `backward`.

        `backward(grad_out) -> tuple of gradients`, one per input node.
        """
        out = Tensor(data, tape=self, node=self._alloc())
        self._records.append((out.node, tuple(t.node for t in inputs), backward))
        return out

    def backward(self, loss: Tensor) -> dict:
        """Run one reverse sweep from a scalar loss.

        Returns a mapping from each registered leaf tensor to its gradient
        tensor (zeros when the leaf does not reach the loss).
        """
        if loss.tape is not self:
            raise ValueError("loss tensor is detached from this tape")
        if loss.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads = {loss.node: np.ones_like(loss.data)}
        for out_node, input_nodes, backward_fn in reversed(self._records):
            g = grads.get(out_node)
            if g is None:
                continue
            for node, part in zip(input_nodes, backward_fn(g)):
                if node is None or part is None:  # constants take no gradient
                    continue
                acc = grads.get(node)
                grads[node] = part if acc is None else acc + part
        return {
            leaf: Tensor(grads.get(leaf.node, np.zeros_like(leaf.data)))
            for leaf in self._leaves
        }


def _record_or_const(tape, data, inputs, backward):
    if tape is None:
        return Tensor(data)
    return tape._record(data, inputs, backward)


def elementwise(kind: str, a, b) -> Tensor:
    """Broadcasted binary op; kind is one of add, sub, mul, min, div.

    ``min`` routes the gradient to the first argument on exact ties.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    tape = _shared_tape(a, b)
    ad, bd = a.data, b.data
    try:
        if kind == "add":
            out = ad + bd
        elif kind == "sub":
            out = ad - bd
        elif kind == "mul":
            out = ad * bd
        elif kind == "min":
            out = np.minimum(ad, bd)
        elif kind == "div":
            out = ad / bd
        else:
            raise ValueError(f"unknown elementwise kind: {kind!r}")
    except ValueError as exc:
        raise ShapeError(
            f"elementwise {kind}: shapes {ad.shape} and {bd.shape} not broadcastable"
        ) from exc

    ash, bsh = ad.shape, bd.shape
    if kind == "add":
        bw = lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh))
    elif kind == "sub":
        bw = lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh))
    elif kind == "mul":
        bw = lambda g: (_unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh))
    elif kind == "min":
        take_a = ad <= bd
        bw = lambda g: (
            _unbroadcast(g * take_a, ash),
            _unbroadcast(g * ~take_a, bsh),
        )
    else:  # div
        bw = lambda g: (
            _unbroadcast(g / bd, ash),
            _unbroadcast(-g * ad / (bd * bd), bsh),
        )
    return _record_or_const(tape, out, (a, b), bw)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def div(a, b):
    return elementwise("div", a, b)


def minimum(a, b):
    return elementwise("min", a, b)


def clamp(t, lo: float, hi: float) -> Tensor:
    """Limit values to [lo, hi].

    The backward rule passes the incoming gradient through unchanged
    (gradient 1 everywhere, including saturated coordinates).  Provenance
    semantics rely on this convention, so it is deliberate, not an
    approximation of the true subgradient.
    """
    if lo > hi:
        raise ValueError(f"clamp requires lo <= hi, got {lo} > {hi}")
    t = _as_tensor(t)
    out = np.clip(t.data, lo, hi)
    return _record_or_const(t.tape, out, (t,), lambda g: (g,))


def reduce(kind: str, t, axis: int) -> Tensor:
    """Axis reduction; kind is one of sum, prod, max. The axis is removed."""
    t = _as_tensor(t)
    td = t.data
    if not -td.ndim <= axis < td.ndim:
        raise ShapeError(f"reduce axis {axis} out of range for shape {td.shape}")
    axis = axis % td.ndim
    shape = td.shape

    if kind == "sum":
        out = td.sum(axis=axis)
        bw = lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
    elif kind == "prod":
        out = td.prod(axis=axis)
        # Leave-one-out products handle zeros exactly: with one zero on the
        # axis only that entry gets the product of the others; with two or
        # more zeros every entry gets zero.
        zeros = td == 0.0
        nzeros = zeros.sum(axis=axis, keepdims=True)
        prod_nonzero = np.where(zeros, 1.0, td).prod(axis=axis, keepdims=True)
        out_keep = np.expand_dims(out, axis)

        def bw(g):
            ge = np.expand_dims(g, axis)
            with np.errstate(divide="ignore", invalid="ignore"):
                base = np.where(zeros, 0.0, out_keep / np.where(zeros, 1.0, td))
            loo = np.where(zeros & (nzeros == 1), prod_nonzero, base)
            loo = np.where(nzeros >= 2, 0.0, loo)
            return (ge * loo,)

    elif kind == "max":
        out = td.max(axis=axis)
        # Ties: gradient goes to the first maximal entry along the axis.
        idx = td.argmax(axis=axis)
        onehot = np.zeros(shape, dtype=np.float64)
        np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)
        bw = lambda g: (np.expand_dims(g, axis) * onehot,)
    else:
        raise ValueError(f"unknown reduce kind: {kind!r}")
    return _record_or_const(t.tape, out, (t,), bw)


def reduce_sum(t, axis: int):
    return reduce("sum", t, axis)


def reduce_prod(t, axis: int):
    return reduce("prod", t, axis)


def reduce_max(t, axis: int):
    return reduce("max", t, axis)


def concat(parts, axis: int) -> Tensor:
    """Concatenate tensors along an axis; backward slices the gradient."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat requires at least one part")
    ndim = parts[0].ndim
    for p in parts[1:]:
        if p.ndim != ndim:
            raise ShapeError(
                f"concat rank mismatch: {parts[0].shape} vs {p.shape}"
            )
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(
            "concat extent mismatch: " + ", ".join(str(p.shape) for p in parts)
        ) from exc
    tape = _shared_tape(*parts)
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _record_or_const(tape, out, parts, bw)


def select_rows(t, indices, axis: int = 0) -> Tensor:
    """Gather slices along an axis; backward scatter-adds into place."""
    t = _as_tensor(t)
    idx = np.asarray(indices, dtype=np.intp)
    n = t.data.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(
            f"select index out of range for extent {n}: {idx.tolist()}"
        )
    out = np.take(t.data, idx, axis=axis)
    shape = t.data.shape

    def bw(g):
        buf = np.zeros(shape, dtype=np.float64)
        key = [slice(None)] * len(shape)
        key[axis] = idx
        np.add.at(buf, tuple(key), g)
        return (buf,)

    return _record_or_const(t.tape, out, (t,), bw)


def reshape(t, shape) -> Tensor:
    t = _as_tensor(t)
    old = t.data.shape
    try:
        out = t.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return _record_or_const(t.tape, out, (t,), lambda g: (g.reshape(old),))


def affine(x, w, bias) -> Tensor:
    """x @ w + bias for x of shape (b, n), w (n, m), bias (m,)."""
    x, w, bias = _as_tensor(x), _as_tensor(w), _as_tensor(bias)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine shape mismatch: x {x.shape}, w {w.shape}")
    if bias.shape != (w.shape[1],):
        raise ShapeError(f"affine bias shape {bias.shape} != ({w.shape[1]},)")
    out = x.data @ w.data + bias.data
    xd, wd = x.data, w.data
    bw = lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0))
    return _record_or_const(_shared_tape(x, w, bias), out, (x, w, bias), bw)


def softmax(t, axis: int = -1) -> Tensor:
    t = _as_tensor(t)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record_or_const(t.tape, out, (t,), bw)


def relu(t) -> Tensor:
    t = _as_tensor(t)
    mask = t.data > 0
    return _record_or_const(t.tape, t.data * mask, (t,), lambda g: (g * mask,))


def log(t) -> Tensor:
    """Natural log; the caller is responsible for flooring near-zero input."""
    t = _as_tensor(t)
    if np.any(t.data <= 0):
        raise DomainError("log requires strictly positive input")
    td = t.data
    return _record_or_const(t.tape, np.log(td), (t,), lambda g: (g / td,))
