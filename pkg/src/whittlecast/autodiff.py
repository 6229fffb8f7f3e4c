"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` records every operation whose inputs include at least one tracked
tensor. ``Tape.backward(loss)`` walks the record list once in reverse and
accumulates adjoints per node id. Everything is 64-bit: the Whittle
log-densities and the finite-difference checks this package relies on are too
fragile in float32.

Tensors without a tape handle are plain immutable values; operations on them
compute eagerly and record nothing, so the same model code serves both the
training path (tracked) and the inference path (untracked).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericDomainError, ShapeError

Array = np.ndarray

# (output node id, tracked input node ids, adjoint function). The adjoint
# function maps the output gradient to one gradient array per tracked input.
_Record = tuple[int, tuple[int, ...], Callable[[Array], tuple[Array, ...]]]


class Tape:
    """Append-only operation record supporting a single reverse sweep.

    A tape is single-threaded; independent tapes may live on separate
    threads. After ``backward`` the record list is cleared but the gradient
    map survives, so parameter gradients stay addressable via ``grad``.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._next_id: int = 0
        self.gradients: dict[int, Array] = {}

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def variable(self, value) -> "Tensor":
        """Register a leaf tensor whose gradient should be tracked."""
        t = Tensor(value, tape=self)
        t.node_id = self._new_id()
        return t

    def _record(self, out: "Tensor", inputs: Sequence["Tensor"],
                backward_fn: Callable[[Array], tuple[Array, ...]]) -> None:
        tracked = tuple(t.node_id for t in inputs if t.node_id is not None)
        if not tracked:
            return
        out.node_id = self._new_id()
        self._records.append((out.node_id, tracked, backward_fn))

    def backward(self, loss: "Tensor") -> dict[int, Array]:
        """Accumulate gradients of a scalar loss w.r.t. every tracked leaf.

        The loss must be finite: NaN/Inf anywhere upstream surfaces here
        rather than poisoning the update silently.
        """
        if loss.tape is not self:
            raise ContractError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        if not np.isfinite(loss.data).all():
            raise NumericDomainError("loss is not finite; NaN/Inf propagated through the graph")
        grads: dict[int, Array] = {}
        if loss.node_id is not None:
            grads[loss.node_id] = np.ones_like(loss.data)
        for out_id, input_ids, backward_fn in reversed(self._records):
            g_out = grads.get(out_id)
            if g_out is None:
                continue
            for node_id, g in zip(input_ids, backward_fn(g_out)):
                acc = grads.get(node_id)
                grads[node_id] = g if acc is None else acc + g
        self._records.clear()
        self.gradients = grads
        return grads

    def grad(self, t: "Tensor") -> Array | None:
        """Gradient of the last backward pass for ``t``, or None if unreached."""
        if t.node_id is None:
            return None
        return self.gradients.get(t.node_id)


class Tensor:
    """A dense float64 array, optionally tracked on a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: Tape | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id: int | None = None

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
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic operators
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # elementwise methods
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def sqrt(self):
        return sqrt(self)

    def square(self):
        return square(self)

    # reductions
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def min(self, axis=None, keepdims=False):
        return reduce_min(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _join_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands live on different tapes")
    return tape


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the source shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, da, db) -> Tensor:
    """fwd(a, b) with adjoints da/db(g, a, b, out) and broadcast handling."""
    a, b = as_tensor(a), as_tensor(b)
    tape = _join_tape(a, b)
    try:
        out_data = fwd(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}") from e
    out = Tensor(out_data, tape)
    if tape is not None:
        ad, bd, od = a.data, b.data, out_data
        ash, bsh = a.shape, b.shape
        tracked = [t for t in (a, b) if t.node_id is not None]

        def backward_fn(g: Array) -> tuple[Array, ...]:
            grads = []
            if a.node_id is not None:
                grads.append(_unbroadcast(da(g, ad, bd, od), ash))
            if b.node_id is not None:
                grads.append(_unbroadcast(db(g, ad, bd, od), bsh))
            return tuple(grads)

        tape._record(out, tracked, backward_fn)
    return out


def _unary(x, fwd, dx) -> Tensor:
    x = as_tensor(x)
    out_data = fwd(x.data)
    out = Tensor(out_data, x.tape)
    if x.tape is not None and x.node_id is not None:
        xd, od = x.data, out_data
        x.tape._record(out, (x,), lambda g: (dx(g, xd, od),))
    return out


# elementwise binary ops

def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


def div(a, b) -> Tensor:
    return _binary(a, b, np.divide,
                   lambda g, a, b, o: g / b,
                   lambda g, a, b, o: -g * o / b)


# elementwise unary ops

def neg(x) -> Tensor:
    return _unary(x, np.negative, lambda g, x, o: -g)


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda g, x, o: g * o)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise NumericDomainError("log requires strictly positive inputs")
    return _unary(x, np.log, lambda g, x, o: g / x)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0.0):
        raise NumericDomainError("sqrt requires non-negative inputs")
    return _unary(x, np.sqrt, lambda g, x, o: g * 0.5 / o)


def square(x) -> Tensor:
    return _unary(x, np.square, lambda g, x, o: g * 2.0 * x)


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def sigmoid(x) -> Tensor:
    def fwd(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    return _unary(x, fwd, lambda g, x, o: g * o * (1.0 - o))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), computed without overflow; derivative sigmoid(x)."""

    def dx(g, x, o):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ev = np.exp(x[~pos])
        s[~pos] = ev / (1.0 + ev)
        return g * s

    return _unary(x, lambda v: np.logaddexp(0.0, v), dx)


# matrix product

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    tape = _join_tape(a, b)
    out = Tensor(a.data @ b.data, tape)
    if tape is not None:
        ad, bd = a.data, b.data
        tracked = [t for t in (a, b) if t.node_id is not None]

        def backward_fn(g: Array) -> tuple[Array, ...]:
            grads = []
            if a.node_id is not None:
                grads.append(g @ bd.T)
            if b.node_id is not None:
                grads.append(ad.T @ g)
            return tuple(grads)

        tape._record(out, tracked, backward_fn)
    return out


# reductions

def _axis_tuple(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    if any(a < -ndim or a >= ndim for a in axis):
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return tuple(a % ndim for a in axis)


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    out = Tensor(x.data.sum(axis=axes, keepdims=keepdims), x.tape)
    if x.tape is not None and x.node_id is not None:
        shape = x.shape

        def backward_fn(g: Array) -> tuple[Array, ...]:
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, shape).copy(),)

        x.tape._record(out, (x,), backward_fn)
    return out


def reduce_mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if x.ndim else 1
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims), x.tape)
    if x.tape is not None and x.node_id is not None:
        shape = x.shape

        def backward_fn(g: Array) -> tuple[Array, ...]:
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g / count, shape).copy(),)

        x.tape._record(out, (x,), backward_fn)
    return out


def _reduce_extreme(x, axis, keepdims, np_fn, np_arg) -> Tensor:
    """Shared max/min reduction. Gradient routes to the first extreme
    position along the reduced axis (lowest-index tie break)."""
    x = as_tensor(x)
    if axis is None:
        flat = reshape(x, (x.size,))
        out = _reduce_extreme(flat, 0, False, np_fn, np_arg)
        return out if not keepdims else reshape(out, (1,) * x.ndim)
    if isinstance(axis, tuple):
        raise ShapeError("max/min reduce a single axis at a time")
    ax = axis % x.ndim
    out = Tensor(np_fn(x.data, axis=ax, keepdims=keepdims), x.tape)
    if x.tape is not None and x.node_id is not None:
        idx = np_arg(x.data, axis=ax)
        shape = x.shape

        def backward_fn(g: Array) -> tuple[Array, ...]:
            if not keepdims:
                g = np.expand_dims(g, ax)
            gx = np.zeros(shape)
            np.put_along_axis(gx, np.expand_dims(idx, ax), g, axis=ax)
            return (gx,)

        x.tape._record(out, (x,), backward_fn)
    return out


def reduce_max(x, axis=None, keepdims=False) -> Tensor:
    return _reduce_extreme(x, axis, keepdims, np.max, np.argmax)


def reduce_min(x, axis=None, keepdims=False) -> Tensor:
    return _reduce_extreme(x, axis, keepdims, np.min, np.argmin)


# structural ops

def reshape(x, *shape) -> Tensor:
    x = as_tensor(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = Tensor(x.data.reshape(shape), x.tape)
    if x.tape is not None and x.node_id is not None:
        orig = x.shape
        x.tape._record(out, (x,), lambda g: (g.reshape(orig),))
    return out


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    x = as_tensor(x)
    ax = axis % x.ndim
    if start < 0 or start + length > x.shape[ax]:
        raise ShapeError(f"narrow [{start}:{start + length}] exceeds axis {ax} of {x.shape}")
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(start, start + length)
    out = Tensor(x.data[tuple(sl)].copy(), x.tape)
    if x.tape is not None and x.node_id is not None:
        shape = x.shape

        def backward_fn(g: Array) -> tuple[Array, ...]:
            gx = np.zeros(shape)
            gx[tuple(sl)] = g
            return (gx,)

        x.tape._record(out, (x,), backward_fn)
    return out


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    tape = _join_tape(*parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tape)
    if tape is not None:
        tracked = [p for p in parts if p.node_id is not None]
        if tracked:
            ax = axis % parts[0].ndim
            offsets = np.cumsum([0] + [p.shape[ax] for p in parts])
            spans = [(p, offsets[i], p.shape[ax]) for i, p in enumerate(parts)
                     if p.node_id is not None]

            def backward_fn(g: Array) -> tuple[Array, ...]:
                grads = []
                for p, start, length in spans:
                    sl = [slice(None)] * g.ndim
                    sl[ax] = slice(start, start + length)
                    grads.append(g[tuple(sl)])
                return tuple(grads)

            tape._record(out, tracked, backward_fn)
    return out


def gather(x, indices, axis: int) -> Tensor:
    """Select positions along an axis; gradient scatter-adds back."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    out = Tensor(np.take(x.data, idx, axis=ax), x.tape)
    if x.tape is not None and x.node_id is not None:
        shape = x.shape

        def backward_fn(g: Array) -> tuple[Array, ...]:
            gx = np.zeros(shape)
            gm = np.moveaxis(gx, ax, 0)
            np.add.at(gm, idx, np.moveaxis(g, ax, 0))
            return (gx,)

        x.tape._record(out, (x,), backward_fn)
    return out


def overlap_add(frames, hop: int, length: int) -> Tensor:
    """Sum frames[..., m, :] into an output at offsets m*hop.

    Accepts [M, W] -> [length] or [B, M, W] -> [B, length]; positions beyond
    ``length`` are discarded. Linear, so the adjoint is segment gathering.
    """
    frames = as_tensor(frames)
    if frames.ndim not in (2, 3):
        raise ShapeError(f"overlap_add expects rank 2 or 3, got {frames.shape}")
    m_count, width = frames.shape[-2], frames.shape[-1]

    def fwd(fd: Array) -> Array:
        out = np.zeros(fd.shape[:-2] + (length,))
        for m in range(m_count):
            start = m * hop
            if start >= length:
                break
            stop = min(start + width, length)
            out[..., start:stop] += fd[..., m, : stop - start]
        return out

    out = Tensor(fwd(frames.data), frames.tape)
    if frames.tape is not None and frames.node_id is not None:
        fshape = frames.shape

        def backward_fn(g: Array) -> tuple[Array, ...]:
            gf = np.zeros(fshape)
            for m in range(m_count):
                start = m * hop
                if start >= length:
                    break
                stop = min(start + width, length)
                gf[..., m, : stop - start] = g[..., start:stop]
            return (gf,)

        frames.tape._record(out, (frames,), backward_fn)
    return out


# composites

def logsumexp(x, axis: int, keepdims: bool = False) -> Tensor:
    """Numerically stable log(sum(exp(x))) along one axis."""
    m = reduce_max(x, axis=axis, keepdims=True)
    s = reduce_sum(exp(sub(x, m)), axis=axis, keepdims=True)
    out = add(log(s), m)
    return out if keepdims else _squeeze_axis(out, axis)


def log_softmax(x, axis: int) -> Tensor:
    return sub(x, logsumexp(x, axis=axis, keepdims=True))


def _squeeze_axis(x: Tensor, axis: int) -> Tensor:
    shape = list(x.shape)
    del shape[axis % len(shape)]
    return reshape(x, tuple(shape))


def backward(loss: Tensor) -> dict[int, Array]:
    """Run the reverse sweep of the tape that produced ``loss``."""
    if loss.tape is None:
        raise ContractError("loss is a constant; nothing to differentiate")
    return loss.tape.backward(loss)
