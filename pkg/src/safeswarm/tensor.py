"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations execute eagerly on numpy arrays and, while a Tape is active,
append nodes to it. Backward walks the tape in reverse. Every backward
closure is itself written in terms of taped operations, so gradients can
be differentiated again (needed for KL-Hessian vector products).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericalError

_CHECK_FINITE = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf verification (slow; meant for tests)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """Immutable dense array of 64-bit floats."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Append-only record of operations, in execution (topological) order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def clear(self):
        self.nodes.clear()


_TAPE_STACK: list[Tape | None] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextmanager
def no_grad():
    """Suspend tape recording inside the block."""
    _TAPE_STACK.append(None)
    try:
        yield
    finally:
        _TAPE_STACK.pop()


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(out: Tensor, inputs, vjp) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise NumericalError("non-finite values in forward result")
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, tuple(inputs), vjp))
    return out


def _binary_shapes(a: Tensor, b: Tensor):
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise DimensionError(
        f"elementwise operands must be equal-shape or scalar, got {a.data.shape} and {b.data.shape}"
    )


def _reduce_to(g: Tensor, shape) -> Tensor:
    """Sum a gradient down to a (possibly scalar) operand shape."""
    if g.data.shape == shape:
        return g
    if shape == ():
        return sum_(g)
    raise DimensionError(f"cannot reduce gradient of shape {g.data.shape} to {shape}")


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = Tensor(a.data + b.data)

    def vjp(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = Tensor(a.data - b.data)

    def vjp(g):
        return _reduce_to(g, a.data.shape), _reduce_to(neg(g), b.data.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        return _reduce_to(mul(g, b), a.data.shape), _reduce_to(mul(g, a), b.data.shape)

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = _reduce_to(div(g, b), a.data.shape)
        gb = _reduce_to(neg(div(mul(g, a), mul(b, b))), b.data.shape)
        return ga, gb

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data)

    def vjp(g):
        return (neg(g),)

    return _record(out, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} x {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def vjp(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _record(out, (a, b), vjp)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")
    out = Tensor(np.ascontiguousarray(a.data.T))

    def vjp(g):
        return (transpose(g),)

    return _record(out, (a,), vjp)


def linear(x, w, b) -> Tensor:
    """Affine map x @ w + b with b broadcast over rows."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise DimensionError("linear expects x[n,k], w[k,m], b[m]")
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise DimensionError("linear operand shapes are inconsistent")
    out = Tensor(x.data @ w.data + b.data)

    def vjp(g):
        return matmul(g, transpose(w)), matmul(transpose(x), g), sum_(g, axis=0)

    return _record(out, (x, w, b), vjp)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = Tensor((a.data > 0.0).astype(np.float64))

    def vjp(g):
        return (mul(g, mask),)

    return _record(out, (a,), vjp)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def vjp(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    return _record(out, (a,), vjp)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(1.0 / (1.0 + np.exp(-a.data)))

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    return _record(out, (a,), vjp)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))

    def vjp(g):
        return (mul(g, out),)

    return _record(out, (a,), vjp)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive input")
    out = Tensor(np.log(a.data))

    def vjp(g):
        return (div(g, a),)

    return _record(out, (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is zero outside the open interval."""
    a = _as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    mask = Tensor(((a.data > lo) & (a.data < hi)).astype(np.float64))

    def vjp(g):
        return (mul(g, mask),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.data.shape
    out = Tensor(a.data.reshape(shape))

    def vjp(g):
        return (reshape(g, in_shape),)

    return _record(out, (a,), vjp)


def broadcast_to(a, shape) -> Tensor:
    """Broadcast along size-1 axes; ndim must already match."""
    a = _as_tensor(a)
    shape = tuple(shape)
    if a.data.ndim != len(shape):
        raise DimensionError("broadcast_to requires matching ndim")
    for have, want in zip(a.data.shape, shape):
        if have != want and have != 1:
            raise DimensionError(f"cannot broadcast {a.data.shape} to {shape}")
    axes = tuple(i for i, (have, want) in enumerate(zip(a.data.shape, shape)) if have == 1 and want != 1)
    out = Tensor(np.broadcast_to(a.data, shape).copy())

    def vjp(g):
        return (sum_(g, axis=axes, keepdims=True) if axes else g,)

    return _record(out, (a,), vjp)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.data.shape
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    if axis is None:
        axes = tuple(range(len(in_shape)))
    elif isinstance(axis, int):
        axes = (axis % len(in_shape),)
    else:
        axes = tuple(ax % len(in_shape) for ax in axis)
    kept_shape = tuple(1 if i in axes else d for i, d in enumerate(in_shape))

    def vjp(g):
        gk = g if keepdims or not in_shape else reshape(g, kept_shape)
        if in_shape == ():
            return (gk,)
        return (broadcast_to(gk, in_shape),)

    return _record(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, int):
        count = a.data.shape[axis]
    else:
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of empty sequence")
    ndim = tensors[0].data.ndim
    ax = axis % ndim if ndim else 0
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise DimensionError("concat operands must have equal ndim")
        for i in range(ndim):
            if i != ax and t.data.shape[i] != tensors[0].data.shape[i]:
                raise DimensionError("concat non-axis dimensions differ")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=ax))
    sizes = [t.data.shape[ax] for t in tensors]
    offsets = np.concatenate(([0], np.cumsum(sizes)))

    def vjp(g):
        return tuple(
            slice_axis(g, ax, int(offsets[i]), int(offsets[i + 1])) for i in range(len(tensors))
        )

    return _record(out, tuple(tensors), vjp)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    ndim = a.data.ndim
    ax = axis % ndim
    idx = tuple(slice(None) if i != ax else slice(start, stop) for i in range(ndim))
    full = a.data.shape[ax]
    out = Tensor(np.ascontiguousarray(a.data[idx]))

    def vjp(g):
        return (pad_axis(g, ax, start, full - stop),)

    return _record(out, (a,), vjp)


def pad_axis(a, axis: int, before: int, after: int) -> Tensor:
    a = _as_tensor(a)
    ndim = a.data.ndim
    ax = axis % ndim
    widths = [(0, 0)] * ndim
    widths[ax] = (before, after)
    out = Tensor(np.pad(a.data, widths))
    stop = before + a.data.shape[ax]

    def vjp(g):
        return (slice_axis(g, ax, before, stop),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# gather / scatter (row indexing along axis 0)


def gather_rows(a, index) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a 1-D index array")
    n_rows = a.data.shape[0]
    out = Tensor(a.data[idx])

    def vjp(g):
        return (scatter_add_rows(g, idx, n_rows),)

    return _record(out, (a,), vjp)


def _segment_sum_sorted(data: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    out = np.zeros((n_rows,) + data.shape[1:], dtype=np.float64)
    if idx.size == 0:
        return out
    starts = np.concatenate(([0], np.flatnonzero(np.diff(idx)) + 1))
    out[idx[starts]] = np.add.reduceat(data, starts, axis=0)
    return out


def scatter_add_rows(a, index, n_rows: int) -> Tensor:
    """Sum rows of `a` into an n_rows output at positions given by index."""
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise DimensionError("scatter_add_rows index must match the leading dimension")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise DimensionError("scatter_add_rows index out of range")
    if idx.size == 0 or np.all(idx[1:] >= idx[:-1]):
        data = _segment_sum_sorted(a.data, idx, n_rows)
    else:
        data = np.zeros((n_rows,) + a.data.shape[1:], dtype=np.float64)
        np.add.at(data, idx, a.data)
    out = Tensor(data)

    def vjp(g):
        return (gather_rows(g, idx),)

    return _record(out, (a,), vjp)


def segment_max(data: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    """Per-segment max over sorted segment ids (plain numpy, no gradient)."""
    out = np.full((n_rows,) + data.shape[1:], -np.inf)
    if idx.size == 0:
        return out
    if not np.all(idx[1:] >= idx[:-1]):
        np.maximum.at(out, idx, data)
        return out
    starts = np.concatenate(([0], np.flatnonzero(np.diff(idx)) + 1))
    out[idx[starts]] = np.maximum.reduceat(data, starts, axis=0)
    return out


def segment_softmax(scores: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Softmax of scores[n,k] within row groups sharing a segment id.

    The per-segment max is treated as a constant shift, which leaves both the
    value and the exact gradient of the softmax unchanged.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    shift = segment_max(scores.data, seg, n_segments)
    shifted = sub(scores, Tensor(shift[seg]))
    e = exp(shifted)
    denom = scatter_add_rows(e, seg, n_segments)
    return div(e, gather_rows(denom, seg))


# ---------------------------------------------------------------------------
# softmax and the generic elementwise dispatcher


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim == 0 or a.data.shape[axis % a.data.ndim] == 0:
        raise DimensionError("softmax over an empty axis")
    ax = axis % a.data.ndim
    shift = np.broadcast_to(np.max(a.data, axis=ax, keepdims=True), a.data.shape)
    shifted = sub(a, Tensor(shift.copy()))
    e = exp(shifted)
    denom = sum_(e, axis=ax, keepdims=True)
    return div(e, broadcast_to(denom, a.data.shape))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
}


def elementwise(op_tag: str, *inputs) -> Tensor:
    """Dispatch an elementwise operation by tag."""
    try:
        fn = _ELEMENTWISE[op_tag]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_tag!r}") from None
    return fn(*inputs)


# ---------------------------------------------------------------------------
# backward


def backward(output: Tensor, leaves, create_graph: bool = False):
    """Gradients of a scalar output with respect to the given leaf tensors.

    Leaves that do not influence the output receive zero gradients. With
    create_graph=True the returned gradients are recorded on the active tape
    and can be differentiated again.
    """
    if output.data.size != 1:
        raise ContractError("backward requires a scalar output")
    tape = _active_tape()
    if tape is None:
        raise ContractError("backward requires an active Tape")

    out_index = None
    for i in range(len(tape.nodes) - 1, -1, -1):
        if tape.nodes[i].out is output:
            out_index = i
            break
    nodes = tape.nodes[: out_index + 1] if out_index is not None else []

    grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}

    def run():
        for node in reversed(nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            partials = node.vjp(g)
            for inp, gi in zip(node.inputs, partials):
                if gi is None or not inp.requires_grad:
                    continue
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else add(prev, gi)

    if create_graph:
        run()
    else:
        with no_grad():
            run()

    result = []
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = Tensor(np.zeros_like(leaf.data))
        result.append(g)
    return result
