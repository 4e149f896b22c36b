"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array (0-4 axes; scalars are 0-d). Operations are
module-level functions; while a GradTape is active, each op that touches a
requires_grad tensor records a backward rule onto the tape. backward()
replays the tape in reverse, accumulating into .grad buffers.

Values are immutable after construction: no op ever writes into an input
array, and .grad is the only mutable attachment. Repeated backward() calls
accumulate gradients until zero_grad() resets them.
"""

import threading

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_grad_owned")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ShapeError(f"tensors are limited to 4 axes, got shape {self.data.shape}")
        self.requires_grad = requires_grad
        self.grad = None
        self._grad_owned = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None
        self._grad_owned = False

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class GradTape:
    """Ordered record of operations for one backward replay.

    Use as a context manager; tapes are confined to the thread that opened
    them. Each recorded node is visited exactly once by backward().
    """

    def __init__(self):
        self.nodes = []  # (output Tensor, backward callable)

    def record(self, out, backward_fn):
        self.nodes.append((out, backward_fn))

    def __enter__(self):
        _push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _pop_tape(self)
        return False


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _push_tape(tape):
    _tape_stack().append(tape)


def _pop_tape(tape):
    stack = _tape_stack()
    if not stack or stack[-1] is not tape:
        raise RuntimeError("GradTape exited out of order")
    stack.pop()


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _accum(t, g):
    # First contribution may alias the incoming buffer; in-place updates are
    # only allowed once this tensor owns a private accumulator.
    if t.grad is None:
        t.grad = g if g.shape == t.data.shape else np.broadcast_to(g, t.data.shape)
        t._grad_owned = False
    elif t._grad_owned:
        np.add(t.grad, g, out=t.grad)
    else:
        t.grad = t.grad + g
        t._grad_owned = True


def _make(data, *inputs):
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    return out


def _record(out, inputs, backward_fn):
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, backward_fn)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the given operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ------------------------------------------------------------------- ops ----


def _mm(x, y):
    """np.matmul with stacked-by-2D products flattened to one BLAS call."""
    if x.ndim > 2 and y.ndim == 2:
        lead = x.shape[:-1]
        return np.matmul(x.reshape(-1, x.shape[-1]), y).reshape(lead + (y.shape[-1],))
    return np.matmul(x, y)


def matmul(a: Tensor, b: Tensor, scale: float | None = None) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    An optional scalar factor is folded into the product (and its
    gradient), saving a separate scaling pass on the hot attention path.
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-axis operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    val = _mm(a.data, b.data)
    if scale is not None:
        val *= scale
    out = _make(val, a, b)

    def bwd(g):
        # the scale lands on the (smaller) operand gradients, not on g itself
        if a.requires_grad:
            ga = _mm(g, b.data.swapaxes(-1, -2))
            if scale is not None:
                ga *= scale
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                # d(loss)/d(weight) of a stacked product is one flat GEMM
                k = a.shape[-1]
                gb = np.matmul(a.data.reshape(-1, k).T, g.reshape(-1, g.shape[-1]))
            else:
                gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
            if scale is not None:
                gb = gb * scale if gb.base is not None else np.multiply(gb, scale, out=gb)
            _accum(b, gb)

    _record(out, (a, b), bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting (bias over leading axes)."""
    out = _make(a.data + b.data, a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    _record(out, (a, b), bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data - b.data, a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    _record(out, (a, b), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    out = _make(a.data * b.data, a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    _record(out, (a, b), bwd)
    return out


def scalar_mul(t: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _make(t.data * c, t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, g * c)

    _record(out, (t,), bwd)
    return out


def transpose(t: Tensor, axes=None) -> Tensor:
    """Permute axes (default: swap the last two)."""
    if axes is None:
        if t.data.ndim < 2:
            raise ShapeError("default transpose needs >=2 axes")
        axes = tuple(range(t.data.ndim - 2)) + (t.data.ndim - 1, t.data.ndim - 2)
    axes = tuple(axes)
    out = _make(t.data.transpose(axes), t)
    inv = np.argsort(axes)

    def bwd(g):
        if t.requires_grad:
            _accum(t, g.transpose(inv))

    _record(out, (t,), bwd)
    return out


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = _make(t.data.reshape(shape), t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, g.reshape(t.data.shape))

    _record(out, (t,), bwd)
    return out


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along a named axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), *tensors)
    extents = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        start = 0
        sl = [slice(None)] * g.ndim
        for t, ext in zip(tensors, extents):
            if t.requires_grad:
                sl[axis if axis >= 0 else g.ndim + axis] = slice(start, start + ext)
                _accum(t, g[tuple(sl)])
            start += ext

    _record(out, tuple(tensors), bwd)
    return out


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    sl = [slice(None)] * t.data.ndim
    ax = axis if axis >= 0 else t.data.ndim + axis
    sl[ax] = slice(start, start + length)
    out = _make(t.data[tuple(sl)], t)

    def bwd(g):
        if t.requires_grad:
            gin = np.zeros_like(t.data)
            gin[tuple(sl)] = g
            _accum(t, gin)

    _record(out, (t,), bwd)
    return out


def slice_rows(t: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of the second-to-last axis."""
    return narrow(t, -2, start, stop - start)


def expand_leading(t: Tensor, n: int) -> Tensor:
    """Tile a tensor along a new leading axis of extent n."""
    out = _make(np.broadcast_to(t.data, (n,) + t.data.shape).copy(), t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, g.sum(axis=0))

    _record(out, (t,), bwd)
    return out


def softmax_rows(t: Tensor) -> Tensor:
    """Stabilized softmax along the last axis; each row sums to 1."""
    y = kernels.softmax_last(t.data)
    out = _make(y, t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, kernels.softmax_last_bwd(y, g))

    _record(out, (t,), bwd)
    return out


def softmax_cols(t: Tensor) -> Tensor:
    """Softmax along the second-to-last axis; each column sums to 1.

    Implemented as transpose -> softmax_rows -> transpose so both softmax
    directions share one algorithm path.
    """
    return transpose(softmax_rows(transpose(t)))


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean/unit variance, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = t.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}")
    y, mu, rstd = kernels.layernorm(t.data, gain.data, bias.data, eps)
    out = _make(y, t, gain, bias)

    def bwd(g):
        gx, ggain, gbias = kernels.layernorm_bwd(t.data, mu, rstd, gain.data, g)
        if t.requires_grad:
            _accum(t, gx)
        if gain.requires_grad:
            _accum(gain, ggain)
        if bias.requires_grad:
            _accum(bias, gbias)

    _record(out, (t, gain, bias), bwd)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over leading axes."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape} does not match weight {w.shape}")
    return add(matmul(x, w), b)


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    out = _make(np.where(mask, t.data, 0.0), t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, g * mask)

    _record(out, (t,), bwd)
    return out


def clamp_min(t: Tensor, floor: float) -> Tensor:
    """max(t, floor); gradient passes only where t exceeds the floor."""
    mask = t.data > floor
    out = _make(np.where(mask, t.data, floor), t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, g * mask)

    _record(out, (t,), bwd)
    return out


def log(t: Tensor) -> Tensor:
    out = _make(np.log(t.data), t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, g / t.data)

    _record(out, (t,), bwd)
    return out


def sum_last(t: Tensor) -> Tensor:
    out = _make(t.data.sum(axis=-1), t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, np.broadcast_to(g[..., None], t.data.shape))

    _record(out, (t,), bwd)
    return out


def sum_all(t: Tensor) -> Tensor:
    out = _make(t.data.sum(), t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, np.broadcast_to(g, t.data.shape))

    _record(out, (t,), bwd)
    return out


def mean_all(t: Tensor) -> Tensor:
    n = t.data.size
    out = _make(t.data.mean(), t)

    def bwd(g):
        if t.requires_grad:
            _accum(t, np.broadcast_to(g / n, t.data.shape))

    _record(out, (t,), bwd)
    return out


# -------------------------------------------------------------- backward ----


def backward(loss: Tensor, tape: GradTape) -> None:
    """Propagate d(loss)/d(leaf) into .grad of every requires_grad leaf.

    loss must be a scalar produced under the tape. Leaf gradients
    accumulate across calls until zero_grad(); gradients of op outputs
    belong to one replay and are reset each call.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    for out, _ in tape.nodes:
        out.grad = None
        out._grad_owned = False
    _accum(loss, np.ones_like(loss.data))
    for out, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
