"""Dense-tensor arithmetic with tape-based reverse-mode autodiff.

Float32 by default. A Tape records every differentiable op in execution
order (which is already topological); backward walks the list once in
reverse. No tape active means forward-only: that is how detached passes
(sampling, metrics) are run.
"""

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class Tensor:
    """A dense array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if g.shape != self.data.shape:
            raise DimensionError(f"grad shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            # safe to alias: gradients are never mutated in place
            self.grad = g
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _TapeOp:
    __slots__ = ("out", "backward")

    def __init__(self, out, backward):
        self.out = out
        self.backward = backward


_TAPE_STACK = []


class Tape:
    """Execution-ordered record of ops; confined to one training thread."""

    def __init__(self):
        self.ops = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss):
        """Seed d(loss)/d(loss)=1 and propagate through the tape in reverse.

        Each recorded op is visited exactly once; ops that did not
        contribute to `loss` carry no gradient and are skipped.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        loss.accumulate_grad(np.ones_like(loss.data))
        for op in reversed(self.ops):
            if op.out.grad is not None:
                op.backward(op.out.grad)


class _NoTape:
    """Suspends recording inside an enclosing Tape (detached forward passes)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return None

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def no_tape():
    return _NoTape()


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out, backward):
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.ops.append(_TapeOp(out, backward))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def constant(value, dtype=np.float32):
    return Tensor(np.asarray(value, dtype=dtype))


def add(a, b):
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    _record(out, backward)
    return out


def mul(a, b):
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    _record(out, backward)
    return out


def scale(a, s):
    s = a.data.dtype.type(s)
    out = Tensor(a.data * s, a.requires_grad)

    def backward(g):
        a.accumulate_grad(g * s)

    _record(out, backward)
    return out


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    _record(out, backward)
    return out


def transpose(a, axes):
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes), a.requires_grad)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a.accumulate_grad(g.transpose(inverse))

    _record(out, backward)
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def backward(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    _record(out, backward)
    return out


def embedding(table, ids):
    """Gather rows of `table` by an integer index array of any shape."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids], table.requires_grad)

    def backward(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids, g)
        table.accumulate_grad(acc)

    _record(out, backward)
    return out


def gather_rows(x, seq_idx, pos_idx):
    """Select rows (seq_idx[k], pos_idx[k], :) from a (B, n, h) tensor."""
    seq_idx = np.asarray(seq_idx, dtype=np.int64)
    pos_idx = np.asarray(pos_idx, dtype=np.int64)
    out = Tensor(x.data[seq_idx, pos_idx], x.requires_grad)

    def backward(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, (seq_idx, pos_idx), g)
        x.accumulate_grad(acc)

    _record(out, backward)
    return out


def softmax(x):
    """Row softmax over the last axis, shift-stabilized."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, x.requires_grad)

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        x.accumulate_grad((g - dot) * s)

    _record(out, backward)
    return out


def gelu(x):
    """Exact erf-based GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf, x.requires_grad)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x.accumulate_grad(g * (cdf + x.data * pdf))

    _record(out, backward)
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then gain*x+bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data, x.requires_grad or gain.requires_grad or bias.requires_grad)
    h = x.data.shape[-1]

    def backward(g):
        if gain.requires_grad:
            gain.accumulate_grad(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias.accumulate_grad(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gx = g * gain.data
            term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(term * inv)

    _record(out, backward)
    return out


def dropout(x, rate, rng):
    """Inverted dropout with a mask drawn from `rng`; identity when rate=0 or rng=None."""
    if rng is None or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    out = Tensor(x.data * keep, x.requires_grad)

    def backward(g):
        x.accumulate_grad(g * keep)

    _record(out, backward)
    return out


def tensor_sum(x):
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype), x.requires_grad)

    def backward(g):
        x.accumulate_grad(np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    _record(out, backward)
    return out


def softmax_cross_entropy(logits, targets):
    """Mean over rows of -log softmax(logits)[target].

    Empty target list yields an exact-zero constant with no gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n = targets.shape[0]
    if n == 0:
        return constant(0.0, dtype=logits.data.dtype)
    vocab = logits.data.shape[-1]
    if targets.min() < 0 or targets.max() >= vocab:
        raise IndexError(f"target id outside [0, {vocab})")
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=-1))
    rows = np.arange(n)
    losses = lse - z[rows, targets]
    out = Tensor(np.asarray(losses.mean(), dtype=z.dtype), logits.requires_grad)

    def backward(g):
        soft = np.exp(z - m)
        soft /= soft.sum(axis=-1, keepdims=True)
        soft[rows, targets] -= 1.0
        logits.accumulate_grad(g * soft / z.dtype.type(n))

    _record(out, backward)
    return out


def sigmoid_bce(logits, labels, positions=None):
    """Mean binary cross-entropy with logits over `positions`.

    Uses the stable form max(z,0) - y*z + log1p(exp(-|z|)); an empty
    position set is defined as exact-zero loss with zero gradient.
    """
    labels = np.asarray(labels, dtype=logits.data.dtype)
    if positions is None:
        positions = np.arange(logits.data.shape[0])
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        return constant(0.0, dtype=logits.data.dtype)
    if positions.min() < 0 or positions.max() >= logits.data.shape[0]:
        raise IndexError(f"position outside [0, {logits.data.shape[0]})")
    z = logits.data[positions]
    y = labels[positions]
    losses = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.asarray(losses.mean(), dtype=z.dtype), logits.requires_grad)
    n = positions.shape[0]

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        acc = np.zeros_like(logits.data)
        np.add.at(acc, positions, g * (sig - y) / z.dtype.type(n))
        logits.accumulate_grad(acc)

    _record(out, backward)
    return out


def add_n(tensors):
    """Sum a non-empty list of same-shape tensors pairwise left to right."""
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total
