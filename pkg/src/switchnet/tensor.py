"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Only the operations needed by the task network and the switcher network
live here.  Every op computes its forward value eagerly; when a :class:`Tape`
is active and at least one input requires a gradient, the op is recorded
together with a closure that maps the output gradient to input gradients.

    >>> with Tape() as tape:
    ...     y = matmul(x, w)
    ...     loss = softmax_xent(y, labels)
    >>> backward(loss)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .exceptions import (
    DegenerateBatch,
    DetachedTensor,
    LabelOutOfRange,
    MissingGradient,
    ShapeMismatch,
)

DTYPE = np.float64

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array plus an optional gradient slot.

    ``node_id`` is the index of the producing op on ``tape``; leaves (model
    parameters, inputs) have ``node_id is None``.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __getitem__(self, index):
        return take(self, index)


@dataclass
class _Op:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable ops.  Usable as a context manager."""

    ops: list[_Op] = field(default_factory=list)

    def record(self, kind, inputs, output, backward_fn) -> None:
        output.node_id = len(self.ops)
        output.tape = self
        self.ops.append(_Op(kind, tuple(inputs), output, backward_fn))

    def __len__(self) -> int:
        return len(self.ops)

    def clear(self) -> None:
        """Drop the recorded ops.

        Outputs point back at their tape, so an uncleared graph is a
        reference cycle and its arrays wait for the cycle collector.
        """
        self.ops.clear()

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.record(kind, inputs, out, backward_fn)
    return out


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def grad_fn(g):
        return (g * mask,)

    return _emit("relu", out, (x,), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")

    def grad_fn(g):
        return g, g

    return _emit("add", a.data + b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equally shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")

    def grad_fn(g):
        return g * b.data, g * a.data

    return _emit("mul", a.data * b.data, (a, b), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def grad_fn(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", np.asarray(x.data.sum()), (x,), grad_fn)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeMismatch(str(err)) from None

    def grad_fn(g):
        return (g.reshape(x.shape),)

    return _emit("reshape", out, (x,), grad_fn)


def take(x: Tensor, index) -> Tensor:
    """Indexing (slices, ints or integer arrays); the gradient is scattered back.

    Repeated integer indices accumulate their gradients.
    """
    x = as_tensor(x)
    out = np.array(x.data[index])

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit("take", out, (x,), grad_fn)


def pad(x: Tensor, widths) -> Tensor:
    """Zero padding; ``widths`` follows :func:`numpy.pad`."""
    x = as_tensor(x)
    widths = [tuple(int(v) for v in w) for w in widths]
    if len(widths) != x.ndim or any(a < 0 or b < 0 for a, b in widths):
        raise ShapeMismatch(f"pad widths {widths} invalid for shape {x.shape}")
    out = np.pad(x.data, widths)
    crop = tuple(slice(a, a + n) for (a, _), n in zip(widths, x.shape))

    def grad_fn(g):
        return (g[crop],)

    return _emit("pad", out, (x,), grad_fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat of an empty list")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(p.shape, ref)) if i != ax
        ):
            raise ShapeMismatch(f"concat: {p.shape} incompatible with {ref} on axis {ax}")
    out = np.concatenate([p.data for p in parts], axis=ax)
    cuts = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _emit("concat", out, parts, grad_fn)


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Inverse of :func:`concat`."""
    x = as_tensor(x)
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeMismatch(f"split sizes {list(sizes)} do not sum to {x.shape[ax]}")
    parts, start = [], 0
    for n in sizes:
        index = [slice(None)] * x.ndim
        index[ax] = slice(start, start + n)
        parts.append(take(x, tuple(index)))
        start += n
    return parts


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} x {b.shape}")

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _emit("matmul", a.data @ b.data, (a, b), grad_fn)


def scale_rows(x: Tensor, g: Tensor) -> Tensor:
    """Multiply feature axis 1 of ``x`` by the vector ``g``.

    For (B, F) activations this scales each feature; for (B, C, H, W) maps it
    scales each channel, broadcast over the spatial dims.
    """
    x, g = as_tensor(x), as_tensor(g)
    if g.ndim != 1 or x.ndim < 2 or x.shape[1] != g.shape[0]:
        raise ShapeMismatch(f"scale_rows: factors {g.shape} for input {x.shape}")
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    gb = g.data.reshape(bshape)
    reduce_axes = tuple(i for i in range(x.ndim) if i != 1)

    def grad_fn(go):
        gx = go * gb if x.requires_grad else None
        gg = (x.data * go).sum(axis=reduce_axes) if g.requires_grad else None
        return gx, gg

    return _emit("scale_rows", x.data * gb, (x, g), grad_fn)


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------


def _conv_out(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


# The kernels below walk output rows so the innermost loop runs over
# contiguous memory when the stride is 1.  Accumulation order is fixed, so
# results are bitwise reproducible.


@njit(cache=True)
def _corr(xp, w, sh, sw):
    """Cross-correlation of a padded (B, C, Hp, Wp) input with (O, C, kh, kw)."""
    nb, nc, hp, wp = xp.shape
    no, _, kh, kw = w.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    out = np.zeros((nb, no, ho, wo))
    for b in range(nb):
        for o in range(no):
            for y in range(ho):
                orow = out[b, o, y]
                for c in range(nc):
                    for i in range(kh):
                        xrow = xp[b, c, y * sh + i]
                        wrow = w[o, c, i]
                        if wo == 1:
                            acc = 0.0
                            for j in range(kw):
                                acc += wrow[j] * xrow[j]
                            orow[0] += acc
                            continue
                        for j in range(kw):
                            wv = wrow[j]
                            if sw == 1:
                                seg = xrow[j : j + wo]
                                for x in range(wo):
                                    orow[x] += wv * seg[x]
                            else:
                                for x in range(wo):
                                    orow[x] += wv * xrow[x * sw + j]
    return out


@njit(cache=True, fastmath={"reassoc"})
def _corr_weight_grad(xp, g, kh, kw, sh, sw):
    nb, nc = xp.shape[0], xp.shape[1]
    no, ho, wo = g.shape[1], g.shape[2], g.shape[3]
    gw = np.zeros((no, nc, kh, kw))
    for b in range(nb):
        for o in range(no):
            for y in range(ho):
                grow = g[b, o, y]
                for c in range(nc):
                    for i in range(kh):
                        xrow = xp[b, c, y * sh + i]
                        wrow = gw[o, c, i]
                        if wo == 1:
                            gv = grow[0]
                            for j in range(kw):
                                wrow[j] += gv * xrow[j]
                            continue
                        for j in range(kw):
                            acc = 0.0
                            if sw == 1:
                                seg = xrow[j : j + wo]
                                for x in range(wo):
                                    acc += grow[x] * seg[x]
                            else:
                                for x in range(wo):
                                    acc += grow[x] * xrow[x * sw + j]
                            wrow[j] += acc
    return gw


@njit(cache=True)
def _scatter(g, w, gxp, sh, sw):
    nb, no, ho, wo = g.shape
    nc, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for b in range(nb):
        for o in range(no):
            for y in range(ho):
                grow = g[b, o, y]
                for c in range(nc):
                    for i in range(kh):
                        xrow = gxp[b, c, y * sh + i]
                        wrow = w[o, c, i]
                        if wo == 1:
                            gv = grow[0]
                            for j in range(kw):
                                xrow[j] += gv * wrow[j]
                            continue
                        for j in range(kw):
                            wv = wrow[j]
                            if sw == 1:
                                seg = xrow[j : j + wo]
                                for x in range(wo):
                                    seg[x] += wv * grow[x]
                            else:
                                for x in range(wo):
                                    xrow[x * sw + j] += wv * grow[x]
    return gxp


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=DTYPE)


def _corr_input_grad(g, w, padded_shape, sh, sw):
    """Scatter ``g`` back through the correlation onto a padded input."""
    return _scatter(_c(g), _c(w), np.zeros(padded_shape, dtype=DTYPE), sh, sw)


def conv2d(x: Tensor, w: Tensor, stride=1, pad=0) -> Tensor:
    """Zero-padded cross-correlation of (B, C_in, H, W) with (C_out, C_in, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape}, kernel {w.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    kh, kw = w.shape[2], w.shape[3]
    if kh > x.shape[2] + 2 * ph or kw > x.shape[3] + 2 * pw:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} exceeds padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = _corr(xp, _c(w.data), sh, sw)

    def grad_fn(g):
        gx = gw = None
        if x.requires_grad:
            gxp = _corr_input_grad(g, w.data, xp.shape, sh, sw)
            gx = gxp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]]
        if w.requires_grad:
            gw = _corr_weight_grad(xp, _c(g), kh, kw, sh, sw)
        return gx, gw

    return _emit("conv2d", out, (x, w), grad_fn)


def transposed_conv2d(x: Tensor, w: Tensor, stride=1, pad=0, output_padding=0) -> Tensor:
    """Adjoint of :func:`conv2d` for the same kernel, stride and padding.

    ``w`` keeps the conv2d layout (C_out, C_in, kh, kw); the input carries
    C_out channels and the result C_in channels.  When the strided conv
    dropped trailing rows/columns, ``output_padding`` (< stride) restores
    them so the result matches the conv's input shape.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"transposed_conv2d: input {x.shape}, kernel {w.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    oh, ow = _pair(output_padding)
    if sh < 1 or sw < 1:
        raise ShapeMismatch("transposed_conv2d: stride must be >= 1")
    if not (0 <= oh < sh and 0 <= ow < sw):
        raise ShapeMismatch("transposed_conv2d: output_padding must be in [0, stride)")
    kh, kw = w.shape[2], w.shape[3]
    hp = (x.shape[2] - 1) * sh + kh + oh
    wp = (x.shape[3] - 1) * sw + kw + ow
    if hp - 2 * ph < 1 or wp - 2 * pw < 1:
        raise ShapeMismatch("transposed_conv2d: padding removes the whole output")
    full = _corr_input_grad(x.data, w.data, (x.shape[0], w.shape[1], hp, wp), sh, sw)
    out = np.ascontiguousarray(full[:, :, ph : hp - ph, pw : wp - pw])

    def grad_fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gx = _corr(gp, _c(w.data), sh, sw) if x.requires_grad else None
        gw = _corr_weight_grad(gp, _c(x.data), kh, kw, sh, sw) if w.requires_grad else None
        return gx, gw

    return _emit("transposed_conv2d", out, (x, w), grad_fn)


@njit(cache=True)
def _pool_max(x, k, stride, ho, wo):
    nb, nc = x.shape[0], x.shape[1]
    out = np.empty((nb, nc, ho, wo))
    arg = np.empty((nb, nc, ho, wo), dtype=np.int64)
    for b in range(nb):
        for c in range(nc):
            for y in range(ho):
                for z in range(wo):
                    best = x[b, c, y * stride, z * stride]
                    q = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, c, y * stride + i, z * stride + j]
                            if v > best:  # strict: ties keep the lowest flat index
                                best = v
                                q = i * k + j
                    out[b, c, y, z] = best
                    arg[b, c, y, z] = q
    return out, arg


@njit(cache=True)
def _pool_scatter(g, arg, k, stride, gx):
    nb, nc, ho, wo = g.shape
    for b in range(nb):
        for c in range(nc):
            for y in range(ho):
                for z in range(wo):
                    q = arg[b, c, y, z]
                    gx[b, c, y * stride + q // k, z * stride + q % k] += g[b, c, y, z]
    return gx


def maxpool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Max over ``window``x``window`` patches; ties go to the lowest flat index."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    if x.ndim != 4 or window < 1 or stride < 1:
        raise ShapeMismatch(f"maxpool2d: input {x.shape}, window {window}, stride {stride}")
    if window > x.shape[2] or window > x.shape[3]:
        raise ShapeMismatch(f"maxpool2d: window {window} exceeds input {x.shape}")
    ho = _conv_out(x.shape[2], window, stride)
    wo = _conv_out(x.shape[3], window, stride)
    out, arg = _pool_max(_c(x.data), window, stride, ho, wo)

    def grad_fn(g):
        return (_pool_scatter(_c(g), arg, window, stride, np.zeros_like(x.data)),)

    return _emit("maxpool2d", out, (x,), grad_fn)


@dataclass
class RunningStats:
    """Per-channel running mean/variance used by batchnorm in eval mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, dtype=DTYPE), np.ones(channels, dtype=DTYPE), momentum)

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy(), self.momentum)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
    mode: str = "train",
    state: RunningStats | None = None,
) -> Tensor:
    """Per-channel batch normalization of a (B, C, H, W) tensor.

    In ``train`` mode batch statistics are used and ``state`` (if given) is
    updated in place with an exponential average (unbiased variance).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatch(f"batchnorm2d: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    bshape = (1, -1, 1, 1)
    axes = (0, 2, 3)
    n = x.shape[0] * x.shape[2] * x.shape[3]

    if mode == "train":
        if n < 2:
            raise DegenerateBatch(f"batchnorm2d needs >= 2 values per channel, got {n}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if state is not None:
            m = state.momentum
            state.mean[...] = (1 - m) * state.mean + m * mean
            state.var[...] = (1 - m) * state.var + m * var * n / (n - 1)
    elif mode == "eval":
        if state is None:
            raise ValueError("eval mode needs running statistics")
        mean, var = state.mean, state.var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def grad_fn(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            if mode == "train":
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (n * dxhat - s1 - xhat * s2) * (inv_std.reshape(bshape) / n)
            else:
                gx = dxhat * inv_std.reshape(bshape)
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return _emit("batchnorm2d", out, (x, gamma, beta), grad_fn)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"softmax_xent: logits {logits.shape}, labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    b = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = np.mean(lse - z[rows, labels])

    def grad_fn(g):
        p = softmax(logits.data)
        p[rows, labels] -= 1.0
        return (p * (g / b),)

    return _emit("softmax_xent", np.asarray(loss), (logits,), grad_fn)


# ---------------------------------------------------------------------------
# driving the tape
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate gradients live only for the duration of the call.  Leaf
    gradients accumulate; callers zero them between steps.
    """
    tape = tape or loss.tape
    if tape is None or loss.node_id is None or loss.tape is not tape:
        raise DetachedTensor("loss was not produced on a tape")
    if loss.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    upstream: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for op in reversed(tape.ops[: loss.node_id + 1]):
        g = upstream.pop(op.output.node_id, None)
        if g is None:
            continue
        for inp, gi in zip(op.inputs, op.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.tape is tape and inp.node_id is not None:
                prev = upstream.get(inp.node_id)
                upstream[inp.node_id] = gi if prev is None else prev + gi
            elif inp.grad is None:
                inp.grad = np.array(gi, dtype=DTYPE)
            else:
                inp.grad += gi


def sgd_step(params: Sequence[Tensor], lr: float) -> None:
    """Plain SGD update followed by zeroing the gradients."""
    for p in params:
        if p.grad is None:
            raise MissingGradient(f"parameter {p.name or p.shape} has no gradient")
    for p in params:
        p.data -= lr * p.grad
        p.grad[...] = 0.0


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()
