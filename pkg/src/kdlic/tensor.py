"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every differentiable op builds a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
Tensors carry a global sequence number, so sorting the reachable graph by
that number reproduces execution order; :func:`backward` replays it in
reverse.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

DTYPE = np.float64

_sequence = itertools.count()
_grad_enabled = True


class ContractError(ValueError):
    """Precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for teacher passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_sequence)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    return _make(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def log2(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log2(a.data), (a,), lambda g: (g / (a.data * np.log(2.0)),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (g * _sigmoid(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def normal_cdf(a) -> Tensor:
    """Standard normal CDF with its density as derivative."""
    a = as_tensor(a)
    pdf = np.exp(-0.5 * a.data**2) / np.sqrt(2.0 * np.pi)
    return _make(ndtr(a.data), (a,), lambda g: (g * pdf,))


def lower_bound(a, bound: float) -> Tensor:
    """max(a, bound), letting gradients through below the bound when they push upward.

    A plain max would leave a value stuck at the floor forever; the
    gradient still flows whenever descent would move it back above.
    """
    a = as_tensor(a)
    bound = float(bound)
    out = np.maximum(a.data, bound)

    def bw(g):
        return (g * ((a.data >= bound) | (g < 0)),)

    return _make(out, (a,), bw)


def clip_min(a, bound: float) -> Tensor:
    """Plain max(a, bound) with zero gradient on the clamped side."""
    a = as_tensor(a)
    mask = a.data >= bound
    return _make(np.where(mask, a.data, bound), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- shape / reduction


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis) * (1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        if _needs_add_at(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(a.data[index], (a,), bw)


def _needs_add_at(index) -> bool:
    # basic slices never alias; fancy indices might repeat
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in ts], axis=axis),
        ts,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def bmm(a, b) -> Tensor:
    """Batched matmul over the leading axis: (C, m, k) @ (C, k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, b.data.transpose(0, 2, 1)) if a.requires_grad else None
        gb = np.matmul(a.data.transpose(0, 2, 1), g) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


def channel_mix(weight, x) -> Tensor:
    """out[b, i, h, w] = sum_j weight[i, j] * x[b, j, h, w]."""
    weight, x = as_tensor(weight), as_tensor(x)
    out = np.einsum("ij,bjhw->bihw", weight.data, x.data, optimize=True)

    def bw(g):
        gw = np.einsum("bihw,bjhw->ij", g, x.data, optimize=True) if weight.requires_grad else None
        gx = np.einsum("ij,bihw->bjhw", weight.data, g, optimize=True) if x.requires_grad else None
        return gw, gx

    return _make(out, (weight, x), bw)


# ---------------------------------------------------------------- convolution kernels


def _windows(xpad: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (B, C, Ho, Wo, k, k) strided view, no copy
    win = np.lib.stride_tricks.sliding_window_view(xpad, (k, k), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _corr(xpad: np.ndarray, w: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    """Cross-correlation of an already padded input; w is (Cout, Cin, k, k)."""
    k = w.shape[-1]
    cols = _windows(xpad, k, stride, ho, wo)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, Cout)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _corr_weight_grad(xpad: np.ndarray, g: np.ndarray, k: int, stride: int) -> np.ndarray:
    ho, wo = g.shape[2:]
    cols = _windows(xpad, k, stride, ho, wo)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # (Cout, Cin, k, k)


def _scatter(g: np.ndarray, w: np.ndarray, stride: int, full_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of _corr: spread each output gradient back over its window."""
    k = w.shape[-1]
    b, _, ho, wo = g.shape
    # (Cin, k, k, B, Ho, Wo): every tap slice is one contiguous block
    taps = np.tensordot(w, g, axes=([0], [1]))
    full = np.zeros((w.shape[1], b) + full_hw, dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            full[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += taps[:, i, j]
    return full.transpose(1, 0, 2, 3)


def _check_conv(x: Tensor, w: Tensor, b: Tensor | None, in_axis: int, out_axis: int, what: str):
    if x.ndim != 4:
        raise DimensionError(f"{what}: input must be 4-D (B, C, H, W), got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"{what}: weight must be square 4-D, got shape {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise DimensionError(
            f"{what}: channel axis mismatch, input has {x.shape[1]} channels, weight axis {in_axis} has {w.shape[in_axis]}"
        )
    if b is not None and b.shape != (w.shape[out_axis],):
        raise DimensionError(f"{what}: bias shape {b.shape} does not match {w.shape[out_axis]} output channels")


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    _check_conv(x, weight, bias, 1, 0, "conv2d")
    if stride < 1 or padding < 0:
        raise ContractError("conv2d: stride must be positive and padding non-negative")
    k = weight.shape[-1]
    h, w_ = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    if h < k:
        raise DimensionError(f"conv2d: padded height {h} smaller than kernel {k}")
    if w_ < k:
        raise DimensionError(f"conv2d: padded width {w_} smaller than kernel {k}")
    ho, wo = (h - k) // stride + 1, (w_ - k) // stride + 1
    p = padding
    xpad = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    out = _corr(xpad, weight.data, stride, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            full = _scatter(g, weight.data, stride, (h, w_))
            gx = full[:, :, p : p + x.shape[2], p : p + x.shape[3]]
        if weight.requires_grad:
            gw = _corr_weight_grad(xpad, g, k, stride)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def conv2d_transpose(x, weight, bias=None, stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution; weight is (Cin, Cout, k, k), the adjoint of conv2d."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    _check_conv(x, weight, bias, 0, 1, "conv2d_transpose")
    if stride < 1 or padding < 0 or output_padding < 0:
        raise ContractError("conv2d_transpose: stride must be positive, paddings non-negative")
    if output_padding >= stride:
        raise ContractError(f"conv2d_transpose: output_padding {output_padding} must be < stride {stride}")
    k = weight.shape[-1]
    hin, win = x.shape[2], x.shape[3]
    ho = (hin - 1) * stride - 2 * padding + k + output_padding
    wo = (win - 1) * stride - 2 * padding + k + output_padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d_transpose: non-positive output size {ho}x{wo}")
    full_hw = ((hin - 1) * stride + k + output_padding, (win - 1) * stride + k + output_padding)
    p = padding
    full = _scatter(x.data, weight.data, stride, full_hw)
    out = np.ascontiguousarray(full[:, :, p : p + ho, p : p + wo])
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gx = gw = gb = None
        gfull = np.zeros((g.shape[0], g.shape[1]) + full_hw, dtype=DTYPE)
        gfull[:, :, p : p + ho, p : p + wo] = g
        if x.requires_grad:
            gx = _corr(gfull, weight.data, stride, hin, win)
        if weight.requires_grad:
            # pairs x[ci] with windows of gfull[co]; already (Cin, Cout, k, k)
            gw = _corr_weight_grad(gfull, x.data, k, stride)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


# ---------------------------------------------------------------- backward


@dataclass
class Tape:
    """Differentiable nodes reachable from a root, in execution order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> Tape:
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(p for p in t._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def reverse(self) -> Iterable[Tensor]:
        return reversed(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate gradients live only for the duration of the call; leaves
    (tensors without parents) keep theirs and sum across repeated calls.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any tensor with requires_grad")
    tape = Tape.from_root(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=DTYPE)}
    for node in tape.reverse():
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = 64,
    rng: np.random.Generator | None = None,
    stencil: int = 2,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` is re-evaluated for every perturbed coordinate, so it must read
    ``params`` afresh on each call. At most ``max_coords`` coordinates per
    parameter are probed (all of them when None). ``stencil=4`` uses the
    fourth-order central formula, which tolerates a larger ``eps`` and so
    loses less to roundoff on small gradient components.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"gradient_check: eps {eps} outside [1e-7, 1e-3]")
    if stencil not in (2, 4):
        raise ContractError(f"gradient_check: stencil must be 2 or 4, got {stencil}")
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("gradient_check: non-finite loss")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ContractError("gradient_check: parameter data must be contiguous")
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            vals = {}
            for k in ((-2, -1, 1, 2) if stencil == 4 else (-1, 1)):
                flat[c] = orig + k * eps
                vals[k] = f().item()
            flat[c] = orig
            if not all(np.isfinite(v) for v in vals.values()):
                raise NumericError("gradient_check: non-finite loss under perturbation")
            if stencil == 4:
                numeric = (8.0 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12.0 * eps)
            else:
                numeric = (vals[1] - vals[-1]) / (2.0 * eps)
            a = analytic.reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
