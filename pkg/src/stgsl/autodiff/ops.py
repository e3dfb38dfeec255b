"""Differentiable operations with registered adjoints.

Each op builds a tape node carrying one vjp closure per Tensor input.
Shapes are kept explicit; einsum covers the tensor contractions used by
the network (every contracted index must appear in at least two operands
or in the output, which holds for all equations used here).
"""
from __future__ import annotations

import numpy as np

from .engine import Tensor, as_tensor, make_node, register_op


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


@register_op("add")
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.value + b.value, "add", (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


@register_op("sub")
def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.value - b.value, "sub", (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


@register_op("neg")
def neg(a):
    a = as_tensor(a)
    return make_node(-a.value, "neg", (a,), (lambda g: -g,))


@register_op("mul")
def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.value * b.value, "mul", (a, b),
        (lambda g: _unbroadcast(g * b.value, a.shape),
         lambda g: _unbroadcast(g * a.value, b.shape)),
    )


@register_op("power")
def power(a, exponent: float):
    a = as_tensor(a)
    val = a.value ** exponent
    return make_node(
        val, "power", (a,),
        (lambda g: g * exponent * a.value ** (exponent - 1.0),),
    )


@register_op("relu")
def relu(a):
    a = as_tensor(a)
    mask = (a.value > 0).astype(a.value.dtype)
    return make_node(np.maximum(a.value, 0), "relu", (a,), (lambda g: g * mask,))


@register_op("sigmoid")
def sigmoid(a):
    a = as_tensor(a)
    val = _sigmoid(a.value)
    return make_node(val, "sigmoid", (a,), (lambda g: g * val * (1.0 - val),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@register_op("softplus")
def softplus(a):
    a = as_tensor(a)
    val = np.logaddexp(0.0, a.value)
    return make_node(val, "softplus", (a,), (lambda g: g * _sigmoid(a.value),))


@register_op("log")
def log(a):
    a = as_tensor(a)
    return make_node(np.log(a.value), "log", (a,), (lambda g: g / a.value,))


@register_op("clamp")
def clamp(a, lo: float, hi: float):
    a = as_tensor(a)
    inside = ((a.value > lo) & (a.value < hi)).astype(a.value.dtype)
    return make_node(np.clip(a.value, lo, hi), "clamp", (a,), (lambda g: g * inside,))


@register_op("sum")
def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    val = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).astype(a.value.dtype)
        g2 = g
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(ax % a.ndim for ax in axes):
                g2 = np.expand_dims(g2, ax)
        return np.broadcast_to(g2, a.shape).astype(a.value.dtype)

    return make_node(val, "sum", (a,), (vjp,))


sum = sum_  # noqa: A001 - convenience alias matching numpy's name


@register_op("mean")
def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


@register_op("reshape")
def reshape(a, shape):
    a = as_tensor(a)
    return make_node(a.value.reshape(shape), "reshape", (a,),
                     (lambda g: g.reshape(a.shape),))


@register_op("concat")
def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    val = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * val.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return make_node(val, "concat", tensors,
                     tuple(make_vjp(i) for i in range(len(tensors))))


@register_op("matmul")
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.value @ b.value, "matmul", (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


@register_op("einsum")
def einsum(equation: str, *tensors):
    """Einsum over Tensors. Every contracted index must be visible to the
    vjp rearrangement (present in another operand or in the output)."""
    tensors = [as_tensor(t) for t in tensors]
    lhs, out_sub = equation.replace(" ", "").split("->")
    subs = lhs.split(",")
    if len(subs) != len(tensors):
        raise ValueError("einsum operand count mismatch")
    val = np.einsum(equation, *[t.value for t in tensors], optimize=True)

    def make_vjp(i):
        others = [s for j, s in enumerate(subs) if j != i]
        other_vals = [t.value for j, t in enumerate(tensors) if j != i]
        eq = ",".join([out_sub] + others) + "->" + subs[i]
        return lambda g: np.einsum(eq, g, *other_vals, optimize=True)

    return make_node(val, "einsum", tensors,
                     tuple(make_vjp(i) for i in range(len(tensors))))


def _same_pad(k: int):
    left = (k - 1) // 2
    return left, k - 1 - left


@register_op("conv1d_same")
def conv1d_same(x, w, b):
    """1-D convolution over the last axis with zero same-padding.

    x: (..., C_in, T) with arbitrary leading axes folded as (B, C_in, N, T)
       in practice; here x is (B, C_in, N, T).
    w: (C_out, C_in, k); b: (C_out,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, cin, N, T = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ValueError(f"conv1d_same channel mismatch: {cin} vs {cin_w}")
    lp, rp = _same_pad(k)
    xp = np.zeros((B, cin, N, T + lp + rp), dtype=x.value.dtype)
    xp[..., lp:lp + T] = x.value
    out = np.zeros((B, cout, N, T), dtype=x.value.dtype)
    for d in range(k):
        out += np.einsum("oc,bcnt->bont", w.value[:, :, d], xp[..., d:d + T], optimize=True)
    out += b.value[None, :, None, None]

    def vjp_x(g):
        gp = np.zeros_like(xp)
        for d in range(k):
            gp[..., d:d + T] += np.einsum("oc,bont->bcnt", w.value[:, :, d], g, optimize=True)
        return gp[..., lp:lp + T]

    def vjp_w(g):
        gw = np.zeros_like(w.value)
        for d in range(k):
            gw[:, :, d] = np.einsum("bont,bcnt->oc", g, xp[..., d:d + T], optimize=True)
        return gw

    return make_node(out, "conv1d_same", (x, w, b),
                     (vjp_x, vjp_w, lambda g: g.sum(axis=(0, 2, 3))))


@register_op("maxpool1d_same")
def maxpool1d_same(x, k: int = 3):
    """Max pooling over the last axis, stride 1, same-padding with -inf."""
    x = as_tensor(x)
    B, C, N, T = x.shape
    lp, rp = _same_pad(k)
    xp = np.full((B, C, N, T + lp + rp), -np.inf, dtype=x.value.dtype)
    xp[..., lp:lp + T] = x.value
    stacked = np.stack([xp[..., d:d + T] for d in range(k)], axis=-1)
    arg = stacked.argmax(axis=-1)
    val = np.take_along_axis(stacked, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gp = np.zeros_like(xp)
        # scatter each output grad to the tap that won the max
        for d in range(k):
            mask = (arg == d)
            gp[..., d:d + T] += g * mask
        return gp[..., lp:lp + T]

    return make_node(val, "maxpool1d_same", (x,), (vjp,))


@register_op("gather_symmetric")
def gather_symmetric(theta, index: np.ndarray):
    """Expand a packed lower-triangle vector into a full symmetric matrix.

    ``index`` is the N x N array of 0-based positions into theta; mirrored
    positions share an index, so the vjp scatter-adds both contributions.
    """
    theta = as_tensor(theta)
    val = theta.value[index]

    def vjp(g):
        out = np.zeros_like(theta.value)
        np.add.at(out, index, g)
        return out

    return make_node(val, "gather_symmetric", (theta,), (vjp,))


@register_op("gumbel_straight_through")
def gumbel_straight_through(p, g1: np.ndarray, g2: np.ndarray, tau: float,
                            hard: bool = True, break_st: bool = False):
    """Binarize keep-probabilities by gumbel-argmax.

    Forward (hard): entry is 1 iff (log p + g1)/tau > (log(1-p) + g2)/tau,
    which is an exact Bernoulli(p) sample. Backward: the argmax is bypassed
    and the Jacobian of the two-way softmax keep-value is propagated.
    With hard=False the forward emits the soft keep-value itself, which is
    what the finite-difference oracle differentiates.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    p = as_tensor(p)
    a = (np.log(p.value) + g1) / tau
    b = (np.log(1.0 - p.value) + g2) / tau
    soft = _sigmoid(a - b)
    val = (a > b).astype(p.value.dtype) if hard else soft

    def vjp(g):
        if break_st:  # debug: drop the straight-through adjoint
            return np.zeros_like(p.value)
        dsoft_dp = soft * (1.0 - soft) * (1.0 / p.value + 1.0 / (1.0 - p.value)) / tau
        return g * dsoft_dp

    return make_node(val, "gumbel_straight_through", (p,), (vjp,))
