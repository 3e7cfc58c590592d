"""Dense-tensor core: a small reverse-mode tape over numpy, single-head
attention, sinusoidal encodings and a central-difference gradient checker.

Tensors are plain ``numpy.ndarray`` objects; precision is carried by dtype
(float64 in tests, float32 by default at runtime). ``Var`` wraps an array
when gradients are needed. Every op has a hand-written vector-Jacobian
product; nothing here delegates to an external autodiff engine.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError

DEFAULT_DTYPE = np.float32
DEBUG = bool(os.environ.get("SHIFTFUSE_DEBUG"))

_DTYPES = {"f32": np.float32, "float32": np.float32, "f64": np.float64, "float64": np.float64}


def resolve_dtype(precision) -> np.dtype:
    if precision is None:
        return np.dtype(DEFAULT_DTYPE)
    if isinstance(precision, str):
        try:
            return np.dtype(_DTYPES[precision])
        except KeyError:
            raise ConfigError(f"unknown precision {precision!r}; expected f32 or f64") from None
    return np.dtype(precision)


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if DEBUG and not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values produced by {where}")
    return x


# --------------------------------------------------------------------------
# reverse-mode tape
# --------------------------------------------------------------------------

class Var:
    """Array node on the gradient tape."""

    __slots__ = ("value", "grad", "requires_grad", "_parents")

    def __init__(self, value, requires_grad=False, _parents=()):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.grad = None
        if not requires_grad:
            for p, _ in _parents:
                if p.requires_grad:
                    requires_grad = True
                    break
        self.requires_grad = requires_grad
        self._parents = _parents if requires_grad else ()

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                stack.append((parent, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, vjp in node._parents:
                if not parent.requires_grad:
                    continue
                pg = vjp(g)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    __array_priority__ = 100

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def param(value) -> Var:
    return Var(value, requires_grad=True)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


# Every op below takes a plain-array fast path when no operand is a Var, so
# inference never builds a tape.

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b):
    # constants adopt the dtype of the tape operand so f32 graphs stay f32
    if isinstance(a, Var) and not isinstance(b, Var):
        b = Var(np.asarray(b, dtype=a.value.dtype))
    elif isinstance(b, Var) and not isinstance(a, Var):
        a = Var(np.asarray(a, dtype=b.value.dtype))
    return a, b


def add(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return a + b
    a, b = _pair(a, b)
    return Var(a.value + b.value, _parents=(
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ))


def sub(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return a - b
    a, b = _pair(a, b)
    return Var(a.value - b.value, _parents=(
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    ))


def mul(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return a * b
    a, b = _pair(a, b)
    return Var(a.value * b.value, _parents=(
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ))


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if av.shape[-1] != bv.shape[-2]:
        raise DimensionError(
            f"matmul inner axis mismatch: {av.shape[-1]} vs {bv.shape[-2]}")
    out = np.matmul(av, bv)
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    a, b = as_var(a), as_var(b)
    return Var(out, _parents=(
        (a, lambda g: _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), a.shape)),
        (b, lambda g: _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), b.shape)),
    ))


def relu(a):
    av = value_of(a)
    on = av > 0
    out = np.where(on, av, 0).astype(av.dtype)
    if not isinstance(a, Var):
        return out
    return Var(out, _parents=((a, lambda g: g * on),))


def silu(a):
    av = value_of(a)
    e = np.exp(-np.abs(av))  # never overflows
    sig = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(av.dtype, copy=False)
    if not isinstance(a, Var):
        return av * sig
    return Var(av * sig, _parents=((a, lambda g: g * (sig * (1 + av * (1 - sig)))),))


def softmax(a, axis=-1):
    y = _softmax(value_of(a), axis)
    if not isinstance(a, Var):
        return y
    return Var(y, _parents=(
        (a, lambda g: y * (g - (g * y).sum(axis=axis, keepdims=True))),))


def _softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    return Var(a.value.reshape(shape), _parents=((a, lambda g: g.reshape(a.shape)),))


def transpose(a, axes):
    if not isinstance(a, Var):
        return np.transpose(a, axes)
    inv = np.argsort(axes)
    return Var(np.transpose(a.value, axes), _parents=((a, lambda g: np.transpose(g, inv)),))


def concat(items: Sequence, axis=0):
    values = [value_of(x) for x in items]
    out = np.concatenate(values, axis=axis)
    if not any(isinstance(x, Var) for x in items):
        return out
    items = [as_var(x) for x in items]
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    parents = []
    for x, lo, hi in zip(items, bounds[:-1], bounds[1:]):
        def vjp(g, lo=lo, hi=hi):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]
        parents.append((x, vjp))
    return Var(out, _parents=tuple(parents))


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out
    axes = tuple(range(av.ndim)) if axis is None else (
        (axis,) if isinstance(axis, int) else tuple(axis))
    axes = tuple(ax % av.ndim for ax in axes)
    count = int(np.prod([av.shape[ax] for ax in axes]))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g / count, av.shape).astype(av.dtype)

    return Var(out, _parents=((a, vjp),))


def square_mean(a):
    return mean(mul(a, a))


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AttentionWeights:
    """Single-head projections, row-vector convention: ``x @ w_q``.

    Shapes: ``w_q`` (dim_model, dim_head), ``w_k``/``w_v`` (dim_ctx, dim_head),
    ``w_out`` (dim_head, dim_model).
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_out: np.ndarray

    def __post_init__(self):
        dm, dh = self.w_q.shape
        if self.w_k.shape[1] != dh:
            raise DimensionError(f"w_k head axis {self.w_k.shape[1]} != w_q head axis {dh}")
        if self.w_v.shape != self.w_k.shape:
            raise DimensionError(f"w_v shape {self.w_v.shape} != w_k shape {self.w_k.shape}")
        if self.w_out.shape != (dh, dm):
            raise DimensionError(f"w_out shape {self.w_out.shape} != ({dh}, {dm})")

    @property
    def dim_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def dim_head(self) -> int:
        return self.w_q.shape[1]

    @property
    def dim_ctx(self) -> int:
        return self.w_k.shape[0]

    @classmethod
    def random(cls, rng, dim_model, dim_head=None, dim_ctx=None, scale=None, dtype=np.float64):
        dim_head = dim_head or dim_model
        dim_ctx = dim_ctx or dim_model
        s_in = scale if scale is not None else 1 / math.sqrt(dim_model)
        s_ctx = scale if scale is not None else 1 / math.sqrt(dim_ctx)
        s_h = scale if scale is not None else 1 / math.sqrt(dim_head)
        return cls(
            (rng.standard_normal((dim_model, dim_head)) * s_in).astype(dtype),
            (rng.standard_normal((dim_ctx, dim_head)) * s_ctx).astype(dtype),
            (rng.standard_normal((dim_ctx, dim_head)) * s_ctx).astype(dtype),
            (rng.standard_normal((dim_head, dim_model)) * s_h).astype(dtype),
        )


def attend(x, ctx, w_q, w_k, w_v, w_out, return_probs=False):
    """Tape-level attention: ``softmax(QK^T/sqrt(dh)) V W_out`` over the last
    two axes, leading axes batched."""
    q = matmul(x, w_q)
    k = matmul(ctx, w_k)
    v = matmul(ctx, w_v)
    dh = value_of(w_q).shape[-1]
    logits = mul(matmul(q, transpose(k, _swap_last(value_of(k).ndim))), 1.0 / math.sqrt(dh))
    probs = softmax(logits, axis=-1)
    out = matmul(matmul(probs, v), w_out)
    return (out, probs) if return_probs else out


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _check_attention_shapes(x, ctx, w: AttentionWeights):
    if x.ndim < 2 or ctx.ndim < 2:
        raise DimensionError("attention inputs must be at least 2-D (tokens x channels)")
    if x.shape[-2] < 1:
        raise DimensionError("query axis is empty")
    if ctx.shape[-2] < 1:
        raise DimensionError("key axis is empty")
    if x.shape[-1] != w.dim_model:
        raise DimensionError(
            f"query channel axis {x.shape[-1]} does not match dim_model {w.dim_model}")
    if ctx.shape[-1] != w.dim_ctx:
        raise DimensionError(
            f"context channel axis {ctx.shape[-1]} does not match key input width {w.dim_ctx}")
    if x.shape[:-2] != ctx.shape[:-2] and ctx.ndim > 2:
        raise DimensionError(f"batch axes differ: {x.shape[:-2]} vs {ctx.shape[:-2]}")


def cross_attention(x: np.ndarray, ctx: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Attention output of queries ``x`` [..., n_q, c] over ``ctx`` [..., n_k, c_ctx].

    The residual add is left to the caller.
    """
    x, ctx = np.asarray(x), np.asarray(ctx)
    _check_attention_shapes(x, ctx, w)
    out = attend(x, ctx, w.w_q, w.w_k, w.w_v, w.w_out)
    return check_finite(out, "cross_attention")


def attention_probs(x: np.ndarray, ctx: np.ndarray, w: AttentionWeights) -> np.ndarray:
    x, ctx = np.asarray(x), np.asarray(ctx)
    _check_attention_shapes(x, ctx, w)
    return attend(x, ctx, w.w_q, w.w_k, w.w_v, w.w_out, return_probs=True)[1]


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def sinusoidal_encode(value, dim: int, dtype=np.float64) -> np.ndarray:
    """Interleaved ``[sin(v w_0), cos(v w_0), sin(v w_1), ...]`` with
    ``w_k = 10000**(-2k/dim)``."""
    if dim <= 0 or dim % 2:
        raise ConfigError(f"encoding dim must be a positive even integer, got {dim}")
    if value < 0:
        raise ConfigError(f"encoded value must be non-negative, got {value}")
    freqs = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = float(value) * freqs
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out.astype(dtype)


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------

def grad_check(
    f: Callable[[np.ndarray], tuple],
    params: np.ndarray,
    eps: float = 1e-3,
    indices=None,
    loss_fn: Callable[[np.ndarray], float] | None = None,
) -> float:
    """Max over parameters of ``|analytic - central| / max(1, |central|)``.

    ``f(params)`` returns ``(loss, analytic_grad)`` for flat ``params``. The
    perturbed evaluations only need the loss, so a cheaper ``loss_fn`` may be
    supplied for them.
    """
    params = np.asarray(params)
    if params.dtype != np.float64:
        raise ConfigError("grad_check requires 64-bit parameters")
    if not 1e-6 <= eps <= 1e-3:
        raise ConfigError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    flat = params.reshape(-1).copy()
    loss0, analytic = f(flat.copy())
    if not np.isfinite(loss0):
        raise NumericalError("non-finite loss at the unperturbed point", index=None)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if analytic.shape != flat.shape:
        raise DimensionError(f"gradient size {analytic.size} != parameter size {flat.size}")
    loss_fn = loss_fn or (lambda p: f(p)[0])
    worst = 0.0
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss_fn(flat)
        flat[i] = orig - eps
        lm = loss_fn(flat)
        flat[i] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericalError(f"non-finite loss while perturbing parameter {i}", index=i)
        numeric = (lp - lm) / (2 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
