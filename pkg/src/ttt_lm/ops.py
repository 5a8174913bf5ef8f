"""Type-generic ops: the same call works on eager tensors and tape values.

Layer and backbone code is written once against this facade. On Tensor
inputs each primitive runs the kernel directly; on Value inputs it records
the identical kernel on the tape, so both paths produce bit-for-bit equal
numbers. Binary ops promote a Tensor operand to a constant node when the
other operand is taped.

Composites at the bottom (column layer norm and its vjp, gelu, the masked
column softmax) are built purely from the primitives, which is what lets
one reverse sweep differentiate through hand-expanded inner gradients.
"""
from __future__ import annotations

from typing import Sequence, Tuple, Union

import numpy as np

from . import kernels as K
from .autodiff import Tape, Value
from .tensor import Tensor

G = Union[Tensor, Value]


def is_taped(x) -> bool:
    return isinstance(x, Value)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Value):
            return x.tape
    raise TypeError("no taped operand")


def _promote(tape: Tape, x: G) -> Value:
    if isinstance(x, Value):
        return x
    return tape.const(x.data)


def _apply(kind: str, *xs: G, **ctx) -> G:
    if any(isinstance(x, Value) for x in xs):
        tape = _tape_of(*xs)
        return tape.record(kind, *(_promote(tape, x) for x in xs), **ctx)
    out = K.run_forward(kind, tuple(x.data for x in xs), ctx)
    return Tensor._wrap(out)


# --------------------------------------------------------------- primitives

def matmul(a: G, b: G) -> G:
    return _apply("matmul", a, b)


def transpose(a: G) -> G:
    return _apply("transpose", a)


def add(a: G, b: G) -> G:
    return _apply("add", a, b)


def sub(a: G, b: G) -> G:
    return _apply("sub", a, b)


def mul(a: G, b: G) -> G:
    return _apply("mul", a, b)


def div(a: G, b: G) -> G:
    return _apply("div", a, b)


def neg(a: G) -> G:
    return _apply("neg", a)


def scale(a: G, c: float) -> G:
    return _apply("scale", a, c=float(c))


def add_const(a: G, c: float) -> G:
    return _apply("add_const", a, c=float(c))


def sqrt(a: G) -> G:
    return _apply("sqrt", a)


def exp(a: G) -> G:
    return _apply("exp", a)


def log(a: G) -> G:
    return _apply("log", a)


def erf(a: G) -> G:
    return _apply("erf", a)


def sigmoid(a: G) -> G:
    return _apply("sigmoid", a)


def causal_mask(a: G) -> G:
    return _apply("causal_mask", a)


def rowsum(a: G) -> G:
    return _apply("rowsum", a)


def colsum(a: G) -> G:
    return _apply("colsum", a)


def sum_all(a: G) -> G:
    return _apply("sum_all", a)


def bcast_rows(a: G, m: int) -> G:
    return _apply("bcast_rows", a, m=int(m))


def bcast_cols(a: G, n: int) -> G:
    return _apply("bcast_cols", a, n=int(n))


def col_slice(a: G, j0: int, j1: int) -> G:
    return _apply("col_slice", a, j0=int(j0), j1=int(j1))


def batch_slice(a: G, i0: int, i1: int) -> G:
    return _apply("batch_slice", a, i0=int(i0), i1=int(i1))


def concat_cols(parts: Sequence[G]) -> G:
    return _apply("concat_cols", *parts)


def tile_batch(a: G, k: int) -> G:
    return _apply("tile_batch", a, k=int(k))


def repeat_batch(a: G, k: int) -> G:
    return _apply("repeat_batch", a, k=int(k))


def reshape(a: G, shape: Tuple[int, ...]) -> G:
    return _apply("reshape", a, shape=tuple(shape))


def embed(table: G, idx: np.ndarray) -> G:
    return _apply("embed", table, idx=idx)


def gather_rows(a: G, idx: np.ndarray) -> G:
    return _apply("gather_rows", a, idx=idx)


# ----------------------------------------------------------------- helpers

def value_of(x: G) -> np.ndarray:
    return x.value if isinstance(x, Value) else x.data


def constant(like: G, arr: np.ndarray) -> G:
    """A non-differentiable operand on whichever path `like` lives on."""
    if isinstance(like, Value):
        return like.tape.const(arr)
    return Tensor._wrap(arr)


def stop_gradient(x: G) -> G:
    return constant(x, value_of(x))


def colmax_const(x: G) -> G:
    """Per-column max of the current values, detached (safe for softmax
    stabilization by shift invariance)."""
    return constant(x, value_of(x).max(axis=-2, keepdims=True))


def zeros_const(like: G, shape: Tuple[int, ...]) -> G:
    return constant(like, np.zeros(shape, dtype=value_of(like).dtype))


# -------------------------------------------------------------- composites

def gelu(x: G) -> G:
    # x * Phi(x) with the exact erf form.
    phi = scale(add_const(erf(scale(x, K.INV_SQRT2)), 1.0), 0.5)
    return mul(x, phi)


def gelu_prime(x: G) -> G:
    # Phi(x) + x * N(x; 0, 1); needed explicitly when the inner backward is
    # spelled out as a first-order expression.
    cdf = scale(add_const(erf(scale(x, K.INV_SQRT2)), 1.0), 0.5)
    pdf = scale(exp(scale(mul(x, x), -0.5)), K.INV_SQRT_2PI)
    return add(cdf, mul(x, pdf))


def ln_cols(z: G, gamma_col: G, beta_col: G, eps: float):
    """Layer norm of each column of z (features along rows).

    gamma_col/beta_col have shape (..., d, 1). Returns (out, xhat, s) so a
    following vjp can reuse the normalized values and scales.
    """
    d = value_of(z).shape[-2]
    n = value_of(z).shape[-1]
    m = scale(rowsum(z), 1.0 / d)
    c = sub(z, bcast_rows(m, d))
    v = scale(rowsum(mul(c, c)), 1.0 / d)
    s = sqrt(add_const(v, eps))
    xhat = div(c, bcast_rows(s, d))
    out = add(mul(bcast_cols(gamma_col, n), xhat), bcast_cols(beta_col, n))
    return out, xhat, s


def ln_cols_vjp(xhat: G, s: G, gamma_col: G, upstream: G) -> G:
    """d(ln_cols)/dz applied to upstream, per column (closed form)."""
    d = value_of(xhat).shape[-2]
    n = value_of(xhat).shape[-1]
    h = mul(bcast_cols(gamma_col, n), upstream)
    hm = scale(rowsum(h), 1.0 / d)
    hx = scale(rowsum(mul(h, xhat)), 1.0 / d)
    centered = sub(sub(h, bcast_rows(hm, d)), mul(xhat, bcast_rows(hx, d)))
    return div(centered, bcast_rows(s, d))


def softmax_cols_masked(scores: G) -> G:
    """Column softmax over the causal region (source row <= query column).

    Entries above the diagonal band (future sources) get weight exactly 0.
    Stabilized by a detached per-column max of the masked scores, clamped
    at 0 so the masked-out zeros can never overflow the exponential.
    """
    masked = causal_mask(scores)
    mx = value_of(masked).max(axis=-2, keepdims=True)
    mx = constant(scores, np.maximum(mx, 0.0))
    n_rows = value_of(scores).shape[-2]
    e = causal_mask(exp(sub(masked, bcast_rows(mx, n_rows))))
    denom = rowsum(e)
    return div(e, bcast_rows(denom, n_rows))
