"""Forward kernels and their backward rules, on raw numpy arrays.

Every differentiable primitive lives here exactly once: the eager path
and the tape both call the same forward function, so a recorded value is
bit-for-bit identical to the unrecorded one. Backward rules are plain
vector-Jacobian products; none of them require second derivatives.

Shapes are rank 2 (rows x cols) or rank 3 (batch x rows x cols); the
elementwise binary ops require exact shape equality (broadcasting is
always explicit via bcast_rows / bcast_cols / tile_batch / repeat_batch).
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf, expit as _expit

from .errors import ShapeError

INV_SQRT2 = 0.7071067811865475244008443621048490393
INV_SQRT_2PI = 0.3989422804014326779399460599343818685
TWO_OVER_SQRT_PI = 1.1283791670955125738961589031215451717


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- forwards

def f_matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch extents differ, {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def f_transpose(a):
    if a.ndim < 2:
        raise ShapeError(f"transpose: rank >= 2 required, got {a.shape}")
    return np.swapaxes(a, -1, -2)


def f_add(a, b):
    _same_shape(a, b, "add")
    return a + b


def f_sub(a, b):
    _same_shape(a, b, "sub")
    return a - b


def f_mul(a, b):
    _same_shape(a, b, "mul")
    return a * b


def f_div(a, b):
    _same_shape(a, b, "div")
    return a / b


def f_neg(a):
    return -a


def f_scale(a, c):
    return a * c


def f_add_const(a, c):
    return a + c


def f_sqrt(a):
    return np.sqrt(a)


def f_exp(a):
    return np.exp(a)


def f_log(a):
    return np.log(a)


def f_erf(a):
    return _erf(a)


def f_sigmoid(a):
    return _expit(a)


def f_causal_mask(a):
    # Row index = source timestep s, column = query t; entries with s > t
    # are zeroed so column t sums over s <= t only.
    if a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"causal_mask: square input required, got {a.shape}")
    return np.triu(a)


def f_rowsum(a):
    return a.sum(axis=-2, keepdims=True)


def f_colsum(a):
    return a.sum(axis=-1, keepdims=True)


def f_sum_all(a):
    return np.asarray(a.sum())


def f_bcast_rows(a, m):
    if a.shape[-2] != 1:
        raise ShapeError(f"bcast_rows: expected a single row, got {a.shape}")
    return np.broadcast_to(a, a.shape[:-2] + (m, a.shape[-1]))


def f_bcast_cols(a, n):
    if a.shape[-1] != 1:
        raise ShapeError(f"bcast_cols: expected a single column, got {a.shape}")
    return np.broadcast_to(a, a.shape[:-1] + (n,))


def f_col_slice(a, j0, j1):
    if not (0 <= j0 <= j1 <= a.shape[-1]):
        raise ShapeError(f"col_slice: [{j0}:{j1}] out of range for {a.shape}")
    return a[..., j0:j1]


def f_batch_slice(a, i0, i1):
    if a.ndim != 3:
        raise ShapeError(f"batch_slice: rank-3 input required, got {a.shape}")
    if not (0 <= i0 <= i1 <= a.shape[0]):
        raise ShapeError(f"batch_slice: [{i0}:{i1}] out of range for {a.shape}")
    return a[i0:i1]


def f_concat_cols(*parts):
    return np.concatenate(parts, axis=-1)


def f_tile_batch(a, k):
    # k stacked copies: rank-2 (m,n) -> (k,m,n); rank-3 (B,m,n) -> (k*B,m,n)
    # with copy index major, so slice i*B+j is copy i of slice j.
    if a.ndim == 2:
        return np.broadcast_to(a, (k,) + a.shape)
    return np.tile(a, (k, 1, 1))


def f_repeat_batch(a, k):
    # Each batch slice repeated k times consecutively: slice i*k+j is copy j
    # of original slice i.
    if a.ndim != 3:
        raise ShapeError(f"repeat_batch: rank-3 input required, got {a.shape}")
    return np.repeat(a, k, axis=0)


def f_reshape(a, shape):
    return np.reshape(a, shape)


def f_embed(table, idx):
    # table (dim, vocab), idx (S, T) integer -> (S, dim, T)
    if idx.min() < 0 or idx.max() >= table.shape[1]:
        raise ShapeError(
            f"embed: token id out of range [0, {table.shape[1]}), "
            f"got min {idx.min()} max {idx.max()}"
        )
    s, t = idx.shape
    cols = table.take(idx.reshape(-1), axis=1)  # (dim, S*T)
    return np.ascontiguousarray(cols.reshape(table.shape[0], s, t).transpose(1, 0, 2))


def f_gather_rows(a, idx):
    # a (S, V, T), idx (S, T) -> (S, 1, T): per batch and column, pick row idx.
    return np.take_along_axis(a, idx[:, None, :], axis=1)


# ---------------------------------------------------------------- backwards

def _unbatch(grad, ref):
    # matmul broadcast: a rank-2 operand used against a rank-3 one receives
    # the batch-summed gradient.
    if grad.ndim > ref.ndim:
        return grad.sum(axis=0)
    return grad


def b_matmul(ins, out, g, ctx):
    a, b = ins
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbatch(ga, a), _unbatch(gb, b)


def b_transpose(ins, out, g, ctx):
    return (np.swapaxes(g, -1, -2),)


def b_add(ins, out, g, ctx):
    return g, g


def b_sub(ins, out, g, ctx):
    return g, -g


def b_mul(ins, out, g, ctx):
    a, b = ins
    return g * b, g * a


def b_div(ins, out, g, ctx):
    a, b = ins
    return g / b, -g * out / b


def b_neg(ins, out, g, ctx):
    return (-g,)


def b_scale(ins, out, g, ctx):
    return (g * ctx["c"],)


def b_add_const(ins, out, g, ctx):
    return (g,)


def b_sqrt(ins, out, g, ctx):
    return (g * (0.5 / out),)


def b_exp(ins, out, g, ctx):
    return (g * out,)


def b_log(ins, out, g, ctx):
    return (g / ins[0],)


def b_erf(ins, out, g, ctx):
    a = ins[0]
    return (g * (TWO_OVER_SQRT_PI * np.exp(-a * a)),)


def b_sigmoid(ins, out, g, ctx):
    return (g * out * (1.0 - out),)


def b_causal_mask(ins, out, g, ctx):
    return (np.triu(g),)


def b_rowsum(ins, out, g, ctx):
    return (np.broadcast_to(g, ins[0].shape),)


def b_colsum(ins, out, g, ctx):
    return (np.broadcast_to(g, ins[0].shape),)


def b_sum_all(ins, out, g, ctx):
    return (np.broadcast_to(g, ins[0].shape),)


def b_bcast_rows(ins, out, g, ctx):
    return (g.sum(axis=-2, keepdims=True),)


def b_bcast_cols(ins, out, g, ctx):
    return (g.sum(axis=-1, keepdims=True),)


def b_col_slice(ins, out, g, ctx):
    a = ins[0]
    da = np.zeros_like(a)
    da[..., ctx["j0"]:ctx["j1"]] = g
    return (da,)


def b_batch_slice(ins, out, g, ctx):
    a = ins[0]
    da = np.zeros_like(a)
    da[ctx["i0"]:ctx["i1"]] = g
    return (da,)


def b_concat_cols(ins, out, g, ctx):
    grads = []
    j = 0
    for part in ins:
        w = part.shape[-1]
        grads.append(g[..., j:j + w])
        j += w
    return tuple(grads)


def b_tile_batch(ins, out, g, ctx):
    a = ins[0]
    k = ctx["k"]
    if a.ndim == 2:
        return (g.sum(axis=0),)
    return (g.reshape((k, a.shape[0]) + a.shape[1:]).sum(axis=0),)


def b_repeat_batch(ins, out, g, ctx):
    a = ins[0]
    k = ctx["k"]
    return (g.reshape((a.shape[0], k) + a.shape[1:]).sum(axis=1),)


def b_reshape(ins, out, g, ctx):
    return (np.reshape(g, ins[0].shape),)


def b_embed(ins, out, g, ctx):
    table = ins[0]
    idx = ctx["idx"]
    dt = np.zeros_like(table)
    gmat = g.transpose(1, 0, 2).reshape(table.shape[0], -1)
    np.add.at(dt, (slice(None), idx.reshape(-1)), gmat)
    return (dt,)


def b_gather_rows(ins, out, g, ctx):
    a = ins[0]
    idx = ctx["idx"]
    da = np.zeros_like(a)
    s_ix = np.arange(a.shape[0])[:, None]
    t_ix = np.arange(a.shape[2])[None, :]
    np.add.at(da, (s_ix, idx, t_ix), g[:, 0, :])
    return (da,)


# kind -> (forward, backward, ctx keys used by forward)
REGISTRY = {
    "matmul": (f_matmul, b_matmul, ()),
    "transpose": (f_transpose, b_transpose, ()),
    "add": (f_add, b_add, ()),
    "sub": (f_sub, b_sub, ()),
    "mul": (f_mul, b_mul, ()),
    "div": (f_div, b_div, ()),
    "neg": (f_neg, b_neg, ()),
    "scale": (f_scale, b_scale, ("c",)),
    "add_const": (f_add_const, b_add_const, ("c",)),
    "sqrt": (f_sqrt, b_sqrt, ()),
    "exp": (f_exp, b_exp, ()),
    "log": (f_log, b_log, ()),
    "erf": (f_erf, b_erf, ()),
    "sigmoid": (f_sigmoid, b_sigmoid, ()),
    "causal_mask": (f_causal_mask, b_causal_mask, ()),
    "rowsum": (f_rowsum, b_rowsum, ()),
    "colsum": (f_colsum, b_colsum, ()),
    "sum_all": (f_sum_all, b_sum_all, ()),
    "bcast_rows": (f_bcast_rows, b_bcast_rows, ("m",)),
    "bcast_cols": (f_bcast_cols, b_bcast_cols, ("n",)),
    "col_slice": (f_col_slice, b_col_slice, ("j0", "j1")),
    "batch_slice": (f_batch_slice, b_batch_slice, ("i0", "i1")),
    "concat_cols": (f_concat_cols, b_concat_cols, ()),
    "tile_batch": (f_tile_batch, b_tile_batch, ("k",)),
    "repeat_batch": (f_repeat_batch, b_repeat_batch, ("k",)),
    "reshape": (f_reshape, b_reshape, ("shape",)),
    "embed": (f_embed, b_embed, ("idx",)),
    "gather_rows": (f_gather_rows, b_gather_rows, ("idx",)),
}


def run_forward(kind: str, vals, ctx) -> np.ndarray:
    fwd = REGISTRY[kind][0]
    if ctx:
        return fwd(*vals, **ctx)
    return fwd(*vals)
