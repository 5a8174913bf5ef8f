"""Dense rank-0..3 float tensors and the small kernel set everything uses.

Values are immutable after construction. Double precision is the default
so the equivalence checks can run near machine epsilon; 32-bit is
selectable for benchmark runs (see precision module).
"""
from __future__ import annotations

from typing import Iterable, Tuple, Union

import numpy as np

from . import kernels as K
from .errors import FiniteError, ShapeError
from .precision import active_dtype

LN_EPS = 1e-6

_checked = True


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf screening on tensor construction."""
    global _checked
    _checked = bool(flag)


def is_checked() -> bool:
    return _checked


class Tensor:
    """Immutable numeric array, rank 0 to 3, row-major."""

    __slots__ = ("data",)

    def __init__(self, values, dtype=None):
        arr = np.array(values, dtype=dtype if dtype is not None else active_dtype(),
                       order="C")
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} > 3 not supported, shape {arr.shape}")
        if _checked and not np.isfinite(arr).all():
            raise FiniteError(f"non-finite values in tensor of shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: trusts the kernel output, skips the copy.
        if _checked and not np.isfinite(arr).all():
            raise FiniteError(f"non-finite values in tensor of shape {arr.shape}")
        t = object.__new__(cls)
        object.__setattr__(t, "data", arr)
        return t

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    # Operators cover the hand-written eager math in tests and oracles; the
    # layer code goes through the ops facade instead.
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return Tensor._wrap(K.f_matmul(self.data, other.data))

    def __add__(self, other):
        if isinstance(other, Tensor):
            return Tensor._wrap(K.f_add(self.data, other.data))
        return Tensor._wrap(K.f_add_const(self.data, float(other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return Tensor._wrap(K.f_sub(self.data, other.data))
        return Tensor._wrap(K.f_add_const(self.data, -float(other)))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return Tensor._wrap(K.f_mul(self.data, other.data))
        return Tensor._wrap(K.f_scale(self.data, float(other)))

    __rmul__ = __mul__

    def __truediv__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            raise TypeError("divide by a Tensor; use * (1/c) for scalars")
        return Tensor._wrap(K.f_div(self.data, other.data))

    def __neg__(self):
        return Tensor._wrap(K.f_neg(self.data))

    @property
    def T(self) -> "Tensor":
        return Tensor._wrap(K.f_transpose(self.data))


def tensor(values, dtype=None) -> Tensor:
    return Tensor(values, dtype=dtype)


def zeros(shape: Union[int, Iterable[int]]) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=active_dtype()))


def ones(shape: Union[int, Iterable[int]]) -> Tensor:
    return Tensor._wrap(np.ones(shape, dtype=active_dtype()))


def eye(n: int) -> Tensor:
    return Tensor._wrap(np.eye(n, dtype=active_dtype()))


def _as2d(t: Tensor, op: str) -> np.ndarray:
    if t.ndim != 2:
        raise ShapeError(f"{op}: rank-2 tensor required, got shape {t.shape}")
    return t.data


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """C[i,j] = sum_p A[i,p] B[p,j] for rank-2 operands."""
    _as2d(a, "matmul")
    _as2d(b, "matmul")
    return Tensor._wrap(K.f_matmul(a.data, b.data))


def transpose(a: Tensor) -> Tensor:
    return Tensor._wrap(K.f_transpose(a.data))


def causal_mask(m: Tensor) -> Tensor:
    """Zero the entries where the source index exceeds the query index.

    Rows index sources s, columns index queries t; the survivors of column
    t are exactly the summands s <= t of a causal accumulation.
    """
    _as2d(m, "causal_mask")
    return Tensor._wrap(K.f_causal_mask(m.data))


def _ln_args(x: Tensor, gamma: Tensor, beta: Tensor, eps: float, op: str):
    if x.ndim != 1 or gamma.ndim != 1 or beta.ndim != 1:
        raise ShapeError(f"{op}: rank-1 tensors required, got {x.shape}, "
                         f"{gamma.shape}, {beta.shape}")
    if not (x.shape == gamma.shape == beta.shape):
        raise ShapeError(f"{op}: extents differ, {x.shape} vs {gamma.shape} "
                         f"vs {beta.shape}")
    if x.shape[0] < 2:
        raise ShapeError(f"{op}: d >= 2 required, got d={x.shape[0]}")
    if not eps > 0:
        raise ShapeError(f"{op}: eps must be > 0, got {eps}")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """gamma * (x - mean) / sqrt(var + eps) + beta, variance with 1/d."""
    _ln_args(x, gamma, beta, eps, "layer_norm")
    xv = x.data
    mu = xv.mean()
    var = ((xv - mu) ** 2).mean()
    xh = (xv - mu) / np.sqrt(var + eps)
    return Tensor._wrap(gamma.data * xh + beta.data)


def layer_norm_vjp(x: Tensor, gamma: Tensor, beta: Tensor, eps: float,
                   upstream: Tensor):
    """Exact vector-Jacobian products of layer_norm: (dx, dgamma, dbeta)."""
    _ln_args(x, gamma, beta, eps, "layer_norm_vjp")
    if upstream.shape != x.shape:
        raise ShapeError(f"layer_norm_vjp: upstream shape {upstream.shape} "
                         f"!= input shape {x.shape}")
    xv, u = x.data, upstream.data
    d = xv.shape[0]
    mu = xv.mean()
    var = ((xv - mu) ** 2).mean()
    s = np.sqrt(var + eps)
    xh = (xv - mu) / s
    h = gamma.data * u
    dx = (h - h.mean() - xh * (h * xh).mean()) / s
    return (Tensor._wrap(dx), Tensor._wrap(u * xh), Tensor._wrap(u.copy()))


def gelu(x: Tensor) -> Tensor:
    """Exact-erf gaussian error linear unit: x * Phi(x)."""
    xv = x.data
    return Tensor._wrap(0.5 * xv * (1.0 + K.f_erf(xv * K.INV_SQRT2)))


def gelu_prime(x: Tensor) -> Tensor:
    """d/dx gelu(x) = Phi(x) + x * phi(x)."""
    xv = x.data
    phi = np.exp(-0.5 * xv * xv) * K.INV_SQRT_2PI
    return Tensor._wrap(0.5 * (1.0 + K.f_erf(xv * K.INV_SQRT2)) + xv * phi)


def sigmoid(x: Tensor) -> Tensor:
    return Tensor._wrap(K.f_sigmoid(x.data))


def softmax_cols(m: Tensor) -> Tensor:
    """Column-stochastic softmax with per-column max subtraction."""
    mv = _as2d(m, "softmax_cols")
    e = np.exp(mv - mv.max(axis=0, keepdims=True))
    return Tensor._wrap(e / e.sum(axis=0, keepdims=True))
