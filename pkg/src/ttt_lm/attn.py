"""Reference attention forms used as equivalence oracles.

Three independent implementations: linear attention as a recurrent
cumulative sum, causal softmax attention as one masked matrix product,
and the kernel-smoother estimator evaluated query by query. The latter
two use the same max-subtraction stabilization so their agreement is
limited only by rounding.

theorem1_check and theorem2_check turn the two layer/attention
identities into executable numbers: each returns the max absolute
difference between the sequence layer's output and the matching
attention form, which independent tests then bound.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import layer as ttt
from .errors import ShapeError
from .precision import active_dtype
from .tensor import Tensor

ArrayLike = Union[Tensor, np.ndarray]


@dataclass(frozen=True)
class AttnParams:
    """Single-head projections, each head_dim x embed_dim."""
    theta_k: Tensor
    theta_q: Tensor
    theta_v: Tensor

    def __post_init__(self):
        s = self.theta_k.shape
        if len(s) != 2:
            raise ShapeError(f"theta_k must be rank-2, got {s}")
        for name in ("theta_q", "theta_v"):
            o = getattr(self, name).shape
            if o != s:
                raise ShapeError(f"{name} shape {o} != theta_k shape {s}")

    @property
    def head_dim(self) -> int:
        return self.theta_k.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.theta_k.shape[1]


def _as_array(x: ArrayLike) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=active_dtype())
    if a.ndim != 2:
        raise ShapeError(f"token matrix must be rank-2 (embed_dim, T), got {a.shape}")
    return a


def _views(x: ArrayLike, p: AttnParams):
    a = _as_array(x)
    if a.shape[0] != p.embed_dim:
        raise ShapeError(f"embed dim {a.shape[0]} != projection dim {p.embed_dim}")
    return p.theta_k.data @ a, p.theta_q.data @ a, p.theta_v.data @ a


def linear_attention(x: ArrayLike, p: AttnParams) -> Tensor:
    """z_t = (sum_{s<=t} v_s k_s^T) q_t, evaluated with a running state."""
    k, q, v = _views(x, p)
    hd, t_total = k.shape
    state = np.zeros((hd, hd), dtype=k.dtype)
    out = np.empty((hd, t_total), dtype=k.dtype)
    for t in range(t_total):
        state = state + np.outer(v[:, t], k[:, t])
        out[:, t] = state @ q[:, t]
    return Tensor._wrap(out)


def softmax_attention(x: ArrayLike, p: AttnParams) -> Tensor:
    """Causal attention: column t of the output averages value views over
    s <= t with weights softmax(k_s . q_t)."""
    k, q, v = _views(x, p)
    t_total = k.shape[1]
    scores = k.T @ q  # row = source s, column = query t
    valid = np.triu(np.ones((t_total, t_total), dtype=k.dtype))
    col_max = np.where(valid > 0, scores, -np.inf).max(axis=0)
    # exp only where valid (shifted scores are <= 0 there), exact zeros
    # elsewhere so later tokens can never leak backward.
    weights = np.exp(np.where(valid > 0, scores - col_max, 0.0)) * valid
    weights = weights / weights.sum(axis=0)
    return Tensor._wrap(v @ weights)


def nadaraya_watson(x: ArrayLike, p: AttnParams,
                    kernel_scale: float = 1.0) -> Tensor:
    """Kernel-weighted average of the value views, one query at a time.

    The kernel on (source s, query t) is kernel_scale * exp(k_s . q_t);
    the scale cancels in the normalization quotient. Max-subtraction
    matches softmax_attention's stabilization.
    """
    k, q, v = _views(x, p)
    hd, t_total = k.shape
    out = np.empty((hd, t_total), dtype=k.dtype)
    for t in range(t_total):
        s = k[:, : t + 1].T @ q[:, t]
        w = kernel_scale * np.exp(s - s.max())
        out[:, t] = v[:, : t + 1] @ (w / w.sum())
    return Tensor._wrap(out)


def _square_layer_params(p: AttnParams, b: int) -> ttt.TTTLayerParams:
    hd, ed = p.theta_k.shape
    if hd != ed:
        raise ShapeError(
            f"layer/attention comparison shares projections, so theta_k must "
            f"be square (head_dim == embed_dim), got {p.theta_k.shape}")
    stack = lambda m: Tensor._wrap(m.data.reshape(1, hd, ed))
    return ttt.TTTLayerParams(
        theta_k=stack(p.theta_k), theta_q=stack(p.theta_q),
        theta_v=stack(p.theta_v),
        w0=(Tensor(np.zeros((1, hd, hd))),),
        # zero gate vector with unit base rate: every step size is exactly
        # sigmoid(0) = 1/2, the fixed rate the linear identity needs
        theta_lr=Tensor(np.zeros(ed)), eta_base=1.0, b=b)


def theorem1_check(x: ArrayLike, p: AttnParams,
                   b: Optional[int] = None) -> float:
    """Max abs difference between the linear sequence layer (bare, zero
    initial weights, step size 1/2, gradients at the mini-batch anchor)
    and linear attention, over both evaluation strategies.

    With b omitted the whole sequence is one mini-batch (batch GD), the
    configuration under which the difference is rounding-level; smaller b
    breaks the identity for generic inputs.
    """
    a = _as_array(x)
    t_total = a.shape[1]
    b_eff = t_total if b is None else b
    if t_total % b_eff != 0:
        raise ShapeError(f"b={b_eff} must divide T={t_total}")
    params = _square_layer_params(p, b_eff)
    kind = ttt.InnerModelKind.linear(bare=True)

    state = ttt.initial_state(params)
    cols = []
    for t in range(t_total):
        state, z_t = ttt.ttt_step_primal(state, Tensor(a[:, t]), params, kind)
        cols.append(z_t.data)
    z_primal = np.stack(cols, axis=1)
    z_dual, _ = ttt.ttt_forward_dual(Tensor._wrap(a), params, kind)

    z_ref = linear_attention(a, p).data
    return float(max(np.abs(z_primal - z_ref).max(),
                     np.abs(z_dual.data - z_ref).max()))


def theorem2_check(x: ArrayLike, p: AttnParams) -> float:
    """Max abs difference between the kernel-smoother estimator and causal
    softmax attention on the same projections."""
    return float(np.abs(nadaraya_watson(x, p).data
                        - softmax_attention(x, p).data).max())
