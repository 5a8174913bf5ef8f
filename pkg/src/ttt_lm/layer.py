"""Sequence layer whose hidden state is the weights of a small inner model.

Per token the layer takes one gradient step on a reconstruction task: the
train view (theta_K x) must map to the label view (theta_V x), and the
output is the updated model applied to the test view (theta_Q x). Within a
mini-batch of b tokens all gradients are taken at the weights frozen at
the previous mini-batch boundary, so they can be computed side by side.

Two evaluation strategies produce the same outputs:
  primal - materialize every per-token gradient and weight;
  dual   - per mini-batch, one batched backward at the anchor weights plus
           a causally masked correction term, never materializing
           per-token weights. For the 2-layer MLP the correction is
           applied per inner layer on its own activations.

All math below is written against the ops facade, so the identical code
runs eagerly on tensors or recorded on a tape, and on rank-2 single-head
slices or rank-3 (batch*heads) stacks alike. The learnable step size
eta(x) = eta_base * sigmoid(theta_lr . x) scales gradient columns before
both the weight update and the masked correction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from . import ops
from .autodiff import Tape, Value
from .errors import ShapeError
from .ops import G
from .precision import active_dtype
from .tensor import LN_EPS, Tensor

Weights = Tuple[G, ...]  # one or two stacked matrices, leading head/batch dim


@dataclass(frozen=True)
class InnerModelKind:
    """Which inner model the layer trains, and whether the LN+residual
    wrapper around it is disabled (bare mode exists for the oracle
    configurations that must match attention exactly)."""
    model: str  # "linear" | "mlp2"
    bare: bool = False

    def __post_init__(self):
        if self.model not in ("linear", "mlp2"):
            raise ShapeError(f"unknown inner model {self.model!r}")

    @classmethod
    def linear(cls, bare: bool = False) -> "InnerModelKind":
        return cls("linear", bare)

    @classmethod
    def mlp2(cls, bare: bool = False) -> "InnerModelKind":
        return cls("mlp2", bare)

    @property
    def is_mlp(self) -> bool:
        return self.model == "mlp2"

    @property
    def n_mats(self) -> int:
        return 2 if self.is_mlp else 1

    def label(self) -> str:
        return self.model + ("/bare" if self.bare else "/ln")


@dataclass(frozen=True)
class TTTLayerParams:
    """Stacked per-head parameters of one layer.

    theta_k/q/v: (H, head_dim, embed_dim) projections; w0: initial inner
    weights, (H, hd, hd) for linear or (H, 4hd, hd) + (H, hd, 4hd) for the
    MLP; theta_lr: (embed_dim,) gate vector shared across heads; ln_*:
    (H, head_dim) inner norm parameters (None in bare mode); b: inner
    mini-batch size.
    """
    theta_k: G
    theta_q: G
    theta_v: G
    w0: Weights
    theta_lr: G
    eta_base: float
    b: int
    ln_gamma: Optional[G] = None
    ln_beta: Optional[G] = None
    eps: float = LN_EPS

    def __post_init__(self):
        hk = ops.value_of(self.theta_k).shape
        if len(hk) != 3:
            raise ShapeError(f"theta_k must be rank-3 (heads, hd, ed), got {hk}")
        h, hd, ed = hk
        if h * hd != ed:
            raise ShapeError(f"heads*head_dim must equal embed_dim: {h}*{hd} != {ed}")
        for name in ("theta_q", "theta_v"):
            s = ops.value_of(getattr(self, name)).shape
            if s != hk:
                raise ShapeError(f"{name} shape {s} != theta_k shape {hk}")
        if ops.value_of(self.theta_lr).shape != (ed,):
            raise ShapeError(
                f"theta_lr must be ({ed},), got {ops.value_of(self.theta_lr).shape}")
        if not self.eta_base > 0:
            raise ShapeError(f"eta_base must be > 0, got {self.eta_base}")
        if self.b < 1:
            raise ShapeError(f"b must be >= 1, got {self.b}")

    @property
    def heads(self) -> int:
        return ops.value_of(self.theta_k).shape[0]

    @property
    def head_dim(self) -> int:
        return ops.value_of(self.theta_k).shape[1]

    @property
    def embed_dim(self) -> int:
        return ops.value_of(self.theta_k).shape[2]


@dataclass(frozen=True)
class TTTState:
    """Streaming-decode state: current inner weights, the anchor weights
    gradients are taken at, and the position within the open mini-batch."""
    w: Weights
    anchor_w: Weights
    pos: int

    def __post_init__(self):
        if self.pos < 0:
            raise ShapeError(f"pos must be >= 0, got {self.pos}")


def initial_state(params: TTTLayerParams) -> TTTState:
    return TTTState(w=params.w0, anchor_w=params.w0, pos=0)


# ----------------------------------------------------------- inner model

def _check_w(kind: InnerModelKind, w: Weights) -> None:
    if len(w) != kind.n_mats:
        raise ShapeError(f"{kind.label()} expects {kind.n_mats} weight "
                         f"matrices, got {len(w)}")
    if kind.is_mlp:
        s1 = ops.value_of(w[0]).shape
        s2 = ops.value_of(w[1]).shape
        if s1[-2] != 4 * s1[-1] or s2[-1] != 4 * s2[-2] or s1[-1] != s2[-2]:
            raise ShapeError(f"mlp2 hidden must be 4x head_dim: {s1} then {s2}")
    else:
        s = ops.value_of(w[0]).shape
        if s[-1] != s[-2]:
            raise ShapeError(f"linear inner weights must be square, got {s}")


def _ln_col(p: G) -> G:
    # (H, hd) parameter -> (H, hd, 1) column for the column-norm composite.
    v = ops.value_of(p).shape
    return ops.reshape(p, (v[0], v[1], 1))


def _f_res_cols(kind: InnerModelKind, w: Weights, u: G) -> G:
    z = ops.matmul(w[0], u)
    if kind.is_mlp:
        z = ops.matmul(w[1], ops.gelu(z))
    return z


def _apply_cols(kind: InnerModelKind, w: Weights, u: G,
                gamma_col: Optional[G], beta_col: Optional[G], eps: float) -> G:
    r = _f_res_cols(kind, w, u)
    if kind.bare:
        return r
    out, _, _ = ops.ln_cols(r, gamma_col, beta_col, eps)
    return ops.add(u, out)


def _inner_backward_cols(kind: InnerModelKind, w: Weights, xhat: G, y: G,
                         gamma_col: Optional[G], beta_col: Optional[G],
                         eps: float):
    """Per-column gradients of ||f(xhat_col) - y_col||^2 w.r.t. each inner
    layer's pre-activation, spelled out with first-order ops only.

    Returns (dz per layer, activations per layer, f output). Column t of
    dz[k] times activation[k] column t transposed is the weight gradient
    contribution of token t, since the loss separates over columns.
    """
    z1 = ops.matmul(w[0], xhat)
    if kind.is_mlp:
        a2 = ops.gelu(z1)
        zl = ops.matmul(w[1], a2)
        acts = (xhat, a2)
    else:
        zl = z1
        acts = (xhat,)
    if kind.bare:
        out = zl
        dzl = ops.scale(ops.sub(out, y), 2.0)
    else:
        ln_out, xh, s = ops.ln_cols(zl, gamma_col, beta_col, eps)
        out = ops.add(xhat, ln_out)
        upstream = ops.scale(ops.sub(out, y), 2.0)
        dzl = ops.ln_cols_vjp(xh, s, gamma_col, upstream)
    if kind.is_mlp:
        da2 = ops.matmul(ops.transpose(w[1]), dzl)
        dz1 = ops.mul(ops.gelu_prime(z1), da2)
        dzs = (dz1, dzl)
    else:
        dzs = (dzl,)
    return dzs, acts, out


def _eta_to_mat(eta_col: G, rows: int, cols: int) -> G:
    # (..., 1, 1) per-token step size -> full matrix factor.
    return ops.bcast_cols(ops.bcast_rows(eta_col, rows), cols)


# ------------------------------------------------------------ chunk kernels

def _primal_chunk(kind: InnerModelKind, w: Weights, xhat: G, xbar: G, y: G,
                  eta_row: G, gamma_col: Optional[G], beta_col: Optional[G],
                  eps: float) -> Tuple[Weights, G]:
    """Token-by-token evaluation of one mini-batch; gradients at the entry
    weights (the anchor), updates accumulated in sequence order."""
    anchor = w
    width = ops.value_of(xhat).shape[-1]
    z_cols = []
    for j in range(width):
        xh_j = ops.col_slice(xhat, j, j + 1)
        xb_j = ops.col_slice(xbar, j, j + 1)
        y_j = ops.col_slice(y, j, j + 1)
        eta_j = ops.col_slice(eta_row, j, j + 1)
        dzs, acts, _ = _inner_backward_cols(kind, anchor, xh_j, y_j,
                                            gamma_col, beta_col, eps)
        new_w = []
        for wk, dz, act in zip(w, dzs, acts):
            gk = ops.matmul(dz, ops.transpose(act))
            shp = ops.value_of(gk).shape
            step = ops.mul(_eta_to_mat(eta_j, shp[-2], shp[-1]), gk)
            new_w.append(ops.sub(wk, step))
        w = tuple(new_w)
        z_cols.append(_apply_cols(kind, w, xb_j, gamma_col, beta_col, eps))
    return w, ops.concat_cols(z_cols)


def _dual_chunk(kind: InnerModelKind, w: Weights, xhat: G, xbar: G, y: G,
                eta_row: G, gamma_col: Optional[G], beta_col: Optional[G],
                eps: float) -> Tuple[Weights, G]:
    """Matmul-only evaluation of one mini-batch.

    One batched backward at the anchor produces all per-token gradient
    columns; scaling column t by eta_t covers the token-dependent step
    size. Boundary weights come from a single matmul per inner layer, and
    outputs from the anchor product minus the causally masked correction
    dz_eta @ mask(act^T test), applied per layer on that layer's own
    (already per-token-updated) test activations.
    """
    hd = ops.value_of(xhat).shape[-2]
    dzs, acts, _ = _inner_backward_cols(kind, w, xhat, y, gamma_col, beta_col, eps)
    dz_eta = tuple(ops.mul(dz, ops.bcast_rows(eta_row, ops.value_of(dz).shape[-2]))
                   for dz in dzs)
    w_next = tuple(ops.sub(wk, ops.matmul(dze, ops.transpose(act)))
                   for wk, dze, act in zip(w, dz_eta, acts))
    u = xbar
    for k in range(kind.n_mats):
        if k > 0:
            u = ops.gelu(zb)
        corr = ops.matmul(dz_eta[k], ops.causal_mask(
            ops.matmul(ops.transpose(acts[k]), u)))
        zb = ops.sub(ops.matmul(w[k], u), corr)
    if kind.bare:
        z = zb
    else:
        ln_out, _, _ = ops.ln_cols(zb, gamma_col, beta_col, eps)
        z = ops.add(xbar, ln_out)
    return w_next, z


def _chunk_fn(kind: InnerModelKind, form: str, eps: float, j0: int, j1: int):
    """Closure suitable for tape.checkpoint: slices the chunk out of the
    full projected views itself so the big arrays stay shared."""
    step = _dual_chunk if form == "dual" else _primal_chunk

    def fn(*args):
        n = kind.n_mats
        w = tuple(args[:n])
        xhat, xbar, y, eta_row = args[n:n + 4]
        rest = args[n + 4:]
        gamma_col, beta_col = (rest[0], rest[1]) if rest else (None, None)
        w2, z = step(kind, w,
                     ops.col_slice(xhat, j0, j1),
                     ops.col_slice(xbar, j0, j1),
                     ops.col_slice(y, j0, j1),
                     ops.col_slice(eta_row, j0, j1),
                     gamma_col, beta_col, eps)
        return w2 + (z,)

    return fn


def _forward_cols(kind: InnerModelKind, form: str, w: Weights, xhat: G,
                  xbar: G, y: G, eta_row: G, gamma_col: Optional[G],
                  beta_col: Optional[G], eps: float, b: int,
                  checkpoint: bool = False) -> Tuple[G, Weights]:
    t_total = ops.value_of(xhat).shape[-1]
    if t_total % b != 0:
        raise ShapeError(f"sequence length {t_total} not divisible by b={b}")
    step = _dual_chunk if form == "dual" else _primal_chunk
    use_ckpt = checkpoint and isinstance(xhat, Value)
    n = kind.n_mats
    if use_ckpt:
        tape = xhat.tape
        lift = lambda v: v if isinstance(v, Value) else tape.const(v.data)
        w = tuple(lift(wk) for wk in w)
        xbar, y, eta_row = lift(xbar), lift(y), lift(eta_row)
        if gamma_col is not None:
            gamma_col, beta_col = lift(gamma_col), lift(beta_col)
    z_chunks = []
    for j0 in range(0, t_total, b):
        j1 = j0 + b
        if use_ckpt:
            extras = (gamma_col, beta_col) if not kind.bare else ()
            outs = xhat.tape.checkpoint(
                _chunk_fn(kind, form, eps, j0, j1),
                list(w) + [xhat, xbar, y, eta_row] + list(extras))
            w = tuple(outs[:n])
            z_chunks.append(outs[n])
        else:
            w, z = step(kind, w,
                        ops.col_slice(xhat, j0, j1),
                        ops.col_slice(xbar, j0, j1),
                        ops.col_slice(y, j0, j1),
                        ops.col_slice(eta_row, j0, j1),
                        gamma_col, beta_col, eps)
            z_chunks.append(z)
    return ops.concat_cols(z_chunks), w


# -------------------------------------------------------------- full layer

def _flatten_heads(p: G) -> G:
    h, hd, ed = ops.value_of(p).shape
    return ops.reshape(p, (h * hd, ed))


def _eta_row_for(x: G, params: TTTLayerParams,
                 eta: Union[None, float, np.ndarray]) -> G:
    """Per-token step sizes as a (..., 1, T) row on x's batch layout."""
    xv = ops.value_of(x)
    t_total = xv.shape[-1]
    if eta is None:
        lr_row = ops.reshape(params.theta_lr, (1, params.embed_dim))
        gate = ops.sigmoid(ops.matmul(lr_row, x))
        return ops.scale(gate, params.eta_base)
    arr = np.asarray(eta, dtype=xv.dtype)
    if arr.ndim == 0:
        arr = np.full((t_total,), float(arr), dtype=xv.dtype)
    if arr.shape != (t_total,):
        raise ShapeError(f"eta override must be scalar or ({t_total},), "
                         f"got {arr.shape}")
    row = arr.reshape(1, t_total)
    if xv.ndim == 3:
        row = np.broadcast_to(row[None], (xv.shape[0], 1, t_total))
    return ops.constant(x, row)


def ttt_layer_batched(x3: G, params: TTTLayerParams, kind: InnerModelKind,
                      form: str, eta: Union[None, float, np.ndarray] = None,
                      checkpoint: bool = False) -> Tuple[G, Weights]:
    """Forward over a rank-3 stack (S, embed_dim, T) of sequences.

    Heads fold into the batch dimension: (S, ed, T) and (S*H, hd, T) are
    the same memory in C order, so the reshape is free and every chunk op
    runs once for all sequences and heads. Returns the outputs and the
    final inner weights stacked as (S*H, ...).
    """
    if form not in ("primal", "dual"):
        raise ShapeError(f"form must be primal or dual, got {form!r}")
    sv = ops.value_of(x3).shape
    if len(sv) != 3:
        raise ShapeError(f"rank-3 input (S, embed_dim, T) required, got {sv}")
    s_n, ed, t_total = sv
    if ed != params.embed_dim:
        raise ShapeError(f"embed dim {ed} != params embed dim {params.embed_dim}")
    h = params.heads
    hd = params.head_dim
    _check_w(kind, params.w0)

    def split(p: G) -> G:
        return ops.reshape(ops.matmul(_flatten_heads(p), x3), (s_n * h, hd, t_total))

    xhat = split(params.theta_k)
    xbar = split(params.theta_q)
    y = split(params.theta_v)
    eta_row = ops.repeat_batch(_eta_row_for(x3, params, eta), h)
    w = tuple(ops.tile_batch(wk, s_n) for wk in params.w0)
    if kind.bare:
        gamma_col = beta_col = None
    else:
        if params.ln_gamma is None or params.ln_beta is None:
            raise ShapeError("ln_gamma/ln_beta required unless bare mode")
        gamma_col = ops.tile_batch(_ln_col(params.ln_gamma), s_n)
        beta_col = ops.tile_batch(_ln_col(params.ln_beta), s_n)
    z, w_fin = _forward_cols(kind, form, w, xhat, xbar, y, eta_row,
                             gamma_col, beta_col, params.eps, params.b,
                             checkpoint=checkpoint)
    return ops.reshape(z, (s_n, ed, t_total)), w_fin


def multihead_forward(x: G, params: TTTLayerParams, kind: InnerModelKind,
                      form: str = "primal",
                      eta: Union[None, float, np.ndarray] = None) -> G:
    """Single sequence (embed_dim, T) in, concatenated head outputs out."""
    sv = ops.value_of(x).shape
    if len(sv) != 2:
        raise ShapeError(f"rank-2 input (embed_dim, T) required, got {sv}")
    x3 = ops.reshape(x, (1,) + sv)
    z3, _ = ttt_layer_batched(x3, params, kind, form, eta=eta)
    return ops.reshape(z3, sv)


def ttt_forward_primal(x: G, params: TTTLayerParams, kind: InnerModelKind,
                       eta: Union[None, float, np.ndarray] = None
                       ) -> Tuple[G, Weights]:
    """(outputs, final weights) for one sequence, explicit per-token steps."""
    sv = ops.value_of(x).shape
    x3 = ops.reshape(x, (1,) + tuple(sv))
    z3, w_fin = ttt_layer_batched(x3, params, kind, "primal", eta=eta)
    return ops.reshape(z3, sv), w_fin


def ttt_forward_dual(x: G, params: TTTLayerParams, kind: InnerModelKind,
                     eta: Union[None, float, np.ndarray] = None
                     ) -> Tuple[G, Weights]:
    """Same contract as ttt_forward_primal, evaluated chunk-at-a-time with
    matmuls and causal masks only."""
    sv = ops.value_of(x).shape
    x3 = ops.reshape(x, (1,) + tuple(sv))
    z3, w_fin = ttt_layer_batched(x3, params, kind, "dual", eta=eta)
    return ops.reshape(z3, sv), w_fin


# ---------------------------------------------------- single-token pieces

def eta_gate(x_t: Tensor, theta_lr: Tensor, eta_base: float) -> float:
    """eta_base * sigmoid(theta_lr . x); always inside (0, eta_base)."""
    from . import kernels as K
    dot = float(np.dot(np.asarray(theta_lr.data), np.asarray(x_t.data)))
    return float(eta_base * K.f_sigmoid(np.asarray(dot)))


def _project_token(params: TTTLayerParams, x_t: Tensor) -> Tuple[Tensor, ...]:
    ed = params.embed_dim
    h, hd = params.heads, params.head_dim
    xc = ops.reshape(x_t, (ed, 1))
    out = []
    for p in (params.theta_k, params.theta_q, params.theta_v):
        col = ops.matmul(_flatten_heads(p), xc)
        out.append(ops.reshape(col, (h, hd, 1)))
    return tuple(out)


def inner_model_apply(kind: InnerModelKind, w: Weights, x: G,
                      ln_gamma: Optional[G] = None,
                      ln_beta: Optional[G] = None,
                      eps: float = LN_EPS) -> G:
    """Inner model on one head-space vector: f_res directly in bare mode,
    x + LN(f_res(x)) otherwise."""
    _check_w(kind, w)
    sv = ops.value_of(x).shape
    if len(sv) != 1:
        raise ShapeError(f"rank-1 head vector required, got {sv}")
    rank3 = len(ops.value_of(w[0]).shape) == 3
    if rank3:
        hcount = ops.value_of(w[0]).shape[0]
        xc = ops.reshape(x, (hcount, sv[0] // hcount, 1))
    else:
        xc = ops.reshape(x, (sv[0], 1))
    gc = bc = None
    if not kind.bare:
        if ln_gamma is None or ln_beta is None:
            raise ShapeError("ln_gamma/ln_beta required unless bare mode")
        gc = _ln_col(ln_gamma) if len(ops.value_of(ln_gamma).shape) == 2 \
            else ops.reshape(ln_gamma, (ops.value_of(ln_gamma).shape[0], 1))
        bc = _ln_col(ln_beta) if len(ops.value_of(ln_beta).shape) == 2 \
            else ops.reshape(ln_beta, (ops.value_of(ln_beta).shape[0], 1))
    out = _apply_cols(kind, w, xc, gc, bc, eps)
    return ops.reshape(out, sv)


def inner_loss(kind: InnerModelKind, w: Weights, x_t: G,
               params: TTTLayerParams) -> G:
    """||f(theta_K x; W) - theta_V x||^2 summed over heads."""
    _check_w(kind, w)
    xc = ops.reshape(x_t, (params.embed_dim, 1))
    xhat = ops.reshape(ops.matmul(_flatten_heads(params.theta_k), xc),
                       (params.heads, params.head_dim, 1))
    y = ops.reshape(ops.matmul(_flatten_heads(params.theta_v), xc),
                    (params.heads, params.head_dim, 1))
    gc = _ln_col(params.ln_gamma) if not kind.bare else None
    bc = _ln_col(params.ln_beta) if not kind.bare else None
    out = _apply_cols(kind, w, xhat, gc, bc, params.eps)
    r = ops.sub(out, y)
    return ops.sum_all(ops.mul(r, r))


def inner_grad(kind: InnerModelKind, w_anchor: Weights, x_t: G,
               params: TTTLayerParams) -> Weights:
    """Exact gradient of inner_loss at the anchor weights, one stacked
    (H, ...) matrix per inner layer. Linear bare collapses to the closed
    form 2(W xhat - y) xhat^T."""
    _check_w(kind, w_anchor)
    xc = ops.reshape(x_t, (params.embed_dim, 1))
    xhat = ops.reshape(ops.matmul(_flatten_heads(params.theta_k), xc),
                       (params.heads, params.head_dim, 1))
    y = ops.reshape(ops.matmul(_flatten_heads(params.theta_v), xc),
                    (params.heads, params.head_dim, 1))
    gc = _ln_col(params.ln_gamma) if not kind.bare else None
    bc = _ln_col(params.ln_beta) if not kind.bare else None
    dzs, acts, _ = _inner_backward_cols(kind, w_anchor, xhat, y, gc, bc,
                                        params.eps)
    return tuple(ops.matmul(dz, ops.transpose(act))
                 for dz, act in zip(dzs, acts))


def ttt_step_primal(state: TTTState, x_t: Tensor, params: TTTLayerParams,
                    kind: InnerModelKind,
                    eta: Optional[float] = None) -> Tuple[TTTState, Tensor]:
    """One streaming token: gradient at the anchor, step, output with the
    updated weights. The anchor advances when the mini-batch fills."""
    _check_w(kind, state.w)
    anchor = state.anchor_w
    _, xbar, _ = _project_token(params, x_t)
    gc = _ln_col(params.ln_gamma) if not kind.bare else None
    bc = _ln_col(params.ln_beta) if not kind.bare else None
    # Module-level lookup on purpose: the verification mutation probe
    # swaps inner_grad out to prove the theorem checks detect a wrong
    # gradient, so this must not bind the function at import time.
    grads = inner_grad(kind, anchor, x_t, params)
    step_size = eta_gate(x_t, params.theta_lr, params.eta_base) \
        if eta is None else float(eta)
    new_w = []
    for wk, gk in zip(state.w, grads):
        new_w.append(ops.sub(wk, ops.scale(gk, step_size)))
    w_t = tuple(new_w)
    z = _apply_cols(kind, w_t, xbar, gc, bc, params.eps)
    z_flat = ops.reshape(z, (params.embed_dim,))
    pos = state.pos + 1
    if pos == params.b:
        return TTTState(w=w_t, anchor_w=w_t, pos=0), z_flat
    return TTTState(w=w_t, anchor_w=anchor, pos=pos), z_flat


# ------------------------------------------------------------------ setup

def init_ttt_params(rng: np.random.Generator, embed_dim: int, heads: int,
                    kind: InnerModelKind, b: int,
                    eta_base: Optional[float] = None) -> TTTLayerParams:
    """Fresh layer parameters: scaled-normal projections, zero gate vector
    (every step size starts at eta_base/2), zero linear inner weights or
    fan-in-uniform MLP weights, unit inner norm."""
    if embed_dim % heads != 0:
        raise ShapeError(f"heads {heads} must divide embed_dim {embed_dim}")
    hd = embed_dim // heads
    dt = active_dtype()
    sc = 1.0 / np.sqrt(embed_dim)

    def proj():
        return Tensor(rng.normal(0.0, sc, (heads, hd, embed_dim)), dtype=dt)

    if kind.is_mlp:
        lim1 = 1.0 / np.sqrt(hd)
        lim2 = 1.0 / np.sqrt(4 * hd)
        w0 = (Tensor(rng.uniform(-lim1, lim1, (heads, 4 * hd, hd)), dtype=dt),
              Tensor(rng.uniform(-lim2, lim2, (heads, hd, 4 * hd)), dtype=dt))
        base = 0.1 if eta_base is None else eta_base
    else:
        w0 = (Tensor(np.zeros((heads, hd, hd)), dtype=dt),)
        base = 1.0 if eta_base is None else eta_base
    return TTTLayerParams(
        theta_k=proj(), theta_q=proj(), theta_v=proj(), w0=w0,
        theta_lr=Tensor(np.zeros(embed_dim), dtype=dt), eta_base=base, b=b,
        ln_gamma=None if kind.bare else Tensor(np.ones((heads, hd)), dtype=dt),
        ln_beta=None if kind.bare else Tensor(np.zeros((heads, hd)), dtype=dt),
    )
