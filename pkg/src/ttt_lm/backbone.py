"""Residual-block language model around the sequence layers.

Two block flavors share the embedding/head scaffolding:

  TransformerStyle: x + W_o LN(SeqCore(LN(x))), then x + MLP(LN(x)).
    The extra LN between the sequence core and the output projection
    keeps the residual branch normalized.
  MambaStyle: u = LN(x); a GELU gate W_gate u multiplies the sequence
    core's output on the conv-filtered stream W_in u; the train and test
    views of the core share one projection. Then the same MLP block.

Residual output projections (w_o / w_out, mlp.w2) and the LM head start
at zero, so a fresh deep model computes exactly the 0-block model and
its initial loss is ln(vocab).

Parameters live in a flat name -> tensor mapping (dotted block
prefixes), which the optimizer and checkpoint modules treat as the
single source of truth for ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import ops
from .autodiff import Value
from .errors import ConfigError, ShapeError
from .layer import (InnerModelKind, TTTLayerParams, initial_state,
                    ttt_layer_batched, ttt_step_primal)
from .ops import G
from .precision import active_dtype
from .tensor import LN_EPS, Tensor

BACKBONE_KINDS = ("TransformerStyle", "MambaStyle")
SEQ_LAYER_KINDS = ("TTTLinear", "TTTMLP", "SoftmaxAttention")


@dataclass(frozen=True)
class BlockConfig:
    backbone_kind: str = "TransformerStyle"
    seq_layer_kind: str = "TTTLinear"
    embed_dim: int = 64
    heads: int = 4
    conv_width: int = 4
    ttt_b: int = 16
    bare_mode: bool = False
    eta_base: Optional[float] = None  # None -> 1.0 linear, 0.1 mlp

    def __post_init__(self):
        if self.backbone_kind not in BACKBONE_KINDS:
            raise ConfigError(f"backbone_kind must be one of {BACKBONE_KINDS}, "
                              f"got {self.backbone_kind!r}")
        if self.seq_layer_kind not in SEQ_LAYER_KINDS:
            raise ConfigError(f"seq_layer_kind must be one of "
                              f"{SEQ_LAYER_KINDS}, got {self.seq_layer_kind!r}")
        if self.embed_dim < 1 or self.heads < 1:
            raise ConfigError("embed_dim and heads must be positive")
        if self.embed_dim % self.heads != 0:
            raise ConfigError(f"heads {self.heads} must divide embed_dim "
                              f"{self.embed_dim}")
        if self.conv_width < 1:
            raise ConfigError(f"conv_width must be >= 1, got {self.conv_width}")
        if self.ttt_b < 1:
            raise ConfigError(f"ttt_b must be >= 1, got {self.ttt_b}")
        if self.eta_base is not None and not self.eta_base > 0:
            raise ConfigError(f"eta_base must be > 0, got {self.eta_base}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def mlp_hidden(self) -> int:
        return 4 * self.embed_dim

    @property
    def is_ttt(self) -> bool:
        return self.seq_layer_kind in ("TTTLinear", "TTTMLP")

    @property
    def shared_kq(self) -> bool:
        return self.backbone_kind == "MambaStyle"

    def inner_kind(self) -> InnerModelKind:
        model = "mlp2" if self.seq_layer_kind == "TTTMLP" else "linear"
        return InnerModelKind(model, bare=self.bare_mode)

    def eta_base_value(self) -> float:
        if self.eta_base is not None:
            return self.eta_base
        return 0.1 if self.seq_layer_kind == "TTTMLP" else 1.0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    n_blocks: int = 2
    block: BlockConfig = field(default_factory=BlockConfig)
    T: int = 256
    tie_embeddings: bool = False
    pos_embed: bool = False

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.n_blocks < 0:
            raise ConfigError(f"n_blocks must be >= 0, got {self.n_blocks}")
        if self.T < 2:
            raise ConfigError(f"context length T must be >= 2, got {self.T}")
        if self.block.is_ttt and self.T % self.block.ttt_b != 0:
            raise ConfigError(f"T={self.T} must be divisible by the layer "
                              f"mini-batch b={self.block.ttt_b}")


# ------------------------------------------------------- parameter store

def subparams(params: Mapping[str, G], prefix: str) -> Dict[str, G]:
    return {k[len(prefix):]: v for k, v in params.items()
            if k.startswith(prefix)}


def _block_param_shapes(cfg: BlockConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    ed, h, hd = cfg.embed_dim, cfg.heads, cfg.head_dim
    out: List[Tuple[str, Tuple[int, ...], str]] = [
        ("ln1.gamma", (ed,), "ones"), ("ln1.beta", (ed,), "zeros")]
    sl = "ttt" if cfg.is_ttt else "attn"
    if cfg.shared_kq:
        out += [(f"{sl}.theta_kq", (h, hd, ed), "proj")]
    else:
        out += [(f"{sl}.theta_k", (h, hd, ed), "proj"),
                (f"{sl}.theta_q", (h, hd, ed), "proj")]
    out += [(f"{sl}.theta_v", (h, hd, ed), "proj")]
    if cfg.is_ttt:
        if cfg.seq_layer_kind == "TTTMLP":
            out += [("ttt.w0.0", (h, 4 * hd, hd), "fan_in"),
                    ("ttt.w0.1", (h, hd, 4 * hd), "fan_in")]
        else:
            out += [("ttt.w0.0", (h, hd, hd), "zeros")]
        out += [("ttt.theta_lr", (ed,), "zeros")]
        if not cfg.bare_mode:
            out += [("ttt.ln_gamma", (h, hd), "ones"),
                    ("ttt.ln_beta", (h, hd), "zeros")]
    if cfg.backbone_kind == "TransformerStyle":
        out += [("ln_seq.gamma", (ed,), "ones"), ("ln_seq.beta", (ed,), "zeros"),
                ("w_o", (ed, ed), "zeros")]
    else:
        out += [("w_gate", (ed, ed), "proj"), ("w_in", (ed, ed), "proj"),
                ("conv.kernels", (ed, cfg.conv_width), "conv_id"),
                ("w_out", (ed, ed), "zeros")]
    out += [("ln2.gamma", (ed,), "ones"), ("ln2.beta", (ed,), "zeros"),
            ("mlp.w1", (cfg.mlp_hidden, ed), "proj"),
            ("mlp.w2", (ed, cfg.mlp_hidden), "zeros")]
    return out


def param_shapes(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    """Every parameter's (name, shape, init scheme), in canonical order."""
    out: List[Tuple[str, Tuple[int, ...], str]] = [
        ("embed", (cfg.block.embed_dim, cfg.vocab_size), "embed")]
    if cfg.pos_embed:
        out.append(("pos", (cfg.block.embed_dim, cfg.T), "embed"))
    for i in range(cfg.n_blocks):
        out += [(f"blocks.{i}.{n}", s, k)
                for n, s, k in _block_param_shapes(cfg.block)]
    ed = cfg.block.embed_dim
    out += [("ln_f.gamma", (ed,), "ones"), ("ln_f.beta", (ed,), "zeros")]
    if not cfg.tie_embeddings:
        out.append(("head", (cfg.vocab_size, ed), "zeros"))
    return out


def init_model_params(cfg: ModelConfig,
                      rng: np.random.Generator) -> Dict[str, Tensor]:
    dt = active_dtype()
    ed = cfg.block.embed_dim
    params: Dict[str, Tensor] = {}
    for name, shape, kind in param_shapes(cfg):
        if kind == "zeros":
            a = np.zeros(shape)
        elif kind == "ones":
            a = np.ones(shape)
        elif kind == "embed":
            a = rng.normal(0.0, 0.02, shape)
        elif kind == "proj":
            a = rng.normal(0.0, 1.0 / np.sqrt(ed), shape)
        elif kind == "fan_in":
            lim = 1.0 / np.sqrt(shape[-1])
            a = rng.uniform(-lim, lim, shape)
        elif kind == "conv_id":
            # start as the identity filter: only the current-time tap fires
            a = np.zeros(shape)
            a[:, -1] = 1.0
        else:
            raise ConfigError(f"unknown init scheme {kind!r}")
        params[name] = Tensor(a, dtype=dt)
    return params


def count_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for _, s, _ in param_shapes(cfg))


# ------------------------------------------------------------- forwards

def _flat_heads(p: G) -> G:
    h, hd, ed = ops.value_of(p).shape
    return ops.reshape(p, (h * hd, ed))


def _ln_wrap(x: G, gamma: G, beta: G) -> G:
    """Column layer norm with rank-1 (embed_dim,) parameters."""
    v = ops.value_of(x)
    d = v.shape[-2]
    gc = ops.reshape(gamma, (d, 1))
    bc = ops.reshape(beta, (d, 1))
    if v.ndim == 3:
        gc = ops.tile_batch(gc, v.shape[0])
        bc = ops.tile_batch(bc, v.shape[0])
    out, _, _ = ops.ln_cols(x, gc, bc, LN_EPS)
    return out


def causal_conv1d(x: G, kernels: G) -> G:
    """Depthwise conv along time, left zero padding: output column t mixes
    input columns t-conv_width+1 .. t with per-channel taps (tap j applies
    to the column conv_width-1-j steps back; the last tap is current-time)."""
    xv = ops.value_of(x)
    kv = ops.value_of(kernels)
    if len(kv.shape) != 2:
        raise ShapeError(f"kernels must be rank-2 (channels, width), got {kv.shape}")
    d, cw = kv.shape
    if xv.shape[-2] != d:
        raise ShapeError(f"channel mismatch: input {xv.shape} vs kernels {kv.shape}")
    t_total = xv.shape[-1]
    batched = len(xv.shape) == 3
    acc = None
    for j in range(cw):
        shift = cw - 1 - j
        if shift >= t_total:
            continue
        tap = ops.col_slice(kernels, j, j + 1)
        if batched:
            tap = ops.tile_batch(tap, xv.shape[0])
        tap = ops.bcast_cols(tap, t_total)
        if shift == 0:
            shifted = x
        else:
            pad_shape = xv.shape[:-1] + (shift,)
            shifted = ops.concat_cols(
                [ops.zeros_const(x, pad_shape), ops.col_slice(x, 0, t_total - shift)])
        term = ops.mul(tap, shifted)
        acc = term if acc is None else ops.add(acc, term)
    return acc


def _ttt_layer_params(p: Mapping[str, G], cfg: BlockConfig,
                      eta_base_scale: float) -> TTTLayerParams:
    tk = p["ttt.theta_kq"] if cfg.shared_kq else p["ttt.theta_k"]
    tq = tk if cfg.shared_kq else p["ttt.theta_q"]
    w0: Tuple[G, ...] = (p["ttt.w0.0"],)
    if cfg.seq_layer_kind == "TTTMLP":
        w0 = w0 + (p["ttt.w0.1"],)
    return TTTLayerParams(
        theta_k=tk, theta_q=tq, theta_v=p["ttt.theta_v"], w0=w0,
        theta_lr=p["ttt.theta_lr"],
        eta_base=cfg.eta_base_value() * eta_base_scale, b=cfg.ttt_b,
        ln_gamma=None if cfg.bare_mode else p["ttt.ln_gamma"],
        ln_beta=None if cfg.bare_mode else p["ttt.ln_beta"])


def _attention_core(u3: G, p: Mapping[str, G], cfg: BlockConfig) -> G:
    s_n, ed, t_total = ops.value_of(u3).shape
    h, hd = cfg.heads, cfg.head_dim

    def split(t: G) -> G:
        return ops.reshape(ops.matmul(_flat_heads(t), u3), (s_n * h, hd, t_total))

    if cfg.shared_kq:
        k = split(p["attn.theta_kq"])
        q = k
    else:
        k = split(p["attn.theta_k"])
        q = split(p["attn.theta_q"])
    v = split(p["attn.theta_v"])
    weights = ops.softmax_cols_masked(ops.matmul(ops.transpose(k), q))
    z = ops.matmul(v, weights)
    return ops.reshape(z, (s_n, ed, t_total))


def _seq_core(u3: G, p: Mapping[str, G], cfg: BlockConfig, form: str,
              eta_base_scale: float, checkpoint: bool) -> G:
    if cfg.is_ttt:
        lp = _ttt_layer_params(p, cfg, eta_base_scale)
        z3, _ = ttt_layer_batched(u3, lp, cfg.inner_kind(), form,
                                  checkpoint=checkpoint)
        return z3
    return _attention_core(u3, p, cfg)


def _mlp(x: G, p: Mapping[str, G]) -> G:
    return ops.matmul(p["mlp.w2"], ops.gelu(ops.matmul(p["mlp.w1"], x)))


def block_forward(x: G, cfg: BlockConfig, params: Mapping[str, G],
                  form: str = "dual", eta_base_scale: float = 1.0,
                  checkpoint: bool = False) -> G:
    """One residual block; accepts (embed_dim, T) or (S, embed_dim, T)."""
    sv = ops.value_of(x).shape
    rank2 = len(sv) == 2
    if rank2:
        x = ops.reshape(x, (1,) + tuple(sv))
    u = _ln_wrap(x, params["ln1.gamma"], params["ln1.beta"])
    if cfg.backbone_kind == "TransformerStyle":
        core = _seq_core(u, params, cfg, form, eta_base_scale, checkpoint)
        core = _ln_wrap(core, params["ln_seq.gamma"], params["ln_seq.beta"])
        x = ops.add(x, ops.matmul(params["w_o"], core))
    else:
        gate = ops.gelu(ops.matmul(params["w_gate"], u))
        stream = causal_conv1d(ops.matmul(params["w_in"], u),
                               params["conv.kernels"])
        core = _seq_core(stream, params, cfg, form, eta_base_scale, checkpoint)
        x = ops.add(x, ops.matmul(params["w_out"], ops.mul(gate, core)))
    u2 = _ln_wrap(x, params["ln2.gamma"], params["ln2.beta"])
    x = ops.add(x, _mlp(u2, params))
    if rank2:
        x = ops.reshape(x, tuple(sv))
    return x


def _block_ckpt_fn(cfg: BlockConfig, names: List[str], form: str,
                   eta_base_scale: float):
    def fn(x3, *pvals):
        pmap = dict(zip(names, pvals))
        return (block_forward(x3, cfg, pmap, form,
                              eta_base_scale=eta_base_scale, checkpoint=True),)
    return fn


def lm_forward(tokens: np.ndarray, cfg: ModelConfig, params: Mapping[str, G],
               form: str = "dual", checkpoint: bool = False,
               eta_base_scale: float = 1.0) -> G:
    """Logits (S, vocab, T) for a batch of byte sequences (S, T)."""
    idx = np.asarray(tokens)
    if idx.ndim == 1:
        idx = idx[None, :]
    if idx.ndim != 2:
        raise ShapeError(f"tokens must be (S, T) or (T,), got {idx.shape}")
    s_n, t_total = idx.shape
    x3 = ops.embed(params["embed"], idx)
    if cfg.pos_embed:
        if t_total > cfg.T:
            raise ShapeError(f"sequence length {t_total} exceeds positional "
                             f"table length {cfg.T}")
        pos = ops.col_slice(params["pos"], 0, t_total)
        x3 = ops.add(x3, ops.tile_batch(pos, s_n))
    use_ckpt = checkpoint and isinstance(x3, Value)
    for i in range(cfg.n_blocks):
        bp = subparams(params, f"blocks.{i}.")
        if use_ckpt:
            tape = x3.tape
            names = sorted(bp)
            vals = [bp[n] if isinstance(bp[n], Value) else tape.const(bp[n].data)
                    for n in names]
            (x3,) = tape.checkpoint(
                _block_ckpt_fn(cfg.block, names, form, eta_base_scale),
                [x3] + vals)
        else:
            x3 = block_forward(x3, cfg.block, bp, form,
                               eta_base_scale=eta_base_scale)
    u = _ln_wrap(x3, params["ln_f.gamma"], params["ln_f.beta"])
    head = ops.transpose(params["embed"]) if cfg.tie_embeddings \
        else params["head"]
    return ops.matmul(head, u)


def next_token_nll(logits: G, tokens: np.ndarray) -> G:
    """Per-position negative log likelihood, (S, 1, T-1): position t scores
    the prediction of token t+1 from logits column t."""
    lv = ops.value_of(logits)
    if lv.ndim != 3:
        raise ShapeError(f"logits must be rank-3 (S, vocab, T), got {lv.shape}")
    idx = np.asarray(tokens)
    if idx.ndim == 1:
        idx = idx[None, :]
    s_n, t_total = idx.shape
    if lv.shape[0] != s_n or lv.shape[2] != t_total:
        raise ShapeError(f"logits {lv.shape} do not match tokens {idx.shape}")
    if t_total < 2:
        raise ShapeError(f"need at least 2 tokens for next-token loss, "
                         f"got {t_total}")
    pred = ops.col_slice(logits, 0, t_total - 1)
    targets = idx[:, 1:]
    vocab = lv.shape[1]
    shifted = ops.sub(pred, ops.bcast_rows(ops.colmax_const(pred), vocab))
    lse = ops.log(ops.rowsum(ops.exp(shifted)))
    gold = ops.gather_rows(shifted, targets)
    return ops.sub(lse, gold)


def next_token_loss(logits: G, tokens: np.ndarray) -> G:
    """Mean cross-entropy of each position's logits against the following
    token (scalar)."""
    nll = next_token_nll(logits, tokens)
    n = ops.value_of(nll).size
    return ops.scale(ops.sum_all(nll), 1.0 / n)


# ------------------------------------------------------ streaming decode

class _AttnCache:
    __slots__ = ("k", "v")

    def __init__(self, heads: int, head_dim: int, dtype):
        self.k = np.zeros((heads, head_dim, 0), dtype=dtype)
        self.v = np.zeros((heads, head_dim, 0), dtype=dtype)


class DecodeSession:
    """Token-at-a-time forward with the same arithmetic as the batch path.

    The sequence layers run in primal streaming form: inner weights step
    per token and the mini-batch anchor advances every b tokens, exactly
    as in training. Attention keeps a key/value cache; the Mamba-style
    conv keeps a ring buffer of its last columns.
    """

    def __init__(self, cfg: ModelConfig, params: Mapping[str, Tensor]):
        self.cfg = cfg
        self.params = params
        self.t = 0
        dt = params["embed"].dtype
        self._states: List[dict] = []
        for i in range(cfg.n_blocks):
            bp = subparams(params, f"blocks.{i}.")
            st: dict = {"p": bp}
            if cfg.block.is_ttt:
                st["ttt"] = initial_state(
                    _ttt_layer_params(bp, cfg.block, 1.0))
            else:
                st["attn"] = _AttnCache(cfg.block.heads, cfg.block.head_dim, dt)
            if cfg.block.backbone_kind == "MambaStyle":
                st["conv"] = np.zeros(
                    (cfg.block.embed_dim, cfg.block.conv_width), dtype=dt)
            self._states.append(st)

    def _attn_step(self, st: dict, u_col: Tensor) -> Tensor:
        cfg = self.cfg.block
        p = st["p"]
        h, hd, ed = cfg.heads, cfg.head_dim, cfg.embed_dim
        cache: _AttnCache = st["attn"]

        def proj(t: Tensor) -> np.ndarray:
            return (t.data.reshape(h * hd, ed) @ u_col.data).reshape(h, hd, 1)

        if cfg.shared_kq:
            k_new = proj(p["attn.theta_kq"])
            q_new = k_new
        else:
            k_new = proj(p["attn.theta_k"])
            q_new = proj(p["attn.theta_q"])
        v_new = proj(p["attn.theta_v"])
        cache.k = np.concatenate([cache.k, k_new], axis=2)
        cache.v = np.concatenate([cache.v, v_new], axis=2)
        scores = np.matmul(np.swapaxes(cache.k, 1, 2), q_new)  # (h, t, 1)
        m = np.maximum(scores.max(axis=1, keepdims=True), 0.0)
        e = np.exp(scores - m)
        w = e / e.sum(axis=1, keepdims=True)
        z = np.matmul(cache.v, w)  # (h, hd, 1)
        return Tensor._wrap(np.ascontiguousarray(z.reshape(ed, 1)))

    def _block_step(self, i: int, x_col: Tensor) -> Tensor:
        cfg = self.cfg.block
        st = self._states[i]
        p = st["p"]
        u = _ln_wrap(x_col, p["ln1.gamma"], p["ln1.beta"])
        if cfg.backbone_kind == "TransformerStyle":
            if cfg.is_ttt:
                st["ttt"], z = ttt_step_primal(
                    st["ttt"], ops.reshape(u, (cfg.embed_dim,)),
                    _ttt_layer_params(p, cfg, 1.0), cfg.inner_kind())
                core = ops.reshape(z, (cfg.embed_dim, 1))
            else:
                core = self._attn_step(st, u)
            core = _ln_wrap(core, p["ln_seq.gamma"], p["ln_seq.beta"])
            x_col = ops.add(x_col, ops.matmul(p["w_o"], core))
        else:
            gate = ops.gelu(ops.matmul(p["w_gate"], u))
            s_col = ops.matmul(p["w_in"], u)
            buf = np.concatenate([st["conv"][:, 1:], s_col.data], axis=1)
            st["conv"] = buf
            conv_col = (p["conv.kernels"].data * buf).sum(axis=1, keepdims=True)
            stream = Tensor._wrap(np.ascontiguousarray(conv_col))
            if cfg.is_ttt:
                st["ttt"], z = ttt_step_primal(
                    st["ttt"], ops.reshape(stream, (cfg.embed_dim,)),
                    _ttt_layer_params(p, cfg, 1.0), cfg.inner_kind())
                core = ops.reshape(z, (cfg.embed_dim, 1))
            else:
                core = self._attn_step(st, stream)
            x_col = ops.add(x_col, ops.matmul(p["w_out"], ops.mul(gate, core)))
        u2 = _ln_wrap(x_col, p["ln2.gamma"], p["ln2.beta"])
        return ops.add(x_col, _mlp(u2, p))

    def step(self, token: int) -> np.ndarray:
        """Consume one byte, return the next-token logits column (vocab,)."""
        cfg = self.cfg
        if not 0 <= int(token) < cfg.vocab_size:
            raise ShapeError(f"token {token} out of range [0, {cfg.vocab_size})")
        if cfg.pos_embed and self.t >= cfg.T:
            raise ShapeError(f"positional table exhausted at length {cfg.T}")
        col = self.params["embed"].data[:, int(token)][:, None]
        if cfg.pos_embed:
            col = col + self.params["pos"].data[:, self.t][:, None]
        x = Tensor._wrap(np.ascontiguousarray(col))
        for i in range(cfg.n_blocks):
            x = self._block_step(i, x)
        u = _ln_wrap(x, self.params["ln_f.gamma"], self.params["ln_f.beta"])
        head = ops.transpose(self.params["embed"]) if cfg.tie_embeddings \
            else self.params["head"]
        logits = ops.matmul(head, u)
        self.t += 1
        return ops.value_of(logits)[:, 0]


def generate(cfg: ModelConfig, params: Mapping[str, Tensor],
             prompt: bytes, n: int) -> bytes:
    """Greedy decode of n bytes after feeding the prompt token by token."""
    if len(prompt) == 0:
        raise ShapeError("prompt must contain at least one byte")
    session = DecodeSession(cfg, params)
    logits = np.zeros(cfg.vocab_size)
    for tok in prompt:
        logits = session.step(int(tok))
    out = []
    for i in range(n):
        nxt = int(np.argmax(logits))
        out.append(nxt)
        if i + 1 < n:
            logits = session.step(nxt)
    return bytes(out)
