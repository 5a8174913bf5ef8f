"""Outer-loop optimizer: decoupled-weight-decay Adam with global-norm
gradient clipping, plus the warmup/cosine learning-rate schedule.

Everything is functional over flat name -> array mappings, iterated in
sorted-name order so updates and norms are reproducible bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import ConfigError, NumericAbort
from .tensor import Tensor


@dataclass(frozen=True)
class OptConfig:
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    grad_clip: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError(f"betas must be in [0, 1): {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be > 0, got {self.grad_clip}")


@dataclass
class OptState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def init_opt_state(params: Mapping[str, Tensor]) -> OptState:
    state = OptState()
    for name in sorted(params):
        p = params[name].data
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    total = 0.0
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        total += float((g * g).sum())
    return math.sqrt(total)


def clip_grads(grads: Mapping[str, np.ndarray],
               max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients by one factor so the global norm is <= max_norm.
    Returns (clipped, pre-clip norm)."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    factor = max_norm / norm
    return {k: np.asarray(g) * factor for k, g in grads.items()}, norm


def optimizer_step(params: Mapping[str, Tensor],
                   grads: Mapping[str, np.ndarray],
                   state: OptState, lr: float, cfg: OptConfig,
                   ) -> Tuple[Dict[str, Tensor], OptState]:
    """One decoupled-weight-decay adaptive-moment update.

    Only names present in grads move (frozen parameters are simply not
    passed); moments are kept for every parameter so freezing and
    unfreezing round-trips through checkpoints. Non-finite gradients
    abort, naming the offending parameter.
    """
    for name in sorted(grads):
        if name not in params:
            raise ConfigError(f"gradient for unknown parameter {name!r}")
        if not np.all(np.isfinite(np.asarray(grads[name]))):
            raise NumericAbort(f"non-finite gradient for parameter {name!r}")
    t = state.step + 1
    new_state = OptState(step=t, m=dict(state.m), v=dict(state.v))
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    out: Dict[str, Tensor] = dict(params)
    for name in sorted(grads):
        g = np.asarray(grads[name])
        p = params[name].data
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape "
                              f"{p.shape} for {name!r}")
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        new_state.m[name] = m
        new_state.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        stepped = p - lr * update - lr * cfg.weight_decay * p
        out[name] = Tensor(stepped, dtype=p.dtype)
    return out, new_state


def lr_schedule(step: int, total: int, peak: float, end: float = 1e-5,
                warmup_frac: float = 0.1) -> float:
    """Linear 0 -> peak over the warmup span, then cosine peak -> end,
    hitting end exactly at step == total. Callers use 1-based steps so the
    first update has a nonzero rate."""
    if total < 1:
        raise ConfigError(f"total steps must be >= 1, got {total}")
    if not 0.0 < warmup_frac < 1.0:
        raise ConfigError(f"warmup_frac must be in (0, 1), got {warmup_frac}")
    warmup = max(1.0, warmup_frac * total)
    s = float(min(max(step, 0), total))
    if s <= warmup:
        return peak * s / warmup
    frac = (s - warmup) / (total - warmup)
    return end + 0.5 * (peak - end) * (1.0 + math.cos(math.pi * frac))


def eta_base_warmup(step: int, total: int, warmup_frac: float = 0.1) -> float:
    """Multiplier for the inner-loop base step size: linear 0 -> 1 over the
    first warmup_frac of training, 1 afterwards (1-based steps)."""
    warmup = max(1.0, warmup_frac * total)
    return float(min(max(step, 0), warmup) / warmup)
