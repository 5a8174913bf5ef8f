"""Outer training loop, evaluation, and run artifacts.

One training step draws tokens_per_batch bytes as (S, T) sequences,
accumulates gradients over fixed-size micro batches (plain summation in
a fixed order, so the split never changes the math beyond rounding),
clips, and applies the optimizer. The dual form plus whole-block
recompute checkpoints keep peak memory flat in sequence count.

Run artifacts under out_dir:
  metrics.csv   deterministic per-step columns (step, loss, lr,
                grad_norm, val_ppl) - byte-identical across same-seed
                reruns in 64-bit mode
  timings.csv   wall-clock ms per step, kept apart so timing noise never
                touches the deterministic file
  summary.json  final stats, environment notes, per-index NLL curve
  init.ckpt / last.ckpt  parameter + optimizer-moment snapshots
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import ops
from .autodiff import Tape, backward
from .backbone import (BlockConfig, ModelConfig, init_model_params, lm_forward,
                       next_token_loss, next_token_nll, count_params,
                       param_shapes)
from .checkpoint import checkpoint_load, checkpoint_save, expect_shapes
from .data import batch_stream, iter_batches, load_corpus, synthetic_corpus
from .errors import ConfigError, FiniteError, NumericAbort
from .optim import (OptConfig, OptState, clip_grads, eta_base_warmup,
                    init_opt_state, lr_schedule, optimizer_step)
from .precision import precision_name
from .tensor import Tensor


def _from_dict(cls, d: Mapping, where: str):
    if not isinstance(d, Mapping):
        raise ConfigError(f"{where} must be an object, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config keys in {where}: {unknown}")
    return dict(d)


def block_config_from_dict(d: Mapping) -> BlockConfig:
    return BlockConfig(**_from_dict(BlockConfig, d, "model.block"))


def model_config_from_dict(d: Mapping) -> ModelConfig:
    kw = _from_dict(ModelConfig, d, "model")
    if "block" in kw:
        kw["block"] = block_config_from_dict(kw["block"])
    return ModelConfig(**kw)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    opt: OptConfig = field(default_factory=OptConfig)
    steps: int = 100
    peak_lr: float = 1e-3
    end_lr: float = 1e-5
    warmup_frac: float = 0.1
    tokens_per_batch: Optional[int] = None  # None -> 32 * T
    micro_batch_size: Optional[int] = None  # None -> whole batch at once
    form: str = "dual"
    seed: int = 0
    data_path: Optional[str] = None  # None -> synthetic corpus
    synthetic_bytes: int = 500_000
    split_frac: float = 0.9
    eval_interval: int = 0  # 0 -> evaluate only at the end
    checkpoint_interval: int = 0  # 0 -> only init and final snapshots
    out_dir: str = "runs/default"
    learnable_w0: bool = True
    learnable_eta: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must be in (0, 1), "
                              f"got {self.warmup_frac}")
        if self.peak_lr <= 0 or self.end_lr < 0:
            raise ConfigError(f"need peak_lr > 0 and end_lr >= 0, got "
                              f"{self.peak_lr}, {self.end_lr}")
        if self.form not in ("primal", "dual"):
            raise ConfigError(f"form must be primal or dual, got {self.form!r}")
        if not 0.0 < self.split_frac < 1.0:
            raise ConfigError(f"split_frac must be in (0, 1), "
                              f"got {self.split_frac}")
        if self.eval_interval < 0 or self.checkpoint_interval < 0:
            raise ConfigError("eval_interval and checkpoint_interval must "
                              "be >= 0")
        if self.synthetic_bytes < 2 * self.model.T:
            raise ConfigError(f"synthetic_bytes {self.synthetic_bytes} below "
                              f"the 2*T minimum {2 * self.model.T}")
        t = self.model.T
        tpb = self.tokens_per_batch_value()
        if tpb % t != 0:
            raise ConfigError(f"tokens_per_batch {tpb} must be divisible by "
                              f"T={t}")
        s = tpb // t
        mb = self.micro_batch_value()
        if s % mb != 0:
            raise ConfigError(f"micro_batch_size {mb} must divide the "
                              f"{s} sequences per batch")

    def tokens_per_batch_value(self) -> int:
        return 32 * self.model.T if self.tokens_per_batch is None \
            else self.tokens_per_batch

    def micro_batch_value(self) -> int:
        s = self.tokens_per_batch_value() // self.model.T
        return s if self.micro_batch_size is None else self.micro_batch_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        kw = _from_dict(cls, d, "config")
        if "model" in kw:
            kw["model"] = model_config_from_dict(kw["model"])
        if "opt" in kw:
            kw["opt"] = OptConfig(**_from_dict(OptConfig, kw["opt"],
                                               "config.opt"))
        return cls(**kw)

    @classmethod
    def from_json(cls, path: str) -> "TrainConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") \
                from None
        return cls.from_dict(d)


@dataclass
class MetricsRecord:
    step: int
    loss: float
    lr: float
    grad_norm: float
    val_ppl: Optional[float] = None
    ms: Optional[float] = None
    per_index_nll: Optional[List[float]] = None


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.17g}"


class _RunFiles:
    def __init__(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        self.metrics_path = os.path.join(out_dir, "metrics.csv")
        self.timings_path = os.path.join(out_dir, "timings.csv")
        with open(self.metrics_path, "w") as f:
            f.write("step,loss,lr,grad_norm,val_ppl\n")
        with open(self.timings_path, "w") as f:
            f.write("step,ms\n")

    def append(self, rec: MetricsRecord) -> None:
        with open(self.metrics_path, "a") as f:
            f.write(f"{rec.step},{_fmt(rec.loss)},{_fmt(rec.lr)},"
                    f"{_fmt(rec.grad_norm)},{_fmt(rec.val_ppl)}\n")
        if rec.ms is not None:
            with open(self.timings_path, "a") as f:
                f.write(f"{rec.step},{rec.ms:.3f}\n")


def _trainable_names(cfg: TrainConfig) -> List[str]:
    names = [n for n, _, _ in param_shapes(cfg.model)]
    out = []
    for n in names:
        if not cfg.learnable_w0 and ".ttt.w0." in n:
            continue
        if not cfg.learnable_eta and n.endswith("ttt.theta_lr"):
            continue
        out.append(n)
    return out


def batch_loss_and_grads(cfg: TrainConfig, params: Mapping[str, Tensor],
                         tokens: np.ndarray, eta_scale: float
                         ) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean next-token loss over the (S, T) batch and its parameter
    gradients, accumulated over micro batches in fixed order."""
    trainable = set(_trainable_names(cfg))
    mb = cfg.micro_batch_value()
    s_total = tokens.shape[0]
    n_micro = s_total // mb
    acc: Dict[str, np.ndarray] = {}
    loss_sum = 0.0
    for i in range(n_micro):
        chunk = tokens[i * mb: (i + 1) * mb]
        tape = Tape()
        pmap = {}
        handles = {}
        for name in sorted(params):
            if name in trainable:
                handles[name] = tape.param(params[name].data)
                pmap[name] = handles[name]
            else:
                pmap[name] = tape.const(params[name].data)
        # A diverging model can overflow mid-forward or mid-backward
        # before a non-finite loss is ever observed; every such case is
        # the same abort.
        try:
            logits = lm_forward(chunk, cfg.model, pmap, form=cfg.form,
                                checkpoint=True, eta_base_scale=eta_scale)
            loss = next_token_loss(logits, chunk)
            lval = float(loss.value)
            if not np.isfinite(lval):
                raise NumericAbort(f"non-finite loss {lval} in micro batch {i}")
            loss_sum += lval
            grads = backward(tape, loss)
        except FiniteError as e:
            raise NumericAbort(f"non-finite values in micro batch {i}: {e}")
        for name, h in handles.items():
            g = grads[h].data
            if name in acc:
                acc[name] = acc[name] + g
            else:
                acc[name] = g.copy()
    inv = 1.0 / n_micro
    return loss_sum * inv, {k: v * inv for k, v in acc.items()}


def evaluate(cfg: ModelConfig, params: Mapping[str, Tensor],
             val_chunks: np.ndarray, batch_size: int,
             form: str = "dual") -> Tuple[float, np.ndarray]:
    """(perplexity, per-index mean NLL of length T-1) over all sequences."""
    total = None
    n_seqs = 0
    for batch in iter_batches(val_chunks, batch_size):
        logits = lm_forward(batch, cfg, params, form=form)
        nll = ops.value_of(next_token_nll(logits, batch))  # (S, 1, T-1)
        s = nll.sum(axis=0)[0]
        total = s if total is None else total + s
        n_seqs += batch.shape[0]
    if n_seqs == 0:
        raise ConfigError("no validation sequences to evaluate")
    per_index = total / n_seqs
    ppl = float(np.exp(per_index.mean()))
    return ppl, per_index


def _checkpoint_tensors(params: Mapping[str, Tensor],
                        opt: OptState) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for name, t in params.items():
        out[f"param.{name}"] = t.data
    for name, a in opt.m.items():
        out[f"opt.m.{name}"] = a
    for name, a in opt.v.items():
        out[f"opt.v.{name}"] = a
    return out


def load_model_from_checkpoint(path: str
                               ) -> Tuple[TrainConfig, int, Dict[str, Tensor],
                                          OptState]:
    """Rebuild (config, step, params, optimizer state) from a checkpoint,
    validating every tensor shape against the embedded config."""
    cfg_dict, step, tensors = checkpoint_load(path)
    cfg = TrainConfig.from_dict(cfg_dict)
    shapes = {n: s for n, s, _ in param_shapes(cfg.model)}
    expect_shapes(tensors, shapes, group="param.")
    params = {n: Tensor(tensors[f"param.{n}"]) for n in shapes}
    opt = OptState(step=step)
    for n in shapes:
        mk, vk = f"opt.m.{n}", f"opt.v.{n}"
        if mk in tensors and vk in tensors:
            opt.m[n] = tensors[mk]
            opt.v[n] = tensors[vk]
        else:
            opt.m[n] = np.zeros_like(tensors[f"param.{n}"])
            opt.v[n] = np.zeros_like(tensors[f"param.{n}"])
    return cfg, step, params, opt


def _corpus_path(cfg: TrainConfig) -> str:
    if cfg.data_path is not None:
        return cfg.data_path
    path = os.path.join(cfg.out_dir, "synthetic.bin")
    if not os.path.exists(path):
        blob = synthetic_corpus(cfg.synthetic_bytes, seed=cfg.seed)
        os.makedirs(cfg.out_dir, exist_ok=True)
        with open(path, "wb") as f:
            f.write(blob)
    return path


def train(cfg: TrainConfig, quiet: bool = True) -> dict:
    """Run the configured training job; returns the summary dict (also
    written to out_dir/summary.json)."""
    t_run0 = time.perf_counter()
    files = _RunFiles(cfg.out_dir)
    rng = np.random.default_rng(cfg.seed)
    params = init_model_params(cfg.model, rng)
    opt_state = init_opt_state(params)
    train_chunks, val_chunks = load_corpus(_corpus_path(cfg), cfg.model.T,
                                           cfg.split_frac)
    seqs_per_batch = cfg.tokens_per_batch_value() // cfg.model.T
    stream = batch_stream(train_chunks, seqs_per_batch, cfg.seed)
    is_mlp = cfg.model.block.seq_layer_kind == "TTTMLP"
    ckpt_path = os.path.join(cfg.out_dir, "last.ckpt")
    checkpoint_save(os.path.join(cfg.out_dir, "init.ckpt"), cfg.to_dict(), 0,
                    _checkpoint_tensors(params, opt_state))

    summary: dict = {
        "steps": cfg.steps, "param_count": count_params(cfg.model),
        "tokens_per_batch": cfg.tokens_per_batch_value(),
        "precision": precision_name(), "aborted": False,
        "cpu_count": os.cpu_count(),
        "thread_env": {k: os.environ.get(k) for k in
                       ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS")},
    }

    def finish(step: int, aborted: bool = False, abort_msg: str = "") -> dict:
        summary["final_step"] = step
        summary["aborted"] = aborted
        if abort_msg:
            summary["abort_reason"] = abort_msg
        if not aborted:
            ppl, per_index = evaluate(cfg.model, params, val_chunks,
                                      cfg.micro_batch_value(), cfg.form)
            summary["final_val_ppl"] = ppl
            summary["per_index_nll"] = [float(x) for x in per_index]
            if step > 0:  # a 0-step run leaves only the initial checkpoint
                checkpoint_save(ckpt_path, cfg.to_dict(), step,
                                _checkpoint_tensors(params, opt_state))
        summary["wall_seconds"] = time.perf_counter() - t_run0
        with open(os.path.join(cfg.out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=1, sort_keys=True)
        return summary

    if cfg.steps == 0:
        return finish(0)

    warm_total = cfg.steps
    for step in range(1, cfg.steps + 1):
        t0 = time.perf_counter()
        batch = next(stream)
        eta_scale = eta_base_warmup(step, warm_total, cfg.warmup_frac) \
            if is_mlp else 1.0
        lr = lr_schedule(step, cfg.steps, cfg.peak_lr, cfg.end_lr,
                         cfg.warmup_frac)
        try:
            loss, grads = batch_loss_and_grads(cfg, params, batch, eta_scale)
            clipped, gnorm = clip_grads(grads, cfg.opt.grad_clip)
            params, opt_state = optimizer_step(params, clipped, opt_state,
                                               lr, cfg.opt)
        except NumericAbort as e:
            files.append(MetricsRecord(step=step, loss=float("nan"), lr=lr,
                                       grad_norm=float("nan")))
            finish(step, aborted=True, abort_msg=str(e))
            raise
        rec = MetricsRecord(step=step, loss=loss, lr=lr, grad_norm=gnorm,
                            ms=(time.perf_counter() - t0) * 1e3)
        if cfg.eval_interval and step % cfg.eval_interval == 0 \
                and step < cfg.steps:
            rec.val_ppl, _ = evaluate(cfg.model, params, val_chunks,
                                      cfg.micro_batch_value(), cfg.form)
        files.append(rec)
        if not quiet:
            extra = f" val_ppl={rec.val_ppl:.3f}" if rec.val_ppl else ""
            print(f"step {step}/{cfg.steps} loss={loss:.4f} "
                  f"lr={lr:.2e}{extra}", flush=True)
        if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            checkpoint_save(ckpt_path, cfg.to_dict(), step,
                            _checkpoint_tensors(params, opt_state))
    return finish(cfg.steps)
