"""Sequence layers whose hidden state is a model trained at test time.

The package is numpy-only at its core: a small tensor/op set with a
reverse-mode tape (kernels, tensor, autodiff, ops), the layer itself in
primal and dual forms (layer), closed-form attention oracles it must
match in degenerate configurations (attn), residual backbones and a
byte-level LM (backbone), plus training, verification, and benchmarking
drivers (train, verify, bench) behind the `ttt-lm` CLI (cli).
"""
from .attn import (AttnParams, linear_attention, nadaraya_watson,
                   softmax_attention, theorem1_check, theorem2_check)
from .autodiff import GradMap, Tape, Value, backward, grad_check
from .backbone import (BlockConfig, DecodeSession, ModelConfig,
                       block_forward, count_params, generate,
                       init_model_params, lm_forward, next_token_loss,
                       next_token_nll, param_shapes)
from .bench import BenchSpec, bench_forms, fit_time_curve, sweep_b
from .checkpoint import checkpoint_load, checkpoint_save
from .data import batch_stream, iter_batches, load_corpus, synthetic_corpus
from .errors import (CheckpointError, ConfigError, DataError, FiniteError,
                     NumericAbort, ShapeError, TapeError, VerificationError)
from .layer import (InnerModelKind, TTTLayerParams, TTTState, eta_gate,
                    init_ttt_params, initial_state, inner_grad, inner_loss,
                    inner_model_apply, multihead_forward, ttt_forward_dual,
                    ttt_forward_primal, ttt_step_primal)
from .optim import (OptConfig, OptState, clip_grads, eta_base_warmup,
                    global_norm, init_opt_state, lr_schedule, optimizer_step)
from .precision import active_dtype, precision_name, set_precision
from .tensor import Tensor
from .train import TrainConfig, evaluate, load_model_from_checkpoint, train
from .verify import run_verify, verify_or_raise

__version__ = "0.1.0"

__all__ = [
    "AttnParams", "BenchSpec", "BlockConfig", "CheckpointError",
    "ConfigError", "DataError", "DecodeSession", "FiniteError", "GradMap",
    "InnerModelKind", "ModelConfig", "NumericAbort", "OptConfig", "OptState",
    "ShapeError", "TTTLayerParams", "TTTState", "Tape", "Tensor",
    "TrainConfig", "Value", "VerificationError", "active_dtype", "backward",
    "batch_stream", "bench_forms", "block_forward", "checkpoint_load",
    "checkpoint_save", "clip_grads", "count_params", "eta_base_warmup",
    "eta_gate", "evaluate", "fit_time_curve", "generate", "global_norm",
    "grad_check", "init_model_params", "init_opt_state", "init_ttt_params",
    "initial_state", "inner_grad", "inner_loss", "inner_model_apply",
    "iter_batches", "linear_attention", "lm_forward",
    "load_corpus", "load_model_from_checkpoint", "lr_schedule",
    "multihead_forward", "nadaraya_watson", "next_token_loss",
    "next_token_nll", "optimizer_step", "param_shapes", "precision_name",
    "run_verify", "set_precision", "softmax_attention", "sweep_b",
    "synthetic_corpus", "theorem1_check", "theorem2_check", "train",
    "ttt_forward_dual", "ttt_forward_primal", "ttt_step_primal",
    "verify_or_raise",
]
