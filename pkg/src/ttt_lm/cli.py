"""Command-line driver.

Subcommands: train (JSON config), eval (checkpoint + byte corpus),
verify (property suites), bench (primal vs dual timing), generate
(greedy streaming decode). Exit codes: 0 success, 1 verification
failure, 2 config error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from .backbone import generate
from .bench import BenchSpec, bench_forms, render_bench, write_bench_csv
from .errors import ConfigError, DataError, NumericAbort, VerificationError
from .precision import active_dtype
from .train import TrainConfig, evaluate, load_model_from_checkpoint, train
from .verify import render_report, run_verify, write_report


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ttt-lm",
        description="Byte-level LM whose sequence layers train an inner "
                    "model by gradient descent at test time.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job from a JSON config")
    p.add_argument("--config", required=True, metavar="FILE")
    p.add_argument("--verbose", action="store_true",
                   help="print per-step progress")

    p = sub.add_parser("eval", help="perplexity of a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True, metavar="FILE")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--out", default=None, metavar="FILE",
                   help="also write {val_ppl, per_index_nll} as JSON")

    p = sub.add_parser("verify", help="run the self-verification suites")
    p.add_argument("--quick", action="store_true",
                   help="smaller instance counts")
    p.add_argument("--json", dest="json_out", default=None, metavar="FILE",
                   help="also write the machine-readable report")

    p = sub.add_parser("bench", help="time the two evaluation strategies")
    p.add_argument("--spec", required=True, metavar="FILE")
    p.add_argument("--out", default=None, metavar="FILE",
                   help="write the timing table as CSV")

    p = sub.add_parser("generate", help="greedy byte decode from a checkpoint")
    p.add_argument("--ckpt", required=True, metavar="FILE")
    p.add_argument("--prompt", required=True,
                   help="prompt text (utf-8 encoded to bytes)")
    p.add_argument("--n", type=int, required=True,
                   help="number of bytes to generate")
    return ap


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = TrainConfig.from_json(args.config)
    summary = train(cfg, quiet=not args.verbose)
    print(f"done: step={summary['final_step']} "
          f"val_ppl={summary.get('final_val_ppl', float('nan')):.4f} "
          f"out_dir={cfg.out_dir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg, step, params, _ = load_model_from_checkpoint(args.ckpt)
    t = cfg.model.T
    data = np.fromfile(args.data, dtype=np.uint8)
    n = data.size // t
    if n < 1:
        raise DataError(f"eval corpus has {data.size} bytes, need >= T = {t}")
    chunks = data[: n * t].reshape(n, t)
    batch = args.batch_size or cfg.micro_batch_value()
    ppl, per_index = evaluate(cfg.model, params, chunks, batch, cfg.form)
    print(f"val_ppl={ppl:.6f} sequences={n} T={t} ckpt_step={step}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"val_ppl": ppl,
                       "per_index_nll": [float(x) for x in per_index]},
                      f, indent=1)
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    report = run_verify(quick=args.quick)
    print(render_report(report))
    if args.json_out:
        write_report(report, args.json_out)
    return 0 if report["all_passed"] else 1


def _cmd_bench(args: argparse.Namespace) -> int:
    spec = BenchSpec.from_json(args.spec)
    result = bench_forms(spec)
    print(render_bench(result))
    if args.out:
        write_bench_csv(result, args.out)
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    prompt = args.prompt.encode("utf-8")
    if not prompt:
        raise ConfigError("--prompt must encode to at least one byte")
    cfg, _, params, _ = load_model_from_checkpoint(args.ckpt)
    out = generate(cfg.model, params, prompt, args.n)
    sys.stdout.write((prompt + out).decode("latin-1"))
    sys.stdout.write("\n")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
    "generate": _cmd_generate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        active_dtype()  # surface a bad TTT_PRECISION before any work
        return _COMMANDS[args.command](args)
    except VerificationError as e:
        print(f"verification failure: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericAbort as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
