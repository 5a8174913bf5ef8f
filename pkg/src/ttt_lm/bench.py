"""Wall-clock benchmarking of the two layer evaluation strategies and of
the inner-batch-size quality/speed trade-off.

Timing rules: medians over `reps` runs after `warmup` untimed runs, with
the thread configuration recorded in the output header. Before anything
is timed, both strategies are checked for output equivalence; a fast path
that computes the wrong thing must never appear in a timing table.
"""
from __future__ import annotations

import dataclasses
import json
import os
import statistics
import time
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, VerificationError
from .layer import (InnerModelKind, init_ttt_params, ttt_forward_dual,
                    ttt_forward_primal)
from .precision import PRECISIONS, precision_name, set_precision
from .tensor import Tensor
from .train import TrainConfig, _from_dict, train

BENCH_CSV_COLUMNS = "form,b,median_ms,speedup"
SWEEP_CSV_COLUMNS = "b,val_ppl,ms_per_step"


@dataclass(frozen=True)
class BenchSpec:
    """One forward-timing experiment: a single-head layer of head size d
    over a length-T sequence, across inner mini-batch sizes."""
    d: int = 64
    T: int = 512
    b_list: Tuple[int, ...] = (1, 4, 16, 64)
    kind: str = "linear"
    bare: bool = False
    reps: int = 5
    warmup: int = 2
    precision: str = "f64"
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.T < 2:
            raise ConfigError(f"need d >= 1 and T >= 2, got d={self.d} T={self.T}")
        if not self.b_list:
            raise ConfigError("b_list must not be empty")
        object.__setattr__(self, "b_list", tuple(int(b) for b in self.b_list))
        for b in self.b_list:
            if b < 1 or self.T % b != 0:
                raise ConfigError(f"each b must divide T={self.T}, got b={b}")
        if self.kind not in ("linear", "mlp2"):
            raise ConfigError(f"kind must be linear or mlp2, got {self.kind!r}")
        if self.reps < 3:
            raise ConfigError(f"reps must be >= 3, got {self.reps}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")
        if self.precision not in PRECISIONS:
            raise ConfigError(
                f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        return cls(**_from_dict(cls, d, "bench spec"))

    @classmethod
    def from_json(cls, path: str) -> "BenchSpec":
        try:
            with open(path) as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"bench spec file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"bench spec is not valid JSON: {e}")
        if not isinstance(raw, dict):
            raise ConfigError("bench spec must be a JSON object")
        return cls.from_dict(raw)


def thread_config() -> Dict[str, object]:
    """The knobs that decide how many CPU threads the matmuls use."""
    return {
        "cpu_count": os.cpu_count(),
        "OMP_NUM_THREADS": os.environ.get("OMP_NUM_THREADS"),
        "OPENBLAS_NUM_THREADS": os.environ.get("OPENBLAS_NUM_THREADS"),
    }


def _rel_diff(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-30)
    return float(np.abs(a - b).max() / denom)


def _median_ms(fn, reps: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(statistics.median(times))


def fit_time_curve(bs: Sequence[int], ms: Sequence[float]) -> dict:
    """Least-squares fit ms(b) ~ c0 + c_b*b + c_inv/b.

    The 1/b term is the per-chunk fixed cost (weight updates, T/b of
    them), the linear term is the masked-correction work that grows with
    chunk width. When both coefficients are positive the curve is
    U-shaped with minimum at sqrt(c_inv/c_b).
    """
    bs = np.asarray(bs, dtype=np.float64)
    ms = np.asarray(ms, dtype=np.float64)
    if bs.size < 3 or np.unique(bs).size < 3:
        return {"c0": float("nan"), "c_b": float("nan"),
                "c_inv": float("nan"), "crossover_b": float("nan")}
    basis = np.stack([np.ones_like(bs), bs, 1.0 / bs], axis=1)
    coef, *_ = np.linalg.lstsq(basis, ms, rcond=None)
    c0, c_b, c_inv = (float(c) for c in coef)
    crossover = float(np.sqrt(c_inv / c_b)) if c_b > 0 and c_inv > 0 \
        else float("nan")
    return {"c0": c0, "c_b": c_b, "c_inv": c_inv, "crossover_b": crossover}


def bench_forms(spec: BenchSpec) -> dict:
    """Time both evaluation strategies over spec.b_list.

    Returns {"rows": [{form, b, median_ms, speedup}], "fit": {...},
    "spec": {...}, "threads": {...}}. speedup is the primal median over
    the row's median, so primal rows read 1.0 exactly.
    """
    prev = precision_name()
    set_precision(spec.precision)
    try:
        return _bench_forms_inner(spec)
    finally:
        set_precision(prev)


def _bench_forms_inner(spec: BenchSpec) -> dict:
    rng = np.random.default_rng(spec.seed)
    kind = InnerModelKind(spec.kind, bare=spec.bare)
    base = init_ttt_params(rng, spec.d, 1, kind, spec.b_list[0])
    # random gate vector so eta work is representative, not sigmoid(0)
    base = dataclasses.replace(base, theta_lr=Tensor(rng.normal(0, 1.0, spec.d)))
    x = Tensor(rng.normal(0, 1, (spec.d, spec.T)))

    rows: List[dict] = []
    dual_ms: List[float] = []
    for b in spec.b_list:
        p = dataclasses.replace(base, b=b)
        zp, wp = ttt_forward_primal(x, p, kind)
        zd, wd = ttt_forward_dual(x, p, kind)
        worst = _rel_diff(zp.data, zd.data)
        for a, bb in zip(wp, wd):
            worst = max(worst, _rel_diff(a.data, bb.data))
        if worst > 1e-9:
            raise VerificationError(
                f"primal/dual outputs disagree at b={b} "
                f"(rel diff {worst:.3e} > 1e-09); refusing to time them")
        t_primal = _median_ms(lambda: ttt_forward_primal(x, p, kind),
                              spec.reps, spec.warmup)
        t_dual = _median_ms(lambda: ttt_forward_dual(x, p, kind),
                            spec.reps, spec.warmup)
        rows.append({"form": "primal", "b": b, "median_ms": t_primal,
                     "speedup": 1.0})
        rows.append({"form": "dual", "b": b, "median_ms": t_dual,
                     "speedup": t_primal / t_dual})
        dual_ms.append(t_dual)

    return {
        "spec": dataclasses.asdict(spec),
        "threads": thread_config(),
        "rows": rows,
        "fit": fit_time_curve(spec.b_list, dual_ms),
    }


def write_bench_csv(result: dict, path: str) -> None:
    """Fixed-schema CSV; a rerun with the same spec differs only in the
    timing-derived numbers (median_ms, speedup, and the fit comment)."""
    spec = result["spec"]
    thr = result["threads"]
    fit = result["fit"]
    lines = [
        "# bench_forms",
        "# " + " ".join(f"{k}={spec[k]}" for k in
                        ("d", "T", "kind", "bare", "reps", "warmup",
                         "precision", "seed")),
        "# b_list=" + ",".join(str(b) for b in spec["b_list"]),
        "# threads " + " ".join(f"{k}={v}" for k, v in thr.items()),
        ("# fit ms(b) ~ c0 + c_b*b + c_inv/b: "
         f"c0={fit['c0']:.6g} c_b={fit['c_b']:.6g} c_inv={fit['c_inv']:.6g} "
         f"crossover_b={fit['crossover_b']:.6g}"),
        BENCH_CSV_COLUMNS,
    ]
    for r in result["rows"]:
        lines.append(f"{r['form']},{r['b']},{r['median_ms']:.6f},"
                     f"{r['speedup']:.6f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def render_bench(result: dict) -> str:
    out = [f"{'form':>7} {'b':>6} {'median_ms':>12} {'speedup':>9}"]
    for r in result["rows"]:
        out.append(f"{r['form']:>7} {r['b']:>6} {r['median_ms']:>12.3f} "
                   f"{r['speedup']:>9.3f}")
    cb = result["fit"]["crossover_b"]
    out.append(f"fitted dual-time crossover b = {cb:.3g}")
    return "\n".join(out)


def sweep_b(base: TrainConfig, b_list: Sequence[int],
            seeds: Sequence[int] = (0, 1, 2),
            quiet: bool = True) -> List[dict]:
    """Train the same tiny model once per (b, seed); per b report the
    median final val perplexity and median per-step wall time."""
    if not b_list:
        raise ConfigError("b_list must not be empty")
    rows: List[dict] = []
    for b in b_list:
        ppls: List[float] = []
        step_ms: List[float] = []
        for seed in seeds:
            block = dataclasses.replace(base.model.block, ttt_b=int(b))
            model = dataclasses.replace(base.model, block=block)
            cfg = dataclasses.replace(
                base, model=model, seed=int(seed),
                out_dir=os.path.join(base.out_dir, f"b{b}_seed{seed}"))
            summary = train(cfg, quiet=quiet)
            ppls.append(summary["final_val_ppl"])
            step_ms.append(_read_median_step_ms(cfg.out_dir))
        rows.append({"b": int(b), "val_ppl": statistics.median(ppls),
                     "ms_per_step": statistics.median(step_ms)})
    return rows


def _read_median_step_ms(out_dir: str) -> float:
    path = os.path.join(out_dir, "timings.csv")
    vals: List[float] = []
    with open(path) as f:
        next(f)  # header
        for line in f:
            parts = line.strip().split(",")
            if len(parts) == 2 and parts[1]:
                vals.append(float(parts[1]))
    return float(statistics.median(vals)) if vals else float("nan")


def write_sweep_csv(rows: List[dict], path: str) -> None:
    lines = ["# sweep_b", SWEEP_CSV_COLUMNS]
    for r in rows:
        lines.append(f"{r['b']},{r['val_ppl']:.6f},{r['ms_per_step']:.3f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
