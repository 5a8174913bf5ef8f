"""Benchmark harness: spec validation, timing-curve fits, the
equivalence-before-timing guard, and output schemas."""
import importlib
import json
import math
import os

import numpy as np
import pytest

bench_mod = importlib.import_module("ttt_lm.bench")
from ttt_lm.backbone import BlockConfig, ModelConfig
from ttt_lm.bench import (BenchSpec, bench_forms, fit_time_curve,
                          render_bench, sweep_b, thread_config,
                          write_bench_csv, write_sweep_csv)
from ttt_lm.errors import ConfigError, VerificationError
from ttt_lm.precision import precision_name
from ttt_lm.train import TrainConfig


# ------------------------------------------------------------------- spec

def test_spec_validation():
    with pytest.raises(ConfigError):
        BenchSpec(d=0)
    with pytest.raises(ConfigError):
        BenchSpec(T=1)
    with pytest.raises(ConfigError):
        BenchSpec(b_list=())
    with pytest.raises(ConfigError):
        BenchSpec(T=8, b_list=(3,))
    with pytest.raises(ConfigError):
        BenchSpec(kind="conv")
    with pytest.raises(ConfigError):
        BenchSpec(reps=2)
    with pytest.raises(ConfigError):
        BenchSpec(warmup=-1)
    with pytest.raises(ConfigError):
        BenchSpec(precision="f16")


def test_spec_coerces_b_list():
    spec = BenchSpec(T=8, b_list=[2, 4])
    assert spec.b_list == (2, 4)
    assert all(isinstance(b, int) for b in spec.b_list)


def test_spec_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="chunk"):
        BenchSpec.from_dict({"d": 4, "chunk": 2})


def test_spec_from_json(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps({"d": 4, "T": 8, "b_list": [2], "reps": 3}))
    assert BenchSpec.from_json(str(p)) == BenchSpec(d=4, T=8, b_list=(2,),
                                                    reps=3)
    with pytest.raises(ConfigError, match="not found"):
        BenchSpec.from_json(str(tmp_path / "nope.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    with pytest.raises(ConfigError, match="JSON"):
        BenchSpec.from_json(str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        BenchSpec.from_json(str(arr))


def test_thread_config_keys():
    thr = thread_config()
    assert set(thr) == {"cpu_count", "OMP_NUM_THREADS",
                        "OPENBLAS_NUM_THREADS"}
    assert thr["cpu_count"] >= 1


# -------------------------------------------------------------------- fit

def test_fit_recovers_planted_curve():
    bs = [1, 2, 4, 8, 16, 32]
    c0, c_b, c_inv = 3.0, 0.25, 40.0
    ms = [c0 + c_b * b + c_inv / b for b in bs]
    fit = fit_time_curve(bs, ms)
    assert fit["c0"] == pytest.approx(c0, rel=1e-9)
    assert fit["c_b"] == pytest.approx(c_b, rel=1e-9)
    assert fit["c_inv"] == pytest.approx(c_inv, rel=1e-9)
    assert fit["crossover_b"] == pytest.approx(math.sqrt(c_inv / c_b),
                                               rel=1e-9)


def test_fit_needs_three_distinct_points():
    fit = fit_time_curve([4, 8], [1.0, 2.0])
    assert all(math.isnan(v) for v in fit.values())
    fit2 = fit_time_curve([4, 4, 4], [1.0, 1.0, 1.0])
    assert math.isnan(fit2["crossover_b"])


def test_fit_negative_slope_has_no_crossover():
    bs = [1, 2, 4, 8]
    ms = [10.0 - 0.5 * b for b in bs]  # decreasing: no interior minimum
    assert math.isnan(fit_time_curve(bs, ms)["crossover_b"])


# ------------------------------------------------------------------ bench

def test_bench_forms_row_structure():
    spec = BenchSpec(d=4, T=8, b_list=(2, 4), reps=3, warmup=0)
    result = bench_forms(spec)
    rows = result["rows"]
    assert [(r["form"], r["b"]) for r in rows] == [
        ("primal", 2), ("dual", 2), ("primal", 4), ("dual", 4)]
    for r in rows:
        assert r["median_ms"] > 0
        if r["form"] == "primal":
            assert r["speedup"] == 1.0
        else:
            want = next(p["median_ms"] for p in rows
                        if p["form"] == "primal" and p["b"] == r["b"])
            assert r["speedup"] == pytest.approx(want / r["median_ms"])
    assert result["spec"]["d"] == 4
    assert "cpu_count" in result["threads"]
    # only two distinct b values: the 3-parameter fit must refuse
    assert math.isnan(result["fit"]["crossover_b"])


def test_bench_refuses_to_time_mismatched_forms(monkeypatch):
    monkeypatch.setattr(bench_mod, "_rel_diff", lambda a, b: 1.0)
    spec = BenchSpec(d=4, T=8, b_list=(2,), reps=3, warmup=0,
                     precision="f32")
    with pytest.raises(VerificationError, match="refusing to time"):
        bench_forms(spec)
    assert precision_name() == "f64"  # restored even on failure


def test_bench_restores_precision():
    spec = BenchSpec(d=4, T=8, b_list=(2,), reps=3, warmup=0)
    bench_forms(spec)
    assert precision_name() == "f64"


def test_bench_mlp_kind_runs():
    spec = BenchSpec(d=4, T=8, b_list=(4,), kind="mlp2", reps=3, warmup=0)
    rows = bench_forms(spec)["rows"]
    assert len(rows) == 2 and rows[1]["form"] == "dual"


# ------------------------------------------------------------------- csv

def test_write_bench_csv_schema(tmp_path):
    spec = BenchSpec(d=4, T=8, b_list=(2, 4, 8), reps=3, warmup=0)
    result = bench_forms(spec)
    path = tmp_path / "bench.csv"
    write_bench_csv(result, str(path))
    lines = path.read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    data = [ln for ln in lines if not ln.startswith("#")]
    assert any("d=4" in ln for ln in header)
    assert any("b_list=2,4,8" in ln for ln in header)
    assert any("threads" in ln for ln in header)
    assert any("crossover_b=" in ln for ln in header)
    assert data[0] == "form,b,median_ms,speedup"
    assert len(data) == 1 + len(result["rows"])
    for ln, row in zip(data[1:], result["rows"]):
        form, b, ms, sp = ln.split(",")
        assert form == row["form"] and int(b) == row["b"]
        assert float(ms) == pytest.approx(row["median_ms"], abs=1e-6)


def test_render_bench_mentions_crossover():
    spec = BenchSpec(d=4, T=8, b_list=(2,), reps=3, warmup=0)
    out = render_bench(bench_forms(spec))
    assert "crossover" in out
    assert "primal" in out and "dual" in out


# ------------------------------------------------------------------ sweep

def sweep_base(tmp_path):
    block = BlockConfig(backbone_kind="TransformerStyle",
                        seq_layer_kind="TTTLinear", embed_dim=8, heads=2,
                        ttt_b=4)
    model = ModelConfig(vocab_size=256, n_blocks=1, block=block, T=16)
    return TrainConfig(model=model, steps=1, tokens_per_batch=64,
                       synthetic_bytes=4096, seed=0,
                       out_dir=str(tmp_path / "sweep"))


def test_sweep_b_rows(tmp_path):
    rows = sweep_b(sweep_base(tmp_path), b_list=(4, 16), seeds=(0,))
    assert [r["b"] for r in rows] == [4, 16]
    for r in rows:
        assert r["val_ppl"] > 0 and r["ms_per_step"] > 0
    assert os.path.isdir(tmp_path / "sweep" / "b4_seed0")
    assert os.path.isdir(tmp_path / "sweep" / "b16_seed0")


def test_sweep_b_rejects_empty(tmp_path):
    with pytest.raises(ConfigError):
        sweep_b(sweep_base(tmp_path), b_list=())


def test_write_sweep_csv(tmp_path):
    rows = [{"b": 4, "val_ppl": 25.5, "ms_per_step": 12.0},
            {"b": 16, "val_ppl": 24.0, "ms_per_step": 8.5}]
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, str(path))
    lines = path.read_text().splitlines()
    assert lines[1] == "b,val_ppl,ms_per_step"
    assert lines[2] == "4,25.500000,12.000"
    assert lines[3] == "16,24.000000,8.500"
