"""Command-line driver: subcommand round trips and the exit-code contract
(0 ok, 1 verification failure, 2 config error, 3 numeric abort)."""
import importlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

cli_mod = importlib.import_module("ttt_lm.cli")
bench_mod = importlib.import_module("ttt_lm.bench")
from ttt_lm.backbone import BlockConfig, ModelConfig
from ttt_lm.cli import main
from ttt_lm.errors import NumericAbort
from ttt_lm.train import TrainConfig


def write_tiny_config(tmp_path, **kw):
    block = BlockConfig(backbone_kind="TransformerStyle",
                        seq_layer_kind="TTTLinear", embed_dim=8, heads=2,
                        ttt_b=4)
    model = ModelConfig(vocab_size=256, n_blocks=1, block=block, T=16)
    defaults = dict(model=model, steps=1, tokens_per_batch=64,
                    synthetic_bytes=4096, seed=0,
                    out_dir=str(tmp_path / "run"))
    defaults.update(kw)
    cfg = TrainConfig(**defaults)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return cfg, str(path)


# ------------------------------------------------------------------ train

def test_train_command(tmp_path, capsys):
    cfg, cfg_path = write_tiny_config(tmp_path)
    assert main(["train", "--config", cfg_path]) == 0
    out = capsys.readouterr().out
    assert "done: step=1" in out and "val_ppl=" in out
    assert os.path.exists(os.path.join(cfg.out_dir, "last.ckpt"))


def test_train_unknown_key_exits_2(tmp_path, capsys):
    _, cfg_path = write_tiny_config(tmp_path)
    raw = json.loads(open(cfg_path).read())
    raw["lr"] = 0.1
    open(cfg_path, "w").write(json.dumps(raw))
    assert main(["train", "--config", cfg_path]) == 2
    assert "config error" in capsys.readouterr().err


def test_train_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "no.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_numeric_abort_exits_3(tmp_path, capsys, monkeypatch):
    _, cfg_path = write_tiny_config(tmp_path)

    def explode(cfg, quiet=True):
        raise NumericAbort("non-finite loss")

    monkeypatch.setattr(cli_mod, "train", explode)
    assert main(["train", "--config", cfg_path]) == 3
    assert "numeric abort" in capsys.readouterr().err


# ------------------------------------------------------------------- eval

@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli_run")
    cfg, cfg_path = write_tiny_config(tmp_path, steps=2)
    assert main(["train", "--config", cfg_path]) == 0
    return cfg


def test_eval_command(trained_run, tmp_path, capsys):
    ckpt = os.path.join(trained_run.out_dir, "last.ckpt")
    data = os.path.join(trained_run.out_dir, "synthetic.bin")
    out_json = str(tmp_path / "eval.json")
    assert main(["eval", "--ckpt", ckpt, "--data", data,
                 "--out", out_json]) == 0
    out = capsys.readouterr().out
    assert "val_ppl=" in out and "ckpt_step=2" in out
    rep = json.load(open(out_json))
    assert rep["val_ppl"] > 0
    assert len(rep["per_index_nll"]) == trained_run.model.T - 1


def test_eval_short_corpus_exits_2(trained_run, tmp_path, capsys):
    ckpt = os.path.join(trained_run.out_dir, "last.ckpt")
    small = tmp_path / "small.bin"
    small.write_bytes(bytes(4))
    assert main(["eval", "--ckpt", ckpt, "--data", str(small)]) == 2
    assert "config error" in capsys.readouterr().err


def test_eval_missing_checkpoint_exits_2(tmp_path, capsys):
    data = tmp_path / "d.bin"
    data.write_bytes(bytes(64))
    assert main(["eval", "--ckpt", str(tmp_path / "no.ckpt"),
                 "--data", str(data)]) == 2
    assert "config error" in capsys.readouterr().err


# --------------------------------------------------------------- generate

def test_generate_command(trained_run, capsys):
    ckpt = os.path.join(trained_run.out_dir, "last.ckpt")
    assert main(["generate", "--ckpt", ckpt, "--prompt", "ab",
                 "--n", "4"]) == 0
    first = capsys.readouterr().out
    assert first.startswith("ab")
    assert len(first) == 2 + 4 + 1  # prompt + generated + newline
    assert main(["generate", "--ckpt", ckpt, "--prompt", "ab",
                 "--n", "4"]) == 0
    assert capsys.readouterr().out == first  # greedy decode is deterministic


def test_generate_bad_n_exits_2(trained_run, capsys):
    ckpt = os.path.join(trained_run.out_dir, "last.ckpt")
    assert main(["generate", "--ckpt", ckpt, "--prompt", "ab",
                 "--n", "0"]) == 2
    assert "config error" in capsys.readouterr().err


# ------------------------------------------------------------------ bench

def test_bench_command(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"d": 4, "T": 8, "b_list": [2, 4],
                                "reps": 3, "warmup": 0}))
    out_csv = str(tmp_path / "bench.csv")
    assert main(["bench", "--spec", str(spec), "--out", out_csv]) == 0
    assert "crossover" in capsys.readouterr().out
    lines = open(out_csv).read().splitlines()
    assert "form,b,median_ms,speedup" in lines


def test_bench_bad_spec_exits_2(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"d": 4, "T": 8, "b_list": [3]}))
    assert main(["bench", "--spec", str(spec)]) == 2
    assert "config error" in capsys.readouterr().err


def test_bench_equivalence_failure_exits_1(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(bench_mod, "_rel_diff", lambda a, b: 1.0)
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"d": 4, "T": 8, "b_list": [2],
                                "reps": 3, "warmup": 0}))
    assert main(["bench", "--spec", str(spec)]) == 1
    assert "verification failure" in capsys.readouterr().err


# ----------------------------------------------------------------- verify

def fake_report(passed):
    return {"quick": True, "all_passed": passed,
            "checks": [{"name": "stub_check", "value": 0.0,
                        "threshold": 1e-12, "comparison": "le",
                        "passed": passed, "seconds": 0.01}]}


def test_verify_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(cli_mod, "run_verify",
                        lambda quick=False: fake_report(True))
    out_json = str(tmp_path / "report.json")
    assert main(["verify", "--quick", "--json", out_json]) == 0
    out = capsys.readouterr().out
    assert "[PASS] stub_check" in out and "all passed" in out
    assert json.load(open(out_json))["all_passed"] is True

    monkeypatch.setattr(cli_mod, "run_verify",
                        lambda quick=False: fake_report(False))
    assert main(["verify"]) == 1
    assert "FAILURES present" in capsys.readouterr().out


# ------------------------------------------------------- process-level

def test_module_entry_help():
    proc = subprocess.run([sys.executable, "-m", "ttt_lm", "--help"],
                          capture_output=True, text=True, cwd="/root/pkg")
    assert proc.returncode == 0
    for cmd in ("train", "eval", "verify", "bench", "generate"):
        assert cmd in proc.stdout


def test_console_script_on_path():
    proc = subprocess.run(["ttt-lm", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    assert "ttt-lm" in proc.stdout


def test_bad_precision_env_exits_2(tmp_path):
    env = dict(os.environ, TTT_PRECISION="f128")
    proc = subprocess.run(
        [sys.executable, "-m", "ttt_lm", "train", "--config", "x.json"],
        capture_output=True, text=True, env=env, cwd="/root/pkg")
    assert proc.returncode == 2
    assert "TTT_PRECISION" in proc.stderr


def test_f32_precision_env_runs(tmp_path):
    cfg, cfg_path = write_tiny_config(tmp_path)
    env = dict(os.environ, TTT_PRECISION="f32")
    proc = subprocess.run(
        [sys.executable, "-m", "ttt_lm", "train", "--config", cfg_path],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    summary = json.load(open(os.path.join(cfg.out_dir, "summary.json")))
    assert summary["precision"] == "f32"
