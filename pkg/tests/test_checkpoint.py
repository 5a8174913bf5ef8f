"""Checkpoint container: byte-exact roundtrips and corruption rejection."""
import numpy as np
import pytest

from ttt_lm.checkpoint import (MAGIC, VERSION, canonical_config_bytes,
                               checkpoint_load, checkpoint_save,
                               expect_shapes)
from ttt_lm.errors import CheckpointError


def sample_state(seed=0):
    rng = np.random.default_rng(seed)
    config = {"model": {"T": 8, "vocab": 16}, "seed": 3, "form": "dual"}
    tensors = {
        "param.embed": rng.normal(size=(4, 16)),
        "param.head": rng.normal(size=(16, 4)).astype(np.float32),
        "opt.m.embed": np.zeros((4, 16)),
        "scalar": np.float64(2.5) * np.ones(()),
    }
    return config, 17, tensors


def test_roundtrip_preserves_everything(tmp_path):
    config, step, tensors = sample_state()
    path = str(tmp_path / "a.ckpt")
    checkpoint_save(path, config, step, tensors)
    config2, step2, tensors2 = checkpoint_load(path)
    assert config2 == config
    assert step2 == step
    assert set(tensors2) == set(tensors)
    for name in tensors:
        got = tensors2[name]
        want = np.asarray(tensors[name])
        assert got.dtype == want.dtype
        assert got.shape == want.shape
        np.testing.assert_array_equal(got, want)


def test_save_load_save_is_byte_identity(tmp_path):
    config, step, tensors = sample_state(1)
    p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    checkpoint_save(p1, config, step, tensors)
    c, s, t = checkpoint_load(p1)
    checkpoint_save(p2, c, s, t)
    assert (tmp_path / "a.ckpt").read_bytes() == \
        (tmp_path / "b.ckpt").read_bytes()


def test_header_layout(tmp_path):
    config, step, tensors = sample_state(2)
    path = str(tmp_path / "a.ckpt")
    checkpoint_save(path, config, step, tensors)
    blob = (tmp_path / "a.ckpt").read_bytes()
    assert blob.startswith(MAGIC)
    assert int.from_bytes(blob[8:12], "little") == VERSION
    cfg_bytes = canonical_config_bytes(config)
    cfg_len = int.from_bytes(blob[44:52], "little")
    assert cfg_len == len(cfg_bytes)
    assert blob[52: 52 + cfg_len] == cfg_bytes


def test_canonical_config_is_order_independent():
    a = canonical_config_bytes({"b": 1, "a": {"y": 2, "x": 3}})
    b = canonical_config_bytes({"a": {"x": 3, "y": 2}, "b": 1})
    assert a == b


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        checkpoint_load(str(tmp_path / "nope.ckpt"))


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "a.ckpt"
    config, step, tensors = sample_state(3)
    checkpoint_save(str(p), config, step, tensors)
    blob = bytearray(p.read_bytes())
    blob[0] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_load(str(p))


def test_bad_version_rejected(tmp_path):
    p = tmp_path / "a.ckpt"
    config, step, tensors = sample_state(4)
    checkpoint_save(str(p), config, step, tensors)
    blob = bytearray(p.read_bytes())
    blob[8] = 9
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_load(str(p))


def test_flipped_config_byte_rejected(tmp_path):
    p = tmp_path / "a.ckpt"
    config, step, tensors = sample_state(5)
    checkpoint_save(str(p), config, step, tensors)
    blob = bytearray(p.read_bytes())
    blob[60] ^= 0x01  # inside the config JSON region
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="digest"):
        checkpoint_load(str(p))


def test_truncation_rejected(tmp_path):
    p = tmp_path / "a.ckpt"
    config, step, tensors = sample_state(6)
    checkpoint_save(str(p), config, step, tensors)
    blob = p.read_bytes()
    p.write_bytes(blob[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_load(str(p))


def test_trailing_garbage_rejected(tmp_path):
    p = tmp_path / "a.ckpt"
    config, step, tensors = sample_state(7)
    checkpoint_save(str(p), config, step, tensors)
    p.write_bytes(p.read_bytes() + b"xx")
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint_load(str(p))


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        checkpoint_save(str(tmp_path / "a.ckpt"), {}, 0,
                        {"x": np.zeros(3, dtype=np.int32)})


def test_expect_shapes_accepts_match():
    tensors = {"param.w": np.zeros((2, 3)), "param.b": np.zeros(3)}
    expect_shapes(tensors, {"w": (2, 3), "b": (3,)})


def test_expect_shapes_names_missing_tensor():
    with pytest.raises(CheckpointError, match="param.w"):
        expect_shapes({}, {"w": (2, 3)})


def test_expect_shapes_names_mismatched_tensor():
    tensors = {"opt.w": np.zeros((2, 3))}
    with pytest.raises(CheckpointError, match="opt.w"):
        expect_shapes(tensors, {"w": (3, 2)}, group="opt.")


def test_empty_tensor_map_roundtrips(tmp_path):
    path = str(tmp_path / "a.ckpt")
    checkpoint_save(path, {"only": "config"}, 0, {})
    config, step, tensors = checkpoint_load(path)
    assert config == {"only": "config"} and step == 0 and tensors == {}
