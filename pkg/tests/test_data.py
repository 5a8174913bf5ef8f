"""Corpus chunking, batch streams, and the synthetic document generator."""
import numpy as np
import pytest

from ttt_lm.data import (batch_stream, iter_batches, load_corpus,
                         synthetic_corpus)
from ttt_lm.errors import DataError


def write_corpus(tmp_path, data: bytes):
    p = tmp_path / "corpus.bin"
    p.write_bytes(data)
    return str(p)


def test_split_arithmetic(tmp_path):
    t_len = 16
    path = write_corpus(tmp_path, bytes(range(160)))
    train, val = load_corpus(path, t_len, split_frac=0.9)
    assert train.shape == (9, t_len)
    assert val.shape == (1, t_len)


def test_chunks_reproduce_source_prefix(tmp_path):
    rng = np.random.default_rng(0)
    blob = rng.integers(0, 256, size=203, dtype=np.uint8).tobytes()
    path = write_corpus(tmp_path, blob)
    train, val = load_corpus(path, 10, split_frac=0.5)
    joined = np.concatenate([train.ravel(), val.ravel()]).tobytes()
    assert joined == blob[:200]


def test_train_and_val_never_share_bytes(tmp_path):
    path = write_corpus(tmp_path, bytes(range(200)) * 2)
    train, val = load_corpus(path, 20, split_frac=0.8)
    assert train.shape[0] + val.shape[0] == 20
    # val is the contiguous tail
    flat = np.fromfile(path, dtype=np.uint8)[:400].reshape(20, 20)
    np.testing.assert_array_equal(val, flat[16:])


def test_load_corpus_errors(tmp_path):
    path = write_corpus(tmp_path, bytes(100))
    with pytest.raises(DataError):
        load_corpus(str(tmp_path / "missing.bin"), 10)
    with pytest.raises(DataError):
        load_corpus(path, 64)  # 100 < 2*64
    with pytest.raises(DataError):
        load_corpus(path, 1)
    with pytest.raises(DataError):
        load_corpus(path, 10, split_frac=1.0)
    with pytest.raises(DataError):
        load_corpus(path, 50, split_frac=0.05)  # no train chunk


def test_batch_stream_is_seed_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    chunks = rng.integers(0, 256, size=(13, 8), dtype=np.uint8)
    a = batch_stream(chunks, 4, seed=7)
    b = batch_stream(chunks, 4, seed=7)
    for _ in range(9):
        np.testing.assert_array_equal(next(a), next(b))
    epoch7 = np.concatenate([next(batch_stream(chunks, 4, seed=7))
                             for _ in range(1)])
    epoch8 = np.concatenate([next(batch_stream(chunks, 4, seed=8))
                             for _ in range(1)])
    assert not np.array_equal(epoch7, epoch8)


def test_batch_stream_epoch_covers_all_chunks():
    chunks = np.arange(12, dtype=np.uint8).reshape(6, 2)
    stream = batch_stream(chunks, 2, seed=0)
    seen = np.concatenate([next(stream) for _ in range(3)])
    np.testing.assert_array_equal(np.sort(seen.ravel()), np.arange(12))


def test_batch_stream_drops_leftovers():
    chunks = np.arange(14, dtype=np.uint8).reshape(7, 2)
    stream = batch_stream(chunks, 3, seed=0)
    first_epoch = [next(stream) for _ in range(2)]
    assert all(b.shape == (3, 2) for b in first_epoch)


def test_batch_stream_errors():
    chunks = np.zeros((3, 4), dtype=np.uint8)
    with pytest.raises(DataError):
        next(batch_stream(chunks, 0, seed=0))
    with pytest.raises(DataError):
        next(batch_stream(chunks, 4, seed=0))


def test_iter_batches_keeps_short_tail():
    chunks = np.arange(10, dtype=np.uint8).reshape(5, 2)
    batches = list(iter_batches(chunks, 2))
    assert [b.shape[0] for b in batches] == [2, 2, 1]
    np.testing.assert_array_equal(np.concatenate(batches), chunks)


# ------------------------------------------------------- synthetic corpus

def test_synthetic_corpus_deterministic():
    assert synthetic_corpus(5000, seed=3) == synthetic_corpus(5000, seed=3)
    assert synthetic_corpus(5000, seed=3) != synthetic_corpus(5000, seed=4)


def test_synthetic_corpus_length_and_charset():
    blob = synthetic_corpus(3000, seed=0)
    assert len(blob) >= 3000
    assert max(blob) < 128  # ascii only
    blob.decode("ascii")


def test_synthetic_corpus_documents_are_fixed_length():
    blob = synthetic_corpus(4000, seed=1, doc_len=256)
    docs = blob.split(b"\n")
    full = [d for d in docs if d]
    assert all(len(d) == 255 for d in full)
    short = synthetic_corpus(1000, seed=1, doc_len=64)
    assert all(len(d) == 63 for d in short.split(b"\n") if d)


def test_synthetic_corpus_names_recur_within_documents():
    blob = synthetic_corpus(4000, seed=2)
    doc = blob.split(b"\n")[0].decode()
    words = doc.split()
    # the opening words introduce both recurring names
    name0, name1 = words[0], words[2]
    assert name0[0].isupper() and name1[0].isupper()
    assert sum(1 for w in words if w == name0 or w == name1) >= 5


def test_synthetic_corpus_validation():
    with pytest.raises(DataError):
        synthetic_corpus(0)
    with pytest.raises(DataError):
        synthetic_corpus(100, doc_len=8)
