"""Byte-level corpus handling.

A corpus is any file of bytes. It is chunked into fixed-length
sequences in file order; a contiguous tail of chunks is held out for
validation so train and val never share bytes. Batch order is the only
randomness and it is fully determined by the seed.

synthetic_corpus builds a deterministic toy corpus with structure worth
adapting to at test time: each document commits to a topic vocabulary
and to a couple of rare names that repeat throughout the document, so a
model that keeps learning in context has something to pick up. Documents
are emitted at a fixed byte length so chunking with a matching T keeps
document and sequence boundaries aligned.
"""
from __future__ import annotations

import os
from typing import Iterator, Tuple

import numpy as np

from .errors import DataError


def load_corpus(path: str, T: int, split_frac: float = 0.9
                ) -> Tuple[np.ndarray, np.ndarray]:
    """(train, val) uint8 arrays of shape (n, T), chunked in file order
    with the tail chunks held out."""
    if T < 2:
        raise DataError(f"sequence length T must be >= 2, got {T}")
    if not 0.0 < split_frac < 1.0:
        raise DataError(f"split_frac must be in (0, 1), got {split_frac}")
    if not os.path.exists(path):
        raise DataError(f"corpus file not found: {path}")
    data = np.fromfile(path, dtype=np.uint8)
    if data.size < 2 * T:
        raise DataError(f"corpus too small: {data.size} bytes < 2*T = {2 * T}")
    n_chunks = data.size // T
    chunks = data[: n_chunks * T].reshape(n_chunks, T)
    n_train = int(n_chunks * split_frac)
    if n_train < 1 or n_train >= n_chunks:
        raise DataError(f"split {split_frac} leaves no {'train' if n_train < 1 else 'val'} "
                        f"chunks out of {n_chunks}")
    return chunks[:n_train].copy(), chunks[n_train:].copy()


def batch_stream(chunks: np.ndarray, batch_size: int,
                 seed: int) -> Iterator[np.ndarray]:
    """Endless stream of (batch_size, T) batches; each epoch is a fresh
    seeded permutation of the chunks, leftovers dropped."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if len(chunks) < batch_size:
        raise DataError(f"corpus has {len(chunks)} sequences, need at least "
                        f"{batch_size} per batch")
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(len(chunks))
        for i in range(0, len(chunks) - batch_size + 1, batch_size):
            yield chunks[order[i: i + batch_size]]


def iter_batches(chunks: np.ndarray, batch_size: int) -> Iterator[np.ndarray]:
    """One deterministic pass in file order (for evaluation); the final
    short batch is kept."""
    for i in range(0, len(chunks), batch_size):
        yield chunks[i: i + batch_size]


# ------------------------------------------------------- synthetic corpus

_FUNCTION_WORDS = ("the", "a", "of", "and", "to", "in", "was", "with",
                   "near", "then")


def _word(rng: np.random.Generator, letters: str, lo: int, hi: int) -> str:
    n = int(rng.integers(lo, hi + 1))
    return "".join(letters[int(i)] for i in rng.integers(0, len(letters), n))


def synthetic_corpus(n_bytes: int, seed: int = 0, n_topics: int = 16,
                     doc_len: int = 256) -> bytes:
    """Deterministic document-structured byte corpus of at least n_bytes.

    Each document draws one topic vocabulary plus two document-specific
    capitalized names that recur often (introduced in the opening words),
    giving within-document statistics absent from the global distribution.
    Every document is exactly doc_len bytes, so load_corpus with
    T == doc_len puts each document in its own sequence.
    """
    if n_bytes < 1:
        raise DataError(f"n_bytes must be >= 1, got {n_bytes}")
    if doc_len < 16:
        raise DataError(f"doc_len must be >= 16, got {doc_len}")
    rng = np.random.default_rng(seed)
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    topics = []
    for _ in range(n_topics):
        letters = "".join(alphabet[int(i)]
                          for i in rng.choice(26, size=12, replace=False))
        vocab = tuple(_word(rng, letters, 3, 8) for _ in range(24))
        topics.append(vocab)
    parts = []
    total = 0
    while total < n_bytes:
        vocab = topics[int(rng.integers(0, n_topics))]
        names = tuple(_word(rng, alphabet, 6, 10).capitalize()
                      for _ in range(2))
        words = [names[0], "and", names[1]]
        length = sum(len(w) for w in words) + len(words) - 1
        while length < doc_len:
            r = rng.random()
            if r < 0.5:
                w = names[int(rng.integers(0, 2))]
            elif r < 0.6:
                w = _FUNCTION_WORDS[int(rng.integers(0, len(_FUNCTION_WORDS)))]
            else:
                w = vocab[int(rng.integers(0, len(vocab)))]
            words.append(w)
            length += len(w) + 1
        doc = (" ".join(words))[: doc_len - 1] + "\n"
        parts.append(doc)
        total += len(doc)
    return "".join(parts).encode("ascii")
