from __future__ import annotations

import numpy as np
import pytest

from knnfuse import UtteranceFrames


def random_posteriors(rng: np.random.Generator, t: int, vocab: int) -> np.ndarray:
    """Random strictly positive probability rows (float32-safe)."""
    raw = rng.random((t, vocab)) + 0.05
    return (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)


def random_utterance(rng: np.random.Generator, utt_id: str, t: int, dim: int,
                     vocab: int) -> UtteranceFrames:
    emb = rng.normal(size=(t, dim)).astype(np.float32)
    return UtteranceFrames(utt_id, emb, random_posteriors(rng, t, vocab))


def random_corpus(rng: np.random.Generator, num_utts: int, dim: int, vocab: int,
                  t_min: int = 1, t_max: int = 12) -> list[UtteranceFrames]:
    return [
        random_utterance(rng, f"u{i:03d}", int(rng.integers(t_min, t_max + 1)), dim, vocab)
        for i in range(num_utts)
    ]


def one_hot_posteriors(labels, vocab: int, peak: float = 0.9) -> np.ndarray:
    """Rows concentrated on the given labels; argmax equals labels."""
    labels = np.asarray(labels)
    t = labels.shape[0]
    rest = (1.0 - peak) / (vocab - 1)
    mat = np.full((t, vocab), rest, dtype=np.float64)
    mat[np.arange(t), labels] = peak
    return mat.astype(np.float32)


def brute_force_knn(keys, query, k: int, squared: bool = True):
    """Independent O(N*D) reference scan for nearest-neighbor checks.

    Scores every entry with a float64 squared distance and sorts by
    (distance, entry id) via plain tuple ordering.
    """
    q = np.asarray(query, dtype=np.float64)
    rows = np.asarray(keys, dtype=np.float64)
    scored = []
    for i in range(rows.shape[0]):
        diff = rows[i] - q
        scored.append((float((diff * diff).sum()), i))
    scored.sort()
    top = scored[: min(k, len(scored))]
    dist = np.array([t[0] for t in top], dtype=np.float64)
    if not squared:
        dist = np.sqrt(dist)
    return dist, np.array([t[1] for t in top], dtype=np.int64)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
