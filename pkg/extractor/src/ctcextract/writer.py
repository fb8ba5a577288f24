"""Emitter for the ``.knnf`` frames container the decoding toolkit reads.

Layout (little-endian): magic b"KNNF", version u32 = 1, dim u32, vocab
u32, value-kind u8 (0 = probability rows); then per utterance: id length
u32, UTF-8 id, frame count u32, float32 embeddings (T x dim, row-major),
float32 posteriors (T x vocab, row-major).
"""
from __future__ import annotations

import struct

import numpy as np

KNNF_MAGIC = b"KNNF"
KNNF_VERSION = 1
VALUE_KIND_PROBS = 0


class FramesWriter:
    """Streaming writer; one utterance in memory at a time."""

    def __init__(self, path, dim: int, vocab: int):
        self.dim = dim
        self.vocab = vocab
        self.utterances = 0
        self.frames = 0
        self._f = open(path, "wb")
        self._f.write(KNNF_MAGIC)
        self._f.write(struct.pack("<IIIB", KNNF_VERSION, dim, vocab,
                                  VALUE_KIND_PROBS))

    def add(self, utt_id: str, embeddings: np.ndarray, posteriors: np.ndarray) -> None:
        emb = np.ascontiguousarray(embeddings, dtype="<f4")
        post = np.ascontiguousarray(posteriors, dtype="<f4")
        if emb.ndim != 2 or emb.shape[1] != self.dim:
            raise ValueError(f"{utt_id}: embeddings shape {emb.shape} != (T, {self.dim})")
        if post.shape != (emb.shape[0], self.vocab):
            raise ValueError(f"{utt_id}: posteriors shape {post.shape} "
                             f"!= ({emb.shape[0]}, {self.vocab})")
        id_bytes = utt_id.encode("utf-8")
        self._f.write(struct.pack("<I", len(id_bytes)))
        self._f.write(id_bytes)
        self._f.write(struct.pack("<I", emb.shape[0]))
        self._f.write(emb.tobytes())
        self._f.write(post.tobytes())
        self.utterances += 1
        self.frames += emb.shape[0]

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "FramesWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
