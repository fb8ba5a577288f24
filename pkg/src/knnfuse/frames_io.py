"""Binary container for per-frame embeddings/posteriors, plus the manifest.

``.knnf`` layout (all integers little-endian):

    magic   4 bytes  b"KNNF"
    version u32      1
    dim     u32      embedding width D
    vocab   u32      vocabulary size V
    kind    u8       0 = rows are probabilities, 1 = rows are logits

then per utterance:

    id_len  u32
    id      id_len bytes, UTF-8
    T       u32      frame count
    emb     T*D float32, row-major
    post    T*V float32, row-major

Probability files round-trip bit-exactly; logit files are converted to
probabilities on read. The manifest is JSON-lines, one
{"utt_id": ..., "text": ...} object per line, UTF-8.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

from .errors import CorruptFile, DimMismatch, DuplicateUtterance, UnsupportedFormat
from .validation import as_float32_matrix, check_posterior_matrix
from .vocab import UtteranceFrames, normalize_posteriors

FRAMES_MAGIC = b"KNNF"
FRAMES_VERSION = 1
FRAMES_HEADER_SIZE = 17

VALUE_KIND_PROBS = 0
VALUE_KIND_LOGITS = 1


@dataclass(frozen=True)
class FramesFileHeader:
    dim: int
    vocab: int
    value_kind: int = VALUE_KIND_PROBS

    def __post_init__(self):
        if self.dim <= 0:
            raise UnsupportedFormat(f"dim must be > 0, got {self.dim}")
        if self.vocab <= 1:
            raise UnsupportedFormat(f"vocab must be > 1, got {self.vocab}")
        if self.value_kind not in (VALUE_KIND_PROBS, VALUE_KIND_LOGITS):
            raise UnsupportedFormat(f"unknown value_kind {self.value_kind}")


def _coerce_item(item) -> tuple[str, np.ndarray, np.ndarray]:
    """Accept UtteranceFrames or a raw (utt_id, embeddings, matrix) triple.

    The raw form is how logit-valued files are written, since
    UtteranceFrames itself only holds probability rows.
    """
    if isinstance(item, UtteranceFrames):
        return item.utt_id, item.embeddings, item.posteriors
    utt_id, emb, mat = item
    return utt_id, as_float32_matrix(emb, "embeddings"), as_float32_matrix(mat, "posteriors")


def write_frames(path, header: FramesFileHeader, utterances: Iterable) -> None:
    """Write a ``.knnf`` file; byte-identical across platforms.

    ``utterances`` yields UtteranceFrames, or (utt_id, embeddings, matrix)
    triples when ``header.value_kind`` is VALUE_KIND_LOGITS.
    """
    with open(path, "wb") as f:
        f.write(FRAMES_MAGIC)
        f.write(struct.pack("<IIIB", FRAMES_VERSION, header.dim, header.vocab,
                            header.value_kind))
        for item in utterances:
            utt_id, emb, mat = _coerce_item(item)
            if emb.shape[1] != header.dim or mat.shape[1] != header.vocab:
                raise DimMismatch(
                    f"{utt_id}: shapes {emb.shape}/{mat.shape} do not match "
                    f"header dim={header.dim} vocab={header.vocab}"
                )
            if emb.shape[0] != mat.shape[0]:
                raise DimMismatch(f"{utt_id}: frame counts differ")
            if header.value_kind == VALUE_KIND_PROBS:
                check_posterior_matrix(mat)
            id_bytes = utt_id.encode("utf-8")
            f.write(struct.pack("<I", len(id_bytes)))
            f.write(id_bytes)
            f.write(struct.pack("<I", emb.shape[0]))
            f.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptFile(f"truncated file while reading {what}")
    return buf


def read_frames(path) -> tuple[FramesFileHeader, Iterator[UtteranceFrames]]:
    """Open a ``.knnf`` file and return (header, lazy utterance iterator).

    The iterator holds the file open and reads one utterance at a time,
    so memory use is bounded by the largest utterance. Logit files are
    converted through the stabilized row softmax.
    """
    f = open(path, "rb")
    try:
        head = f.read(FRAMES_HEADER_SIZE)
        if len(head) < 4 or head[:4] != FRAMES_MAGIC:
            raise UnsupportedFormat(f"not a frames file (bad magic): {path}")
        if len(head) < FRAMES_HEADER_SIZE:
            raise CorruptFile(f"truncated header: {path}")
        version, dim, vocab, kind = struct.unpack("<IIIB", head[4:])
        if version != FRAMES_VERSION:
            raise UnsupportedFormat(f"unsupported frames version {version}")
        header = FramesFileHeader(dim=dim, vocab=vocab, value_kind=kind)
    except Exception:
        f.close()
        raise

    def _iter() -> Iterator[UtteranceFrames]:
        with f:
            while True:
                raw = f.read(4)
                if not raw:
                    return
                if len(raw) < 4:
                    raise CorruptFile("truncated utterance id length")
                (id_len,) = struct.unpack("<I", raw)
                utt_id = _read_exact(f, id_len, "utterance id").decode("utf-8")
                (num_frames,) = struct.unpack(
                    "<I", _read_exact(f, 4, f"{utt_id}: frame count"))
                emb = np.frombuffer(
                    _read_exact(f, num_frames * dim * 4, f"{utt_id}: embeddings"),
                    dtype="<f4").reshape(num_frames, dim)
                mat = np.frombuffer(
                    _read_exact(f, num_frames * vocab * 4, f"{utt_id}: posteriors"),
                    dtype="<f4").reshape(num_frames, vocab)
                if kind == VALUE_KIND_LOGITS:
                    mat = normalize_posteriors(mat).astype(np.float32)
                yield UtteranceFrames(utt_id, emb, mat)

    return header, _iter()


class ManifestEntry(NamedTuple):
    utt_id: str
    text: str


@dataclass(frozen=True)
class Manifest:
    """Reference transcripts keyed by utterance id; ids are unique."""

    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(
            ManifestEntry(e[0], e[1]) for e in self.entries))
        seen: set[str] = set()
        for e in self.entries:
            if e.utt_id in seen:
                raise DuplicateUtterance(f"duplicate utt_id {e.utt_id!r}")
            seen.add(e.utt_id)

    def __len__(self) -> int:
        return len(self.entries)

    def texts(self) -> dict[str, str]:
        return {e.utt_id: e.text for e in self.entries}


def write_manifest(path, entries: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, text in entries:
            f.write(json.dumps({"utt_id": utt_id, "text": text},
                               ensure_ascii=False) + "\n")


def read_manifest(path) -> Manifest:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append(ManifestEntry(obj["utt_id"], obj["text"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorruptFile(f"{path}:{lineno}: bad manifest line: {exc}")
    return Manifest(tuple(entries))


def read_frames_all(path) -> tuple[FramesFileHeader, list[UtteranceFrames]]:
    """Eagerly read a frames file; convenience for small corpora."""
    header, it = read_frames(path)
    return header, list(it)


# Referenced by tests that check the size arithmetic of the layout above.
def utterance_record_size(utt_id: str, num_frames: int, dim: int, vocab: int) -> int:
    return 4 + len(utt_id.encode("utf-8")) + 4 + num_frames * dim * 4 + num_frames * vocab * 4
