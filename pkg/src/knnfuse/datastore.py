"""Frame-level key-value datastore built from CTC pseudo labels.

Keys are frame embeddings, values are the per-frame argmax of the CTC
posterior (pseudo labels). Values are never ground-truth transcripts,
which is what lets the same build path run on unlabeled data.

``.knds`` layout (little-endian):

    magic          4 bytes  b"KNDS"
    version        u32      1
    dim            u32
    vocab          u32
    blank_id       u32
    pruned         u8       1 if blank-labeled frames were omitted
    count          u64      number of entries N
    source_frames  u64      frames scanned at build time
    blank_frames   u64      blank-labeled frames among them
    tag_len        u32
    tag            tag_len bytes, UTF-8 provenance string
    keys           N*dim float32, row-major
    values         N u32
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import CorruptFile, DimMismatch, UnsupportedFormat
from .validation import freeze
from .vocab import UtteranceFrames

DATASTORE_MAGIC = b"KNDS"
DATASTORE_VERSION = 1
# magic + version + dim + vocab + blank_id + pruned + count
# + source_frames + blank_frames + tag_len
_FIXED_HEADER = 4 + 4 + 4 + 4 + 4 + 1 + 8 + 8 + 8 + 4


@dataclass
class Datastore:
    """Immutable (keys, values) store plus build provenance.

    ``keys`` is N x dim float32 (possibly memory-mapped), ``values`` is a
    length-N uint32 token-id array aligned with it. ``source_frames`` and
    ``blank_frames`` record what the build scanned, so blank statistics
    survive serialization without re-reading the corpus.
    """

    keys: np.ndarray
    values: np.ndarray
    dim: int
    vocab: int
    blank_id: int
    pruned: bool
    source_tag: str = ""
    source_frames: int = 0
    blank_frames: int = 0

    def __post_init__(self):
        self.keys = freeze(np.asarray(self.keys))
        self.values = freeze(np.asarray(self.values))
        if self.keys.ndim != 2 or self.keys.shape[1] != self.dim:
            raise DimMismatch(f"keys shape {self.keys.shape} does not match dim {self.dim}")
        if self.values.shape != (self.keys.shape[0],):
            raise DimMismatch("values length does not match key count")
        if self.values.size and int(self.values.max()) >= self.vocab:
            raise ValueError("datastore value exceeds vocabulary size")
        if self.pruned and self.values.size and bool((self.values == self.blank_id).any()):
            raise ValueError("pruned datastore contains blank-valued entries")

    @property
    def count(self) -> int:
        return self.keys.shape[0]

    @property
    def blank_fraction_of_source(self) -> float:
        if self.source_frames == 0:
            return 0.0
        return self.blank_frames / self.source_frames


def pseudo_labels(posteriors) -> np.ndarray:
    """Per-frame argmax token ids; ties break to the lowest token id."""
    mat = np.asarray(posteriors)
    if mat.size == 0:
        return np.zeros(0, dtype=np.uint32)
    return mat.argmax(axis=1).astype(np.uint32)


def build_datastore(
    corpus: Iterable[UtteranceFrames],
    skip_blank_store: bool = False,
    blank_id: int = 0,
    *,
    dim: int | None = None,
    vocab: int | None = None,
    source_tag: str = "",
) -> Datastore:
    """Scan a corpus in order and collect (embedding, pseudo label) entries.

    With ``skip_blank_store`` set, frames whose pseudo label equals
    ``blank_id`` are omitted. Entry order is corpus order (utterance,
    then frame), so builds are deterministic. ``dim``/``vocab`` are only
    needed when the corpus may be empty (e.g. taken from a file header).
    """
    if (dim is None) != (vocab is None):
        raise ValueError("dim and vocab hints must be given together")
    key_chunks: list[np.ndarray] = []
    value_chunks: list[np.ndarray] = []
    total = 0
    blanks = 0
    for utt in corpus:
        if dim is None:
            dim, vocab = utt.dim, utt.vocab_size
        elif utt.dim != dim or utt.vocab_size != vocab:
            raise DimMismatch(
                f"{utt.utt_id}: dims ({utt.dim}, {utt.vocab_size}) differ from "
                f"({dim}, {vocab})"
            )
        if utt.num_frames == 0:
            continue
        labels = pseudo_labels(utt.posteriors)
        is_blank = labels == blank_id
        total += labels.shape[0]
        blanks += int(is_blank.sum())
        if skip_blank_store:
            keep = ~is_blank
            key_chunks.append(utt.embeddings[keep])
            value_chunks.append(labels[keep])
        else:
            key_chunks.append(utt.embeddings)
            value_chunks.append(labels)
    if dim is None:
        dim, vocab = 0, 1
    assert vocab is not None
    if blank_id >= vocab and total > 0:
        raise ValueError(f"blank_id {blank_id} out of range for vocab {vocab}")
    if key_chunks:
        keys = np.concatenate(key_chunks, axis=0)
        values = np.concatenate(value_chunks)
    else:
        keys = np.zeros((0, dim), dtype=np.float32)
        values = np.zeros(0, dtype=np.uint32)
    return Datastore(
        keys=keys,
        values=values,
        dim=dim,
        vocab=vocab,
        blank_id=blank_id,
        pruned=skip_blank_store,
        source_tag=source_tag,
        source_frames=total,
        blank_frames=blanks,
    )


def serialized_size(ds: Datastore) -> int:
    """Byte size of ``save_datastore`` output, computed from the layout."""
    tag = ds.source_tag.encode("utf-8")
    return _FIXED_HEADER + len(tag) + ds.count * ds.dim * 4 + ds.count * 4


def save_datastore(path, ds: Datastore) -> None:
    tag = ds.source_tag.encode("utf-8")
    with open(path, "wb") as f:
        f.write(DATASTORE_MAGIC)
        f.write(struct.pack("<IIII", DATASTORE_VERSION, ds.dim, ds.vocab, ds.blank_id))
        f.write(struct.pack("<B", 1 if ds.pruned else 0))
        f.write(struct.pack("<QQQ", ds.count, ds.source_frames, ds.blank_frames))
        f.write(struct.pack("<I", len(tag)))
        f.write(tag)
        f.write(np.ascontiguousarray(ds.keys, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(ds.values, dtype="<u4").tobytes())


def load_datastore(path, mmap: bool = True) -> Datastore:
    """Load a ``.knds`` file; by default the key/value regions are mapped
    read-only, so startup cost is independent of datastore size."""
    with open(path, "rb") as f:
        head = f.read(_FIXED_HEADER)
        if len(head) < 4 or head[:4] != DATASTORE_MAGIC:
            raise UnsupportedFormat(f"not a datastore file (bad magic): {path}")
        if len(head) < _FIXED_HEADER:
            raise CorruptFile(f"truncated datastore header: {path}")
        version, dim, vocab, blank_id = struct.unpack("<IIII", head[4:20])
        if version != DATASTORE_VERSION:
            raise UnsupportedFormat(f"unsupported datastore version {version}")
        pruned = bool(head[20])
        count, source_frames, blank_frames = struct.unpack("<QQQ", head[21:45])
        (tag_len,) = struct.unpack("<I", head[45:49])
        tag_bytes = f.read(tag_len)
        if len(tag_bytes) != tag_len:
            raise CorruptFile(f"truncated source tag: {path}")
        tag = tag_bytes.decode("utf-8")
        keys_off = _FIXED_HEADER + tag_len
        values_off = keys_off + count * dim * 4
        expected = values_off + count * 4
        f.seek(0, 2)
        if f.tell() != expected:
            raise CorruptFile(
                f"datastore size {f.tell()} does not match expected {expected}: {path}")
        if mmap and count > 0:
            keys = np.memmap(path, dtype="<f4", mode="r", offset=keys_off,
                             shape=(count, dim))
            values = np.memmap(path, dtype="<u4", mode="r", offset=values_off,
                               shape=(count,))
        else:
            f.seek(keys_off)
            keys = np.frombuffer(f.read(count * dim * 4), dtype="<f4").reshape(count, dim)
            values = np.frombuffer(f.read(count * 4), dtype="<u4")
    return Datastore(
        keys=keys,
        values=values,
        dim=dim,
        vocab=vocab,
        blank_id=blank_id,
        pruned=pruned,
        source_tag=tag,
        source_frames=source_frames,
        blank_frames=blank_frames,
    )


def datastore_stats(ds: Datastore) -> dict:
    """Entry count, serialized byte size, and source blank fraction."""
    return {
        "count": ds.count,
        "bytes": serialized_size(ds),
        "blank_fraction_of_source": ds.blank_fraction_of_source,
    }
