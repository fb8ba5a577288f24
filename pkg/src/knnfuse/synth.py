"""Deterministic synthetic corpus generator with known class geometry.

Class centers are fixed, seed-independent vectors: class c (1-based, 0 is
blank) sits at sqrt(D) times signed unit basis vector e_{(c-1) mod D},
positive sign for the first D classes and negative for the next D; blank
sits at the origin. A scalar ``center_shift`` added to every coordinate
moves the whole constellation, which stands in for a domain change while
keeping the internal geometry identical. Because centers do not depend on
the seed, corpora from different seeds are mutually compatible.
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoder import ctc_collapse
from .frames_io import FramesFileHeader, write_frames, write_manifest
from .vocab import BLANK_TOKEN, UtteranceFrames, Vocabulary, normalize_posteriors, save_vocabulary

# single user-perceived character per class keeps char-unit scoring valid
CLASS_TOKEN_POOL = string.ascii_lowercase + string.ascii_uppercase + string.digits


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_utts: int = 20
    frames_min: int = 8
    frames_max: int = 24
    num_classes: int = 8
    dim: int = 16
    blank_rate: float = 0.5
    noise_sigma: float = 0.1
    posterior_error_rate: float = 0.0
    posterior_sharpness: float = 4.0
    center_shift: float = 0.0

    def __post_init__(self):
        if self.num_utts < 0:
            raise ValueError("num_utts must be >= 0")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ValueError("need 1 <= frames_min <= frames_max")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 1 <= self.num_classes <= min(2 * self.dim, len(CLASS_TOKEN_POOL)):
            raise ValueError(
                f"num_classes must be in [1, {min(2 * self.dim, len(CLASS_TOKEN_POOL))}]")
        if not 0.0 <= self.blank_rate < 1.0:
            raise ValueError("blank_rate must be in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.posterior_error_rate < 1.0:
            raise ValueError("posterior_error_rate must be in [0, 1)")
        if self.posterior_error_rate > 0 and self.num_classes < 2:
            raise ValueError("posterior corruption needs at least 2 classes")
        if self.posterior_sharpness <= 0:
            raise ValueError("posterior_sharpness must be positive")

    @property
    def vocab_size(self) -> int:
        return self.num_classes + 1


@dataclass(frozen=True)
class SynthSummary:
    frames_path: Path
    manifest_path: Path
    labels_path: Path
    vocab_path: Path
    num_utts: int
    total_frames: int
    blank_frames: int


def class_centers(num_classes: int, dim: int, center_shift: float = 0.0) -> np.ndarray:
    """(num_classes + 1) x dim float64 center matrix; row 0 is blank."""
    centers = np.zeros((num_classes + 1, dim), dtype=np.float64)
    scale = np.sqrt(dim)
    for c in range(1, num_classes + 1):
        idx = (c - 1) % dim
        sign = 1.0 if (c - 1) < dim else -1.0
        centers[c, idx] = sign * scale
    return centers + center_shift


def synth_vocabulary(num_classes: int) -> Vocabulary:
    return Vocabulary((BLANK_TOKEN,) + tuple(CLASS_TOKEN_POOL[:num_classes]))


def generate_corpus(cfg: SynthConfig, out_dir) -> SynthSummary:
    """Write frames.knnf, manifest.jsonl, labels.jsonl, and vocab.txt.

    Per frame: a true label (blank with probability blank_rate, else a
    uniform class), an embedding sampled around the label's center, and a
    posterior row that is a softened one-hot of the label, except that
    non-blank frames are flipped to a wrong class with probability
    posterior_error_rate (the way a model substitutes sounds). Fully
    deterministic given the seed; byte-identical across runs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    centers = class_centers(cfg.num_classes, cfg.dim, cfg.center_shift)
    vocab = synth_vocabulary(cfg.num_classes)

    utterances: list[UtteranceFrames] = []
    manifest_rows: list[tuple[str, str]] = []
    label_rows: list[dict] = []
    total_frames = 0
    blank_frames = 0
    for i in range(cfg.num_utts):
        utt_id = f"utt-{i:05d}"
        num_frames = int(rng.integers(cfg.frames_min, cfg.frames_max + 1))
        is_blank = rng.random(num_frames) < cfg.blank_rate
        class_draw = rng.integers(1, cfg.num_classes + 1, size=num_frames)
        labels = np.where(is_blank, 0, class_draw)
        noise = rng.normal(0.0, cfg.noise_sigma, size=(num_frames, cfg.dim))
        corrupt = rng.random(num_frames) < cfg.posterior_error_rate
        wrong_draw = (rng.integers(1, max(cfg.num_classes, 2), size=num_frames)
                      if cfg.num_classes >= 2 else np.ones(num_frames, dtype=np.int64))

        embeddings = (centers[labels] + noise).astype(np.float32)
        observed = labels.copy()
        flip = corrupt & (labels != 0)
        # wrong_draw in [1, num_classes-1]; bumping values >= true label
        # makes the flip uniform over the other classes
        wrong = wrong_draw + (wrong_draw >= labels)
        observed[flip] = wrong[flip]

        logits = np.zeros((num_frames, cfg.vocab_size), dtype=np.float64)
        logits[np.arange(num_frames), observed] = cfg.posterior_sharpness
        posteriors = normalize_posteriors(logits).astype(np.float32)

        total_frames += num_frames
        blank_frames += int(is_blank.sum())
        utterances.append(UtteranceFrames(utt_id, embeddings, posteriors))
        manifest_rows.append((utt_id, vocab.text(ctc_collapse(labels, 0))))
        label_rows.append({"utt_id": utt_id, "labels": [int(x) for x in labels]})

    frames_path = out_dir / "frames.knnf"
    manifest_path = out_dir / "manifest.jsonl"
    labels_path = out_dir / "labels.jsonl"
    vocab_path = out_dir / "vocab.txt"
    header = FramesFileHeader(dim=cfg.dim, vocab=cfg.vocab_size)
    write_frames(frames_path, header, utterances)
    write_manifest(manifest_path, manifest_rows)
    with open(labels_path, "w", encoding="utf-8") as f:
        for row in label_rows:
            f.write(json.dumps(row) + "\n")
    save_vocabulary(vocab_path, vocab)
    return SynthSummary(
        frames_path=frames_path,
        manifest_path=manifest_path,
        labels_path=labels_path,
        vocab_path=vocab_path,
        num_utts=cfg.num_utts,
        total_frames=total_frames,
        blank_frames=blank_frames,
    )
