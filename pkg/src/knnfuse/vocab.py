"""Vocabulary, blank handling, and the frame-level types shared by all modules."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateToken, EmptyVocabulary, InvalidLogits
from .validation import as_float32_matrix, check_posterior_matrix, freeze

BLANK_TOKEN = "<blank>"

DISTANCE_KINDS = ("l2", "squared_l2")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token list with a designated CTC blank id.

    Token id = position in ``tokens``. The blank id defaults to 0, the
    usual CTC convention, but any in-range index is accepted.
    """

    tokens: tuple[str, ...]
    blank_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) == 0:
            raise EmptyVocabulary("vocabulary has no tokens")
        seen: set[str] = set()
        for tok in self.tokens:
            if tok in seen:
                raise DuplicateToken(f"duplicate token {tok!r}")
            seen.add(tok)
        if not 0 <= self.blank_id < len(self.tokens):
            raise ValueError(
                f"blank_id {self.blank_id} out of range for {len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def blank_token(self) -> str:
        return self.tokens[self.blank_id]

    def text(self, token_ids, joiner: str = "") -> str:
        """Render a collapsed token-id sequence as text."""
        return joiner.join(self.tokens[int(i)] for i in token_ids)


def load_vocabulary(path, blank_id: int = 0) -> Vocabulary:
    """Load a vocabulary file: UTF-8, one token per line, line index = id."""
    raw = Path(path).read_text(encoding="utf-8")
    tokens = raw.splitlines()
    if not tokens:
        raise EmptyVocabulary(f"empty vocabulary file: {path}")
    return Vocabulary(tuple(tokens), blank_id=blank_id)


def save_vocabulary(path, vocab: Vocabulary) -> None:
    """Write one token per line with LF endings; round-trips with load."""
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def normalize_posteriors(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction, computed in float64.

    Accepts a T x V logit matrix and returns a T x V probability matrix
    whose rows sum to 1 within 1e-6. Raises InvalidLogits on NaN/Inf.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidLogits(f"logits must be 2-D, got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise InvalidLogits("logits contain NaN or infinite entries")
    if arr.shape[0] == 0:
        return arr.copy()
    shifted = arr - arr.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


@dataclass
class UtteranceFrames:
    """One utterance's per-frame embeddings and CTC posteriors.

    ``embeddings`` is T x D float32 (the retrieval keys/queries),
    ``posteriors`` is T x V float32 with probability rows. Instances are
    validated and frozen at construction; rows are stored exactly as
    given (consumers renormalize where exact normalization matters).
    """

    utt_id: str
    embeddings: np.ndarray
    posteriors: np.ndarray

    def __post_init__(self):
        self.embeddings = freeze(as_float32_matrix(self.embeddings, "embeddings"))
        self.posteriors = freeze(as_float32_matrix(self.posteriors, "posteriors"))
        if self.embeddings.shape[0] != self.posteriors.shape[0]:
            raise ValueError(
                f"{self.utt_id}: embeddings have {self.embeddings.shape[0]} frames, "
                f"posteriors have {self.posteriors.shape[0]}"
            )
        check_posterior_matrix(self.posteriors)

    @property
    def num_frames(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.posteriors.shape[1]


@dataclass(frozen=True)
class FusionConfig:
    """Hyperparameters for retrieval fusion.

    lam is the interpolation weight on the retrieved distribution, tau the
    softmax temperature over neighbor distances, k the neighbor count.
    """

    lam: float = 0.0
    tau: float = 1.0
    k: int = 1024
    skip_blank_decode: bool = False
    blank_id: int = 0
    distance_kind: str = "l2"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.blank_id < 0:
            raise ValueError(f"blank_id must be >= 0, got {self.blank_id}")
        if self.distance_kind not in DISTANCE_KINDS:
            raise ValueError(f"distance_kind must be one of {DISTANCE_KINDS}")
