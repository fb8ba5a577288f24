"""Per-frame retrieval fusion with CTC posteriors and greedy collapse.

For each frame the decoder retrieves k nearest datastore entries, turns
them into a distribution over the vocabulary (temperature softmax on
negative distances, mass aggregated per token), interpolates it with the
CTC posterior, and finally collapses the per-frame argmax sequence the
usual CTC way (dedupe, then drop blanks).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .datastore import Datastore, build_datastore
from .errors import DimMismatch, EmptyRetrieval
from .index import IvfIndex, NeighborSet, search_flat, search_ivf, train_ivf
from .vocab import FusionConfig, UtteranceFrames


@dataclass
class FrameDecision:
    """Everything the decoder saw and emitted for one frame.

    ``p_knn`` is None on frames where retrieval was bypassed (blank CTC
    argmax under skip-blank decoding) or returned nothing.
    """

    token_id: int
    skipped: bool
    p_ctc: np.ndarray
    p_knn: np.ndarray | None
    p_fused: np.ndarray

    @property
    def ctc_token(self) -> int:
        return int(np.argmax(self.p_ctc))

    @property
    def knn_token(self) -> int | None:
        return None if self.p_knn is None else int(np.argmax(self.p_knn))


@dataclass
class DecodeResult:
    utt_id: str
    token_ids: list[int]
    frames: list[FrameDecision]
    queries_issued: int = 0
    skipped_frames: int = 0
    empty_retrieval_fallbacks: int = 0


def compute_pknn(neighbors: NeighborSet, tau: float, vocab: int) -> np.ndarray:
    """Distribution over the vocabulary from retrieved neighbors.

    Each neighbor contributes exp(-distance/tau), with the minimum
    distance subtracted before exponentiation; the shift cancels in the
    normalization, so the result is exact while never underflowing.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if len(neighbors) == 0:
        raise EmptyRetrieval("no neighbors to aggregate")
    d = neighbors.distances
    w = np.exp(-(d - d.min()) / tau)
    p = np.zeros(vocab, dtype=np.float64)
    np.add.at(p, neighbors.values.astype(np.int64), w)
    p /= w.sum()
    return p


def fuse(p_knn, p_ctc, lam: float) -> np.ndarray:
    """lam * p_knn + (1 - lam) * p_ctc, elementwise.

    The endpoints are exact: lam=0 returns p_ctc bit-for-bit, lam=1
    returns p_knn bit-for-bit.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    a = np.asarray(p_knn, dtype=np.float64)
    b = np.asarray(p_ctc, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"distribution lengths differ: {a.shape} vs {b.shape}")
    return lam * a + (1.0 - lam) * b


def ctc_collapse(token_ids, blank_id: int) -> list[int]:
    """Best-path collapse: drop consecutive duplicates, then blanks."""
    out: list[int] = []
    prev: int | None = None
    for t in token_ids:
        t = int(t)
        if t != prev and t != blank_id:
            out.append(t)
        prev = t
    return out


def _normalized_rows(posteriors: np.ndarray) -> np.ndarray:
    """Posterior rows renormalized exactly in float64.

    Ingest tolerates row sums within 1e-4 of 1; fusion needs exactly
    normalized inputs, so the division happens here, at point of use.
    Argmaxes are unchanged (positive scaling per row).
    """
    rows = posteriors.astype(np.float64)
    return rows / rows.sum(axis=1, keepdims=True)


def decode_utterance(
    utt: UtteranceFrames,
    ds: Datastore,
    cfg: FusionConfig,
    index: IvfIndex | None = None,
    nprobe: int | None = None,
) -> DecodeResult:
    """Decode one utterance against a datastore.

    Frames whose CTC argmax is blank are bypassed entirely (no index
    query) when cfg.skip_blank_decode is set. Retrieval that comes back
    empty (empty datastore) falls back to the CTC row and bumps the
    fallback counter instead of failing.
    """
    if utt.dim != ds.dim:
        raise DimMismatch(f"{utt.utt_id}: frame dim {utt.dim} != datastore dim {ds.dim}")
    if utt.vocab_size != ds.vocab:
        raise DimMismatch(
            f"{utt.utt_id}: vocab {utt.vocab_size} != datastore vocab {ds.vocab}")
    if cfg.blank_id >= utt.vocab_size:
        raise DimMismatch(
            f"blank_id {cfg.blank_id} out of range for vocab {utt.vocab_size}")

    rows = _normalized_rows(utt.posteriors)
    frames: list[FrameDecision] = []
    tokens: list[int] = []
    queries = 0
    skipped = 0
    fallbacks = 0
    for t in range(utt.num_frames):
        p_ctc = rows[t]
        ctc_tok = int(np.argmax(p_ctc))
        if cfg.skip_blank_decode and ctc_tok == cfg.blank_id:
            skipped += 1
            decision = FrameDecision(ctc_tok, True, p_ctc, None, p_ctc)
        else:
            query = utt.embeddings[t]
            if index is None:
                neighbors = search_flat(ds, query, cfg.k, cfg.distance_kind)
            else:
                neighbors = search_ivf(index, ds, query, cfg.k, nprobe,
                                       cfg.distance_kind)
            queries += 1
            if len(neighbors) == 0:
                fallbacks += 1
                decision = FrameDecision(ctc_tok, False, p_ctc, None, p_ctc)
            else:
                p_knn = compute_pknn(neighbors, cfg.tau, utt.vocab_size)
                p_fused = fuse(p_knn, p_ctc, cfg.lam)
                decision = FrameDecision(int(np.argmax(p_fused)), False,
                                         p_ctc, p_knn, p_fused)
        frames.append(decision)
        tokens.append(decision.token_id)
    return DecodeResult(
        utt_id=utt.utt_id,
        token_ids=ctc_collapse(tokens, cfg.blank_id),
        frames=frames,
        queries_issued=queries,
        skipped_frames=skipped,
        empty_retrieval_fallbacks=fallbacks,
    )


def decode_corpus(
    utterances: Iterable[UtteranceFrames],
    ds: Datastore,
    cfg: FusionConfig,
    index: IvfIndex | None = None,
    nprobe: int | None = None,
    threads: int = 1,
) -> list[DecodeResult]:
    """Decode utterances in corpus order; results are independent of
    ``threads`` because decoding is pure given the immutable datastore."""

    def _one(utt: UtteranceFrames) -> DecodeResult:
        return decode_utterance(utt, ds, cfg, index=index, nprobe=nprobe)

    if threads <= 1:
        return [_one(u) for u in utterances]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_one, utterances))


def aggregate_counters(results: Sequence[DecodeResult]) -> dict:
    return {
        "utterances": len(results),
        "frames": sum(len(r.frames) for r in results),
        "queries_issued": sum(r.queries_issued for r in results),
        "skipped_frames": sum(r.skipped_frames for r in results),
        "empty_retrieval_fallbacks": sum(r.empty_retrieval_fallbacks for r in results),
    }


class FusedCtcDecoder(BaseEstimator):
    """Retrieval-fused CTC decoder with a fit/predict surface.

    fit(X) builds the frame-level datastore (and, for index="ivf", the
    coarse quantizer) from an iterable of UtteranceFrames; no transcripts
    are consumed, so X may be unlabeled. predict(X) returns collapsed
    token-id sequences decoded with the fused distribution.
    """

    def __init__(self, lam: float = 0.0, tau: float = 1.0, k: int = 1024,
                 skip_blank_decode: bool = False, skip_blank_store: bool = False,
                 blank_id: int = 0, distance_kind: str = "l2",
                 index: str = "flat", n_centroids: int | None = None,
                 nprobe: int | None = None, max_iters: int = 25, seed: int = 0,
                 threads: int = 1):
        self.lam = lam
        self.tau = tau
        self.k = k
        self.skip_blank_decode = skip_blank_decode
        self.skip_blank_store = skip_blank_store
        self.blank_id = blank_id
        self.distance_kind = distance_kind
        self.index = index
        self.n_centroids = n_centroids
        self.nprobe = nprobe
        self.max_iters = max_iters
        self.seed = seed
        self.threads = threads

    def _fusion_config(self) -> FusionConfig:
        return FusionConfig(lam=self.lam, tau=self.tau, k=self.k,
                            skip_blank_decode=self.skip_blank_decode,
                            blank_id=self.blank_id,
                            distance_kind=self.distance_kind)

    def fit(self, X, y=None):
        """Build the datastore (and IVF index) from utterance frames."""
        if self.index not in ("flat", "ivf"):
            raise ValueError(f"index must be 'flat' or 'ivf', got {self.index!r}")
        self.datastore_ = build_datastore(X, skip_blank_store=self.skip_blank_store,
                                          blank_id=self.blank_id)
        if self.index == "ivf" and self.datastore_.count > 0:
            self.index_ = train_ivf(self.datastore_, n_centroids=self.n_centroids,
                                    max_iters=self.max_iters, seed=self.seed)
        else:
            self.index_ = None
        return self

    def _check_fitted(self):
        if not hasattr(self, "datastore_"):
            raise NotFittedError("FusedCtcDecoder is not fitted")

    def decode(self, X) -> list[DecodeResult]:
        """Full per-frame decode records for an iterable of utterances."""
        self._check_fitted()
        return decode_corpus(X, self.datastore_, self._fusion_config(),
                             index=self.index_, nprobe=self.nprobe,
                             threads=self.threads)

    def predict(self, X) -> list[list[int]]:
        """Collapsed token-id sequence per utterance."""
        return [r.token_ids for r in self.decode(X)]

    def score(self, X, y) -> float:
        """Negative pooled token error rate against reference id sequences
        (greater is better, 0 is perfect)."""
        from .metrics import corpus_error_rate

        hyps = self.predict(X)
        counts = corpus_error_rate(
            (tuple(ref), tuple(hyp)) for ref, hyp in zip(y, hyps))
        return -counts.rate
