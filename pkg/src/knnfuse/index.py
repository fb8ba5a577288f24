"""Exact and inverted-file k-nearest-neighbor search over datastore keys.

Both index types share one distance and selection path, so a full probe
(nprobe = n_centroids) of the IVF index reproduces flat search exactly,
including tie order. Ties on equal distance always break to the lowest
entry id; distances accumulate in float64 over the float32 keys.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .datastore import Datastore
from .errors import CorruptFile, DimMismatch, TooManyCentroids, UnsupportedFormat
from .validation import as_float32_matrix, as_query_vector, freeze

IVF_MAGIC = b"KNIV"
IVF_VERSION = 1

KMEANS_CONVERGENCE = 1e-6


@dataclass(frozen=True)
class NeighborSet:
    """Retrieved neighbors for one query, ascending by (distance, entry_id).

    ``distances`` are reported per ``distance_kind`` ("l2" or
    "squared_l2"); ``values`` are the datastore token ids aligned with
    ``entry_ids``.
    """

    entry_ids: np.ndarray
    distances: np.ndarray
    values: np.ndarray
    distance_kind: str = "l2"

    def __post_init__(self):
        object.__setattr__(self, "entry_ids", freeze(np.asarray(self.entry_ids, dtype=np.int64)))
        object.__setattr__(self, "distances", freeze(np.asarray(self.distances, dtype=np.float64)))
        object.__setattr__(self, "values", freeze(np.asarray(self.values)))
        if not (len(self.entry_ids) == len(self.distances) == len(self.values)):
            raise DimMismatch("neighbor arrays must have equal length")

    def __len__(self) -> int:
        return len(self.entry_ids)


def _sq_distances(keys: np.ndarray, candidate_ids: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared L2 from ``query`` to each candidate key, in float64.

    Candidates are gathered into a contiguous block first so the per-row
    reduction is identical no matter which subset a row appears in; flat
    and IVF searches therefore compute bit-equal distances.
    """
    rows = np.asarray(keys)[candidate_ids].astype(np.float64)
    diff = rows - np.asarray(query, dtype=np.float64)
    return (diff * diff).sum(axis=1)


def _top_by_distance(d2: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k smallest (distance, id) pairs, sorted ascending."""
    n = d2.shape[0]
    if k < n:
        part = np.argpartition(d2, k - 1)[:k]
        d_star = d2[part].max()
        keep = np.flatnonzero(d2 <= d_star)  # pull in every tie at the boundary
    else:
        keep = np.arange(n)
    order = keep[np.lexsort((ids[keep], d2[keep]))]
    return order[: min(k, n)]


def _neighbor_set(ds: Datastore, candidate_ids: np.ndarray, query: np.ndarray,
                  k: int, distance_kind: str) -> NeighborSet:
    if candidate_ids.size == 0:
        empty = np.zeros(0)
        return NeighborSet(empty, empty, np.zeros(0, dtype=np.uint32), distance_kind)
    d2 = _sq_distances(ds.keys, candidate_ids, query)
    pick = _top_by_distance(d2, candidate_ids, k)
    chosen = candidate_ids[pick]
    dist = d2[pick]
    if distance_kind == "l2":
        dist = np.sqrt(dist)
    return NeighborSet(chosen, dist, np.asarray(ds.values)[chosen], distance_kind)


def _check_query(ds: Datastore, query, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return as_query_vector(query, ds.dim)


def search_flat(ds: Datastore, query, k: int, distance_kind: str = "l2") -> NeighborSet:
    """Exact top-k neighbors of ``query`` over all datastore entries."""
    q = _check_query(ds, query, k)
    return _neighbor_set(ds, np.arange(ds.count, dtype=np.int64), q, k, distance_kind)


class FlatIndex(BaseEstimator):
    """Exhaustive L2 index; the correctness reference for IvfIndex.

    fit(X) stores the keys; kneighbors(X, n) returns (distances, ids)
    arrays like sklearn's NearestNeighbors, with ties broken by id.
    """

    def __init__(self, distance_kind: str = "l2"):
        self.distance_kind = distance_kind

    def fit(self, X, y=None):
        self.keys_ = freeze(as_float32_matrix(X, "keys"))
        return self

    def _candidates(self, query: np.ndarray) -> np.ndarray:
        return np.arange(self.keys_.shape[0], dtype=np.int64)

    def kneighbors(self, X, n_neighbors: int = 1):
        if not hasattr(self, "keys_"):
            raise NotFittedError("FlatIndex is not fitted")
        queries = np.atleast_2d(np.asarray(X, dtype=np.float32))
        if queries.shape[1] != self.keys_.shape[1]:
            raise DimMismatch(
                f"query dim {queries.shape[1]} != index dim {self.keys_.shape[1]}")
        dists, ids = [], []
        for q in queries:
            cand = self._candidates(q)
            d2 = _sq_distances(self.keys_, cand, q)
            pick = _top_by_distance(d2, cand, n_neighbors)
            d = d2[pick]
            if self.distance_kind == "l2":
                d = np.sqrt(d)
            dists.append(d)
            ids.append(cand[pick])
        return np.stack(dists), np.stack(ids)


def _kmeans_pp_init(keys64: np.ndarray, n_centroids: int, rng: np.random.Generator) -> np.ndarray:
    n = keys64.shape[0]
    centroids = np.empty((n_centroids, keys64.shape[1]), dtype=np.float64)
    centroids[0] = keys64[int(rng.integers(n))]
    d2 = np.square(keys64 - centroids[0]).sum(axis=1)
    for c in range(1, n_centroids):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # remaining points coincide with chosen centroids
            nxt = int(rng.integers(n))
        centroids[c] = keys64[nxt]
        np.minimum(d2, np.square(keys64 - centroids[c]).sum(axis=1), out=d2)
    return centroids


def _assign(keys64: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per key; argmin ties go to the lowest centroid id."""
    # factorized form keeps the (N, C) matrix small; fine for assignment,
    # search never relies on these values
    cross = keys64 @ centroids.T
    d2 = np.square(centroids).sum(axis=1)[None, :] - 2.0 * cross
    return d2.argmin(axis=1)


class IvfIndex(BaseEstimator):
    """Inverted-file index: k-means coarse quantizer over the keys.

    fit(X) runs k-means++ seeded Lloyd iterations and buckets every key
    into its nearest centroid's list. Queries scan the ``nprobe`` nearest
    lists; probing all of them is guaranteed to match FlatIndex output
    exactly because the union of the lists is the whole key set.
    """

    def __init__(self, n_centroids: int | None = None, nprobe: int | None = None,
                 max_iters: int = 25, seed: int = 0, distance_kind: str = "l2"):
        self.n_centroids = n_centroids
        self.nprobe = nprobe
        self.max_iters = max_iters
        self.seed = seed
        self.distance_kind = distance_kind

    def fit(self, X, y=None):
        keys = freeze(as_float32_matrix(X, "keys"))
        n = keys.shape[0]
        n_centroids = self.n_centroids
        if n_centroids is None:
            n_centroids = max(1, round(np.sqrt(n)))
        if n_centroids < 1:
            raise ValueError(f"n_centroids must be >= 1, got {n_centroids}")
        if n_centroids > n:
            raise TooManyCentroids(f"n_centroids {n_centroids} > {n} entries")
        keys64 = keys.astype(np.float64)
        rng = np.random.default_rng(self.seed)
        centroids = _kmeans_pp_init(keys64, n_centroids, rng)
        assign = _assign(keys64, centroids)
        for _ in range(self.max_iters):
            new_centroids = centroids.copy()
            for c in range(n_centroids):
                members = assign == c
                if members.any():
                    new_centroids[c] = keys64[members].mean(axis=0)
            move = np.sqrt(np.square(new_centroids - centroids).sum(axis=1)).max()
            centroids = new_centroids
            assign = _assign(keys64, centroids)
            if move < KMEANS_CONVERGENCE:
                break
        self.keys_ = keys
        self.centroids_ = freeze(centroids.astype(np.float32))
        self.assignments_ = freeze(assign.astype(np.int64))
        self.lists_ = tuple(
            freeze(np.flatnonzero(assign == c).astype(np.int64))
            for c in range(n_centroids)
        )
        return self

    @property
    def num_centroids(self) -> int:
        return self.centroids_.shape[0]

    def resolve_nprobe(self, nprobe: int | None) -> int:
        if nprobe is None:
            nprobe = self.nprobe
        if nprobe is None:
            nprobe = max(1, self.num_centroids // 8)
        if not 1 <= nprobe <= self.num_centroids:
            raise ValueError(
                f"nprobe must be in [1, {self.num_centroids}], got {nprobe}")
        return nprobe

    def probe_lists(self, query: np.ndarray, nprobe: int) -> np.ndarray:
        """Entry ids from the nprobe centroids nearest to ``query``."""
        cents = np.arange(self.num_centroids, dtype=np.int64)
        d2 = _sq_distances(self.centroids_, cents, query)
        order = np.lexsort((cents, d2))[:nprobe]
        picked = [self.lists_[c] for c in order]
        if not picked:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(picked)

    def kneighbors(self, X, n_neighbors: int = 1, nprobe: int | None = None):
        if not hasattr(self, "centroids_"):
            raise NotFittedError("IvfIndex is not fitted")
        if not hasattr(self, "keys_") or self.keys_ is None:
            raise NotFittedError(
                "IvfIndex was loaded without keys; search through search_ivf")
        nprobe = self.resolve_nprobe(nprobe)
        queries = np.atleast_2d(np.asarray(X, dtype=np.float32))
        if queries.shape[1] != self.keys_.shape[1]:
            raise DimMismatch(
                f"query dim {queries.shape[1]} != index dim {self.keys_.shape[1]}")
        dists, ids = [], []
        for q in queries:
            cand = self.probe_lists(q, nprobe)
            d2 = _sq_distances(self.keys_, cand, q)
            pick = _top_by_distance(d2, cand, n_neighbors)
            d = d2[pick]
            if self.distance_kind == "l2":
                d = np.sqrt(d)
            dists.append(d)
            ids.append(cand[pick])
        return dists, ids


def train_ivf(ds: Datastore, n_centroids: int | None = None,
              max_iters: int = 25, seed: int = 0) -> IvfIndex:
    """Fit an IvfIndex on the datastore keys."""
    index = IvfIndex(n_centroids=n_centroids, max_iters=max_iters, seed=seed)
    return index.fit(ds.keys)


def search_ivf(index: IvfIndex, ds: Datastore, query, k: int,
               nprobe: int | None = None, distance_kind: str = "l2") -> NeighborSet:
    """Top-k over the entries in the ``nprobe`` nearest inverted lists.

    With nprobe = n_centroids this equals search_flat exactly, tie order
    included.
    """
    q = _check_query(ds, query, k)
    total = sum(len(lst) for lst in index.lists_)
    if total != ds.count:
        raise DimMismatch(
            f"index covers {total} entries but datastore has {ds.count}")
    if index.centroids_.shape[1] != ds.dim:
        raise DimMismatch(
            f"index dim {index.centroids_.shape[1]} != datastore dim {ds.dim}")
    nprobe = index.resolve_nprobe(nprobe)
    cand = index.probe_lists(q, nprobe)
    return _neighbor_set(ds, cand, q, k, distance_kind)


def save_ivf(path, index: IvfIndex) -> None:
    """Serialize centroids and inverted lists (``.knivf``)."""
    if not hasattr(index, "centroids_"):
        raise NotFittedError("IvfIndex is not fitted")
    cents = np.ascontiguousarray(index.centroids_, dtype="<f4")
    with open(path, "wb") as f:
        f.write(IVF_MAGIC)
        f.write(struct.pack("<III", IVF_VERSION, cents.shape[0], cents.shape[1]))
        f.write(cents.tobytes())
        lengths = np.array([len(lst) for lst in index.lists_], dtype="<u8")
        f.write(lengths.tobytes())
        for lst in index.lists_:
            f.write(np.ascontiguousarray(lst, dtype="<u8").tobytes())


def load_ivf(path) -> IvfIndex:
    """Load a ``.knivf`` index. The result carries no keys: pair it with
    the datastore it was trained on via search_ivf."""
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 4 or head[:4] != IVF_MAGIC:
            raise UnsupportedFormat(f"not an IVF index file (bad magic): {path}")
        if len(head) < 16:
            raise CorruptFile(f"truncated IVF header: {path}")
        version, n_centroids, dim = struct.unpack("<III", head[4:])
        if version != IVF_VERSION:
            raise UnsupportedFormat(f"unsupported IVF version {version}")
        cents_bytes = f.read(n_centroids * dim * 4)
        if len(cents_bytes) != n_centroids * dim * 4:
            raise CorruptFile(f"truncated centroids: {path}")
        centroids = np.frombuffer(cents_bytes, dtype="<f4").reshape(n_centroids, dim)
        len_bytes = f.read(n_centroids * 8)
        if len(len_bytes) != n_centroids * 8:
            raise CorruptFile(f"truncated list lengths: {path}")
        lengths = np.frombuffer(len_bytes, dtype="<u8")
        lists = []
        for c, length in enumerate(lengths):
            ids_bytes = f.read(int(length) * 8)
            if len(ids_bytes) != int(length) * 8:
                raise CorruptFile(f"truncated inverted list {c}: {path}")
            lists.append(freeze(np.frombuffer(ids_bytes, dtype="<u8").astype(np.int64)))
        if f.read(1):
            raise CorruptFile(f"trailing bytes after inverted lists: {path}")
    index = IvfIndex(n_centroids=n_centroids)
    index.keys_ = None
    index.centroids_ = freeze(centroids)
    total = int(lengths.sum())
    assignments = np.empty(total, dtype=np.int64)
    for c, lst in enumerate(lists):
        assignments[lst] = c
    index.assignments_ = freeze(assignments)
    index.lists_ = tuple(lists)
    return index
