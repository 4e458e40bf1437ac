"""Immutable multi-modal memory bank with exact top-k cosine retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import MODALITIES, TargetTransform, VideoRecord, target_matrix
from .numerics import UsageError

EXCLUDED = -math.inf
_NORM_EPS = 1e-12


class UndefinedSimilarity(ValueError):
    pass


def normalize(v) -> np.ndarray | None:
    """L2-normalise to 32-bit storage; ``None`` for zero vectors."""
    v64 = np.asarray(v, dtype=np.float64)
    n = math.sqrt(float(np.dot(v64, v64)))
    if n < _NORM_EPS:
        return None
    return (v64 / n).astype(np.float32)


def cosine(u, v) -> float:
    u64 = np.asarray(u, dtype=np.float64)
    v64 = np.asarray(v, dtype=np.float64)
    nu = math.sqrt(float(np.dot(u64, u64)))
    nv = math.sqrt(float(np.dot(v64, v64)))
    if nu < _NORM_EPS or nv < _NORM_EPS:
        raise UndefinedSimilarity("cosine similarity undefined for a zero vector")
    return float(np.dot(u64 / nu, v64 / nv))


def combined_score(sims: Sequence[float], query_avail: Sequence[bool], item_avail: Sequence[bool],
                   weights: Sequence[float] | None = None) -> float:
    """Weighted mean of similarities over modalities present on both sides.

    Returns ``EXCLUDED`` (-inf) when no modality is shared.
    """
    weights = weights or (1.0,) * len(sims)
    num = den = 0.0
    for s, q, i, w in zip(sims, query_avail, item_avail, weights):
        if q and i:
            num += w * s
            den += w
    return num / den if den > 0 else EXCLUDED


@dataclass(frozen=True)
class Neighbor:
    index: int
    video_id: str
    sims: tuple[float | None, float | None, float | None]
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    neighbors: tuple[Neighbor, ...]

    def __len__(self):
        return len(self.neighbors)

    @property
    def ids(self) -> list[str]:
        return [n.video_id for n in self.neighbors]

    @property
    def indices(self) -> list[int]:
        return [n.index for n in self.neighbors]


@dataclass(frozen=True, eq=False)
class MemoryBank:
    """Per-modality unit-norm embeddings plus parallel id/author/target arrays.

    ``embeddings[m]`` is (n, d_m) float32 with zero rows where ``mask[:, j]``
    is False. ``targets`` holds transformed target values, (n, 4) float32.
    """

    embeddings: tuple[np.ndarray, np.ndarray, np.ndarray]
    mask: np.ndarray
    video_ids: tuple[str, ...]
    author_ids: tuple[str, ...]
    targets: np.ndarray
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __len__(self) -> int:
        return len(self.video_ids)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(e.shape[1] for e in self.embeddings)

    def id_rank(self) -> np.ndarray:
        # rank of each item's video_id in ascending order; used as tie-break key
        cached = self.__dict__.get("_id_rank")
        if cached is None:
            cached = np.empty(len(self), dtype=np.int64)
            cached[np.argsort(np.array(self.video_ids, dtype=object), kind="stable")] = np.arange(len(self))
            object.__setattr__(self, "_id_rank", cached)
        return cached


def query_vectors(record: VideoRecord, dims: Sequence[int]) -> tuple[list[np.ndarray], np.ndarray]:
    """Normalised query embeddings (zeros where unavailable) and availability flags."""
    vecs, avail = [], np.zeros(3, dtype=bool)
    for j, m in enumerate(MODALITIES):
        v = record.embedding(m)
        nv = None if v is None else normalize(v)
        if nv is not None and nv.shape[0] != dims[j]:
            raise UsageError(f"{record.video_id}: {m} dim {nv.shape[0]} != bank dim {dims[j]}")
        avail[j] = nv is not None
        vecs.append(nv if nv is not None else np.zeros(dims[j], dtype=np.float32))
    return vecs, avail


def build(records: Sequence[VideoRecord], transform: TargetTransform = TargetTransform(),
          weights: Sequence[float] = (1.0, 1.0, 1.0), dims: Sequence[int] | None = None) -> MemoryBank:
    """Bank over labeled, playable ``records``.

    ``dims`` defaults to the first present embedding per modality; pass the
    manifest dims when a modality may be absent from every record.
    """
    if not records:
        raise UsageError("cannot build a memory bank from no records")
    if dims is None:
        dims = []
        for m in MODALITIES:
            d = next((r.embedding(m).shape[0] for r in records if r.embedding(m) is not None), None)
            dims.append(d if d is not None else 1)
    dims = [int(d) for d in dims]
    n = len(records)
    embs = [np.zeros((n, d), dtype=np.float32) for d in dims]
    mask = np.zeros((n, 3), dtype=bool)
    for i, r in enumerate(records):
        if not r.playable or not r.labeled:
            raise UsageError(f"{r.video_id}: memory bank items must be playable and labeled")
        vecs, avail = query_vectors(r, dims)
        for j in range(3):
            embs[j][i] = vecs[j]
        mask[i] = avail
    targets = transform.forward(target_matrix(records)).astype(np.float32)
    for a in (*embs, mask, targets):
        a.flags.writeable = False
    return MemoryBank(tuple(embs), mask, tuple(r.video_id for r in records),
                      tuple(r.author_id for r in records), targets, tuple(float(w) for w in weights))


def score_matrix(bank: MemoryBank, qvecs: Sequence[np.ndarray], qmask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarities for a batch of queries.

    ``qvecs[j]`` is (q, d_j) normalised, ``qmask`` (q, 3). Returns per-modality
    cosine (q, n, 3) and combined score (q, n) with EXCLUDED where nothing is shared.
    """
    sims = np.stack([np.asarray(qvecs[j], dtype=np.float64) @ bank.embeddings[j].astype(np.float64).T
                     for j in range(3)], axis=-1)
    shared = qmask[:, None, :] & bank.mask[None, :, :]
    w = np.asarray(bank.weights, dtype=np.float64)
    den = (shared * w).sum(axis=-1)
    num = (np.where(shared, sims, 0.0) * w).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(den > 0, num / np.where(den > 0, den, 1.0), EXCLUDED)
    return sims, score


def _rank(score_row: np.ndarray, id_rank: np.ndarray, k: int, exclude: int | None) -> np.ndarray:
    eligible = np.isfinite(score_row)
    if exclude is not None:
        eligible[exclude] = False
    idx = np.flatnonzero(eligible)
    if idx.size > k:
        # keep everything tied with the k-th best so the id tie-break stays exact
        kth = np.partition(score_row[idx], idx.size - k)[idx.size - k]
        idx = idx[score_row[idx] >= kth]
    order = np.lexsort((id_rank[idx], -score_row[idx]))
    return idx[order[:k]]


def retrieve(bank: MemoryBank, query: VideoRecord, k: int = 10, exclude_id: str | None = None) -> RetrievalResult:
    """Exact top-k by combined score; ties broken by ascending video_id."""
    if k < 1:
        raise UsageError("k must be >= 1")
    qvecs, qmask = query_vectors(query, bank.dims)
    if not qmask.any():
        raise UsageError(f"{query.video_id}: query has no available modality")
    sims, score = score_matrix(bank, [v[None, :] for v in qvecs], qmask[None, :])
    exclude = _index_of(bank, exclude_id)
    picked = _rank(score[0], bank.id_rank(), k, exclude)
    return RetrievalResult(query.video_id, tuple(_neighbor(bank, i, sims[0, i], qmask, score[0, i]) for i in picked))


def retrieve_batch(bank: MemoryBank, queries: Sequence[VideoRecord], k: int = 10,
                   exclude_self: bool = False) -> list[RetrievalResult]:
    """``retrieve`` for many queries at once; with ``exclude_self`` each query's own id is left out."""
    if k < 1:
        raise UsageError("k must be >= 1")
    out = []
    id_rank = bank.id_rank()
    chunk = 256
    for start in range(0, len(queries), chunk):
        qs = queries[start:start + chunk]
        pairs = [query_vectors(q, bank.dims) for q in qs]
        qmask = np.stack([p[1] for p in pairs])
        for q, m in zip(qs, qmask):
            if not m.any():
                raise UsageError(f"{q.video_id}: query has no available modality")
        qvecs = [np.stack([p[0][j] for p in pairs]) for j in range(3)]
        sims, score = score_matrix(bank, qvecs, qmask)
        for r, q in enumerate(qs):
            exclude = _index_of(bank, q.video_id) if exclude_self else None
            picked = _rank(score[r], id_rank, k, exclude)
            out.append(RetrievalResult(q.video_id, tuple(
                _neighbor(bank, i, sims[r, i], qmask[r], score[r, i]) for i in picked)))
    return out


def _index_of(bank: MemoryBank, video_id: str | None) -> int | None:
    if video_id is None:
        return None
    index = bank.__dict__.get("_index")
    if index is None:
        index = {v: i for i, v in enumerate(bank.video_ids)}
        object.__setattr__(bank, "_index", index)
    return index.get(video_id)


def _neighbor(bank: MemoryBank, i: int, sims: np.ndarray, qmask: np.ndarray, score: float) -> Neighbor:
    shared = qmask & bank.mask[i]
    return Neighbor(int(i), bank.video_ids[i],
                    tuple(float(s) if ok else None for s, ok in zip(sims, shared)), float(score))
