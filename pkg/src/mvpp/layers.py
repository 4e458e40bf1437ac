"""Small building blocks shared by the trainable networks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .dataset import VideoRecord
from .memorybank import MemoryBank, query_vectors
from .numerics import Matrix, UsageError


@dataclass(frozen=True)
class Features:
    """Normalised per-modality embeddings (zeros where missing) and availability."""

    X: tuple[np.ndarray, np.ndarray, np.ndarray]
    avail: np.ndarray

    def __len__(self):
        return self.avail.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(x.shape[1] for x in self.X)

    def rows(self, idx) -> "Features":
        idx = np.asarray(idx, dtype=np.intp)
        return Features(tuple(x[idx] for x in self.X), self.avail[idx])

    def masked(self, hide: np.ndarray) -> "Features":
        """Copy with ``hide`` (n, 3) modalities turned unavailable."""
        avail = self.avail & ~hide
        return Features(tuple(np.where(avail[:, [j]], x, 0).astype(x.dtype) for j, x in enumerate(self.X)), avail)


def features_of(records: Sequence[VideoRecord], dims: Sequence[int], dtype=np.float32) -> Features:
    n = len(records)
    X = [np.zeros((n, d), dtype=dtype) for d in dims]
    avail = np.zeros((n, 3), dtype=bool)
    for i, r in enumerate(records):
        vecs, a = query_vectors(r, dims)
        if not a.any():
            raise UsageError(f"{r.video_id}: record has no available modality")
        for j in range(3):
            X[j][i] = vecs[j]
        avail[i] = a
    return Features(tuple(X), avail)


def bank_features(bank: MemoryBank, dtype=np.float32) -> Features:
    return Features(tuple(e.astype(dtype) for e in bank.embeddings), bank.mask.copy())


def dense(x: Matrix, P: Mapping[str, Matrix], name: str) -> Matrix:
    return nx.add(nx.matmul(x, P[f"{name}.W"]), P[f"{name}.b"])


def init_dense(rng: np.random.Generator, name: str, fan_in: int, fan_out: int) -> dict[str, np.ndarray]:
    return {f"{name}.W": nx.glorot(rng, fan_in, fan_out), f"{name}.b": np.zeros((1, fan_out))}


def modality_slots(P: Mapping[str, Matrix], prefix: str, feats: Features, fill: str) -> list[Matrix]:
    """Project each modality to the model dim; unavailable rows take the learned ``fill`` vector."""
    out = []
    for j, x in enumerate(feats.X):
        on = feats.avail[:, [j]].astype(x.dtype)
        proj = dense(Matrix(x, check=False), P, f"{prefix}{j}")
        slot = nx.add(nx.mul(proj, on), nx.mul(P[f"{fill}{j}"], 1.0 - on))
        out.append(slot)
    return out


def mlp_head(x: Matrix, P: Mapping[str, Matrix], name: str = "head") -> Matrix:
    return dense(nx.relu(dense(x, P, f"{name}1")), P, f"{name}2")


def init_head(rng: np.random.Generator, fan_in: int, hidden: int, name: str = "head") -> dict[str, np.ndarray]:
    p = init_dense(rng, f"{name}1", fan_in, hidden)
    p.update(init_dense(rng, f"{name}2", hidden, 1))
    # small positive bias keeps relu units alive at init
    p[f"{name}1.b"] = np.full((1, hidden), 0.01)
    return p


@dataclass(frozen=True)
class Standardizer:
    mean: float
    scale: float

    @classmethod
    def fit(cls, y: np.ndarray) -> "Standardizer":
        y = np.asarray(y, dtype=np.float64)
        sd = float(y.std()) if y.size > 1 else 0.0
        return cls(float(y.mean()), sd if sd > 1e-8 else 1.0)

    def forward(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.scale + self.mean


def batches(rng: np.random.Generator, n: int, size: int) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]
