"""Retrieval branch: encode the target video, cross-attend over retrieved neighbours, regress one target.

One independent model per popularity metric. Neighbour values carry the
neighbours' known (transformed, standardised) popularity and their
retrieval score, which is what makes retrieval informative for regression.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .dataset import TargetTransform, VideoRecord, target_matrix
from .layers import (Features, Standardizer, bank_features, batches, features_of, init_dense,
                     init_head, mlp_head, modality_slots)
from .memorybank import MemoryBank, RetrievalResult, retrieve, retrieve_batch
from .numerics import Matrix, UsageError

logger = logging.getLogger(__name__)

_PAD_LOGIT = -1e30


@dataclass(frozen=True)
class XAttnConfig:
    d: int = 64
    h: int = 64
    k: int = 10
    epochs: int = 40
    batch_size: int = 64
    lr: float = 3e-3
    patience: int = 8
    seed: int = 0


@dataclass
class XAttnModel:
    params: dict[str, np.ndarray]
    scaler: Standardizer
    d: int
    k: int


@dataclass
class NeighborSet:
    """Padded neighbour table: indices into the bank, combined scores, validity."""

    idx: np.ndarray    # (n, k) int, 0 where padded
    score: np.ndarray  # (n, k) float, 0 where padded
    valid: np.ndarray  # (n, k) bool

    @classmethod
    def from_results(cls, results: Sequence[RetrievalResult], k: int) -> "NeighborSet":
        n = len(results)
        idx = np.zeros((n, k), dtype=np.intp)
        score = np.zeros((n, k))
        valid = np.zeros((n, k), dtype=bool)
        for i, res in enumerate(results):
            if not res.neighbors:
                raise UsageError(f"{res.query_id}: no eligible neighbours")
            for j, nb in enumerate(res.neighbors[:k]):
                idx[i, j], score[i, j], valid[i, j] = nb.index, nb.score, True
        return cls(idx, score, valid)

    def rows(self, sel) -> "NeighborSet":
        return NeighborSet(self.idx[sel], self.score[sel], self.valid[sel])

    def mean_score(self) -> np.ndarray:
        return (self.score * self.valid).sum(axis=1) / self.valid.sum(axis=1)

    def count(self) -> np.ndarray:
        return self.valid.sum(axis=1)


def init_params(dims: Sequence[int], d: int, h: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = {}
    for j, dm in enumerate(dims):
        p.update(init_dense(rng, f"enc{j}", dm, d))
        p[f"absent{j}"] = rng.normal(0.0, 0.1, size=(1, d))
    p["Wq"] = nx.glorot(rng, d, d)
    p["Wk"] = nx.glorot(rng, d, d)
    p["Wv"] = nx.glorot(rng, d + 2, d)
    p.update(init_head(rng, d, h))
    return p


def encode(P: Mapping[str, Matrix], feats: Features) -> Matrix:
    """Fused vector per row: tanh of the summed modality projections."""
    s = modality_slots(P, "enc", feats, "absent")
    return nx.tanh(nx.add(nx.add(s[0], s[1]), s[2]))


def encode_target(record: VideoRecord, params: Mapping[str, np.ndarray], dims: Sequence[int]) -> np.ndarray:
    feats = features_of([record], dims)
    return encode(_consts(params), feats).data[0].copy()


def encode_neighbors(P: Mapping[str, Matrix], fused: Matrix, y_std: np.ndarray,
                     score: np.ndarray) -> tuple[Matrix, Matrix]:
    """Keys and values for neighbour rows given their fused vectors."""
    if fused.rows == 0:
        raise UsageError("encode_neighbors needs at least one neighbour")
    K = nx.matmul(fused, P["Wk"])
    extra = np.column_stack([y_std, score]).astype(fused.data.dtype)
    V = nx.matmul(nx.concat_cols(fused, extra), P["Wv"])
    return K, V


def cross_attention(q, K, V, return_weights: bool = False):
    """Single-head scaled dot-product attention of one query row over ``K``/``V``."""
    q, K, V = (x if isinstance(x, Matrix) else Matrix(x) for x in (q, K, V))
    logits = nx.scale(nx.matmul(q, nx.transpose(K)), 1.0 / math.sqrt(q.cols))
    w = nx.row_softmax(logits)
    ctx = nx.matmul(w, V)
    return (ctx, w) if return_weights else ctx


def forward(P: Mapping[str, Matrix], qfeats: Features, bfeats: Features, bank_y_std: np.ndarray,
            nb: NeighborSet, d: int, return_weights: bool = False):
    """Batched branch forward; returns standardised predictions (B x 1)."""
    B, k = nb.idx.shape
    q = nx.matmul(encode(P, qfeats), P["Wq"])
    flat = nb.idx.reshape(-1)
    uniq, inv = np.unique(flat, return_inverse=True)
    fused_u = encode(P, bfeats.rows(uniq))
    fused_n = nx.take_rows(fused_u, inv.reshape(-1))
    K, V = encode_neighbors(P, fused_n, bank_y_std[flat], nb.score.reshape(-1))
    q_rep = nx.repeat_rows(q, k)
    logits = nx.scale(nx.row_sum(nx.mul(q_rep, K)), 1.0 / math.sqrt(d))
    logits = nx.add(nx.reshape(logits, B, k), np.where(nb.valid, 0.0, _PAD_LOGIT).astype(logits.data.dtype))
    w = nx.row_softmax(logits)
    weighted = nx.mul(nx.reshape(w, B * k, 1), V)
    ctx = nx.group_sum_rows(weighted, k)
    out = mlp_head(ctx, P)
    return (out, w) if return_weights else out


def _consts(params: Mapping[str, np.ndarray]) -> dict[str, Matrix]:
    return {name: Matrix(v, check=False) for name, v in params.items()}


def neighbor_table(bank: MemoryBank, records: Sequence[VideoRecord], k: int,
                   exclude_self: bool = False) -> NeighborSet:
    return NeighborSet.from_results(retrieve_batch(bank, records, k, exclude_self=exclude_self), k)


@dataclass
class BranchOutput:
    """Transformed-space predictions plus retrieval confidence features."""

    pred: np.ndarray
    mean_score: np.ndarray
    count: np.ndarray


def predict_batch(records: Sequence[VideoRecord], bank: MemoryBank, model: XAttnModel, metric: int,
                  exclude_self: bool = False, nb: NeighborSet | None = None) -> BranchOutput:
    if nb is None:
        nb = neighbor_table(bank, records, model.k, exclude_self)
    qf = features_of(records, bank.dims)
    y_std = model.scaler.forward(bank.targets[:, metric])
    out = forward(_consts(model.params), qf, bank_features(bank), y_std, nb, model.d)
    return BranchOutput(model.scaler.inverse(out.data[:, 0]), nb.mean_score(), nb.count())


def predict(record: VideoRecord, bank: MemoryBank, model: XAttnModel, metric: int,
            k: int | None = None, exclude_id: str | None = None) -> float:
    res = retrieve(bank, record, k or model.k, exclude_id=exclude_id)
    nb = NeighborSet.from_results([res], k or model.k)
    return float(predict_batch([record], bank, model, metric, nb=nb).pred[0])


@dataclass
class TrainResult:
    model: XAttnModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def train(train_records: Sequence[VideoRecord], val_records: Sequence[VideoRecord], bank: MemoryBank,
          metric: int, cfg: XAttnConfig = XAttnConfig(),
          transform: TargetTransform = TargetTransform()) -> TrainResult:
    """Adam on MSE with leave-one-out retrieval for training queries and early stopping on val MSE."""
    if not train_records:
        raise UsageError("xattn.train needs training records")
    rng = np.random.default_rng(cfg.seed)
    y_tr = transform.forward(target_matrix(train_records)[:, metric])
    scaler = Standardizer.fit(y_tr)
    dims = bank.dims
    params = nx.to_storage(init_params(dims, cfg.d, cfg.h, rng))

    bfeats = bank_features(bank)
    y_bank = scaler.forward(bank.targets[:, metric])
    qf_tr = features_of(train_records, dims)
    nb_tr = neighbor_table(bank, train_records, cfg.k, exclude_self=True)
    z_tr = scaler.forward(y_tr)[:, None]
    has_val = len(val_records) > 0
    if has_val:
        qf_va = features_of(val_records, dims)
        nb_va = neighbor_table(bank, val_records, cfg.k)
        y_va = transform.forward(target_matrix(val_records)[:, metric])
    else:
        logger.warning("xattn: empty validation set; training for a fixed %d epochs", cfg.epochs)

    def val_mse(p):
        if not has_val:
            return None
        z = forward(_consts(p), qf_va, bfeats, y_bank, nb_va, cfg.d).data[:, 0]
        return float(np.mean((scaler.inverse(z) - y_va) ** 2))

    def loss_fn(sel):
        def build(P):
            out = forward(P, qf_tr.rows(sel), bfeats, y_bank, nb_tr.rows(sel), cfg.d)
            return nx.mse_loss(out, z_tr[sel])
        return build

    hyper = nx.AdamHyper(lr=cfg.lr)
    state = nx.AdamState.fresh(params)
    init_loss = nx.mse_loss(forward(_consts(params), qf_tr, bfeats, y_bank, nb_tr, cfg.d), z_tr).item()
    history = [{"epoch": 0, "train_loss": init_loss * scaler.scale ** 2, "val_mse": val_mse(params)}]
    best = (history[0]["val_mse"], 0, params)
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for sel in batches(rng, len(train_records), cfg.batch_size):
            loss, grads = nx.value_and_grad(loss_fn(sel), params)
            params, state = nx.adam_step(params, grads, state, hyper)
            params = nx.to_storage(params)
            total += loss * len(sel)
        vm = val_mse(params)
        history.append({"epoch": epoch, "train_loss": total / len(train_records) * scaler.scale ** 2,
                        "val_mse": vm})
        if vm is None:
            best = (None, epoch, params)
            continue
        if vm < best[0]:
            best, since_best = (vm, epoch, params), 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    _, best_epoch, best_params = best
    model = XAttnModel(best_params, scaler, cfg.d, cfg.k)
    return TrainResult(model, history, best_epoch)
