"""Metadata-capture branch: random modality masking and semi-supervised completion.

The network encodes whatever modalities are visible, substitutes a learned
mask token for the rest, fuses the three slots, and both regresses the
target and reconstructs hidden modalities. The reconstruction loss is also
applied to unlabeled videos, which lets the prediction pool shape the
encoders without any labels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .dataset import MODALITIES, TargetTransform, VideoRecord, target_matrix
from .layers import (Features, Standardizer, batches, dense, features_of, init_dense, init_head,
                     mlp_head, modality_slots)
from .numerics import Matrix, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompletionConfig:
    d: int = 64
    h: int = 64
    p: float = 0.3
    lam: float = 0.5
    epochs: int = 40
    batch_size: int = 64
    lr: float = 3e-3
    patience: int = 8
    seed: int = 0


@dataclass
class CompletionModel:
    params: dict[str, np.ndarray]
    scaler: Standardizer
    d: int


@dataclass(frozen=True)
class MaskPattern:
    masked: tuple[bool, bool, bool]

    def __post_init__(self):
        if all(self.masked):
            raise ValueError("mask pattern must leave at least one modality visible")

    @property
    def visible(self) -> tuple[str, ...]:
        return tuple(m for m, hidden in zip(MODALITIES, self.masked) if not hidden)


def draw_masks(avail: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorised masking: returns ``hidden`` (n, 3), True where masked.

    Missing modalities count as masked. Each available modality is hidden
    with probability ``p``; a row that would end fully hidden gets one of
    its available modalities, chosen uniformly, back.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"mask probability must lie in [0, 1], got {p}")
    avail = np.asarray(avail, dtype=bool)
    if not avail.any(axis=1).all():
        raise UsageError("every row needs at least one available modality")
    coin = rng.random(avail.shape)
    hidden = ~avail | (coin < p)
    dead = hidden.all(axis=1)
    if dead.any():
        pick = rng.random(int(dead.sum()))
        for row, u in zip(np.flatnonzero(dead), pick):
            choices = np.flatnonzero(avail[row])
            hidden[row, choices[min(int(u * len(choices)), len(choices) - 1)]] = False
    return hidden


def mask_modalities(record: VideoRecord, p: float, rng: np.random.Generator) -> tuple[VideoRecord, MaskPattern]:
    avail = np.array([[record.embedding(m) is not None for m in MODALITIES]])
    hidden = draw_masks(avail, p, rng)[0]
    pattern = MaskPattern(tuple(bool(h) for h in hidden))
    drop = [m for m, h, a in zip(MODALITIES, hidden, avail[0]) if h and a]
    return (record.without(*drop) if drop else record), pattern


def init_params(dims: Sequence[int], d: int, h: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = {}
    for j, dm in enumerate(dims):
        p.update(init_dense(rng, f"enc{j}", dm, d))
        p[f"mask{j}"] = rng.normal(0.0, 0.1, size=(1, d))
    p.update(init_dense(rng, "fuse", d, d))
    for j, dm in enumerate(dims):
        p.update(init_dense(rng, f"dec{j}", d, dm))
    p.update(init_head(rng, d, h))
    return p


def encode_incomplete(P: Mapping[str, Matrix], feats: Features) -> Matrix:
    """Visible slots encoded, hidden slots replaced by mask tokens, mean, then tanh fusion."""
    s = modality_slots(P, "enc", feats, "mask")
    mean = nx.scale(nx.add(nx.add(s[0], s[1]), s[2]), 1.0 / 3.0)
    return nx.tanh(dense(mean, P, "fuse"))


def reconstruct(fused: Matrix, P: Mapping[str, Matrix]) -> list[Matrix]:
    return [dense(fused, P, f"dec{j}") for j in range(3)]


def reconstruction_loss(recs: Sequence[Matrix], target: Features, hidden: np.ndarray) -> tuple[Matrix, int]:
    """Mean squared error over entries of modalities that are hidden but truly present.

    Returns the loss and the number of contributing (sample, modality) pairs.
    """
    weight = hidden & target.avail
    denom = float(sum(weight[:, j].sum() * x.shape[1] for j, x in enumerate(target.X)))
    total = None
    for j, (rec, x) in enumerate(zip(recs, target.X)):
        term = nx.weighted_mse_loss(rec, Matrix(x, check=False), weight[:, [j]], denom)
        total = term if total is None else nx.add(total, term)
    return total, int(weight.sum())


def _consts(params: Mapping[str, np.ndarray]) -> dict[str, Matrix]:
    return {name: Matrix(v, check=False) for name, v in params.items()}


def predict_batch(records: Sequence[VideoRecord], model: CompletionModel, dims: Sequence[int],
                  hide: np.ndarray | None = None) -> np.ndarray:
    """Transformed-space predictions; ``hide`` (n, 3) optionally masks modalities."""
    feats = features_of(records, dims)
    if hide is not None:
        feats = feats.masked(np.asarray(hide, dtype=bool))
        if not feats.avail.any(axis=1).all():
            raise UsageError("hiding would leave a record with no visible modality")
    out = mlp_head(encode_incomplete(_consts(model.params), feats), _consts(model.params))
    return model.scaler.inverse(out.data[:, 0])


def predict_from_incomplete(record: VideoRecord, pattern: MaskPattern, model: CompletionModel,
                            dims: Sequence[int]) -> float:
    hide = np.array([pattern.masked])
    avail = np.array([[record.embedding(m) is not None for m in MODALITIES]])
    if not (avail & ~hide).any():
        raise UsageError(f"{record.video_id}: pattern leaves no visible modality")
    return float(predict_batch([record], model, dims, hide=hide)[0])


def reconstruction_mse(records: Sequence[VideoRecord], model: CompletionModel, dims: Sequence[int],
                       p: float, seed: int) -> float:
    """Masked-modality reconstruction MSE on ``records`` under seeded random masks."""
    feats = features_of(records, dims)
    hidden = draw_masks(feats.avail, p, np.random.default_rng(seed))
    P = _consts(model.params)
    loss, n = reconstruction_loss(reconstruct(encode_incomplete(P, feats.masked(hidden)), P), feats, hidden)
    return loss.item() if n else 0.0


@dataclass
class TrainResult:
    model: CompletionModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def train_semisupervised(labeled: Sequence[VideoRecord], unlabeled: Sequence[VideoRecord],
                         val: Sequence[VideoRecord], metric: int, dims: Sequence[int],
                         cfg: CompletionConfig = CompletionConfig(),
                         transform: TargetTransform = TargetTransform()) -> TrainResult:
    """Minimise ``L_sup + lam * L_recon`` with fresh random masks every epoch.

    ``L_sup`` covers labeled rows only; ``L_recon`` covers labeled and
    unlabeled rows. With ``lam == 0`` the unlabeled pool has no effect and
    is skipped. Early-stopped on full-visibility val MSE.
    """
    if not labeled:
        raise UsageError("train_semisupervised needs labeled records")
    if cfg.lam == 0:
        unlabeled = ()
    init_ss, mask_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, mask_rng, shuffle_rng = (np.random.default_rng(s) for s in (init_ss, mask_ss, shuffle_ss))

    y = transform.forward(target_matrix(labeled)[:, metric])
    scaler = Standardizer.fit(y)
    z = scaler.forward(y)[:, None]
    params = nx.to_storage(init_params(dims, cfg.d, cfg.h, init_rng))

    pool = list(labeled) + list(unlabeled)
    feats = features_of(pool, dims)
    n_lab = len(labeled)
    has_val = len(val) > 0
    if has_val:
        f_val = features_of(val, dims)
        y_val = transform.forward(target_matrix(val)[:, metric])
    else:
        logger.warning("completion: empty validation set; training for a fixed %d epochs", cfg.epochs)

    def val_mse(p):
        if not has_val:
            return None
        P = _consts(p)
        out = mlp_head(encode_incomplete(P, f_val), P).data[:, 0]
        return float(np.mean((scaler.inverse(out) - y_val) ** 2))

    def objective(P, sel, hidden):
        f = feats.rows(sel)
        fused = encode_incomplete(P, f.masked(hidden))
        lab = sel < n_lab
        parts = {}
        total = None
        if lab.any():
            rows = np.flatnonzero(lab)
            pred = mlp_head(nx.take_rows(fused, rows), P)
            total = parts["sup"] = nx.mse_loss(pred, z[sel[rows]])
        if cfg.lam > 0:
            rec, _ = reconstruction_loss(reconstruct(fused, P), f, hidden)
            parts["recon"] = rec
            term = nx.scale(rec, cfg.lam)
            total = term if total is None else nx.add(total, term)
        return total, parts

    def evaluate_train(p):
        hidden = draw_masks(feats.avail, cfg.p, np.random.default_rng(cfg.seed))
        _, parts = objective(_consts(p), np.arange(len(pool)), hidden)
        return {k: v.item() for k, v in parts.items()}

    hyper = nx.AdamHyper(lr=cfg.lr)
    state = nx.AdamState.fresh(params)
    first = evaluate_train(params)
    history = [{"epoch": 0, "sup": first.get("sup", 0.0) * scaler.scale ** 2,
                "recon": first.get("recon", 0.0), "val_mse": val_mse(params)}]
    best = (history[0]["val_mse"], 0, params)
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        hidden_all = draw_masks(feats.avail, cfg.p, mask_rng)
        sums = {"sup": 0.0, "recon": 0.0}
        for sel in batches(shuffle_rng, len(pool), cfg.batch_size):
            tape, P = nx.trace(params)
            loss, parts = objective(P, sel, hidden_all[sel])
            if loss is None:
                continue
            g = nx.backward(tape, loss)
            grads = {name: g[m.index] for name, m in P.items()}
            params, state = nx.adam_step(params, grads, state, hyper)
            params = nx.to_storage(params)
            if "sup" in parts:
                sums["sup"] += parts["sup"].item() * int((sel < n_lab).sum())
            if "recon" in parts:
                sums["recon"] += parts["recon"].item() * len(sel)
        vm = val_mse(params)
        history.append({"epoch": epoch, "sup": sums["sup"] / n_lab * scaler.scale ** 2,
                        "recon": sums["recon"] / len(pool), "val_mse": vm})
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
    return TrainResult(CompletionModel(best_params, scaler, cfg.d), history, best_epoch)
