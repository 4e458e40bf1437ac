"""Synthesis network, the global/per-author/selected (C/R/E) training regime, and model bundles.

For every popularity metric an independent set of models is trained:

* ``C`` - one global model on all training records;
* ``R`` - one model per author with enough training records;
* ``E`` - per author, whichever of C and R had the lower validation MSE
  (ties go to C; authors without an R model use C).

A "model" here is a memory bank plus the retrieval branch, the completion
branch and a small synthesis network that fuses them. The synthesis net is
fit on out-of-fold branch predictions (2-fold cross-fitting) so it never
sees a branch prediction made with knowledge of the record's own target.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from collections import OrderedDict, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import completion as cp
from . import memorybank as mb
from . import numerics as nx
from . import xattn as xa
from .dataset import (METRICS, PopularityTargets, TargetTransform, VideoRecord, atomic_write,
                      split, target_matrix)
from .layers import Standardizer, batches, init_head, mlp_head
from .numerics import Matrix, UsageError

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"MVPPBNDL"
BUNDLE_VERSION = 1
N_SYNTH_INPUTS = 4


class BundleError(ValueError):
    """Unreadable, truncated or incompatible model bundle."""


# ---------------------------------------------------------------------------
# synthesis network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthesisConfig:
    h: int = 16
    epochs: int = 300
    lr: float = 1e-2
    patience: int = 30
    batch_size: int = 256
    seed: int = 0


@dataclass
class SynthesisModel:
    params: dict[str, np.ndarray]
    inputs: tuple[Standardizer, ...]
    scaler: Standardizer


def synthesis_inputs(xattn_pred, completion_pred, mean_score, count) -> np.ndarray:
    """Raw synthesis features: both branch predictions and two retrieval-confidence signals."""
    return np.column_stack([
        np.asarray(xattn_pred, dtype=np.float64),
        np.asarray(completion_pred, dtype=np.float64),
        np.asarray(mean_score, dtype=np.float64),
        np.log(np.asarray(count, dtype=np.float64)),
    ])


def _std_inputs(model: SynthesisModel, feats: np.ndarray) -> np.ndarray:
    return np.column_stack([s.forward(feats[:, j]) for j, s in enumerate(model.inputs)]).astype(np.float32)


def synthesis_forward(P, x) -> Matrix:
    return mlp_head(x, P)


def train_synthesis(feats: np.ndarray, y: np.ndarray, val_feats: np.ndarray | None, val_y: np.ndarray | None,
                    cfg: SynthesisConfig = SynthesisConfig()) -> tuple[SynthesisModel, list[dict]]:
    """Fit the fusion MLP (4 -> h -> 1) in transformed target space, early-stopped on val MSE."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != N_SYNTH_INPUTS or len(feats) != len(y):
        raise UsageError(f"synthesis inputs must be (n, {N_SYNTH_INPUTS}) aligned with targets")
    rng = np.random.default_rng(cfg.seed)
    model = SynthesisModel({}, tuple(Standardizer.fit(feats[:, j]) for j in range(N_SYNTH_INPUTS)),
                           Standardizer.fit(y))
    params = nx.to_storage(init_head(rng, N_SYNTH_INPUTS, cfg.h))
    model.params = params
    x = _std_inputs(model, feats)
    z = model.scaler.forward(y)[:, None]
    has_val = val_feats is not None and len(val_feats) > 0
    if has_val:
        xv = _std_inputs(model, np.asarray(val_feats, dtype=np.float64))

    def val_mse(p):
        if not has_val:
            return None
        out = synthesis_forward(_consts(p), Matrix(xv, check=False)).data[:, 0]
        return float(np.mean((model.scaler.inverse(out) - val_y) ** 2))

    hyper = nx.AdamHyper(lr=cfg.lr)
    state = nx.AdamState.fresh(params)
    history = [{"epoch": 0, "val_mse": val_mse(params)}]
    best = (history[0]["val_mse"], params)
    since = 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for sel in batches(rng, len(x), cfg.batch_size):
            loss, grads = nx.value_and_grad(
                lambda P: nx.mse_loss(synthesis_forward(P, Matrix(x[sel], check=False)), z[sel]), params)
            params, state = nx.adam_step(params, grads, state, hyper)
            params = nx.to_storage(params)
            total += loss * len(sel)
        vm = val_mse(params)
        history.append({"epoch": epoch, "train_loss": total / len(x) * model.scaler.scale ** 2, "val_mse": vm})
        if vm is None:
            best = (None, params)
            continue
        if vm < best[0]:
            best, since = (vm, params), 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    model.params = best[1]
    return model, history


def synthesis_predict(model: SynthesisModel, feats: np.ndarray) -> np.ndarray:
    x = _std_inputs(model, np.asarray(feats, dtype=np.float64))
    out = synthesis_forward(_consts(model.params), Matrix(x, check=False)).data[:, 0]
    return model.scaler.inverse(out)


def _consts(params):
    return {k: Matrix(v, check=False) for k, v in params.items()}


# ---------------------------------------------------------------------------
# per-variant models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleConfig:
    xattn: xa.XAttnConfig = xa.XAttnConfig()
    completion: cp.CompletionConfig = cp.CompletionConfig()
    synthesis: SynthesisConfig = SynthesisConfig()
    min_author_samples: int = 20
    transform: str = "log1p"
    seed: int = 0
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        return cls(xa.XAttnConfig(**d["xattn"]), cp.CompletionConfig(**d["completion"]),
                   SynthesisConfig(**d["synthesis"]),
                   **{k: v for k, v in d.items() if k not in ("xattn", "completion", "synthesis")})


@dataclass
class MetricModel:
    xattn: xa.XAttnModel
    completion: cp.CompletionModel
    synthesis: SynthesisModel


@dataclass
class VariantModel:
    """One memory bank plus an independent model per metric."""

    bank: mb.MemoryBank
    metrics: list[MetricModel]


@dataclass
class BranchPreds:
    xattn: np.ndarray
    completion: np.ndarray
    mean_score: np.ndarray
    count: np.ndarray

    def synthesis_inputs(self) -> np.ndarray:
        return synthesis_inputs(self.xattn, self.completion, self.mean_score, self.count)


def derive_seed(*parts) -> int:
    """Stable integer seed from a tuple of ints/strings."""
    h = hashlib.sha256(json.dumps([str(p) for p in parts]).encode()).digest()
    return int.from_bytes(h[:4], "little")


def _branch_models(train: Sequence[VideoRecord], val: Sequence[VideoRecord], unlabeled: Sequence[VideoRecord],
                   metric: int, cfg: EnsembleConfig, seed: int, dims):
    tf = TargetTransform(cfg.transform)
    bank = mb.build(train, tf, dims=dims)
    xr = xa.train(train, val, bank, metric, _with_seed(cfg.xattn, derive_seed(seed, "xattn")), tf)
    cr = cp.train_semisupervised(train, unlabeled, val, metric, dims,
                                 _with_seed(cfg.completion, derive_seed(seed, "completion")), tf)
    return bank, xr, cr


def _with_seed(c, seed):
    return type(c)(**{**asdict(c), "seed": seed})


def branch_predict(records: Sequence[VideoRecord], bank: mb.MemoryBank, xm: xa.XAttnModel,
                   cm: cp.CompletionModel, metric: int, hide: np.ndarray | None = None) -> BranchPreds:
    xo = xa.predict_batch(records, bank, xm, metric)
    co = cp.predict_batch(records, cm, bank.dims, hide=hide)
    return BranchPreds(xo.pred, co, xo.mean_score, xo.count)


def crossfit_module_outputs(train: Sequence[VideoRecord], val: Sequence[VideoRecord],
                            unlabeled: Sequence[VideoRecord], metric: int, cfg: EnsembleConfig,
                            seed: int, dims) -> tuple[list[str], BranchPreds]:
    """Out-of-fold branch predictions for every training record (2-fold, author-stratified).

    Returns the record ids in output order (same as ``train``) and the predictions.
    """
    if len(train) < 2:
        raise UsageError("cross-fitting needs at least two training records")
    halves = split(train, 0.5, derive_seed(seed, "folds"))
    folds = [halves.train, halves.val]
    if not folds[0] or not folds[1]:
        raise UsageError("cross-fitting produced a fold with an empty training side")
    pos = {r.video_id: i for i, r in enumerate(train)}
    n = len(train)
    out = BranchPreds(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n))
    for f in range(2):
        fit_on, predict_on = folds[1 - f], folds[f]
        bank, xr, cr = _branch_models(fit_on, val, unlabeled, metric, cfg, derive_seed(seed, "fold", f), dims)
        bp = branch_predict(predict_on, bank, xr.model, cr.model, metric)
        idx = np.array([pos[r.video_id] for r in predict_on])
        out.xattn[idx], out.completion[idx] = bp.xattn, bp.completion
        out.mean_score[idx], out.count[idx] = bp.mean_score, bp.count
    return [r.video_id for r in train], out


def train_variant_metric(train: Sequence[VideoRecord], val: Sequence[VideoRecord],
                         unlabeled: Sequence[VideoRecord], metric: int, cfg: EnsembleConfig,
                         seed: int, dims) -> tuple[MetricModel, mb.MemoryBank, dict]:
    tf = TargetTransform(cfg.transform)
    _, oof = crossfit_module_outputs(train, val, unlabeled, metric, cfg, seed, dims)
    bank, xr, cr = _branch_models(train, val, unlabeled, metric, cfg, derive_seed(seed, "full"), dims)
    y = tf.forward(target_matrix(train)[:, metric])
    if val:
        vp = branch_predict(val, bank, xr.model, cr.model, metric)
        vfeats, vy = vp.synthesis_inputs(), tf.forward(target_matrix(val)[:, metric])
    else:
        vfeats = vy = None
    sm, sh = train_synthesis(oof.synthesis_inputs(), y, vfeats, vy,
                             _with_seed(cfg.synthesis, derive_seed(seed, "synthesis")))
    history = {"xattn": xr.history, "completion": cr.history, "synthesis": sh}
    return MetricModel(xr.model, cr.model, sm), bank, history


def _train_task(args):
    key, train, val, unlabeled, cfg, seed, dims = args
    models, histories, bank = [], {}, None
    for metric in range(len(METRICS)):
        mm, bank, hist = train_variant_metric(train, val, unlabeled, metric, cfg,
                                              derive_seed(seed, key, METRICS[metric]), dims)
        models.append(mm)
        histories[METRICS[metric]] = hist
    return key, VariantModel(bank, models), histories


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def variant_predict(variant: VariantModel, records: Sequence[VideoRecord], metric: int) -> np.ndarray:
    """Transformed-space synthesis output for one metric."""
    mm = variant.metrics[metric]
    bp = branch_predict(records, variant.bank, mm.xattn, mm.completion, metric)
    return synthesis_predict(mm.synthesis, bp.synthesis_inputs())


def to_counts(values, transform: TargetTransform) -> np.ndarray:
    return transform.inverse(values)


@dataclass
class TrainedEnsemble:
    config: EnsembleConfig
    dims: tuple[int, int, int]
    global_model: VariantModel
    author_models: dict[str, VariantModel]
    selection: dict[str, dict[str, str]]          # metric -> author -> "C" | "R"
    val_mse: dict[str, dict[str, dict[str, float | None]]]  # metric -> author -> variant -> mse
    train_ids: list[str] = field(default_factory=list)
    val_ids: list[str] = field(default_factory=list)
    histories: dict = field(default_factory=dict)
    run_config: dict = field(default_factory=dict)

    @property
    def transform(self) -> TargetTransform:
        return TargetTransform(self.config.transform)

    @property
    def seed(self) -> int:
        return self.config.seed

    def route(self, author_id: str, metric: str) -> str:
        """Variant serving ``author_id`` under E; unknown authors get C."""
        choice = self.selection.get(metric, {}).get(author_id, "C")
        return "R" if choice == "R" and author_id in self.author_models else "C"

    def variant(self, name: str, author_id: str) -> VariantModel | None:
        if name == "C":
            return self.global_model
        return self.author_models.get(author_id)


def group_by_author(records: Sequence[VideoRecord]) -> "OrderedDict[str, list[int]]":
    groups: OrderedDict[str, list[int]] = OrderedDict()
    for i, r in enumerate(records):
        groups.setdefault(r.author_id, []).append(i)
    return groups


def predict_variant_counts(ens: TrainedEnsemble, records: Sequence[VideoRecord], variant: str) -> np.ndarray:
    """Raw-count predictions (n, 4) under variant ``C``, ``R`` or ``E``.

    Records are batched per author so any subset containing a whole author
    group yields the same numbers. Rows with no R model are NaN for ``R``.
    """
    out = np.full((len(records), len(METRICS)), np.nan)
    for author, idx in group_by_author(records).items():
        recs = [records[i] for i in idx]
        for m, name in enumerate(METRICS):
            choice = ens.route(author, name) if variant == "E" else variant
            model = ens.variant(choice, author)
            if model is None:
                continue
            out[idx, m] = to_counts(variant_predict(model, recs, m), ens.transform)
    return out


@dataclass(frozen=True)
class PredictionRow:
    video_id: str
    targets: PopularityTargets

    def csv(self) -> str:
        return ",".join([self.video_id, *(str(v) for v in self.targets.as_tuple())])


PREDICTION_HEADER = "video_id," + ",".join(METRICS)


def predict_final(record: VideoRecord, ens: TrainedEnsemble) -> PredictionRow:
    if not record.available():
        raise UsageError(f"{record.video_id}: no available modality")
    counts = predict_variant_counts(ens, [record], "E")[0]
    return PredictionRow(record.video_id, PopularityTargets(*(int(c) for c in counts)))


def predict_rows(records: Sequence[VideoRecord], ens: TrainedEnsemble) -> list[PredictionRow]:
    for r in records:
        if not r.available():
            raise UsageError(f"{r.video_id}: no available modality")
    counts = predict_variant_counts(ens, records, "E")
    return [PredictionRow(r.video_id, PopularityTargets(*(int(c) for c in row))) for r, row in zip(records, counts)]


def render_predictions(rows: Sequence[PredictionRow]) -> str:
    return "\n".join([PREDICTION_HEADER, *(r.csv() for r in rows)]) + "\n"


# ---------------------------------------------------------------------------
# C / R / E training
# ---------------------------------------------------------------------------


def _mse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.dot(d, d) / d.size)


def select_variants(val_mse: dict[str, dict[str, dict[str, float | None]]]) -> dict[str, dict[str, str]]:
    """Per metric and author: R if its val MSE is strictly lower than C's, else C."""
    sel = {}
    for metric, per_author in val_mse.items():
        sel[metric] = {}
        for author, v in per_author.items():
            r, c = v.get("R"), v.get("C")
            sel[metric][author] = "R" if r is not None and c is not None and r < c else "C"
    return sel


def train_variants(train: Sequence[VideoRecord], val: Sequence[VideoRecord], cfg: EnsembleConfig = EnsembleConfig(),
                   unlabeled: Sequence[VideoRecord] = (), dims=None) -> TrainedEnsemble:
    """Train C on everything, R per eligible author, and pick E per author by val MSE."""
    if not train:
        raise UsageError("train_variants needs training records")
    dims = tuple(dims) if dims is not None else mb.build(train).dims
    by_author_train = defaultdict(list)
    for r in train:
        by_author_train[r.author_id].append(r)
    by_author_val = defaultdict(list)
    for r in val:
        by_author_val[r.author_id].append(r)
    by_author_unl = defaultdict(list)
    for r in unlabeled:
        by_author_unl[r.author_id].append(r)

    tasks = [("C", list(train), list(val), list(unlabeled), cfg, cfg.seed, dims)]
    for author, recs in by_author_train.items():
        if len(recs) >= cfg.min_author_samples:
            tasks.append((f"R:{author}", recs, by_author_val.get(author, []), by_author_unl.get(author, []),
                          cfg, cfg.seed, dims))
        else:
            logger.info("author %s has %d training records (< %d); no R model", author, len(recs),
                        cfg.min_author_samples)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_train_task, tasks))
    else:
        results = []
        for t in tasks:
            logger.info("training variant %s (%d records)", t[0], len(t[1]))
            results.append(_train_task(t))

    global_model, author_models, histories = None, {}, {}
    for key, vm, hist in results:
        histories[key] = hist
        if key == "C":
            global_model = vm
        else:
            author_models[key[2:]] = vm

    ens = TrainedEnsemble(cfg, dims, global_model, author_models, {}, {},
                          [r.video_id for r in train], [r.video_id for r in val], histories)
    val_mse = {m: {} for m in METRICS}
    authors = list(dict.fromkeys([r.author_id for r in train] + [r.author_id for r in val]))
    for author in authors:
        recs = by_author_val.get(author, [])
        if not recs:
            for m in METRICS:
                val_mse[m][author] = {"C": None, "R": None}
            continue
        truth = target_matrix(recs)
        pc = predict_variant_counts(ens, recs, "C")
        pr = predict_variant_counts(ens, recs, "R") if author in author_models else None
        for j, m in enumerate(METRICS):
            val_mse[m][author] = {"C": _mse(pc[:, j], truth[:, j]),
                                  "R": None if pr is None else _mse(pr[:, j], truth[:, j])}
    ens.val_mse = val_mse
    ens.selection = select_variants(val_mse)
    return ens


# ---------------------------------------------------------------------------
# bundle persistence
# ---------------------------------------------------------------------------
#
# layout: MAGIC(8) | version u32 | meta_len u64 | meta JSON | blocks | sha256(32)
# blocks are little-endian float32, in the order and shapes listed in meta["blocks"];
# the trailing digest covers everything before it.


class _BlockWriter:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.index: list[dict] = []
        self.offset = 0

    def add(self, name: str, arr) -> None:
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        raw = a.tobytes()
        self.index.append({"name": name, "shape": list(a.shape), "offset": self.offset})
        self.chunks.append(raw)
        self.offset += len(raw)


def _scaler_json(s: Standardizer) -> list[float]:
    return [s.mean, s.scale]


def _variant_meta(w: _BlockWriter, prefix: str, vm: VariantModel) -> dict:
    b = vm.bank
    for j in range(3):
        w.add(f"{prefix}/bank/emb{j}", b.embeddings[j])
    w.add(f"{prefix}/bank/mask", b.mask.astype(np.float32))
    w.add(f"{prefix}/bank/targets", b.targets)
    metrics = []
    for m, mm in enumerate(vm.metrics):
        for part, params in (("xattn", mm.xattn.params), ("completion", mm.completion.params),
                             ("synthesis", mm.synthesis.params)):
            for name, v in params.items():
                w.add(f"{prefix}/{m}/{part}/{name}", v)
        metrics.append({
            "xattn": {"d": mm.xattn.d, "k": mm.xattn.k, "scaler": _scaler_json(mm.xattn.scaler),
                      "params": list(mm.xattn.params)},
            "completion": {"d": mm.completion.d, "scaler": _scaler_json(mm.completion.scaler),
                           "params": list(mm.completion.params)},
            "synthesis": {"scaler": _scaler_json(mm.synthesis.scaler),
                          "inputs": [_scaler_json(s) for s in mm.synthesis.inputs],
                          "params": list(mm.synthesis.params)},
        })
    return {"video_ids": list(b.video_ids), "author_ids": list(b.author_ids),
            "weights": list(b.weights), "metrics": metrics}


def dumps_bundle(ens: TrainedEnsemble) -> bytes:
    w = _BlockWriter()
    meta = {
        "format": "mvpp-bundle",
        "version": BUNDLE_VERSION,
        "config": ens.config.to_dict(),
        "seed": ens.seed,
        "dims": list(ens.dims),
        "selection": ens.selection,
        "val_mse": ens.val_mse,
        "train_ids": ens.train_ids,
        "val_ids": ens.val_ids,
        "run_config": ens.run_config,
        "variants": {"C": _variant_meta(w, "C", ens.global_model)},
    }
    # sorted so a reloaded bundle serialises to the same bytes
    for author, vm in sorted(ens.author_models.items()):
        meta["variants"][f"R:{author}"] = _variant_meta(w, f"R:{author}", vm)
    meta["blocks"] = w.index
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = BUNDLE_MAGIC + struct.pack("<IQ", BUNDLE_VERSION, len(meta_raw)) + meta_raw + b"".join(w.chunks)
    return body + hashlib.sha256(body).digest()


def save_bundle(ens: TrainedEnsemble, path) -> None:
    atomic_write(path, dumps_bundle(ens))


def loads_bundle(data: bytes) -> TrainedEnsemble:
    head = len(BUNDLE_MAGIC) + 12
    if len(data) < head + 32 or data[:len(BUNDLE_MAGIC)] != BUNDLE_MAGIC:
        raise BundleError("not a model bundle (bad magic or too short)")
    version, meta_len = struct.unpack("<IQ", data[len(BUNDLE_MAGIC):head])
    if version != BUNDLE_VERSION:
        raise BundleError(f"bundle version {version} is not supported (expected {BUNDLE_VERSION})")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise BundleError("bundle checksum mismatch (truncated or corrupt file)")
    try:
        meta = json.loads(body[head:head + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BundleError(f"bundle metadata is not valid JSON: {e}") from None
    blob = body[head + meta_len:]
    arrays = {}
    for b in meta["blocks"]:
        n = int(np.prod(b["shape"])) if b["shape"] else 1
        end = b["offset"] + 4 * n
        if end > len(blob):
            raise BundleError(f"block {b['name']} extends past end of data")
        arrays[b["name"]] = np.frombuffer(blob, dtype="<f4", count=n, offset=b["offset"]).reshape(b["shape"]).astype(np.float32)

    def scaler(v):
        return Standardizer(float(v[0]), float(v[1]))

    def variant(prefix: str, vmeta: dict) -> VariantModel:
        embs = tuple(arrays[f"{prefix}/bank/emb{j}"] for j in range(3))
        mask = arrays[f"{prefix}/bank/mask"] > 0.5
        targets = arrays[f"{prefix}/bank/targets"]
        for a in (*embs, mask, targets):
            a.flags.writeable = False
        bank = mb.MemoryBank(embs, mask, tuple(vmeta["video_ids"]), tuple(vmeta["author_ids"]), targets,
                             tuple(vmeta["weights"]))
        metrics = []
        for m, mmeta in enumerate(vmeta["metrics"]):
            def params(part):
                return {name: arrays[f"{prefix}/{m}/{part}/{name}"] for name in mmeta[part]["params"]}
            x, c, s = mmeta["xattn"], mmeta["completion"], mmeta["synthesis"]
            metrics.append(MetricModel(
                xa.XAttnModel(params("xattn"), scaler(x["scaler"]), x["d"], x["k"]),
                cp.CompletionModel(params("completion"), scaler(c["scaler"]), c["d"]),
                SynthesisModel(params("synthesis"), tuple(scaler(v) for v in s["inputs"]), scaler(s["scaler"])),
            ))
        return VariantModel(bank, metrics)

    try:
        cfg = EnsembleConfig.from_dict(meta["config"])
        variants = meta["variants"]
        return TrainedEnsemble(
            cfg, tuple(meta["dims"]), variant("C", variants["C"]),
            {k[2:]: variant(k, v) for k, v in variants.items() if k.startswith("R:")},
            meta["selection"], meta["val_mse"], meta["train_ids"], meta["val_ids"],
            run_config=meta.get("run_config", {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise BundleError(f"bundle metadata is incomplete: {e}") from None


def load_bundle(path) -> TrainedEnsemble:
    return loads_bundle(Path(path).read_bytes())


def init_synthesis_params(h: int, seed: int = 0) -> dict[str, np.ndarray]:
    return init_head(np.random.default_rng(seed), N_SYNTH_INPUTS, h)
