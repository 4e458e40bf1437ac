"""Video records, manifest I/O, playability filtering, splitting and the synthetic generator."""

from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MODALITIES = ("visual", "acoustic", "textual")
METRICS = ("hearts", "shares", "comments", "plays")
_DIM_KEYS = {"visual": "d_v", "acoustic": "d_a", "textual": "d_t"}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class PopularityTargets:
    hearts: int
    shares: int
    comments: int
    plays: int

    def __post_init__(self):
        for name in METRICS:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise DataError(f"target {name} must be a nonnegative integer, got {v!r}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.hearts, self.shares, self.comments, self.plays)

    def to_dict(self) -> dict:
        return {m: int(getattr(self, m)) for m in METRICS}


@dataclass(frozen=True, eq=False)
class VideoRecord:
    video_id: str
    author_id: str
    playable: bool = True
    visual: np.ndarray | None = None
    acoustic: np.ndarray | None = None
    textual: np.ndarray | None = None
    targets: PopularityTargets | None = None

    def __post_init__(self):
        for m in MODALITIES:
            v = getattr(self, m)
            if v is None:
                continue
            arr = np.asarray(v, dtype=np.float32)
            if arr.ndim != 1:
                raise DataError(f"{self.video_id}: {m} embedding must be 1-D")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{self.video_id}: {m} embedding has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, m, arr)
        if self.playable and not self.available():
            raise DataError(f"{self.video_id}: playable record without any modality")

    def embedding(self, modality: str) -> np.ndarray | None:
        return getattr(self, modality)

    def available(self) -> tuple[str, ...]:
        return tuple(m for m in MODALITIES if getattr(self, m) is not None)

    @property
    def labeled(self) -> bool:
        return self.targets is not None

    def without(self, *modalities: str) -> "VideoRecord":
        kw = {m: None for m in modalities}
        return VideoRecord(self.video_id, self.author_id, self.playable,
                           **{m: kw.get(m, getattr(self, m)) for m in MODALITIES},
                           targets=self.targets)

    def with_targets(self, targets: PopularityTargets | None) -> "VideoRecord":
        return VideoRecord(self.video_id, self.author_id, self.playable,
                           self.visual, self.acoustic, self.textual, targets)

    def __eq__(self, other):
        if not isinstance(other, VideoRecord):
            return NotImplemented
        if (self.video_id, self.author_id, self.playable, self.targets) != \
                (other.video_id, other.author_id, other.playable, other.targets):
            return False
        for m in MODALITIES:
            a, b = getattr(self, m), getattr(other, m)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True

    __hash__ = None


@dataclass
class ManifestReport:
    dims: tuple[int, int, int]
    n_records: int
    n_playable: int
    n_labeled: int
    missing: dict[str, int]
    n_authors: int

    @property
    def label_coverage(self) -> float:
        return self.n_labeled / self.n_records if self.n_records else 0.0

    def lines(self) -> list[str]:
        out = [
            f"records: {self.n_records}",
            f"playable: {self.n_playable}",
            f"labeled: {self.n_labeled} ({100 * self.label_coverage:.1f}%)",
            f"authors: {self.n_authors}",
            "dims: d_v={} d_a={} d_t={}".format(*self.dims),
        ]
        out += [f"missing {m}: {self.missing[m]}" for m in MODALITIES]
        return out


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------


def _parse_targets(obj, lineno: int) -> PopularityTargets | None:
    if obj is None:
        return None
    if not isinstance(obj, dict) or set(obj) != set(METRICS):
        raise DataError(f"line {lineno}: targets must be an object with keys {', '.join(METRICS)}")
    try:
        return PopularityTargets(**{m: obj[m] for m in METRICS})
    except DataError as e:
        raise DataError(f"line {lineno}: {e}") from None


def parse_record(obj: dict, dims: dict[str, int], lineno: int) -> VideoRecord:
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    for key in ("video_id", "author_id"):
        if not isinstance(obj.get(key), str):
            raise DataError(f"line {lineno}: field {key} must be a string")
    playable = obj.get("playable", True)
    if not isinstance(playable, bool):
        raise DataError(f"line {lineno}: field playable must be a boolean")
    emb = {}
    for m in MODALITIES:
        v = obj.get(m)
        if v is None:
            emb[m] = None
            continue
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise DataError(f"line {lineno}: {m} must be an array of numbers or null")
        if len(v) != dims[m]:
            raise DataError(f"line {lineno}: {m} dimension {len(v)} does not match declared {dims[m]}")
        emb[m] = np.asarray(v, dtype=np.float32)
    try:
        return VideoRecord(obj["video_id"], obj["author_id"], playable,
                           targets=_parse_targets(obj.get("targets"), lineno), **emb)
    except DataError as e:
        msg = str(e)
        raise DataError(msg if msg.startswith("line") else f"line {lineno}: {msg}") from None


def load_manifest(path: str | os.PathLike) -> tuple[list[VideoRecord], ManifestReport]:
    """Read a line-delimited JSON manifest; the first line declares dims."""
    records: list[VideoRecord] = []
    seen: set[str] = set()
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: malformed JSON ({e.msg})") from None
            if dims is None:
                if not isinstance(obj, dict) or not all(
                        isinstance(obj.get(k), int) and obj[k] > 0 for k in _DIM_KEYS.values()):
                    raise DataError(f"line {lineno}: header must declare positive integer d_v, d_a, d_t")
                dims = {m: obj[k] for m, k in _DIM_KEYS.items()}
                continue
            rec = parse_record(obj, dims, lineno)
            if rec.video_id in seen:
                raise DataError(f"line {lineno}: duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)
            records.append(rec)
    if dims is None:
        raise DataError("manifest is empty (missing header line)")
    return records, make_report(records, tuple(dims[m] for m in MODALITIES))


def make_report(records: Sequence[VideoRecord], dims: tuple[int, int, int]) -> ManifestReport:
    missing = {m: sum(1 for r in records if r.playable and getattr(r, m) is None) for m in MODALITIES}
    return ManifestReport(
        dims=tuple(dims),
        n_records=len(records),
        n_playable=sum(r.playable for r in records),
        n_labeled=sum(r.labeled for r in records),
        missing=missing,
        n_authors=len({r.author_id for r in records}),
    )


def record_to_json(rec: VideoRecord) -> dict:
    return {
        "video_id": rec.video_id,
        "author_id": rec.author_id,
        "playable": rec.playable,
        **{m: (None if getattr(rec, m) is None else getattr(rec, m).tolist()) for m in MODALITIES},
        "targets": None if rec.targets is None else rec.targets.to_dict(),
    }


def dump_manifest(records: Iterable[VideoRecord], dims: Sequence[int]) -> str:
    header = {k: int(d) for k, d in zip(_DIM_KEYS.values(), dims)}
    lines = [json.dumps(header)]
    lines += [json.dumps(record_to_json(r)) for r in records]
    return "\n".join(lines) + "\n"


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partial output."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, bytes) else "w"
    try:
        with open(tmp, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_manifest(path: str | os.PathLike, records: Iterable[VideoRecord], dims: Sequence[int]) -> None:
    atomic_write(path, dump_manifest(records, dims))


# ---------------------------------------------------------------------------
# filtering, splitting, target transforms
# ---------------------------------------------------------------------------


def filter_playable(records: Iterable[VideoRecord]) -> list[VideoRecord]:
    return [r for r in records if r.playable]


@dataclass
class DatasetSplit:
    train: list[VideoRecord]
    val: list[VideoRecord]
    seed: int
    ratio: float


def split(records: Sequence[VideoRecord], ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Author-stratified seeded split.

    Within each author the records are shuffled and the first
    ``floor(ratio * n)`` go to train. A single-record author goes to train.
    Output order follows author first appearance, then the shuffle.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    by_author: dict[str, list[VideoRecord]] = defaultdict(list)
    for r in records:
        if not r.labeled:
            raise ValueError(f"split needs labeled records; {r.video_id} has no targets")
        by_author[r.author_id].append(r)
    train, val = [], []
    for author, recs in by_author.items():
        # per-author stream so one author's shuffle does not depend on the others
        rng = np.random.default_rng([seed, _stable_hash(author)])
        order = rng.permutation(len(recs))
        if len(recs) < 2:
            logger.warning("author %s has %d record(s); all go to train", author, len(recs))
            n_train = len(recs)
        else:
            n_train = math.floor(ratio * len(recs))
        train += [recs[i] for i in order[:n_train]]
        val += [recs[i] for i in order[n_train:]]
    return DatasetSplit(train, val, seed, ratio)


def _stable_hash(s: str) -> int:
    # process-independent (unlike hash())
    h = 1469598103934665603
    for b in s.encode("utf-8"):
        h = ((h ^ b) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class TargetTransform:
    kind: str = "log1p"

    def __post_init__(self):
        if self.kind not in ("log1p", "identity"):
            raise ValueError(f"unknown target transform {self.kind!r}")

    def forward(self, counts) -> np.ndarray:
        x = np.asarray(counts, dtype=np.float64)
        return np.log1p(x) if self.kind == "log1p" else x.copy()

    def inverse(self, values) -> np.ndarray:
        """Back to nonnegative integer counts (clamp, invert, round)."""
        y = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
        x = np.expm1(y) if self.kind == "log1p" else y
        return np.rint(x).astype(np.int64)


def transform_targets(t: PopularityTargets, tf: TargetTransform) -> np.ndarray:
    return tf.forward(t.as_tuple())


def inverse_targets(values, tf: TargetTransform) -> PopularityTargets:
    return PopularityTargets(*(int(v) for v in tf.inverse(values)))


def target_matrix(records: Sequence[VideoRecord]) -> np.ndarray:
    """Raw counts, shape (n, 4), columns in METRICS order."""
    return np.array([r.targets.as_tuple() for r in records], dtype=np.float64).reshape(len(records), 4)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    n_videos: int = 1500
    n_authors: int = 15
    dims: tuple[int, int, int] = (64, 64, 64)
    noise: float = 0.05
    seed: int = 0
    latent_dim: int = 4
    author_dim: int = 4
    unplayable_frac: float = 0.0
    missing_frac: float = 0.1
    n_unlabeled: int = 0
    # log-scale intercepts per metric, METRICS order
    base: tuple[float, float, float, float] = (8.0, 4.5, 5.0, 11.0)
    spread: float = 0.8
    author_spread: float = 0.5

    def validate(self) -> None:
        if self.n_videos < 1 or self.n_authors < 1:
            raise ValueError("n_videos and n_authors must be >= 1")
        if len(self.dims) != 3 or min(self.dims) < 4:
            raise ValueError("dims must be three integers >= 4")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.latent_dim < 1 or self.author_dim < 1:
            raise ValueError("latent_dim and author_dim must be >= 1")
        if not 0 <= self.unplayable_frac <= 1 or not 0 <= self.missing_frac <= 1:
            raise ValueError("fractions must lie in [0, 1]")
        if self.n_unlabeled < 0:
            raise ValueError("n_unlabeled must be >= 0")


@dataclass
class SyntheticData:
    dims: tuple[int, int, int]
    records: list[VideoRecord]
    unlabeled: list[VideoRecord] = field(default_factory=list)


def generate_synthetic(cfg: SynthConfig) -> SyntheticData:
    """Seeded synthetic corpus.

    Each author has a latent centre; a video's latent vector is that centre
    joined with a per-video factor. Every modality is a fixed random linear
    map of the latent vector plus Gaussian noise. Log-targets are affine in
    the per-video factor plus a per-author offset, so with ``noise=0`` the
    targets are a deterministic function of the embeddings.
    ``n_unlabeled`` extra unlabeled videos come from the same world.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    k = cfg.author_dim + cfg.latent_dim
    centres = rng.normal(0.0, 1.5, size=(cfg.n_authors, cfg.author_dim))
    maps = [rng.normal(0.0, 1.0 / math.sqrt(k), size=(k, d)) for d in cfg.dims]
    weights = rng.normal(0.0, cfg.spread / math.sqrt(cfg.latent_dim), size=(cfg.latent_dim, 4))
    offsets = rng.normal(0.0, cfg.author_spread, size=(cfg.n_authors, 4))
    base = np.asarray(cfg.base)

    total = cfg.n_videos + cfg.n_unlabeled
    authors = np.concatenate([np.arange(cfg.n_authors), rng.integers(0, cfg.n_authors, total - cfg.n_authors)]) \
        if total >= cfg.n_authors else rng.permutation(cfg.n_authors)[:total]
    authors = rng.permutation(authors)
    u = rng.normal(0.0, 1.0, size=(total, cfg.latent_dim))
    latent = np.concatenate([centres[authors], u], axis=1)
    emb = [latent @ M + cfg.noise * rng.normal(size=(total, M.shape[1])) for M in maps]
    log_counts = base + u @ weights + offsets[authors]
    counts = np.rint(np.exp(log_counts)).astype(np.int64)

    n_unplayable = int(round(cfg.unplayable_frac * cfg.n_videos))
    unplayable = set(rng.choice(cfg.n_videos, size=n_unplayable, replace=False).tolist())
    drop_flag = rng.random(total) < cfg.missing_frac
    drop_which = rng.integers(0, 3, size=total)

    width = len(str(total - 1))
    out: list[VideoRecord] = []
    for i in range(total):
        labeled = i < cfg.n_videos
        playable = i not in unplayable
        vecs = {m: emb[j][i].astype(np.float32) for j, m in enumerate(MODALITIES)}
        if not playable:
            vecs = {m: None for m in MODALITIES}
        elif drop_flag[i]:
            vecs[MODALITIES[drop_which[i]]] = None
        prefix = "v" if labeled else "t"
        out.append(VideoRecord(
            f"{prefix}{i:0{width}d}", f"author{authors[i]:02d}", playable,
            targets=PopularityTargets(*(int(c) for c in counts[i])) if labeled else None,
            **vecs,
        ))
    return SyntheticData(tuple(cfg.dims), out[:cfg.n_videos], out[cfg.n_videos:])
