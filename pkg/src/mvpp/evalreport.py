"""MSE / PLCC metrics and the HEART-SHARE-COMMENT-PLAY report grid."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import METRICS, VideoRecord, target_matrix
from .numerics import UsageError

VARIANTS = ("R", "C", "E")
COLUMN_NAMES = {"hearts": "HEART", "shares": "SHARE", "comments": "COMMENT", "plays": "PLAY"}
# report column order is fixed regardless of internal metric order
REPORT_ORDER = ("hearts", "shares", "comments", "plays")


def mse(preds: Sequence[float], targets: Sequence[float]) -> float:
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size:
        raise UsageError(f"mse: length mismatch {p.size} vs {t.size}")
    if p.size == 0:
        raise UsageError("mse of empty sequences")
    d = p - t
    return float(np.dot(d, d) / d.size)


def plcc(preds: Sequence[float], targets: Sequence[float]) -> float | None:
    """Pearson correlation, or ``None`` when either side has zero variance."""
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size:
        raise UsageError(f"plcc: length mismatch {p.size} vs {t.size}")
    if p.size < 2:
        raise UsageError("plcc needs at least two points")
    dp = p - p.mean()
    dt = t - t.mean()
    sp = float(np.dot(dp, dp))
    st = float(np.dot(dt, dt))
    if sp == 0.0 or st == 0.0:
        return None
    r = float(np.dot(dp, dt)) / math.sqrt(sp * st)
    return max(-1.0, min(1.0, r))


@dataclass
class Cell:
    mse: float | None
    plcc: float | None
    n: int

    def to_dict(self) -> dict:
        return {"mse": self.mse, "plcc": self.plcc, "n": self.n}


@dataclass
class MetricsTable:
    """cells[variant][metric] -> Cell; per_author[author][variant][metric] -> Cell."""

    metrics: tuple[str, ...] = METRICS
    cells: dict[str, dict[str, Cell]] = field(default_factory=dict)
    per_author: dict[str, dict[str, dict[str, Cell]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": list(self.metrics),
            "overall": {v: {m: c.to_dict() for m, c in row.items()} for v, row in self.cells.items()},
            "per_author": {a: {v: {m: c.to_dict() for m, c in row.items()} for v, row in rows.items()}
                           for a, rows in self.per_author.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsTable":
        def cells(rows):
            return {v: {m: Cell(c["mse"], c["plcc"], c["n"]) for m, c in row.items()} for v, row in rows.items()}
        return cls(tuple(d["metrics"]), cells(d["overall"]),
                   {a: cells(rows) for a, rows in d["per_author"].items()})


def _cell(pred: np.ndarray, truth: np.ndarray) -> Cell:
    ok = ~np.isnan(pred)
    n = int(ok.sum())
    if n == 0:
        return Cell(None, None, 0)
    return Cell(mse(pred[ok], truth[ok]), plcc(pred[ok], truth[ok]) if n >= 2 else None, n)


def table_from_predictions(preds: dict[str, np.ndarray], truth: np.ndarray, authors: Sequence[str],
                           metrics: Sequence[str] = METRICS) -> MetricsTable:
    """Build a table from per-variant (n, len(metrics)) raw-count predictions (NaN = not served)."""
    table = MetricsTable(tuple(metrics))
    authors = np.asarray(authors)
    for v, p in preds.items():
        table.cells[v] = {m: _cell(p[:, j], truth[:, j]) for j, m in enumerate(metrics)}
        for a in dict.fromkeys(authors.tolist()):
            sel = authors == a
            table.per_author.setdefault(a, {})[v] = {m: _cell(p[sel, j], truth[sel, j])
                                                     for j, m in enumerate(metrics)}
    return table


def evaluate(ens, records: Sequence[VideoRecord]) -> MetricsTable:
    """Raw-count MSE/PLCC for variants R (where available), C and E, pooled and per author."""
    from .ensemble import predict_variant_counts

    if not records:
        raise UsageError("evaluate needs at least one labeled record")
    truth = target_matrix(records)
    preds = {v: predict_variant_counts(ens, records, v) for v in VARIANTS}
    return table_from_predictions(preds, truth, [r.author_id for r in records])


def _fmt_mse(v: float | None) -> str:
    if v is None:
        return "n/a"
    return f"{v:.1f}" if abs(v) < 1e6 else f"{v:.1e}"


def _fmt_plcc(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def emit_report(table: MetricsTable, fmt: str = "text") -> str:
    if fmt == "structured":
        return json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt != "text":
        raise UsageError(f"unknown report format {fmt!r}")
    cols = [m for m in REPORT_ORDER if m in table.metrics]
    width = 12
    top = " " * 4 + "".join(COLUMN_NAMES[m].center(2 * width) for m in cols)
    sub = " " * 4 + "".join("MSE".rjust(width) + "PLCC".rjust(width) for _ in cols)
    lines = [top.rstrip(), sub]
    for v in VARIANTS:
        row = table.cells.get(v)
        if row is None:
            continue
        lines.append(v.ljust(4) + "".join(
            _fmt_mse(row[m].mse).rjust(width) + _fmt_plcc(row[m].plcc).rjust(width) for m in cols))
    return "\n".join(lines) + "\n"


def parse_text_report(text: str) -> dict[str, dict[str, tuple[float | None, float | None]]]:
    """Read back the values of a text grid: variant -> metric -> (mse, plcc)."""
    lines = text.strip("\n").splitlines()
    names = lines[0].split()
    inv = {v: k for k, v in COLUMN_NAMES.items()}
    metrics = [inv[n] for n in names]
    out = {}
    for line in lines[2:]:
        parts = line.split()
        vals = [None if x == "n/a" else float(x) for x in parts[1:]]
        out[parts[0]] = {m: (vals[2 * i], vals[2 * i + 1]) for i, m in enumerate(metrics)}
    return out
