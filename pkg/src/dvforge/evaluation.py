"""Evaluation: noise-detection ROC/AUC, mean/std tables over repeated runs,
timing comparisons and deterministic SVG plots."""

from __future__ import annotations

import csv
import json
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    method: str
    noise_rate: float
    run_seed: int
    test_accuracy: float
    values: np.ndarray = field(repr=False)
    wall_clock_s: float = 0.0
    inner_fit_count: int = 0
    noise_mask: np.ndarray | None = field(default=None, repr=False)
    auc: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"test_accuracy {self.test_accuracy} outside [0, 1]")
        if self.wall_clock_s < 0:
            raise ValueError("wall_clock_s must be >= 0")
        self.values = np.asarray(self.values, dtype=float)

    def to_json(self) -> dict:
        d = asdict(self)
        d["values"] = self.values.tolist()
        d["noise_mask"] = None if self.noise_mask is None else np.asarray(self.noise_mask, bool).tolist()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["values"] = np.asarray(d["values"], float)
        if d.get("noise_mask") is not None:
            d["noise_mask"] = np.asarray(d["noise_mask"], bool)
        return cls(**d)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def roc_auc(values, noise_mask) -> RocCurve:
    """ROC for separating clean (positive) from noisy (negative) records.

    Every distinct score is a threshold (descending); tied scores move the
    curve diagonally, so the trapezoid area gives ties half credit.
    """
    scores = np.asarray(values, dtype=float)
    positive = ~np.asarray(noise_mask, dtype=bool)
    p = int(positive.sum())
    n = positive.size - p
    if p == 0 or n == 0:
        raise ValueError("ROC needs both clean and noisy records")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    pos = positive[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tpr = np.r_[0.0, tp[last] / p]
    fpr = np.r_[0.0, fp[last] / n]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(np.r_[np.inf, s[last]], tpr, fpr, auc)


def mann_whitney_auc(values, noise_mask) -> float:
    """O(P*N) pair count: P(clean > noisy) + 0.5 P(tie)."""
    scores = np.asarray(values, float)
    mask = np.asarray(noise_mask, bool)
    a, b = scores[~mask], scores[mask]
    diff = a[:, None] - b[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


# -- aggregation -------------------------------------------------------------------------------

def aggregate_runs(records: Iterable[RunRecord]) -> list[dict]:
    """Per (method, noise_rate) mean and sample std of test accuracy (and AUC)."""
    cells: dict[tuple[str, float], list[RunRecord]] = defaultdict(list)
    for r in records:
        cells[(r.method, float(r.noise_rate))].append(r)
    rows = []
    for (method, noise), runs in sorted(cells.items()):
        acc = np.array([r.test_accuracy for r in runs])
        aucs = np.array([r.auc for r in runs if r.auc is not None])
        rows.append({
            "method": method,
            "noise_rate": noise,
            "count": len(runs),
            "mean": float(acc.mean()),
            "std": float(acc.std(ddof=1)) if len(runs) > 1 else 0.0,
            "single_run": len(runs) == 1,
            "auc_mean": float(aucs.mean()) if aucs.size else None,
            "auc_std": float(aucs.std(ddof=1)) if aucs.size > 1 else (0.0 if aucs.size else None),
        })
    return rows


def fill_grid(rows: list[dict], methods: Sequence[str], noise_rates: Sequence[float]) -> list[dict]:
    """Add ``absent`` rows for grid cells that produced no runs."""
    have = {(r["method"], r["noise_rate"]) for r in rows}
    out = [dict(r, absent=False) for r in rows]
    for m in methods:
        for nr in noise_rates:
            if (m, float(nr)) not in have:
                out.append({"method": m, "noise_rate": float(nr), "count": 0, "mean": None,
                            "std": None, "single_run": False, "auc_mean": None, "auc_std": None,
                            "absent": True})
    return sorted(out, key=lambda r: (r["method"], r["noise_rate"]))


# -- file schemas ----------------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_scores_csv(records: Sequence[RunRecord], path: str | Path) -> None:
    rows = sorted(records, key=lambda r: (r.method, r.noise_rate, r.run_seed))
    _write_csv(Path(path), ["method", "noise_rate", "seed", "test_accuracy", "wall_clock_s"],
               ([r.method, r.noise_rate, r.run_seed, r.test_accuracy, r.wall_clock_s] for r in rows))


def write_values_csv(records: Sequence[RunRecord], path: str | Path) -> None:
    def rows():
        for r in sorted(records, key=lambda r: (r.method, r.noise_rate, r.run_seed)):
            mask = r.noise_mask if r.noise_mask is not None else np.zeros(r.values.size, bool)
            for i, (v, noisy) in enumerate(zip(r.values, mask)):
                yield [r.method, i, v, bool(noisy), r.noise_rate, r.run_seed]

    # trailing noise_rate/seed columns disambiguate runs sharing a method
    _write_csv(Path(path), ["method", "record_id", "value", "is_noisy", "noise_rate", "seed"], rows())


def write_roc_csv(curves: Sequence[tuple[str, RocCurve]], path: str | Path) -> None:
    def rows():
        for name, c in curves:
            for f, t in zip(c.fpr, c.tpr):
                yield [name, f, t]

    _write_csv(Path(path), ["method", "fpr", "tpr"], rows())


def write_summary(rows: list[dict], directory: str | Path) -> None:
    directory = Path(directory)
    keys = ["method", "noise_rate", "count", "mean", "std", "single_run", "auc_mean", "auc_std", "absent"]
    _write_csv(directory / "summary.csv", keys, ([r.get(k) for k in keys] for r in rows))
    (directory / "summary.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


# -- timing -----------------------------------------------------------------------------------------

@dataclass
class TimingRow:
    method: str
    size: int
    wall_clock_s: float
    inner_fit_count: int


def timing_harness(
    method: str,
    sizes: Sequence[int],
    runner: Callable[[int], int],
) -> list[TimingRow]:
    """Time ``runner(size)`` for each size; ``runner`` returns its inner-fit count."""
    rows = []
    for size in sizes:
        t0 = time.perf_counter()
        fits = runner(size)
        rows.append(TimingRow(method, int(size), time.perf_counter() - t0, int(fits)))
    return rows


def write_timing_csv(rows: Sequence[TimingRow], path: str | Path) -> None:
    _write_csv(Path(path), ["method", "size", "wall_clock_s", "inner_fit_count"],
               ([r.method, r.size, r.wall_clock_s, r.inner_fit_count] for r in rows))


# -- SVG ------------------------------------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
_W, _H, _M = 480, 400, 50


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>',
                      f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="13">{_esc(title)}</text>',
                      *body, "</svg>", ""])


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def roc_svg(curves: Sequence[tuple[str, RocCurve]], title: str = "ROC (positive = clean)") -> str:
    pw, ph = _W - 2 * _M, _H - 2 * _M

    def pt(f, t):
        return f"{_M + f * pw:.2f},{_H - _M - t * ph:.2f}"

    body = [
        f'<rect x="{_M}" y="{_M}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<line class="diagonal" x1="{_M}" y1="{_H - _M}" x2="{_W - _M}" y2="{_M}" '
        'stroke="#999" stroke-dasharray="4,4"/>',
        f'<text x="{_W / 2:.1f}" y="{_H - 15}" text-anchor="middle">false positive rate</text>',
        f'<text x="15" y="{_H / 2:.1f}" text-anchor="middle" transform="rotate(-90 15 {_H / 2:.1f})">'
        "true positive rate</text>",
    ]
    for i, (name, c) in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(pt(f, t) for f, t in zip(c.fpr, c.tpr))
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        y = _H - _M - 10 - 14 * i
        body.append(f'<text x="{_W - _M - 5}" y="{y}" text-anchor="end" fill="{color}">'
                    f"{_esc(name)} (AUC {c.auc:.3f})</text>")
    return _svg(body, title)


def bar_svg(rows: Sequence[dict], title: str = "Test accuracy") -> str:
    rows = [r for r in rows if r.get("mean") is not None]
    pw, ph = _W - 2 * _M, _H - 2 * _M
    lo = min((r["mean"] - (r["std"] or 0.0) for r in rows), default=0.0)
    lo = max(0.0, np.floor(lo * 20) / 20 - 0.05)
    span = max(1.0 - lo, 1e-9)
    width = pw / max(len(rows), 1)
    body = [f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - _M}" y2="{_H - _M}" stroke="black"/>',
            f'<text x="{_M - 5}" y="{_H - _M}" text-anchor="end">{lo:.2f}</text>',
            f'<text x="{_M - 5}" y="{_M + 4}" text-anchor="end">1.00</text>']
    for i, r in enumerate(rows):
        h = (r["mean"] - lo) / span * ph
        x = _M + i * width + width * 0.1
        color = _PALETTE[i % len(_PALETTE)]
        body.append(f'<rect x="{x:.2f}" y="{_H - _M - h:.2f}" width="{width * 0.8:.2f}" '
                    f'height="{h:.2f}" fill="{color}"/>')
        err = (r["std"] or 0.0) / span * ph
        cx = x + width * 0.4
        body.append(f'<line x1="{cx:.2f}" y1="{_H - _M - h - err:.2f}" x2="{cx:.2f}" '
                    f'y2="{_H - _M - h + err:.2f}" stroke="black"/>')
        label = f"{r['method']} @{r['noise_rate']:g}"
        body.append(f'<text x="{cx:.2f}" y="{_H - _M + 14}" text-anchor="middle" font-size="9">'
                    f"{_esc(label)}</text>")
    return _svg(body, title)


def render_plots(
    out_dir: str | Path,
    curves: dict[str, Sequence[tuple[str, RocCurve]]] | None = None,
    tables: dict[str, Sequence[dict]] | None = None,
) -> list[Path]:
    """Write ``roc_<key>.svg`` and ``scores_<key>.svg``; empty inputs write nothing."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key, cs in sorted((curves or {}).items()):
        if not cs:
            log.warning("no ROC curves for %s; skipping plot", key)
            continue
        path = out_dir / f"roc_{key}.svg"
        path.write_text(roc_svg(cs, f"ROC {key} (positive = clean)"))
        written.append(path)
    for key, rows in sorted((tables or {}).items()):
        if not rows:
            log.warning("no score rows for %s; skipping plot", key)
            continue
        path = out_dir / f"scores_{key}.svg"
        path.write_text(bar_svg(rows, f"Test accuracy {key}"))
        written.append(path)
    if not written:
        log.warning("nothing to plot in %s", out_dir)
    return written


def best_and_worst(records: Sequence[RunRecord]) -> tuple[RunRecord, RunRecord]:
    """Runs with the highest and lowest AUC (ties broken by seed)."""
    scored = sorted((r for r in records if r.auc is not None), key=lambda r: (r.auc, r.run_seed))
    if not scored:
        raise ValueError("no runs with an AUC")
    return scored[-1], scored[0]
