"""Closed-set identification metrics and reports.

Ranks are pessimistic: the true identity loses every tie.  The AUC of a CMC
curve is the mean identification rate over ranks 1..N, i.e. the area under
the curve with the rank axis normalized to unit length.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .fusion import ScoreMatrix

REPORT_RANKS = (1, 2, 5)
FLOAT_DIGITS = 6


@dataclass(frozen=True)
class RankResult:
    probe_id: str
    true_subject: str
    rank: int
    tie_count: int


@dataclass(frozen=True)
class CmcCurve:
    rates: np.ndarray

    @property
    def n_subjects(self) -> int:
        return len(self.rates)

    def rank_rate(self, k: int) -> float:
        """Rate at rank k, clamped to the gallery size."""
        return float(self.rates[min(k, self.n_subjects) - 1])


def probe_ranks(m: ScoreMatrix, truth: Mapping[str, str]) -> list[RankResult]:
    col = {s: j for j, s in enumerate(m.subject_ids)}
    out = []
    for i, pid in enumerate(m.probe_ids):
        true = truth.get(pid)
        if true is None:
            raise DataError(f"no ground truth for probe {pid}")
        if true not in col:
            raise DataError(f"truth subject {true} of probe {pid} is not enrolled")
        row = m.values[i]
        own = row[col[true]]
        others = np.delete(row, col[true])
        better = int(np.sum(others < own))
        ties = int(np.sum(others == own))
        out.append(RankResult(pid, true, 1 + better + ties, ties))
    return out


def cmc_curve(ranks: Sequence[RankResult | int], n_subjects: int) -> CmcCurve:
    if not len(ranks):
        raise DataError("cannot build a CMC curve from zero probes")
    r = np.array([x.rank if isinstance(x, RankResult) else int(x) for x in ranks])
    if r.min() < 1 or r.max() > n_subjects:
        raise DataError(f"ranks must lie in 1..{n_subjects}")
    counts = np.bincount(r, minlength=n_subjects + 1)[1:]
    return CmcCurve(np.cumsum(counts) / len(r))


def cmc_auc(c: CmcCurve) -> float:
    return float(np.mean(c.rates))


def evaluate_matrix(m: ScoreMatrix, truth: Mapping[str, str]) -> CmcCurve:
    return cmc_curve(probe_ranks(m, truth), len(m.subject_ids))


def _r(x: float) -> float:
    return round(float(x), FLOAT_DIGITS)


def metric_row(name: str, kind: str, curve: CmcCurve, weight: float | None = None) -> dict:
    row: dict = {"name": name, "kind": kind, "weight": None if weight is None else _r(weight)}
    notes = []
    for k in REPORT_RANKS:
        row[f"rank{k}"] = _r(curve.rank_rate(k))
        if k > curve.n_subjects:
            notes.append(f"rank-{k} clamped to rank-{curve.n_subjects} (gallery has "
                         f"{curve.n_subjects} subjects)")
    row["auc"] = _r(cmc_auc(curve))
    row["cmc"] = [_r(x) for x in curve.rates]
    if notes:
        row["notes"] = notes
    return row


def write_report(rows: Sequence[dict], config: Mapping, seed: int | None,
                 path: Path | str, svg: bool = True) -> Path:
    """Write the JSON report plus a CSV table of the CMC curves (and an SVG chart).

    ``rows`` come from :func:`metric_row`.  Output is byte-deterministic:
    keys keep insertion order and floats are rounded to six decimals.
    """
    if not rows:
        raise DataError("report needs at least one result row")
    path = Path(path)
    doc = {"seed": seed, "config": config, "results": list(rows)}
    try:
        path.write_text(json.dumps(doc, indent=1) + "\n")
        write_cmc_table(path.with_name(path.stem + "_cmc.csv"), rows)
        if svg:
            write_cmc_svg(path.with_name(path.stem + "_cmc.svg"), rows)
    except OSError as exc:
        raise DataError(f"cannot write report {path}: {exc}") from exc
    return path


def write_cmc_table(path: Path, rows: Sequence[dict]) -> None:
    n = max(len(r["cmc"]) for r in rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", *(r["name"] for r in rows)])
        for k in range(n):
            w.writerow([k + 1, *(f"{r['cmc'][min(k, len(r['cmc']) - 1)]:.6f}" for r in rows)])


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2")


def write_cmc_svg(path: Path, rows: Sequence[dict], width: int = 640, height: int = 400) -> None:
    """Bare-bones line chart of every CMC curve."""
    pad = 50
    n = max(len(r["cmc"]) for r in rows)
    pw, ph = width - 2 * pad, height - 2 * pad

    def xy(k, rate):
        x = pad + (pw * (k / (n - 1)) if n > 1 else pw / 2)
        return f"{x:.2f},{pad + ph * (1 - rate):.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>',
             f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle">rank (1..{n})</text>',
             f'<text x="12" y="{height / 2:.0f}" transform="rotate(-90 12 {height / 2:.0f})" '
             f'text-anchor="middle">identification rate</text>']
    for i, r in enumerate(rows):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(xy(k, v) for k, v in enumerate(r["cmc"]))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{pad + 8}" y="{pad + ph - 10 - 16 * (len(rows) - 1 - i)}" '
                     f'fill="{color}" font-size="12">{r["name"]}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
