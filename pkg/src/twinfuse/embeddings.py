"""Externally computed ear embeddings, PCA reduction and vector matching.

The deep network that produces embeddings is not part of this package; its
output arrives as a CSV table (``sample_id,f0,f1,...``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .fusion import ScoreMatrix

DEFAULT_VARIANCE_TARGET = 0.95


@dataclass(frozen=True)
class EmbeddingTable:
    entries: dict[str, np.ndarray]
    dim: int

    def __getitem__(self, sample_id: str) -> np.ndarray:
        return self.entries[sample_id]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def load_embeddings(path: Path | str) -> EmbeddingTable:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataError(f"cannot read embedding table {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty embedding table")
    has_header = rows[0][0].strip() == "sample_id"
    body = rows[1:] if has_header else rows
    dim = len(rows[0]) - 1
    if dim < 1:
        raise DataError(f"{path}: table has no feature columns")
    entries: dict[str, np.ndarray] = {}
    for lineno, r in enumerate(body, start=2 if has_header else 1):
        if len(r) - 1 != dim:
            raise DataError(f"{path}:{lineno}: ragged-row with {len(r) - 1} values, expected {dim}")
        sid = r[0].strip()
        if sid in entries:
            raise DataError(f"{path}:{lineno}: duplicate-id {sid}")
        try:
            entries[sid] = np.array([float(x) for x in r[1:]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
    return EmbeddingTable(entries, dim)


def write_vector_table(path: Path | str, ids: Sequence[str], vectors: Sequence[np.ndarray]) -> None:
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    dim = len(vectors[0]) if vectors else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *(f"f{i}" for i in range(dim))])
        for sid, v in zip(ids, vectors):
            w.writerow([sid, *(repr(float(x)) for x in v)])


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, dim), rows orthonormal
    eigenvalues: np.ndarray  # (k,), non-increasing

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def _eigh_sorted(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    return mean, vals[order], vecs[:, order].T


def pca_fit(vectors, k: int | None = None,
            variance_target: float = DEFAULT_VARIANCE_TARGET) -> PcaModel:
    """Fit PCA on the sample covariance (n - 1 denominator).

    With ``k=None`` the smallest k whose eigenvalues reach ``variance_target``
    of the total is used, capped at n - 1.  Each component is signed so its
    largest-magnitude coordinate is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise DataError("PCA needs at least two vectors")
    n, dim = X.shape
    limit = min(n - 1, dim)
    mean, vals, vecs = _eigh_sorted(X)
    if k is None:
        total = vals.sum()
        if total <= 0:
            k = 1
        else:
            k = int(np.searchsorted(np.cumsum(vals) / total, variance_target - 1e-12) + 1)
        k = min(max(k, 1), limit)
    if not 1 <= k <= limit:
        raise DataError(f"k-out-of-range: k={k} must satisfy 1 <= k <= min(n-1, dim) = {limit}")

    comps = vecs[:k].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, comps, vals[:k].copy())


def pca_project(m: PcaModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != m.dim:
        raise DataError(f"dimension mismatch: vector has {v.shape[-1]} values, model expects {m.dim}")
    return (v - m.mean) @ m.components.T


def pca_reconstruct(m: PcaModel, proj) -> np.ndarray:
    return m.mean + np.asarray(proj) @ m.components


def manhattan_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(np.abs(a - b)))


def pairwise_vector_scores(probes: Sequence, gallery: Sequence, gallery_subjects: Sequence[str],
                           probe_ids: Sequence[str] | None = None,
                           metric: Callable = manhattan_distance) -> ScoreMatrix:
    """Probe x subject distances, taking the minimum over a subject's gallery vectors."""
    if not len(probes) or not len(gallery):
        raise DataError("empty probe or gallery set")
    if len(gallery) != len(gallery_subjects):
        raise DataError("gallery and gallery_subjects differ in length")
    probe_ids = list(probe_ids) if probe_ids is not None else [f"p{i}" for i in range(len(probes))]
    subjects = list(dict.fromkeys(gallery_subjects))
    col = {s: j for j, s in enumerate(subjects)}
    values = np.full((len(probes), len(subjects)), np.inf)
    for i, p in enumerate(probes):
        for g, s in zip(gallery, gallery_subjects):
            d = metric(p, g)
            if d < values[i, col[s]]:
                values[i, col[s]] = d
    return ScoreMatrix(values, tuple(probe_ids), tuple(subjects))


def pca_to_dict(m: PcaModel) -> dict:
    return {"mean": m.mean.tolist(), "components": m.components.tolist(),
            "eigenvalues": m.eigenvalues.tolist()}


def pca_from_dict(d: Mapping) -> PcaModel:
    return PcaModel(np.array(d["mean"], dtype=np.float64),
                    np.array(d["components"], dtype=np.float64).reshape(len(d["eigenvalues"]), -1),
                    np.array(d["eigenvalues"], dtype=np.float64))
