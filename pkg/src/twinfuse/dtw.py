"""Dynamic time warping between MFCC sequences.

Recurrence: D(i, j) = min(D(i-1, j-1), D(i-1, j), D(i, j-1)) + d(i, j), with
D(0, 0) = d(0, 0) and cumulative sums along the first row and column.  The
local distance is the Euclidean norm between frames.  No warping window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .errors import DataError
from .fusion import ScoreMatrix


@dataclass(frozen=True)
class DtwResult:
    distance: float
    path_length: int
    normalized: bool = False


def _as_frames(x) -> np.ndarray:
    a = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataError(f"expected a (frames, dims) sequence, got shape {a.shape}")
    return np.ascontiguousarray(a)


def local_distance(e, t) -> float:
    e = np.atleast_1d(np.asarray(e, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if e.shape != t.shape:
        raise DataError(f"dimension mismatch: {e.shape} vs {t.shape}")
    return float(np.sqrt(np.sum((e - t) ** 2)))


@numba.njit(cache=True)
def _accumulate(E, T):
    n, m = E.shape[0], T.shape[0]
    dim = E.shape[1]
    D = np.empty((n, m))
    L = np.empty((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(dim):
                diff = E[i, k] - T[j, k]
                acc += diff * diff
            d = np.sqrt(acc)
            if i == 0 and j == 0:
                D[i, j] = d
                L[i, j] = 1
                continue
            # predecessor preference on ties: diagonal, then vertical, then horizontal
            best = np.inf
            blen = 0
            if i > 0 and j > 0:
                best = D[i - 1, j - 1]
                blen = L[i - 1, j - 1]
            if i > 0 and D[i - 1, j] < best:
                best = D[i - 1, j]
                blen = L[i - 1, j]
            if j > 0 and D[i, j - 1] < best:
                best = D[i, j - 1]
                blen = L[i, j - 1]
            D[i, j] = best + d
            L[i, j] = blen + 1
    return D[n - 1, m - 1], L[n - 1, m - 1]


def dtw_distance(E, T, normalized: bool = False) -> DtwResult:
    """DTW distance between two sequences of frames.

    With ``normalized`` the accumulated distance is divided by the number of
    cells on the optimal warping path.
    """
    E, T = _as_frames(E), _as_frames(T)
    if len(E) == 0 or len(T) == 0:
        raise DataError("DTW needs non-empty sequences")
    if E.shape[1] != T.shape[1]:
        raise DataError(f"dimension mismatch: {E.shape[1]} vs {T.shape[1]} coefficients")
    dist, length = _accumulate(E, T)
    dist = float(dist)
    if normalized:
        dist /= int(length)
    return DtwResult(dist, int(length), normalized)


@numba.njit(cache=True)
def _pairwise(P, p_off, G, g_off, g_col, n_cols, normalized):
    out = np.full((len(p_off) - 1, n_cols), np.inf)
    for a in range(len(p_off) - 1):
        E = P[p_off[a]:p_off[a + 1]]
        for b in range(len(g_off) - 1):
            dist, length = _accumulate(E, G[g_off[b]:g_off[b + 1]])
            if normalized:
                dist /= length
            if dist < out[a, g_col[b]]:
                out[a, g_col[b]] = dist
    return out


def _pack(seqs):
    lengths = [len(s) for s in seqs]
    if min(lengths) == 0:
        raise DataError("DTW needs non-empty sequences")
    return np.concatenate(seqs), np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)


def pairwise_dtw_scores(probes: Sequence, gallery: Sequence, gallery_subjects: Sequence[str],
                        probe_ids: Sequence[str] | None = None,
                        normalized: bool = False) -> ScoreMatrix:
    """Probe x subject DTW matrix; a subject's gallery takes are reduced by minimum."""
    if not len(probes) or not len(gallery):
        raise DataError("empty probe or gallery set")
    if len(gallery) != len(gallery_subjects):
        raise DataError("gallery and gallery_subjects differ in length")
    probe_ids = list(probe_ids) if probe_ids is not None else [f"p{i}" for i in range(len(probes))]
    subjects = list(dict.fromkeys(gallery_subjects))
    col = {s: k for k, s in enumerate(subjects)}

    P = [_as_frames(p) for p in probes]
    G = [_as_frames(g) for g in gallery]
    dims = {a.shape[1] for a in P + G}
    if len(dims) != 1:
        raise DataError(f"sequences disagree on coefficient dimension: {sorted(dims)}")
    Pc, p_off = _pack(P)
    Gc, g_off = _pack(G)
    g_col = np.array([col[s] for s in gallery_subjects], dtype=np.int64)
    values = _pairwise(Pc, p_off, Gc, g_off, g_col, len(subjects), normalized)
    return ScoreMatrix(values, tuple(probe_ids), tuple(subjects))
