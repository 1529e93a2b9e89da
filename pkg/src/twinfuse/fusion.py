"""Score matrices, tanh normalization and hierarchical weighted fusion.

Every matrix is probes x enrolled subjects and holds dissimilarities (lower is
better) from end to end.  Leaves are tanh-normalized, then fused bottom-up
as convex combinations.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import DataError, InvariantError

LOWER_BETTER = "lower-better"
TANH_SCALE = 0.01
WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ScoreMatrix:
    values: np.ndarray
    probe_ids: tuple[str, ...]
    subject_ids: tuple[str, ...]
    orientation: str = LOWER_BETTER
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probe_ids", tuple(self.probe_ids))
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        if v.shape != (len(self.probe_ids), len(self.subject_ids)):
            raise DataError(f"score values {v.shape} do not match "
                            f"{len(self.probe_ids)} probes x {len(self.subject_ids)} subjects")
        if len(set(self.probe_ids)) != len(self.probe_ids):
            raise DataError("duplicate probe ids")
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise DataError("duplicate subject ids")
        if self.orientation != LOWER_BETTER:
            raise DataError(f"unsupported orientation {self.orientation!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise DataError("score matrix has non-finite entries")


def tanh_normalize(m: ScoreMatrix, per_row: bool = False) -> ScoreMatrix:
    """Map scores to (0, 1) via 0.5 * (tanh(0.01 * (s - mean) / std) + 1).

    Statistics are the mean and population standard deviation over the whole
    matrix, or over each probe row when ``per_row`` is set.  A zero spread
    maps every entry to 0.5.
    """
    if m.normalized:
        raise InvariantError("score matrix is already normalized")
    m.check_finite()
    s = m.values
    axis = 1 if per_row else None
    mu = s.mean(axis=axis, keepdims=True)
    sigma = s.std(axis=axis, keepdims=True)
    safe = np.where(sigma > 0, sigma, 1.0)
    z = np.where(sigma > 0, (s - mu) / safe, 0.0)
    out = 0.5 * (np.tanh(TANH_SCALE * z) + 1.0)
    return replace(m, values=out, normalized=True)


def check_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) == 0:
        raise DataError("weights must be a non-empty list")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DataError(f"weights must be finite and non-negative: {list(w)}")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise DataError(f"weight-sum: weights {list(w)} sum to {w.sum()!r}, not 1")
    return w


def weighted_fuse(ms: Sequence[ScoreMatrix], weights: Sequence[float]) -> ScoreMatrix:
    """Elementwise convex combination of normalized matrices sharing ids."""
    if not ms:
        raise DataError("nothing to fuse")
    w = check_weights(weights)
    if len(w) != len(ms):
        raise DataError(f"{len(ms)} matrices but {len(w)} weights")
    first = ms[0]
    for m in ms:
        if not m.normalized:
            raise InvariantError("weighted_fuse requires normalized matrices")
        if m.probe_ids != first.probe_ids or m.subject_ids != first.subject_ids:
            raise DataError("score matrices disagree on probe/subject ids")
        if m.orientation != first.orientation:
            raise DataError("score matrices disagree on orientation")
    fused = np.zeros_like(first.values)
    for wi, m in zip(w, ms):
        fused += wi * m.values
    return replace(first, values=fused, normalized=True)


@dataclass(frozen=True)
class Leaf:
    scorer: str

    @property
    def name(self) -> str:
        return self.scorer


@dataclass(frozen=True)
class Fuse:
    name: str
    children: tuple["PlanNode", ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


PlanNode = Union[Leaf, Fuse]


def default_plan() -> Fuse:
    """Ear fusion, voice fusion, then ear + voice, with the published weights."""
    ear = Fuse("fusion1_ear", (Leaf("hog"), Leaf("pca")), (0.21, 0.79))
    voice = Fuse("fusion2_voice", (Leaf("dtw"), Leaf("lstm")), (0.98, 0.02))
    return Fuse("fusion3_ear_voice", (ear, voice), (0.14, 0.86))


def validate_plan(plan: PlanNode) -> None:
    names: set[str] = set()

    def visit(node):
        if node.name in names:
            raise DataError(f"plan node name {node.name!r} used twice")
        names.add(node.name)
        if isinstance(node, Fuse):
            if not node.children:
                raise DataError(f"fusion node {node.name} has no children")
            if len(node.children) != len(node.weights):
                raise DataError(f"fusion node {node.name}: children/weights length mismatch")
            check_weights(node.weights)
            for c in node.children:
                visit(c)
        elif not isinstance(node, Leaf):
            raise DataError(f"not a plan node: {node!r}")

    visit(plan)


def plan_leaves(plan: PlanNode) -> list[str]:
    if isinstance(plan, Leaf):
        return [plan.scorer]
    return [s for c in plan.children for s in plan_leaves(c)]


def plan_nodes(plan: PlanNode) -> list[PlanNode]:
    """Post-order list of all nodes (children before parents)."""
    if isinstance(plan, Leaf):
        return [plan]
    return [n for c in plan.children for n in plan_nodes(c)] + [plan]


def prune_plan(plan: PlanNode, available: set[str] | frozenset[str]) -> PlanNode | None:
    """Drop unavailable leaves, renormalize sibling weights, collapse single-child nodes."""
    if isinstance(plan, Leaf):
        return plan if plan.scorer in available else None
    kept = [(c2, w) for c2, w in ((prune_plan(c, available), w) for c, w in
                                  zip(plan.children, plan.weights)) if c2 is not None]
    if not kept:
        return None
    if len(kept) == 1:
        return kept[0][0]
    total = sum(w for _, w in kept)
    if total <= 0:
        raise DataError(f"fusion node {plan.name}: remaining weights sum to zero")
    return Fuse(plan.name, tuple(c for c, _ in kept), tuple(w / total for _, w in kept))


def run_fusion_plan(plan: PlanNode, leaves: Mapping[str, ScoreMatrix],
                    per_row: bool = False) -> dict[str, ScoreMatrix]:
    """Evaluate a plan; returns every node's matrix keyed by node name.

    Leaves are tanh-normalized before use.  The root's matrix is under
    ``plan.name``.
    """
    validate_plan(plan)
    for scorer in plan_leaves(plan):
        if scorer not in leaves:
            raise DataError(f"unresolved-leaf: plan references unknown scorer {scorer!r}")
    out: dict[str, ScoreMatrix] = {}

    def evaluate(node) -> ScoreMatrix:
        if isinstance(node, Leaf):
            m = tanh_normalize(leaves[node.scorer], per_row=per_row)
        else:
            kids = [evaluate(c) for c in node.children]
            m = weighted_fuse(kids, node.weights)
        if not m.normalized:
            raise InvariantError(f"node {node.name} produced an unnormalized matrix")
        out[node.name] = m
        return m

    evaluate(plan)
    return out


def plan_to_dict(plan: PlanNode) -> dict:
    if isinstance(plan, Leaf):
        return {"leaf": plan.scorer}
    return {"name": plan.name, "weights": list(plan.weights),
            "children": [plan_to_dict(c) for c in plan.children]}


def plan_from_dict(d: Mapping) -> PlanNode:
    if "leaf" in d:
        return Leaf(str(d["leaf"]))
    try:
        return Fuse(str(d["name"]), tuple(plan_from_dict(c) for c in d["children"]),
                    tuple(d["weights"]))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed fusion plan node: {d!r}") from exc


def grid_search_weights(ms: Sequence[ScoreMatrix], objective: Callable[[ScoreMatrix], float],
                        step: float = 0.01) -> tuple[tuple[float, ...], float]:
    """Exhaustive search over the weight simplex; returns the best weights and objective.

    ``ms`` must already be normalized.  Ties keep the first weights found in
    lexicographic order.
    """
    n_steps = int(round(1.0 / step))
    if abs(n_steps * step - 1.0) > 1e-12:
        raise DataError("step must divide 1 evenly")
    best_w, best_v = None, -np.inf
    for head in itertools.product(range(n_steps + 1), repeat=len(ms) - 1):
        rest = n_steps - sum(head)
        if rest < 0:
            continue
        w = tuple(k / n_steps for k in head) + (rest / n_steps,)
        v = objective(weighted_fuse(ms, w))
        if v > best_v:
            best_w, best_v = w, v
    return best_w, best_v


def write_score_matrix(path: Path | str, m: ScoreMatrix) -> Path:
    """CSV body (subjects across, probes down) plus a ``.json`` sidecar with flags."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["probe", *m.subject_ids])
        for pid, row in zip(m.probe_ids, m.values):
            w.writerow([pid, *(repr(float(v)) for v in row)])
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"orientation": m.orientation, "normalized": m.normalized},
                                  indent=1) + "\n")
    return path


def read_score_matrix(path: Path | str) -> ScoreMatrix:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        meta = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read score matrix {path}: {exc}") from exc
    if not rows or len(rows[0]) < 2:
        raise DataError(f"{path}: empty score matrix")
    subjects = rows[0][1:]
    probes, values = [], []
    for r in rows[1:]:
        if len(r) != len(subjects) + 1:
            raise DataError(f"{path}: ragged row for probe {r[:1]}")
        probes.append(r[0])
        try:
            values.append([float(x) for x in r[1:]])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric score ({exc})") from exc
    return ScoreMatrix(np.array(values).reshape(len(probes), len(subjects)), tuple(probes),
                       tuple(subjects), meta.get("orientation", LOWER_BETTER),
                       bool(meta.get("normalized", False)))
