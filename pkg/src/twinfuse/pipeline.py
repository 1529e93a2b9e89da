"""End-to-end runs: split -> features -> raw scores -> normalize + fuse -> evaluate.

Each stage reads its inputs from and writes its outputs to the run directory,
so stages can be rerun on their own::

    out/split.json                       gallery/probe assignment
    out/features/mfcc/<sample_id>.csv    MFCC frames per voice sample
    out/features/hog.csv                 HOG descriptor per ear sample
    out/models/lstm.json, pca.json       fitted models
    out/scores/<scorer>.csv (+ .json)    raw leaf score matrices
    out/fused/<node>.csv (+ .json)       normalized matrices for every plan node
    out/report.json, report_cmc.csv, report_cmc.svg
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import audio, dtw, embeddings, evaluation, fusion, hog, lstm
from .datamodel import SPLIT_POLICIES, apply_split, load_manifest, validate_dataset
from .errors import DataError, InvariantError, TwinfuseError

log = logging.getLogger(__name__)

MODALITY_CHOICES = ("voice", "ear", "both")
VOICE_SCORERS = ("dtw", "lstm")
EAR_SCORERS = ("hog", "pca")


@dataclass(frozen=True)
class PcaSettings:
    k: int | None = None
    variance: float = embeddings.DEFAULT_VARIANCE_TARGET


@dataclass(frozen=True)
class RunConfig:
    manifest: str = "manifest.json"
    embeddings: str | None = None
    modality: str = "both"
    split_policy: str = "exclude-pair"
    strict: bool = False
    seed: int | None = None  # overrides lstm.seed when set
    mfcc: audio.MfccConfig = field(default_factory=audio.MfccConfig)
    dtw_normalized: bool = False
    lstm: lstm.LstmHyper = field(default_factory=lstm.LstmHyper)
    hog: hog.HogConfig = field(default_factory=hog.HogConfig)
    pca: PcaSettings = field(default_factory=PcaSettings)
    per_row_normalization: bool = False
    plan: dict = field(default_factory=lambda: fusion.plan_to_dict(fusion.default_plan()))

    def validate(self) -> None:
        if self.modality not in MODALITY_CHOICES:
            raise DataError(f"modality must be one of {MODALITY_CHOICES}")
        if self.split_policy not in SPLIT_POLICIES:
            raise DataError(f"split_policy must be one of {SPLIT_POLICIES}")
        self.hog.validate()
        fusion.validate_plan(fusion.plan_from_dict(self.plan))
        if self.lstm.epochs < 0 or self.lstm.seq_len < 1 or self.lstm.hidden_size < 1:
            raise DataError("invalid LSTM hyperparameters")

    @property
    def effective_seed(self) -> int:
        return self.lstm.seed if self.seed is None else self.seed

    @property
    def modalities(self) -> tuple[str, ...]:
        return ("voice", "ear") if self.modality == "both" else (self.modality,)


_NESTED = {"mfcc": audio.MfccConfig, "lstm": lstm.LstmHyper, "hog": hog.HogConfig,
           "pca": PcaSettings}


def _build(cls, data: Mapping, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise DataError(f"unknown {where} field(s): {sorted(unknown)}")
    kwargs = dict(data)
    if cls is hog.HogConfig and kwargs.get("resize_to") is not None:
        kwargs["resize_to"] = tuple(kwargs["resize_to"])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise DataError(f"bad {where} section: {exc}") from exc


def config_from_dict(data: Mapping) -> RunConfig:
    data = dict(data)
    for key, cls in _NESTED.items():
        if key in data:
            if not isinstance(data[key], Mapping):
                raise DataError(f"config section {key!r} must be an object")
            data[key] = _build(cls, data[key], key)
    cfg = _build(RunConfig, data, "config")
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    if d["hog"]["resize_to"] is not None:
        d["hog"]["resize_to"] = list(d["hog"]["resize_to"])
    return d


def load_config(path: Path | str, overrides: Mapping[str, Any] | None = None) -> tuple[RunConfig, Path]:
    """Read a JSON run config; returns it with the directory relative paths resolve against."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError("config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, leaf = key.partition(".")
        if leaf:
            data.setdefault(section, {})[leaf] = value
        else:
            data[section] = value
    return config_from_dict(data), path.parent


def _resolve(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else base / q


@dataclass
class Run:
    """A config bound to a base directory (for relative paths) and an output directory."""
    cfg: RunConfig
    base: Path
    out: Path

    @property
    def manifest_path(self) -> Path:
        return _resolve(self.base, self.cfg.manifest)

    @property
    def embeddings_path(self) -> Path | None:
        return _resolve(self.base, self.cfg.embeddings)

    def path(self, *parts: str) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


# --- stage 1: split + features ---------------------------------------------

def extract(run: Run) -> None:
    cfg = run.cfg
    ds = load_manifest(run.manifest_path)
    violations = validate_dataset(ds, cfg.modalities)
    missing_files = [v for v in violations if v.kind == "missing-file"]
    if missing_files:
        raise DataError(f"{len(missing_files)} sample file(s) missing, e.g. {missing_files[0].message}")
    for v in violations:
        log.warning("dataset: %s", v.message)
    split = apply_split(ds, cfg.modalities, cfg.split_policy)

    doc = {"subjects": list(split.subjects), "excluded": list(split.excluded), "modalities": {}}
    for m, ms in split.modalities.items():
        doc["modalities"][m] = {
            "gallery": [{"sample_id": r.sample_id, "subject": r.subject} for r in ms.gallery],
            "probes": [{"sample_id": r.sample_id, "subject": r.subject} for r in ms.probes],
        }
    run.path("split.json").write_text(json.dumps(doc, indent=1) + "\n")

    if "voice" in split.modalities:
        vs = split.modalities["voice"]
        for rec in vs.gallery + vs.probes:
            feats = audio.mfcc(audio.read_wav(rec.path), cfg.mfcc)
            audio.write_feature_table(run.path("features", "mfcc", f"{rec.sample_id}.csv"),
                                      feats.frames)
        log.info("extract: MFCC for %d voice samples", len(vs.gallery) + len(vs.probes))
    if "ear" in split.modalities:
        es = split.modalities["ear"]
        recs = es.gallery + es.probes
        descs = [hog.hog_descriptor(hog.load_image_gray(r.path, cfg.hog.resize_to), cfg.hog)
                 for r in recs]
        embeddings.write_vector_table(run.path("features", "hog.csv"),
                                      [r.sample_id for r in recs], descs)
        log.info("extract: HOG for %d ear samples", len(recs))


def _load_split(run: Run) -> dict:
    try:
        return json.loads(run.path("split.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"no usable split in {run.out}; run the extract stage first") from exc


def _probe_rows(entries: list[dict]) -> list[str]:
    # one probe per subject and modality; rows are keyed by the probe's owner
    # so that the ear and voice matrices line up for cross-modal fusion
    ids = [e["subject"] for e in entries]
    if len(set(ids)) != len(ids):
        raise InvariantError("more than one probe per subject in a modality")
    return ids


# --- stage 2: raw score matrices --------------------------------------------

def score(run: Run) -> dict[str, fusion.ScoreMatrix]:
    cfg = run.cfg
    split = _load_split(run)
    out: dict[str, fusion.ScoreMatrix] = {}

    voice = split["modalities"].get("voice")
    if voice:
        def frames(e):
            return audio.read_feature_table(run.out / "features" / "mfcc" / f"{e['sample_id']}.csv")
        g_seq = [frames(e) for e in voice["gallery"]]
        g_sub = [e["subject"] for e in voice["gallery"]]
        p_seq = [frames(e) for e in voice["probes"]]
        rows = _probe_rows(voice["probes"])
        out["dtw"] = dtw.pairwise_dtw_scores(p_seq, g_seq, g_sub, rows, cfg.dtw_normalized)
        log.info("score: DTW %dx%d", *out["dtw"].shape)
        hyper = dataclasses.replace(cfg.lstm, seed=cfg.effective_seed)
        model = lstm.train_classifier(g_seq, g_sub, hyper)
        lstm.save_model(model, run.path("models", "lstm.json"))
        log.info("score: LSTM trained, loss %.4f -> %.4f", model.loss_trace[0], model.loss_trace[-1])
        out["lstm"] = lstm.lstm_scores(p_seq, model, rows)

    ear = split["modalities"].get("ear")
    if ear:
        table = embeddings.load_embeddings(run.out / "features" / "hog.csv")
        rows = _probe_rows(ear["probes"])
        g_sub = [e["subject"] for e in ear["gallery"]]
        out["hog"] = embeddings.pairwise_vector_scores(
            [table[e["sample_id"]] for e in ear["probes"]],
            [table[e["sample_id"]] for e in ear["gallery"]], g_sub, rows)
        log.info("score: HOG %dx%d", *out["hog"].shape)

        emb_path = run.embeddings_path
        if emb_path is None or not emb_path.exists():
            msg = f"embedding table {emb_path} not available"
            if cfg.strict:
                raise DataError(msg)
            log.warning("%s; dropping the pca scorer", msg)
        else:
            emb = embeddings.load_embeddings(emb_path)
            missing = [e["sample_id"] for e in ear["gallery"] + ear["probes"]
                       if e["sample_id"] not in emb]
            if missing:
                raise DataError(f"embedding table lacks {len(missing)} ear sample(s), e.g. {missing[0]}")
            gal = np.array([emb[e["sample_id"]] for e in ear["gallery"]])
            model = embeddings.pca_fit(gal, cfg.pca.k, cfg.pca.variance)
            run.path("models", "pca.json").write_text(
                json.dumps(embeddings.pca_to_dict(model)) + "\n")
            log.info("score: PCA kept %d of %d dimensions", model.k, model.dim)
            out["pca"] = embeddings.pairwise_vector_scores(
                embeddings.pca_project(model, np.array([emb[e["sample_id"]] for e in ear["probes"]])),
                embeddings.pca_project(model, gal), g_sub, rows)

    for name, m in out.items():
        fusion.write_score_matrix(run.path("scores", f"{name}.csv"), m)
    return out


# --- stage 3: normalization + fusion ----------------------------------------

def active_plan(run: Run, available: set[str]) -> fusion.PlanNode:
    plan = fusion.plan_from_dict(run.cfg.plan)
    wanted = set(fusion.plan_leaves(plan))
    missing = wanted - available
    if missing and run.cfg.strict:
        raise DataError(f"strict mode: scorer(s) {sorted(missing)} unavailable")
    pruned = fusion.prune_plan(plan, available)
    if pruned is None:
        raise DataError("no scorer of the fusion plan is available")
    return pruned


def fuse(run: Run) -> dict[str, fusion.ScoreMatrix]:
    scores_dir = run.out / "scores"
    leaves = {p.stem: fusion.read_score_matrix(p) for p in sorted(scores_dir.glob("*.csv"))}
    for name, m in leaves.items():
        if m.normalized:
            raise InvariantError(f"raw score matrix {name} is already normalized")
    plan = active_plan(run, set(leaves))
    nodes = fusion.run_fusion_plan(plan, leaves, per_row=run.cfg.per_row_normalization)
    for name, m in nodes.items():
        fusion.write_score_matrix(run.path("fused", f"{name}.csv"), m)
    log.info("fuse: %d plan nodes evaluated", len(nodes))
    return nodes


# --- stage 4: evaluation -----------------------------------------------------

def evaluate(run: Run) -> Path:
    leaves = {p.stem for p in (run.out / "scores").glob("*.csv")}
    plan = active_plan(run, leaves)
    split = _load_split(run)
    truth = {s: s for s in split["subjects"]}

    weights: dict[str, float | None] = {plan.name: None}
    for node in fusion.plan_nodes(plan):
        if isinstance(node, fusion.Fuse):
            for child, w in zip(node.children, node.weights):
                weights[child.name] = w
    nodes = fusion.plan_nodes(plan)
    ordered = ([n for n in nodes if isinstance(n, fusion.Leaf)] +
               [n for n in nodes if isinstance(n, fusion.Fuse)])
    rows = []
    for node in ordered:
        m = fusion.read_score_matrix(run.out / "fused" / f"{node.name}.csv")
        if not m.normalized:
            raise InvariantError(f"{node.name} reached evaluation unnormalized")
        curve = evaluation.evaluate_matrix(m, truth)
        kind = "leaf" if isinstance(node, fusion.Leaf) else "fusion"
        rows.append(evaluation.metric_row(node.name, kind, curve, weights.get(node.name)))

    config = config_to_dict(run.cfg)
    config["plan_active"] = fusion.plan_to_dict(plan)
    report = evaluation.write_report(rows, config, run.cfg.effective_seed, run.path("report.json"))
    for r in rows:
        log.info("eval: %-20s rank1=%.4f rank2=%.4f rank5=%.4f auc=%.4f",
                 r["name"], r["rank1"], r["rank2"], r["rank5"], r["auc"])
    return report


def run_pipeline(cfg: RunConfig, out_dir: Path | str, base: Path | str = ".") -> Path:
    """Run every stage in order and return the report path."""
    cfg.validate()
    run = Run(cfg, Path(base), Path(out_dir))
    run.out.mkdir(parents=True, exist_ok=True)
    result = None
    for stage in (extract, score, fuse, evaluate):
        log.info("stage %s", stage.__name__)
        try:
            result = stage(run)
        except TwinfuseError as exc:
            exc.args = (f"{stage.__name__} stage: {exc}",)
            raise
    return result
