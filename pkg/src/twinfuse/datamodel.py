"""Dataset manifest handling and the gallery/probe split protocol.

A manifest is a single JSON document::

    {"pairs": [["s01", "s02"], ...],
     "samples": [{"sample_id": "s01_v1", "subject": "s01", "modality": "voice",
                  "take": 1, "path": "voice/s01_v1.wav"}, ...]}

Ear samples carry ``side`` ("left"/"right") instead of ``take``.  Relative
paths resolve against the manifest's directory.

Split protocol: voice takes 1 and 2 enroll, take 3 probes; the left ear
enrolls, the right ear probes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DataError

log = logging.getLogger(__name__)

MODALITIES = ("voice", "ear")
EAR_SIDES = ("left", "right")
VOICE_TAKES = (1, 2, 3)

GALLERY_TAKES = (1, 2)
PROBE_TAKES = (3,)
GALLERY_SIDES = ("left",)
PROBE_SIDES = ("right",)

SPLIT_POLICIES = ("exclude-pair", "exclude-subject", "abort")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    subject: str
    twin_pair: int
    modality: str
    path: Path
    take: int | None = None
    side: str | None = None

    @property
    def slot(self) -> int | str | None:
        """Take index for voice, side for ear."""
        return self.take if self.modality == "voice" else self.side


@dataclass(frozen=True)
class Dataset:
    samples: tuple[SampleRecord, ...]
    pairs: tuple[tuple[str, str], ...]

    @property
    def subjects(self) -> tuple[str, ...]:
        return tuple(s for pair in self.pairs for s in pair)

    def twin_of(self, subject: str) -> str:
        for a, b in self.pairs:
            if subject == a:
                return b
            if subject == b:
                return a
        raise KeyError(subject)

    def by_modality(self, modality: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.modality == modality]


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    subject: str | None = None
    sample_id: str | None = None


@dataclass(frozen=True)
class ModalitySplit:
    gallery: tuple[SampleRecord, ...]
    probes: tuple[SampleRecord, ...]


@dataclass(frozen=True)
class SplitPlan:
    subjects: tuple[str, ...]
    modalities: dict[str, ModalitySplit]
    excluded: tuple[str, ...] = field(default=())


def _parse_sample(raw: dict, pair_index: dict[str, int], root: Path) -> SampleRecord:
    try:
        sample_id = str(raw["sample_id"])
        subject = str(raw["subject"])
        modality = raw["modality"]
        path = raw["path"]
    except KeyError as exc:
        raise DataError(f"sample entry missing field {exc.args[0]!r}: {raw!r}") from None
    if not sample_id or not subject:
        raise DataError(f"empty sample_id or subject in {raw!r}")
    if modality not in MODALITIES:
        raise DataError(f"sample {sample_id}: unknown modality {modality!r}")
    if subject not in pair_index:
        raise DataError(f"sample {sample_id}: subject {subject} is not in any pair")

    take = side = None
    if modality == "voice":
        take = raw.get("take")
        if take not in VOICE_TAKES or isinstance(take, bool):
            raise DataError(f"sample {sample_id}: voice sample needs take in 1..3, got {take!r}")
        if raw.get("side") is not None:
            raise DataError(f"sample {sample_id}: voice sample must not carry a side")
    else:
        side = raw.get("side")
        if side not in EAR_SIDES:
            raise DataError(f"sample {sample_id}: ear sample needs side left/right, got {side!r}")
        if raw.get("take") is not None:
            raise DataError(f"sample {sample_id}: ear sample must not carry a take")

    p = Path(path)
    if not p.is_absolute():
        p = root / p
    return SampleRecord(sample_id, subject, pair_index[subject], modality, p, take, side)


def parse_manifest(doc: dict, root: Path | str = ".") -> Dataset:
    """Build a Dataset from an already-decoded manifest document."""
    root = Path(root)
    if not isinstance(doc, dict) or "pairs" not in doc or "samples" not in doc:
        raise DataError("manifest must be an object with 'pairs' and 'samples'")

    pairs: list[tuple[str, str]] = []
    pair_index: dict[str, int] = {}
    for i, pair in enumerate(doc["pairs"]):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise DataError(f"pair #{i} must list exactly two subjects: {pair!r}")
        a, b = str(pair[0]), str(pair[1])
        if not a or not b or a == b:
            raise DataError(f"pair #{i} is malformed: {pair!r}")
        for s in (a, b):
            if s in pair_index:
                raise DataError(f"subject {s} appears in two pairs")
            pair_index[s] = i
        pairs.append((a, b))

    samples: list[SampleRecord] = []
    seen: set[str] = set()
    for raw in doc["samples"]:
        rec = _parse_sample(raw, pair_index, root)
        if rec.sample_id in seen:
            raise DataError(f"duplicate sample_id {rec.sample_id}")
        seen.add(rec.sample_id)
        samples.append(rec)
    return Dataset(tuple(samples), tuple(pairs))


def load_manifest(path: Path | str) -> Dataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    ds = parse_manifest(doc, path.parent)
    counts = {m: len(ds.by_modality(m)) for m in MODALITIES}
    log.info("loaded %s: %d subjects, %d samples (%s)", path, len(ds.subjects),
             len(ds.samples), ", ".join(f"{m}={n}" for m, n in counts.items()))
    return ds


def manifest_document(ds: Dataset, root: Path | str | None = None) -> dict:
    """Inverse of :func:`parse_manifest`; paths are made relative to ``root`` when possible."""
    entries = []
    root = Path(root).resolve() if root is not None else None
    for s in ds.samples:
        path = s.path
        if root is not None:
            try:
                path = path.resolve().relative_to(root)
            except ValueError:
                pass
        entry: dict = {"sample_id": s.sample_id, "subject": s.subject, "modality": s.modality}
        if s.modality == "voice":
            entry["take"] = s.take
        else:
            entry["side"] = s.side
        entry["path"] = path.as_posix()
        entries.append(entry)
    return {"pairs": [list(p) for p in ds.pairs], "samples": entries}


def write_manifest(ds: Dataset, path: Path | str) -> Path:
    path = Path(path)
    doc = manifest_document(ds, path.parent)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def _required(modality: str) -> tuple:
    return VOICE_TAKES if modality == "voice" else EAR_SIDES


def _missing_slots(ds: Dataset, subject: str, modality: str) -> list:
    have = {s.slot for s in ds.samples if s.subject == subject and s.modality == modality}
    return [slot for slot in _required(modality) if slot not in have]


def validate_dataset(ds: Dataset, modalities: Iterable[str] = MODALITIES,
                     check_files: bool = True) -> list[Violation]:
    """Collect every invariant violation; an empty list means the dataset is usable as-is."""
    out: list[Violation] = []
    pair_count: dict[str, int] = {}
    for a, b in ds.pairs:
        for s in (a, b):
            pair_count[s] = pair_count.get(s, 0) + 1
    for s, n in pair_count.items():
        if n > 1:
            out.append(Violation("multi-pair", f"subject {s} appears in {n} pairs", subject=s))

    ids: set[str] = set()
    slots: set[tuple] = set()
    for rec in ds.samples:
        if rec.sample_id in ids:
            out.append(Violation("duplicate-id", f"duplicate sample_id {rec.sample_id}",
                                 rec.subject, rec.sample_id))
        ids.add(rec.sample_id)
        if rec.subject not in pair_count:
            out.append(Violation("unpaired-subject", f"subject {rec.subject} is not in any pair",
                                 rec.subject, rec.sample_id))
        if rec.modality == "voice" and rec.take not in VOICE_TAKES:
            out.append(Violation("bad-slot", "voice sample without valid take",
                                 rec.subject, rec.sample_id))
        if rec.modality == "ear" and rec.side not in EAR_SIDES:
            out.append(Violation("bad-slot", "ear sample without valid side",
                                 rec.subject, rec.sample_id))
        key = (rec.subject, rec.modality, rec.slot)
        if key in slots:
            out.append(Violation("duplicate-sample",
                                 f"subject {rec.subject} has two {rec.modality} samples for {rec.slot}",
                                 rec.subject, rec.sample_id))
        slots.add(key)
        if check_files and not rec.path.exists():
            out.append(Violation("missing-file", f"{rec.path} does not exist",
                                 rec.subject, rec.sample_id))

    for modality in modalities:
        for subject in ds.subjects:
            for slot in _missing_slots(ds, subject, modality):
                out.append(Violation("missing-sample",
                                     f"subject {subject} lacks {modality} sample {slot}",
                                     subject=subject))
    return out


def apply_split(ds: Dataset, modalities: Iterable[str] = MODALITIES,
                policy: str = "exclude-pair") -> SplitPlan:
    """Partition samples into gallery and probes for each requested modality.

    A subject missing a required sample in any requested modality is dropped
    from every modality (together with the twin under ``exclude-pair``), so all
    modalities share one probe and gallery identity set.  ``abort`` raises
    instead.
    """
    modalities = tuple(modalities)
    if policy not in SPLIT_POLICIES:
        raise DataError(f"unknown split policy {policy!r}")
    for m in modalities:
        if m not in MODALITIES:
            raise DataError(f"unknown modality {m!r}")

    excluded: set[str] = set()
    for subject in ds.subjects:
        for m in modalities:
            missing = _missing_slots(ds, subject, m)
            if not missing:
                continue
            msg = f"subject {subject} lacks {m} sample(s) {missing}"
            if policy == "abort":
                raise DataError(f"missing-sample: {msg}")
            log.warning("%s; excluding %s", msg,
                        "the twin pair" if policy == "exclude-pair" else "the subject")
            excluded.add(subject)
            if policy == "exclude-pair":
                excluded.add(ds.twin_of(subject))

    subjects = tuple(s for s in ds.subjects if s not in excluded)
    if not subjects:
        raise DataError("no subject survives the split")

    keep = set(subjects)
    splits: dict[str, ModalitySplit] = {}
    for m in modalities:
        recs = sorted((r for r in ds.by_modality(m) if r.subject in keep),
                      key=lambda r: (subjects.index(r.subject), str(r.slot)))
        if m == "voice":
            gallery = tuple(r for r in recs if r.take in GALLERY_TAKES)
            probes = tuple(r for r in recs if r.take in PROBE_TAKES)
        else:
            gallery = tuple(r for r in recs if r.side in GALLERY_SIDES)
            probes = tuple(r for r in recs if r.side in PROBE_SIDES)
        splits[m] = ModalitySplit(gallery, probes)
    return SplitPlan(subjects, splits, tuple(s for s in ds.subjects if s in excluded))
