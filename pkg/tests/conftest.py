import json
from contextlib import contextmanager
from pathlib import Path

import pytest

from twinfuse.datamodel import Dataset, SampleRecord
from twinfuse.synth import SynthConfig, generate_synthetic


def make_dataset(root: Path, n_pairs: int = 2, touch: bool = True) -> Dataset:
    """Complete dataset with placeholder files: 3 voice takes and both ears per subject."""
    pairs, samples = [], []
    for p in range(n_pairs):
        ids = (f"s{2 * p + 1:02d}", f"s{2 * p + 2:02d}")
        pairs.append(ids)
        for s in ids:
            for take in (1, 2, 3):
                samples.append(SampleRecord(f"{s}_v{take}", s, p, "voice",
                                            root / f"{s}_v{take}.wav", take=take))
            for side in ("left", "right"):
                samples.append(SampleRecord(f"{s}_e{side[0]}", s, p, "ear",
                                            root / f"{s}_e{side[0]}.pgm", side=side))
    if touch:
        root.mkdir(parents=True, exist_ok=True)
        for r in samples:
            r.path.touch()
    return Dataset(tuple(samples), tuple(pairs))


@pytest.fixture
def small_dataset(tmp_path):
    return make_dataset(tmp_path / "data", n_pairs=2)


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """Four-pair synthetic dataset shared by pipeline and CLI tests."""
    out = tmp_path_factory.mktemp("synth_small")
    generate_synthetic(SynthConfig(n_pairs=4, seed=3), out)
    cfg = json.loads((out / "config.json").read_text())
    cfg["lstm"] = {"epochs": 5, "hidden_size": 8}
    (out / "config.json").write_text(json.dumps(cfg))
    return out


ACCEPTANCE: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion.

    The body may fill the yielded dict's ``detail`` with measured values.
    """
    info = {"detail": ""}
    try:
        yield info
    except BaseException:
        line = f"FAIL  criterion {number:>2}: {title}  {info['detail']}"
        ACCEPTANCE.append(line)
        print(line)
        raise
    line = f"PASS  criterion {number:>2}: {title}  {info['detail']}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
