"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the "acceptance criteria" section of the terminal summary.
"""

import json

import numpy as np
import pytest

from twinfuse import lstm
from twinfuse.audio import MfccConfig, Signal, mfcc
from twinfuse.cli import main
from twinfuse.dtw import dtw_distance
from twinfuse.embeddings import pca_fit, pca_project, pca_reconstruct
from twinfuse.evaluation import cmc_curve, probe_ranks
from twinfuse.fusion import (Fuse, ScoreMatrix, check_weights, default_plan, plan_nodes,
                             tanh_normalize, validate_plan, weighted_fuse)
from twinfuse.hog import hog_descriptor

from conftest import criterion
from oracles import brute_force_dtw, sorted_rank

N_SEEDS = 20


def _ids(n, prefix):
    return [f"{prefix}{i}" for i in range(n)]


def test_dtw_oracle_equivalence():
    with criterion(1, "DTW equals exhaustive warping-path search") as c:
        rng = np.random.default_rng(2024)
        mismatches = 0
        for _ in range(1000):
            E = rng.integers(0, 3, size=rng.integers(1, 7)).astype(float)
            T = rng.integers(0, 3, size=rng.integers(1, 7)).astype(float)
            got = dtw_distance(E, T).distance
            want = brute_force_dtw(E, T)
            mismatches += got.hex() != want.hex()
        c["detail"] = f"(1000 cases, {mismatches} bitwise mismatches)"
        assert mismatches == 0


def test_lstm_gradient_check():
    with criterion(2, "LSTM analytic gradients match central differences") as c:
        errors = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            p, W, b = lstm.init_params(4, 3, 3, rng)  # default uniform(-0.1, 0.1) draws
            head = lstm.ClassifierHead(W, b, ("a", "b", "c"))
            seq = rng.normal(size=(5, 3))
            errors.append(lstm.gradient_check(p, head, seq, int(rng.integers(3)), step=1e-5))
        c["detail"] = f"(20 configs, max relative error {max(errors):.2e})"
        assert max(errors) < 1e-4


def test_tanh_normalization():
    with criterion(3, "tanh normalization range, centre and per-probe argmin") as c:
        rng = np.random.default_rng(3)
        worst_centre = 0.0
        for _ in range(1000):
            n, m = rng.integers(2, 12, size=2)
            v = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 100), size=(n, m))
            v[-1, -1] = (v.sum() - v[-1, -1]) / (v.size - 1)  # this entry equals the mean
            out = tanh_normalize(ScoreMatrix(v, _ids(n, "p"), _ids(m, "s"))).values
            assert ((out > 0) & (out < 1)).all()
            worst_centre = max(worst_centre, abs(out[-1, -1] - 0.5))
            assert (out.argmin(axis=1) == v.argmin(axis=1)).all()
        c["detail"] = f"(1000 matrices, |f(mean) - 0.5| <= {worst_centre:.1e})"
        assert worst_centre <= 1e-12


def test_cmc_properties():
    with criterion(4, "CMC monotone, ends at 1, ranks match sort oracle") as c:
        np.testing.assert_array_equal(cmc_curve([1, 1, 2, 5], 5).rates,
                                      [0.5, 0.75, 0.75, 0.75, 1.0])
        rng = np.random.default_rng(4)
        for _ in range(100):
            v = rng.integers(0, 6, size=(10, 10)).astype(float)
            truth = rng.integers(0, 10, size=10)
            m = ScoreMatrix(v, _ids(10, "p"), _ids(10, "s"))
            ranks = probe_ranks(m, {f"p{i}": f"s{t}" for i, t in enumerate(truth)})
            assert [r.rank for r in ranks] == [sorted_rank(v[i], t) for i, t in enumerate(truth)]
            rates = cmc_curve(ranks, 10).rates
            assert (np.diff(rates) >= 0).all() and rates[-1] == 1.0
        c["detail"] = "(100 random 10x10 matrices)"


def test_hog():
    with criterion(5, "HOG length 3780, zero on constant, shift invariant") as c:
        img = np.random.default_rng(5).uniform(0.1, 0.8, size=(128, 64))
        d = hog_descriptor(img)
        assert d.shape == (3780,)
        assert not hog_descriptor(np.full((128, 64), 0.4)).any()
        drift = np.abs(hog_descriptor(img + 0.15) - d).max()
        c["detail"] = f"(shift drift {drift:.1e})"
        assert drift <= 1e-12


def test_mfcc():
    with criterion(6, "MFCC 98x13; scaling moves only coefficient 0") as c:
        rng = np.random.default_rng(6)
        t = np.arange(16000) / 16000
        x = 0.3 * np.sin(2 * np.pi * 500 * t) + 0.05 * rng.normal(size=t.size)
        cfg = MfccConfig(frame_len_ms=25, hop_ms=10, n_coefficients=13)
        a = mfcc(Signal(x, 16000), cfg).frames
        b = mfcc(Signal(2.5 * x, 16000), cfg).frames
        assert a.shape == (98, 13)
        drift = np.abs(a[:, 1:] - b[:, 1:]).max()
        c["detail"] = f"(coefficients 1..12 drift {drift:.1e})"
        assert drift <= 1e-9


def test_pca():
    with criterion(7, "PCA on the line dataset and full-rank round trip") as c:
        m = pca_fit([(1, 1), (-1, -1), (2, 2), (-2, -2)], k=2)
        comp_err = np.abs(m.components[0] - 2 ** -0.5).max()
        assert comp_err <= 1e-9
        assert m.eigenvalues[1] <= 1e-9
        x = np.random.default_rng(7).normal(size=(30, 8))
        full = pca_fit(x, k=8)
        rt = np.abs(pca_reconstruct(full, pca_project(full, x)) - x).max()
        c["detail"] = f"(component error {comp_err:.1e}, round-trip {rt:.1e})"
        assert rt < 1e-9


def test_fusion_arithmetic():
    with criterion(8, "weights (1, 0) keep ranking; default plan valid") as c:
        rng = np.random.default_rng(8)
        a = tanh_normalize(ScoreMatrix(rng.normal(size=(6, 5)), _ids(6, "p"), _ids(5, "s")))
        b = tanh_normalize(ScoreMatrix(rng.normal(size=(6, 5)), _ids(6, "p"), _ids(5, "s")))
        fused = weighted_fuse([a, b], (1, 0))
        assert (np.argsort(fused.values, axis=1, kind="stable") ==
                np.argsort(a.values, axis=1, kind="stable")).all()
        plan = default_plan()
        validate_plan(plan)
        weights = [n.weights for n in plan_nodes(plan) if isinstance(n, Fuse)]
        assert weights == [(0.21, 0.79), (0.98, 0.02), (0.14, 0.86)]
        for w in weights:
            check_weights(w)
            assert abs(sum(w) - 1) <= 1e-9
        c["detail"] = "(0.21/0.79, 0.98/0.02, 0.14/0.86)"


@pytest.mark.slow
def test_synthetic_fusion_gain(tmp_path):
    with criterion(9, "fusion-3 beats every single scorer on synthetic twins") as c:
        wins = dominated = 0
        for seed in range(N_SEEDS):
            data, out = tmp_path / f"d{seed}", tmp_path / f"r{seed}"
            assert main(["synth", "--pairs", "38", "--twin-correlation", "0.8",
                         "--seed", str(seed), "--out", str(data)]) == 0
            assert main(["run", "--config", str(data / "config.json"), "--out", str(out)]) == 0
            rows = {r["name"]: r for r in json.loads((out / "report.json").read_text())["results"]}
            top = rows["fusion3_ear_voice"]
            leaves = [r for r in rows.values() if r["kind"] == "leaf"]
            assert len(leaves) == 4
            wins += top["rank1"] >= max(r["rank1"] for r in leaves)
            dominated += all(t >= l for r in leaves for t, l in zip(top["cmc"], r["cmc"]))
        c["detail"] = f"(rank-1 wins {wins}/{N_SEEDS}, CMC dominance {dominated}/{N_SEEDS})"
        assert wins >= 18 and dominated >= 15


def test_end_to_end_determinism(tmp_path):
    with criterion(10, "same seed and config give byte-identical outputs") as c:
        data = tmp_path / "data"
        assert main(["synth", "--pairs", "38", "--twin-correlation", "0.8",
                     "--seed", "7", "--out", str(data)]) == 0
        for run in ("a", "b"):
            assert main(["run", "--config", str(data / "config.json"),
                         "--out", str(tmp_path / run), "--seed", "7"]) == 0
        names = ["report.json", "report_cmc.csv", "report_cmc.svg"]
        same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
                for n in names]
        c["detail"] = f"({sum(same)}/{len(names)} files identical)"
        assert all(same)
