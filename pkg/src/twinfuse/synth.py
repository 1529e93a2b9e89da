"""Deterministic synthetic twin datasets.

Every subject gets a latent identity vector; a twin's latent is correlated
with its sibling's.  Voices are sums of three latent-tuned sinusoids under a
latent-tuned amplitude envelope, ears are 64x128 band textures, and the ear
embeddings are a fixed random linear map of the ear latent.  Each capture
adds its own session jitter and noise.  Nothing here claims biometric
realism; it only gives every scorer a real signal to work with.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import Signal, write_wav
from .datamodel import Dataset, SampleRecord, write_manifest
from .embeddings import write_vector_table
from .errors import DataError
from .hog import write_pgm

log = logging.getLogger(__name__)

LATENT_DIM = 19
VOICE_DIMS = slice(0, 7)
EAR_DIMS = slice(7, 19)
EAR_SHIFT_PX = 2.0
SAMPLE_RATE = 16000
VOICE_SECONDS = 1.0
EAR_WIDTH, EAR_HEIGHT = 64, 128
BASE_FREQS = (300.0, 900.0, 2000.0)


@dataclass(frozen=True)
class SynthConfig:
    n_pairs: int = 38
    twin_correlation: float = 0.8
    voice_noise: float = 0.02
    voice_jitter: float = 0.12
    ear_noise: float = 0.01
    ear_jitter: float = 0.25
    embedding_noise: float = 2.5
    embedding_dim: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.n_pairs < 1:
            raise DataError("n_pairs must be >= 1")
        if not 0.0 <= self.twin_correlation <= 1.0:
            raise DataError("twin_correlation must lie in [0, 1]")
        for name in ("voice_noise", "voice_jitter", "ear_noise", "ear_jitter", "embedding_noise"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")
        if self.embedding_dim < 1:
            raise DataError("embedding_dim must be >= 1")


def twin_latents(n_pairs: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """(n_pairs, 2, LATENT_DIM) standard-normal latents with corr(a, b) = r per coordinate."""
    a = rng.standard_normal((n_pairs, LATENT_DIM))
    e = rng.standard_normal((n_pairs, LATENT_DIM))
    b = r * a + np.sqrt(1.0 - r * r) * e
    return np.stack([a, b], axis=1)


def voice_signal(z: np.ndarray, jitter: float, noise: float, rng: np.random.Generator) -> np.ndarray:
    """One take: latent z plus a per-take perturbation of size ``jitter``."""
    zt = z[VOICE_DIMS] + jitter * rng.standard_normal(7)
    t = np.arange(int(SAMPLE_RATE * VOICE_SECONDS)) / SAMPLE_RATE
    freqs = np.array(BASE_FREQS) * 2.0 ** (0.3 * zt[:3])
    amps = np.exp(0.4 * zt[3:6])
    rate = 2.0 + 0.5 * np.tanh(zt[6])  # envelope cycles per second
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    phases = rng.uniform(0, 2 * np.pi, 3)
    x = envelope * (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
    x *= 0.5 / np.max(np.abs(x))
    return x + noise * rng.standard_normal(len(t))


def ear_image(z: np.ndarray, jitter: float, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Three latent-tuned plane waves; a capture perturbs the latent and shifts the crop."""
    zt = z[EAR_DIMS] + jitter * rng.standard_normal(12)
    dx, dy = rng.uniform(-EAR_SHIFT_PX, EAR_SHIFT_PX, 2)
    y, x = np.mgrid[0:EAR_HEIGHT, 0:EAR_WIDTH]
    x, y = (x + dx) / EAR_HEIGHT, (y + dy) / EAR_HEIGHT
    img = np.full((EAR_HEIGHT, EAR_WIDTH), 0.5)
    for k in range(3):
        theta = np.pi * (k / 3.0 + 0.12 * zt[4 * k])
        freq = 4.0 * 2.0 ** (0.4 * zt[4 * k + 1])
        amp = 0.12 * np.exp(0.3 * zt[4 * k + 2])
        phase = np.pi * np.tanh(zt[4 * k + 3])
        img += amp * np.sin(2 * np.pi * freq * (x * np.cos(theta) + y * np.sin(theta)) + phase)
    img += noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(cfg: SynthConfig, out_dir: Path | str) -> Path:
    """Write WAVs, PGMs, an embedding table, a manifest and a run config; returns the manifest path."""
    cfg.validate()
    out = Path(out_dir)
    try:
        (out / "voice").mkdir(parents=True, exist_ok=True)
        (out / "ear").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc

    rng = np.random.default_rng(cfg.seed)
    latents = twin_latents(cfg.n_pairs, cfg.twin_correlation, rng)
    projection = rng.standard_normal((cfg.embedding_dim, EAR_DIMS.stop - EAR_DIMS.start))

    pairs, samples = [], []
    emb_ids, emb_rows = [], []
    for p in range(cfg.n_pairs):
        ids = (f"t{p + 1:02d}a", f"t{p + 1:02d}b")
        pairs.append(ids)
        for subject, z in zip(ids, latents[p]):
            for take in (1, 2, 3):
                sid = f"{subject}_voice{take}"
                path = out / "voice" / f"{sid}.wav"
                write_wav(path, Signal(voice_signal(z, cfg.voice_jitter, cfg.voice_noise, rng),
                                       SAMPLE_RATE))
                samples.append(SampleRecord(sid, subject, p, "voice", path, take=take))
            for side in ("left", "right"):
                sid = f"{subject}_ear_{side}"
                path = out / "ear" / f"{sid}.pgm"
                write_pgm(path, ear_image(z, cfg.ear_jitter, cfg.ear_noise, rng))
                samples.append(SampleRecord(sid, subject, p, "ear", path, side=side))
                zt = z[EAR_DIMS] + cfg.ear_jitter * rng.standard_normal(12)
                emb_ids.append(sid)
                emb_rows.append(projection @ zt
                                + cfg.embedding_noise * rng.standard_normal(cfg.embedding_dim))

    write_vector_table(out / "ear_embeddings.csv", emb_ids, emb_rows)
    manifest = write_manifest(Dataset(tuple(samples), tuple(pairs)), out / "manifest.json")
    (out / "synth.json").write_text(json.dumps(asdict(cfg), indent=1) + "\n")
    run_cfg = {"manifest": "manifest.json", "embeddings": "ear_embeddings.csv", "seed": cfg.seed}
    (out / "config.json").write_text(json.dumps(run_cfg, indent=1) + "\n")
    log.info("wrote synthetic dataset with %d pairs to %s", cfg.n_pairs, out)
    return manifest
