"""WAV reading and MFCC extraction.

Pipeline: pre-emphasis -> framing -> Hamming window -> power spectrum ->
triangular mel filterbank -> floored log -> orthonormal DCT-II.
"""

from __future__ import annotations

import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import DataError


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("signal contains non-finite samples")


@dataclass(frozen=True)
class MfccConfig:
    pre_emphasis_alpha: float = 0.97
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    n_mel_filters: int = 26
    n_coefficients: int = 13
    fmin_hz: float = 0.0
    fmax_hz: float | None = None  # None means Nyquist
    log_floor: float = 1e-10

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def upper_hz(self, sample_rate: int) -> float:
        return sample_rate / 2.0 if self.fmax_hz is None else float(self.fmax_hz)

    def validate(self, sample_rate: int) -> None:
        if not 0.0 <= self.pre_emphasis_alpha < 1.0:
            raise DataError("pre_emphasis_alpha must lie in [0, 1)")
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise DataError(f"fft_size must be a power of two, got {self.fft_size}")
        frame = self.frame_samples(sample_rate)
        hop = self.hop_samples(sample_rate)
        if frame < 2 or hop < 1 or hop > frame:
            raise DataError(f"need 1 <= hop <= frame (got hop={hop}, frame={frame} samples)")
        if frame > self.fft_size:
            raise DataError(f"frame of {frame} samples exceeds fft_size {self.fft_size}")
        if not 1 <= self.n_coefficients <= self.n_mel_filters:
            raise DataError("need 1 <= n_coefficients <= n_mel_filters")
        if not 0.0 <= self.fmin_hz < self.upper_hz(sample_rate) <= sample_rate / 2.0:
            raise DataError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.log_floor <= 0:
            raise DataError("log_floor must be positive")


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray  # (n_frames, n_coefficients)
    config: MfccConfig = field(default_factory=MfccConfig)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def read_wav(path: Path | str) -> Signal:
    """Read a mono 16-bit PCM WAV file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise DataError(f"{path}: unsupported encoding {w.getcomptype()}")
            if w.getnchannels() != 1:
                raise DataError(f"{path}: unsupported-channels ({w.getnchannels()}), mono only")
            if w.getsampwidth() != 2:
                raise DataError(f"{path}: unsupported sample width {w.getsampwidth()} bytes")
            n = w.getnframes()
            rate = w.getframerate()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a PCM WAV file ({exc})") from exc
    if len(raw) != 2 * n:
        raise DataError(f"{path}: truncated, header declares {n} samples, found {len(raw) // 2}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Signal(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path: Path | str, signal: Signal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())


def pre_emphasis(x: np.ndarray, alpha: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = x.copy()
    y[1:] = x[1:] - alpha * x[:-1]
    return y


def hamming_window(n: int) -> np.ndarray:
    if n < 2:
        raise DataError(f"window length must be >= 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters evaluated at the FFT bin frequencies.

    Returns an ``(n_mel_filters, fft_size // 2 + 1)`` matrix.  Raises when a
    filter is too narrow to cover any FFT bin.
    """
    cfg.validate(sample_rate)
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / cfg.fft_size
    edges_mel = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.upper_hz(sample_rate)),
                            cfg.n_mel_filters + 2)
    edges = mel_to_hz(edges_mel)

    fb = np.zeros((cfg.n_mel_filters, n_bins))
    for m in range(cfg.n_mel_filters):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not fb[m].any():
            raise DataError(f"mel filter {m} ({lo:.1f}-{hi:.1f} Hz) covers no FFT bin; "
                            "use fewer filters or a larger fft_size")
    return fb


def frame_count(n_samples: int, frame: int, hop: int) -> int:
    return (n_samples - frame) // hop + 1


def frame_signal(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    n = frame_count(len(x), frame, hop)
    if n < 1:
        raise DataError(f"signal of {len(x)} samples is shorter than one frame ({frame})")
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def dct_ii(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II along the last axis."""
    return scipy.fft.dct(x, type=2, norm="ortho", axis=-1)


def mfcc(x: Signal, cfg: MfccConfig | None = None) -> FeatureSequence:
    cfg = cfg or MfccConfig()
    sr = x.sample_rate
    cfg.validate(sr)
    frame, hop = cfg.frame_samples(sr), cfg.hop_samples(sr)

    emphasized = pre_emphasis(x.samples, cfg.pre_emphasis_alpha)
    frames = frame_signal(emphasized, frame, hop) * hamming_window(frame)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg, sr).T
    log_e = np.log(np.maximum(energies, cfg.log_floor))
    coeffs = dct_ii(log_e)[:, : cfg.n_coefficients]
    return FeatureSequence(coeffs, cfg)


def config_dict(cfg: MfccConfig) -> dict:
    return asdict(cfg)


def write_feature_table(path: Path | str, frames: np.ndarray) -> None:
    """One row per frame, comma-separated coefficients (lossless repr)."""
    with open(path, "w") as fh:
        for row in np.atleast_2d(frames):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_feature_table(path: Path | str) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: malformed feature table ({exc})") from exc
    return data
