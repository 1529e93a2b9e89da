"""HOG descriptors for pre-cropped grayscale ear images."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MIN_SIDE = 3


@dataclass(frozen=True)
class HogConfig:
    cell_px: int = 8
    block_cells: int = 2
    block_stride_px: int = 8
    n_bins: int = 9
    signed: bool = False
    epsilon: float = 1e-5
    resize_to: tuple[int, int] | None = (64, 128)  # (width, height)

    def validate(self) -> None:
        if self.cell_px < 2:
            raise DataError("cell_px must be >= 2")
        if self.n_bins < 2:
            raise DataError("n_bins must be >= 2")
        if self.block_cells < 1 or self.block_stride_px < 1:
            raise DataError("block_cells and block_stride_px must be positive")
        if self.epsilon <= 0:
            raise DataError("epsilon must be positive")


def _check_image(pixels: np.ndarray) -> np.ndarray:
    a = np.asarray(pixels, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"expected a 2-D grayscale image, got shape {a.shape}")
    if min(a.shape) < MIN_SIDE:
        raise DataError(f"too-small: image {a.shape[1]}x{a.shape[0]} is below {MIN_SIDE}px")
    if not np.all(np.isfinite(a)):
        raise DataError("image has non-finite pixels")
    return a


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def read_pgm(path: Path | str) -> np.ndarray:
    """Parse a binary (P5) PGM with maxval 255 into a uint8 (height, width) array."""
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise DataError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise DataError(f"{path}: wrong magic {fields[0]!r}, expected P5")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: unsupported-maxval {maxval}, only 255 is supported")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + width * height]
    if len(payload) != width * height:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {width * height} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def write_pgm(path: Path | str, pixels: np.ndarray) -> None:
    """Write a [0, 1] float image (or uint8 array) as P5 PGM."""
    a = np.asarray(pixels)
    if a.dtype != np.uint8:
        a = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    h, w = a.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + a.tobytes())


def resize_nearest(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    h, w = pixels.shape
    if (w, h) == (width, height):
        return pixels
    rows = np.minimum((np.arange(height) + 0.5) * h / height, h - 1).astype(int)
    cols = np.minimum((np.arange(width) + 0.5) * w / width, w - 1).astype(int)
    return pixels[rows][:, cols]


def load_image_gray(path: Path | str, resize_to: tuple[int, int] | None = None) -> np.ndarray:
    """Load a P5 PGM as floats in [0, 1], optionally resized to (width, height)."""
    img = _check_image(read_pgm(path) / 255.0)
    if resize_to is not None:
        img = _check_image(resize_nearest(img, *resize_to))
    return img


def gradient_maps(img: np.ndarray, signed: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient magnitude and orientation (degrees).

    Borders are replicated.  Orientation is in [0, 180) when unsigned,
    [0, 360) when signed.
    """
    img = _check_image(img)
    p = np.pad(img, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    period = 360.0 if signed else 180.0
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), period)
    ang[ang >= period] = 0.0  # mod can round up to the period itself
    return mag, ang


def cell_histograms(mag: np.ndarray, ang: np.ndarray, cfg: HogConfig) -> np.ndarray:
    """(cells_y, cells_x, n_bins) magnitude-weighted orientation histograms.

    Each pixel's vote is split linearly between the two nearest bin centres,
    circularly.  Pixels beyond the last whole cell are ignored.
    """
    c = cfg.cell_px
    cy, cx = mag.shape[0] // c, mag.shape[1] // c
    mag = mag[:cy * c, :cx * c]
    ang = ang[:cy * c, :cx * c]
    period = 360.0 if cfg.signed else 180.0
    width = period / cfg.n_bins

    pos = ang / width - 0.5  # bin centres sit at (b + 0.5) * width
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(int) % cfg.n_bins
    hi = (lo + 1) % cfg.n_bins

    cell_y = np.arange(cy * c)[:, None] // c
    cell_x = np.arange(cx * c)[None, :] // c
    flat_cell = np.broadcast_to(cell_y * cx + cell_x, mag.shape)
    hist = np.zeros(cy * cx * cfg.n_bins)
    np.add.at(hist, (flat_cell * cfg.n_bins + lo).ravel(), (mag * (1 - frac)).ravel())
    np.add.at(hist, (flat_cell * cfg.n_bins + hi).ravel(), (mag * frac).ravel())
    return hist.reshape(cy, cx, cfg.n_bins)


def block_grid(width: int, height: int, cfg: HogConfig) -> tuple[int, int]:
    """Number of blocks (across, down); zero when the image is smaller than a block."""
    block_px = cfg.block_cells * cfg.cell_px
    if width < block_px or height < block_px:
        return 0, 0
    return ((width - block_px) // cfg.block_stride_px + 1,
            (height - block_px) // cfg.block_stride_px + 1)


def descriptor_length(width: int, height: int, cfg: HogConfig) -> int:
    bx, by = block_grid(width, height, cfg)
    return bx * by * cfg.block_cells ** 2 * cfg.n_bins


def hog_descriptor(img: np.ndarray, cfg: HogConfig | None = None) -> np.ndarray:
    cfg = cfg or HogConfig()
    cfg.validate()
    img = _check_image(img)
    if cfg.block_stride_px % cfg.cell_px:
        raise DataError("block_stride_px must be a multiple of cell_px")
    h, w = img.shape
    bx, by = block_grid(w, h, cfg)
    if bx == 0:
        raise DataError(f"image {w}x{h} is smaller than one "
                        f"{cfg.block_cells * cfg.cell_px}px block")
    mag, ang = gradient_maps(img, cfg.signed)
    hist = cell_histograms(mag, ang, cfg)
    step = cfg.block_stride_px // cfg.cell_px
    b = cfg.block_cells
    blocks = []
    for j in range(by):
        for i in range(bx):
            v = hist[j * step:j * step + b, i * step:i * step + b].ravel()
            blocks.append(v / np.sqrt(v @ v + cfg.epsilon ** 2))
    return np.concatenate(blocks)
