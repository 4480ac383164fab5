"""PSNR and single-scale SSIM, plus minimal image readers.

Images are read from plain-text PGM/PPM (``P2``/``P3``) or from a raw-f64
container of two ``SGWE`` blocks: a 1 x 4 block ``[width, height, channels,
range]`` followed by a ``height x (width * channels)`` pixel block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .core import MAGIC, read_raw_block, write_raw_block
from .errors import InvalidInput, MalformedFile, RangeMismatch, ShapeMismatch, TooSmall

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class ImageBuffer:
    """``pixels`` has shape (height, width, channels); values lie in ``[0, dynamic_range]``."""

    pixels: np.ndarray
    dynamic_range: float = 255.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise InvalidInput(f"pixels must be HxW or HxWx{{1,3}}, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInput("image dimensions must be >= 1")
        r = float(self.dynamic_range)
        if not (r > 0 and math.isfinite(r)):
            raise InvalidInput(f"dynamic range must be positive, got {r}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > r:
            raise InvalidInput(f"pixel values must lie in [0, {r:g}]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "dynamic_range", r)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def _check_pair(a: ImageBuffer, b: ImageBuffer):
    if a.pixels.shape != b.pixels.shape:
        raise ShapeMismatch(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    if a.dynamic_range != b.dynamic_range:
        raise RangeMismatch(f"dynamic ranges differ: {a.dynamic_range:g} vs {b.dynamic_range:g}")


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """``10 log10(R^2 / MSE)``; ``math.inf`` for identical images."""
    _check_pair(a, b)
    diff = a.pixels - b.pixels
    mse = float(np.mean(diff * diff))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(a.dynamic_range**2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img, w):
    half = len(w) // 2
    out = correlate1d(img, w, axis=0, mode="constant")
    out = correlate1d(out, w, axis=1, mode="constant")
    return out[half : img.shape[0] - half, half : img.shape[1] - half]


def ssim_map(x: np.ndarray, y: np.ndarray, dynamic_range: float) -> np.ndarray:
    """Local SSIM over every fully-contained 11x11 window of a single channel."""
    w = gaussian_window()
    c1 = (K1 * dynamic_range) ** 2
    c2 = (K2 * dynamic_range) ** 2
    mx = _filter_valid(x, w)
    my = _filter_valid(y, w)
    sxx = _filter_valid(x * x, w) - mx * mx
    syy = _filter_valid(y * y, w) - my * my
    sxy = _filter_valid(x * y, w) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean local SSIM (Gaussian window, valid region only), averaged over channels."""
    _check_pair(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs both sides >= {SSIM_WINDOW}, got {a.height}x{a.width}")
    vals = [float(np.mean(ssim_map(a.pixels[:, :, c], b.pixels[:, :, c], a.dynamic_range))) for c in range(a.channels)]
    return float(np.mean(vals))


# ---------------------------------------------------------------- readers


def _pnm_tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        yield from line.split()


def read_pnm(path) -> ImageBuffer:
    """Read a plain-text ``P2`` (gray) or ``P3`` (RGB) file; the maxval becomes the range."""
    path = Path(path)
    try:
        tokens = list(_pnm_tokens(path.read_text(encoding="ascii")))
    except UnicodeDecodeError:
        raise MalformedFile("only plain-text P2/P3 files are supported", path) from None
    if not tokens or tokens[0] not in ("P2", "P3"):
        raise MalformedFile("missing P2/P3 magic", path, 1)
    channels = 1 if tokens[0] == "P2" else 3
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
        values = np.array([float(t) for t in tokens[4:]])
    except ValueError as exc:
        raise MalformedFile(f"non-numeric token ({exc})", path) from None
    if width < 1 or height < 1 or maxval < 1:
        raise MalformedFile("width, height and maxval must be positive", path)
    if values.size != width * height * channels:
        raise MalformedFile(f"expected {width * height * channels} samples, found {values.size}", path)
    try:
        return ImageBuffer(values.reshape(height, width, channels), float(maxval))
    except InvalidInput as exc:
        raise MalformedFile(str(exc), path) from None


def write_pnm(img: ImageBuffer, path) -> None:
    """Plain-text writer (values rounded to integers); mostly for fixtures."""
    magic = "P2" if img.channels == 1 else "P3"
    lines = [magic, f"{img.width} {img.height}", f"{int(round(img.dynamic_range))}"]
    for row in img.pixels:
        lines.append(" ".join(str(int(round(v))) for v in row.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_raw_image(path) -> ImageBuffer:
    path = Path(path)
    with open(path, "rb") as fh:
        _, head = read_raw_block(fh, path)
        if head.shape != (1, 4):
            raise MalformedFile("image header block must be 1 x 4", path)
        width, height, channels = (int(v) for v in head[0, :3])
        _, px = read_raw_block(fh, path)
    if px.shape != (height, width * channels):
        raise MalformedFile(f"pixel block {px.shape} does not match {height}x{width}x{channels}", path)
    try:
        return ImageBuffer(px.reshape(height, width, channels), float(head[0, 3]))
    except InvalidInput as exc:
        raise MalformedFile(str(exc), path) from None


def write_raw_image(img: ImageBuffer, path) -> None:
    with open(path, "wb") as fh:
        write_raw_block(fh, [[img.width, img.height, img.channels, img.dynamic_range]])
        write_raw_block(fh, img.pixels.reshape(img.height, img.width * img.channels))


def read_image(path) -> ImageBuffer:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_raw_image(path) if head == MAGIC else read_pnm(path)
