"""Synthetic limited-data image distributions and simple image ingestion.

Training images live in [-1, 1] (tanh generator range); images loaded for
standalone descriptor analysis live in [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "Dataset",
    "FAMILIES",
    "load_image",
    "make_synthetic",
    "read_field_dump",
    "read_pgm",
    "write_field_dump",
    "write_pgm",
    "write_png_gray",
]

FAMILIES = ("gauss-blobs", "rings", "bars")


@dataclass
class Dataset:
    """Images in [-1, 1] with a disjoint train/val index split."""

    images: np.ndarray  # (n, h, w, c)
    train_idx: np.ndarray
    val_idx: np.ndarray
    family: str
    seed: int

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


# ---------------------------------------------------------------------------
# Synthetic families
# ---------------------------------------------------------------------------

def _render_gauss_blobs(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    intensity = np.zeros((size, size))
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(size * 0.2, size * 0.8, 2)
        width = rng.uniform(size / 10.0, size / 5.0)
        amp = rng.uniform(0.7, 1.0)
        intensity += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width ** 2))
    return np.clip(intensity, 0.0, 1.0)


def _render_rings(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(size * 0.35, size * 0.65, 2)
    radius = rng.uniform(size / 6.0, size / 3.0)
    thickness = rng.uniform(size / 16.0, size / 8.0)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    intensity = rng.uniform(0.8, 1.0) * np.exp(-((dist - radius) ** 2) / (2.0 * thickness ** 2))
    return np.clip(intensity, 0.0, 1.0)


def _render_bars(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    intensity = np.zeros((size, size))
    for _ in range(rng.integers(1, 3)):
        angle = rng.uniform(0.0, math.pi)
        offset = rng.uniform(-size / 4.0, size / 4.0)
        width = rng.uniform(size / 16.0, size / 6.0)
        dist = (xx - size / 2.0) * math.cos(angle) + (yy - size / 2.0) * math.sin(angle) - offset
        intensity += rng.uniform(0.75, 1.0) * np.exp(-(dist ** 2) / (2.0 * width ** 2))
    return np.clip(intensity, 0.0, 1.0)


_RENDERERS = {
    "gauss-blobs": _render_gauss_blobs,
    "rings": _render_rings,
    "bars": _render_bars,
}


def make_synthetic(family: str, n: int, size: int, seed: int = 0) -> Dataset:
    """Procedurally rendered grayscale dataset with a 90/10 train/val split.

    Deterministic under ``seed``; pixel values are mapped to [-1, 1].
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}, expected one of {FAMILIES}")
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if size not in (16, 32):
        raise ValueError(f"size must be 16 or 32, got {size}")
    rng = np.random.default_rng(seed)
    render = _RENDERERS[family]
    images = np.stack([render(size, rng) for _ in range(n)])
    images = (2.0 * images - 1.0)[:, :, :, None]
    perm = rng.permutation(n)
    n_val = max(1, round(n / 10))
    return Dataset(images, np.sort(perm[n_val:]), np.sort(perm[:n_val]), family, seed)


# ---------------------------------------------------------------------------
# Image ingestion
# ---------------------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """P2 (ASCII) or P5 (binary) PGM as a uint8 (h, w) array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, with '#' comments allowed
    while len(tokens) < 4:
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            pos = data.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: unsupported PGM maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        if len(data) - pos < width * height:
            raise ValueError(f"{path}: truncated PGM raster")
        raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    else:
        # plain format allows '#' comments inside the raster as well
        text = b"\n".join(line.split(b"#", 1)[0] for line in data[pos:].split(b"\n"))
        values = text.split()
        if len(values) < width * height:
            raise ValueError(f"{path}: truncated PGM raster")
        raster = np.array([int(v) for v in values[: width * height]], dtype=np.uint8)
    return raster.reshape(height, width)


def write_pgm(path, image: np.ndarray, ascii_format: bool = False):
    """Write a uint8 (h, w) array as P5 (or P2 with ``ascii_format``)."""
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError(f"write_pgm expects a uint8 (h, w) array, got {arr.dtype} {arr.shape}")
    h, w = arr.shape
    if ascii_format:
        body = "\n".join(" ".join(str(v) for v in row) for row in arr)
        Path(path).write_text(f"P2\n{w} {h}\n255\n{body}\n")
    else:
        Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_png_gray(path, image: np.ndarray):
    """Write a uint8 (h, w) array as 8-bit grayscale PNG."""
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError(f"write_png_gray expects a uint8 (h, w) array, got {arr.dtype} {arr.shape}")
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def _read_png_gray(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        return np.asarray(img, dtype=np.uint8)


def _read_csv_array(path) -> np.ndarray:
    with open(path, newline="") as handle:
        rows = [[float(cell) for cell in row] for row in csv.reader(handle) if row]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{path}: ragged or empty CSV")
    return np.array(rows, dtype=np.float64)


def write_csv_array(path, array: np.ndarray):
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"write_csv_array expects a 2-d array, got shape {arr.shape}")
    with open(path, "w", newline="") as handle:
        for row in arr:
            handle.write(",".join(repr(float(v)) for v in row) + "\n")


def load_image(path, image_format: str | None = None) -> np.ndarray:
    """Decode an image to an (h, w, 1) float array.

    8-bit formats map to [0, 1] by /255; CSV values are taken literally.
    The format is inferred from the extension unless given explicitly.
    """
    fmt = image_format or Path(path).suffix.lstrip(".").lower()
    if fmt == "pgm":
        gray = read_pgm(path).astype(np.float64) / 255.0
    elif fmt == "png":
        gray = _read_png_gray(path).astype(np.float64) / 255.0
    elif fmt == "csv":
        gray = _read_csv_array(path)
    else:
        raise ValueError(f"unsupported image format {fmt!r} (expected pgm, png or csv)")
    return gray[:, :, None]


# ---------------------------------------------------------------------------
# Gradient-field dumps
# ---------------------------------------------------------------------------

def write_field_dump(path, field2d: np.ndarray):
    """Raw dump: one ASCII shape line, then little-endian float64 values."""
    arr = np.asarray(field2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"field dump expects a 2-d array, got shape {arr.shape}")
    with open(path, "wb") as handle:
        handle.write(f"{arr.shape[0]} {arr.shape[1]}\n".encode("ascii"))
        handle.write(arr.astype("<f8").tobytes())


def read_field_dump(path) -> np.ndarray:
    data = Path(path).read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing shape header")
    try:
        h, w = (int(v) for v in data[:newline].split())
    except ValueError:
        raise ValueError(f"{path}: malformed shape header {data[:newline]!r}") from None
    raster = data[newline + 1:]
    if len(raster) < 8 * h * w:
        raise ValueError(f"{path}: truncated dump, expected {h}x{w} float64 values")
    return np.frombuffer(raster, dtype="<f8", count=h * w).astype(np.float64).reshape(h, w)
