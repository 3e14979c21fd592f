"""Image decoding, resizing, normalisation and rotation.

Arrays are ``[H, W, 3]``. Decoded images are uint8; preprocessed images are
float32 in [-1, 1]. Binary PPM/PGM is read and written without third-party
code; PNG and JPEG go through Pillow.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..errors import ImageError

FILL_VALUE = -1.0  # normalised black
DEFAULT_MAX_DEGREES = 15.0


def _read_netpbm(data: bytes, path) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageError(f"truncated PNM header in {path}")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageError(f"bad PNM header in {path}") from exc
    if maxval < 1 or maxval > 255:
        raise ImageError(f"unsupported PNM maxval {maxval} in {path}")
    channels = {b"P6": 3, b"P5": 1}.get(magic)
    if channels is None:
        raise ImageError(f"unsupported PNM type {magic!r} in {path}")
    need = width * height * channels
    raster = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos) if len(data) - pos >= need else None
    if raster is None:
        raise ImageError(f"truncated PNM raster in {path}")
    img = raster.reshape(height, width, channels)
    if maxval != 255:
        img = np.round(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img


def decode_image(path) -> np.ndarray:
    """Decode PPM/PGM, PNG or JPEG into uint8 ``[H, W, 3]`` (grayscale replicated)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if data[:2] in (b"P6", b"P5"):
        img = _read_netpbm(data, path)
    else:
        try:
            from PIL import Image, UnidentifiedImageError
        except ImportError as exc:  # pragma: no cover
            raise ImageError(f"Pillow is required to decode {path}") from exc
        try:
            with Image.open(path) as im:
                img = np.asarray(im.convert("RGB"))
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise ImageError(f"cannot decode image {path}: {exc}") from exc
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img[:, :, :3])


def write_ppm(path, image: np.ndarray):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def _resize_axis(img: np.ndarray, size: int, axis: int) -> np.ndarray:
    n = img.shape[axis]
    if n == size:
        return img
    # half-pixel centres
    src = (np.arange(size) + 0.5) * (n / size) - 0.5
    src = np.clip(src, 0, n - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    shape = [1] * img.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    a = np.take(img, lo, axis=axis)
    b = np.take(img, hi, axis=axis)
    return a * (1 - frac) + b * frac


def resize_bilinear(img: np.ndarray, size) -> np.ndarray:
    out_h, out_w = size
    img = np.asarray(img, dtype=np.float64)
    return _resize_axis(_resize_axis(img, out_h, 0), out_w, 1)


def normalize(img) -> np.ndarray:
    """Map [0, 255] to [-1, 1] via (v/255 - 0.5)/0.5."""
    return (np.asarray(img, dtype=np.float64) / 255.0 - 0.5) / 0.5


def preprocess_image(raw: np.ndarray, size) -> np.ndarray:
    raw = np.asarray(raw)
    if raw.ndim == 2:
        raw = raw[:, :, None]
    if raw.shape[2] == 1:
        raw = np.repeat(raw, 3, axis=2)
    out = normalize(resize_bilinear(raw, size))
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def _snap(x):
    r = np.round(x)
    return np.where(np.abs(x - r) < 1e-6, r, x)


def rotate(image: np.ndarray, angle_deg: float, fill: float = FILL_VALUE) -> np.ndarray:
    """Rotate about the image centre with bilinear sampling.

    Pixels sampled from outside the image take ``fill``. Source coordinates
    within 1e-6 of the pixel grid are snapped onto it, so quarter turns are
    exact index permutations.
    """
    if not math.isfinite(angle_deg):
        raise ValueError("rotation angle must be finite")
    image = np.asarray(image)
    if angle_deg % 360 == 0:
        return image.copy()
    h, w = image.shape[:2]
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy, np.arange(w, dtype=np.float64) - cx, indexing="ij")
    src_x = _snap(cx + cos * xx + sin * yy)
    src_y = _snap(cy - sin * xx + cos * yy)
    # one-pixel border of fill so partially outside samples blend toward it
    padded = np.pad(image.astype(np.float64), ((1, 1), (1, 1), (0, 0)), constant_values=fill)
    px, py = src_x + 1, src_y + 1
    inside = (px >= 0) & (px <= w + 1) & (py >= 0) & (py <= h + 1)
    px = np.clip(px, 0, w + 1)
    py = np.clip(py, 0, h + 1)
    x0 = np.minimum(np.floor(px).astype(np.int64), w)
    y0 = np.minimum(np.floor(py).astype(np.int64), h)
    fx = (px - x0)[:, :, None]
    fy = (py - y0)[:, :, None]
    top = padded[y0, x0] * (1 - fx) + padded[y0, x0 + 1] * fx
    bottom = padded[y0 + 1, x0] * (1 - fx) + padded[y0 + 1, x0 + 1] * fx
    out = top * (1 - fy) + bottom * fy
    out[~inside] = fill
    return out.astype(image.dtype if np.issubdtype(image.dtype, np.floating) else np.float64)


def augment_rotation(image: np.ndarray, rng, max_deg: float = DEFAULT_MAX_DEGREES) -> np.ndarray:
    angle = float(rng.uniform(-max_deg, max_deg))
    return rotate(image, angle)
