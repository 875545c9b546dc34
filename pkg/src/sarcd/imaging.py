"""Image containers, PGM/PNG I/O, masking and log-domain transforms.

Images are plain 2-D numpy arrays (rows = M, cols = N). Amplitude rasters are
float64 and non-negative; label rasters are integer arrays of the same shape.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

UNCHANGED = 0
CHANGED = 1


class ImageFormatError(ValueError):
    """Raised for malformed or truncated PGM files."""


class DimensionMismatch(ValueError):
    """Raised when paired rasters do not share a shape."""


def check_image(image) -> np.ndarray:
    """Validate and return `image` as a finite, non-negative float64 array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if np.any(arr < 0):
        raise ValueError("image contains negative amplitudes")
    return arr


def check_same_shape(*arrays) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise DimensionMismatch(f"shape mismatch: {sorted(shapes)}")


# --------------------------------------------------------------------------- PGM

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(buf: bytes):
    fields = []
    pos = 0
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise ImageFormatError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"not a PGM file (magic {magic!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise ImageFormatError(f"bad PGM header field: {exc}") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"bad PGM dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"bad PGM maxval {maxval}")
    return magic, width, height, maxval, pos


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a P2 or P5 PGM. Returns (integer array, maxval)."""
    buf = Path(path).read_bytes()
    magic, width, height, maxval, pos = _read_header(buf)
    n = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates header and raster
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = n * dtype.itemsize
        payload = buf[pos:pos + need]
        if len(payload) < need:
            raise ImageFormatError(
                f"truncated PGM payload: expected {need} bytes, got {len(payload)}")
        data = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    else:
        tokens = re.sub(rb"#[^\n]*", b"", buf[pos:]).split()
        if len(tokens) < n:
            raise ImageFormatError(
                f"truncated PGM payload: expected {n} values, got {len(tokens)}")
        try:
            data = np.array([int(t) for t in tokens[:n]], dtype=np.int64)
        except ValueError as exc:
            raise ImageFormatError(f"bad ASCII PGM value: {exc}") from None
    if data.size and data.max() > maxval:
        raise ImageFormatError("PGM value exceeds declared maxval")
    return data.reshape(height, width), maxval


def write_pgm(path, data, maxval: int | None = None, binary: bool = True) -> None:
    """Write integer data as PGM. 16-bit depth is used when maxval > 255."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if np.issubdtype(arr.dtype, np.floating):
        if not np.all(arr == np.round(arr)):
            raise ValueError("PGM data must be integral; round before saving")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("PGM data must be non-negative")
    top = int(arr.max()) if arr.size else 0
    if maxval is None:
        maxval = 255 if top <= 255 else 65535
    if top > maxval or maxval > 65535:
        raise ValueError(f"data max {top} does not fit maxval {maxval}")
    height, width = arr.shape
    path = Path(path)
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
        path.write_bytes(header + arr.astype(dtype).tobytes())
    else:
        lines = [f"P2\n{width} {height}\n{maxval}"]
        lines += [" ".join(str(v) for v in row) for row in arr]
        path.write_text("\n".join(lines) + "\n")


def load_image(path, format: str | None = None) -> np.ndarray:
    """Load a PGM as an amplitude image; raw integer values are cast to float.

    `format` may be "pgm8" or "pgm16" to assert the expected bit depth.
    """
    data, maxval = read_pgm(path)
    if format is not None:
        depth = "pgm16" if maxval > 255 else "pgm8"
        if format not in ("pgm8", "pgm16"):
            raise ValueError(f"unknown format {format!r}")
        if format != depth:
            raise ImageFormatError(f"{path}: expected {format}, file is {depth}")
    return data.astype(np.float64)


def save_image(path, image, format: str = "pgm16", binary: bool = True) -> None:
    """Save an amplitude image. Values must already be integral."""
    maxval = {"pgm8": 255, "pgm16": 65535}[format]
    write_pgm(path, check_image(image), maxval=maxval, binary=binary)


def load_label_map(path) -> np.ndarray:
    """Integer label raster; a 0/255 display map is read back as 0/1."""
    data, _ = read_pgm(path)
    labels = data.astype(np.int64)
    if np.isin(labels, (0, 255)).all():
        labels //= 255
    return labels


def save_change_map_png(path, change_map) -> None:
    """Display export: 0 = unchanged, 255 = changed."""
    from PIL import Image

    arr = (np.asarray(change_map) != 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def save_boundary_png(path, image, labels) -> None:
    """Debug overlay: superpixel boundaries drawn in red over the image."""
    from PIL import Image

    img = np.asarray(image, dtype=np.float64)
    top = img.max()
    gray = (255 * img / top).astype(np.uint8) if top > 0 else np.zeros(img.shape, np.uint8)
    rgb = np.stack([gray] * 3, axis=-1)
    lab = np.asarray(labels)
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    edge[1:, :] |= lab[1:, :] != lab[:-1, :]
    rgb[edge] = (255, 0, 0)
    Image.fromarray(rgb, mode="RGB").save(path)


# ------------------------------------------------------------------ transforms

def mask_unchanged(image, phase1_map) -> np.ndarray:
    """Zero every pixel whose phase-1 label is UNCHANGED."""
    img = check_image(image)
    labels = np.asarray(phase1_map)
    check_same_shape(img, labels)
    return np.where(labels == UNCHANGED, 0.0, img)


def log_transform(image, epsilon: float = 1.0) -> np.ndarray:
    """ln(x + epsilon); turns multiplicative speckle into additive noise."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return np.log(np.asarray(image, dtype=np.float64) + epsilon)
