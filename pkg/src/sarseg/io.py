"""File formats: binary/ASCII PGM, headered raw float32 grids, key=value configs, run manifests."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grid import IntensityGrid, LabelField

RAW_MAGIC = "F32"


class FormatError(ValueError):
    """Input file is unreadable or malformed."""


# -- PGM ---------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Pixel array of a P5 (binary, 8/16-bit big-endian) or P2 (ASCII) PGM."""
    data = Path(path).read_bytes()
    if len(data) < 2 or data[:2] not in (b"P5", b"P2"):
        raise FormatError(f"{path}: not a PGM file")
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad PGM dimensions or maxval")
    if data[:2] == b"P2":
        vals = np.array(data[pos:].split(), dtype=np.int64)
        if vals.size < w * h:
            raise FormatError(f"{path}: truncated pixel data")
        arr = vals[:w * h].reshape(h, w)
    else:
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(data) - pos < need:
            raise FormatError(f"{path}: truncated pixel data")
        arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64)
    if arr.max(initial=0) > maxval:
        raise FormatError(f"{path}: pixel values exceed maxval")
    return arr


def write_pgm(path, arr, maxval: int | None = None):
    """Binary PGM; 16-bit when values exceed 255."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if np.any(a < 0) or not np.all(np.equal(np.mod(a, 1), 0)):
        raise ValueError("PGM data must be nonnegative integers")
    a = a.astype(np.int64)
    top = int(a.max(initial=0))
    maxval = maxval or (255 if top <= 255 else 65535)
    if top > maxval or maxval > 65535:
        raise ValueError("values exceed PGM maxval")
    h, w = a.shape
    body = a.astype(">u2" if maxval > 255 else "u1").tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + body)


def gray_levels(c: int) -> np.ndarray:
    """Evenly spaced 8-bit gray levels for labels 1..c (label 1 black, label c white)."""
    if not 2 <= c <= 255:
        raise ValueError("label maps support 2..255 classes")
    return np.round(np.arange(c) * 255.0 / (c - 1)).astype(np.int64)


def labels_to_gray(x: LabelField) -> np.ndarray:
    return gray_levels(x.num_classes)[x.labels - 1]


def gray_to_labels(gray, c: int) -> LabelField:
    g = np.asarray(gray, dtype=np.int64)
    levels = gray_levels(c)
    lab0 = np.rint(g * (c - 1) / 255.0).astype(np.int64)
    if np.any(lab0 < 0) or np.any(lab0 >= c) or np.any(levels[np.clip(lab0, 0, c - 1)] != g):
        raise FormatError(f"gray values are not the {c}-class label levels")
    return LabelField(lab0 + 1, c)


def write_label_pgm(path, x: LabelField):
    write_pgm(path, labels_to_gray(x), 255)


def read_label_pgm(path, c: int) -> LabelField:
    return gray_to_labels(read_pgm(path), c)


# -- raw float32 -------------------------------------------------------------

def write_raw_float(path, values):
    """Text header ``F32 <width> <height>\\n`` followed by little-endian float32 rows."""
    v = np.asarray(values, dtype="<f4")
    if v.ndim != 2:
        raise ValueError("raw grids must be 2-D")
    h, w = v.shape
    Path(path).write_bytes(f"{RAW_MAGIC} {w} {h}\n".encode() + v.tobytes())


def read_raw_float(path) -> np.ndarray:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    head = data[:nl].decode("ascii", "replace").split() if nl > 0 else []
    if len(head) != 3 or head[0] != RAW_MAGIC:
        raise FormatError(f"{path}: missing '{RAW_MAGIC} <width> <height>' header")
    try:
        w, h = int(head[1]), int(head[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad raw header") from exc
    if w < 1 or h < 1 or len(data) - nl - 1 != 4 * w * h:
        raise FormatError(f"{path}: payload size does not match {w}x{h} float32")
    return np.frombuffer(data, dtype="<f4", offset=nl + 1).reshape(h, w).astype(np.float64)


def read_image(path) -> IntensityGrid:
    """Intensity grid from a PGM or a headered raw float32 file."""
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"{path}: no such file")
    head = p.read_bytes()[:3]
    if head[:2] in (b"P5", b"P2"):
        arr = read_pgm(p)
    elif head == RAW_MAGIC.encode():
        arr = read_raw_float(p)
    else:
        raise FormatError(f"{path}: unknown image format (expected PGM or {RAW_MAGIC} raw)")
    try:
        return IntensityGrid(arr.astype(np.float64))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def read_samples(path) -> np.ndarray:
    """1-D intensity samples from an image file or a whitespace/comma separated text file."""
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"{path}: no such file")
    head = p.read_bytes()[:3]
    if head[:2] in (b"P5", b"P2") or head == RAW_MAGIC.encode():
        return read_image(p).flat().copy()
    text = p.read_text()
    try:
        vals = np.array([float(t) for t in re.split(r"[\s,]+", text.strip()) if t], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric sample values") from exc
    if vals.size == 0:
        raise FormatError(f"{path}: no samples")
    return vals


# -- config and manifests ----------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise FormatError(f"{path}:{n}: empty key")
        out[k.replace("-", "_")] = v
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)   # path -> sha256
    outputs: dict = field(default_factory=dict)  # path -> sha256
    seed: int | None = None
    version: str = ""
    argv: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text())
            return cls(**d)
        except (OSError, ValueError, TypeError) as exc:
            raise FormatError(f"{path}: not a run manifest ({exc})") from exc
