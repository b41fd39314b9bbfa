"""Image records, binary PPM I/O, synthetic training images, random crops."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import SYNTH, make_rng
from .tensor import ContractError

MIN_SIDE = 16


class FormatError(ValueError):
    """Malformed image or checkpoint file; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class DataError(ValueError):
    """Dataset missing, empty, or unusable."""


@dataclass
class ImageRecord:
    id: str
    pixels: np.ndarray  # (3, H, W) float64 in [0, 1]
    source: str = ""
    ppm_header: bytes = b""  # original header, reused on save so roundtrips are byte-exact

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[0] != 3:
            raise DataError(f"{self.id}: pixels must be (3, H, W), got {px.shape}")
        if not np.isfinite(px).all():
            raise DataError(f"{self.id}: non-finite pixel values")
        if min(px.shape[1:]) < MIN_SIDE:
            raise DataError(f"{self.id}: image {px.shape[1]}x{px.shape[2]} smaller than {MIN_SIDE}x{MIN_SIDE}")
        self.pixels = np.clip(px, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


# ---------------------------------------------------------------- PPM


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos : pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PPM header", pos)
    return buf[start:pos], pos


def _parse_ppm(buf: bytes, name: str) -> tuple[np.ndarray, int]:
    if buf[:2] != b"P6":
        raise FormatError(f"{name}: bad magic {buf[:2]!r}, expected b'P6'", 0)
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"{name}: non-numeric header field {tok!r}", pos - len(tok))
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{name}: maxval {maxval} unsupported, only 255", pos)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError(f"{name}: missing whitespace after header", pos)
    pos += 1
    need = width * height * 3
    body = buf[pos : pos + need]
    if len(body) < need:
        raise FormatError(f"{name}: short pixel data, {len(body)} of {need} bytes", pos + len(body))
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).transpose(2, 0, 1), pos


def decode_ppm(buf: bytes, name: str = "") -> np.ndarray:
    """Decode P6/maxval-255 bytes (any size) to a (3, H, W) uint8 array."""
    return _parse_ppm(buf, name)[0]


def encode_ppm(pixels: np.ndarray, header: bytes = b"") -> bytes:
    px = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    raw = np.round(px * 255.0).astype(np.uint8).transpose(1, 2, 0)
    h, w = raw.shape[:2]
    if not header:
        header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + raw.tobytes()


def load_ppm(path: str | os.PathLike) -> ImageRecord:
    path = Path(path)
    buf = path.read_bytes()
    raw, pos = _parse_ppm(buf, str(path))
    return ImageRecord(path.stem, raw.astype(np.float64) / 255.0, str(path), buf[:pos])


def save_ppm(record: ImageRecord, path: str | os.PathLike) -> None:
    header = record.ppm_header
    if header and _parse_ppm(header + bytes(3 * record.height * record.width), "")[0].shape != record.pixels.shape:
        header = b""
    Path(path).write_bytes(encode_ppm(record.pixels, header))


def load_dir(path: str | os.PathLike) -> list[ImageRecord]:
    """All ``*.ppm`` files of a directory in sorted file-name order."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"dataset directory {path} does not exist")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".ppm")
    if not files:
        raise DataError(f"dataset directory {path} contains no .ppm files")
    return [load_ppm(p) for p in files]


def save_dir(records: list[ImageRecord], path: str | os.PathLike) -> list[Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    out = []
    for rec in records:
        target = path / f"{rec.id}.ppm"
        save_ppm(rec, target)
        out.append(target)
    return out


# ---------------------------------------------------------------- synthetic data


def _synth_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = rng.uniform(0.2, 0.8, size=(3, 1, 1)) + rng.uniform(-0.3, 0.3, size=(3, 1, 1)) * xx
    img = img + rng.uniform(-0.3, 0.3, size=(3, 1, 1)) * yy
    for _ in range(rng.integers(1, 4)):
        freq = rng.uniform(0.5, 6.0)
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img = img + rng.uniform(0.02, 0.2, size=(3, 1, 1)) * wave
    for _ in range(rng.integers(1, 5)):
        x0, y0 = rng.integers(0, size - 4, size=2)
        w, h = rng.integers(4, size // 2 + 1, size=2)
        alpha = rng.uniform(0.5, 1.0)
        color = rng.uniform(0.0, 1.0, size=(3, 1, 1))
        region = img[:, y0 : y0 + h, x0 : x0 + w]
        img[:, y0 : y0 + h, x0 : x0 + w] = (1 - alpha) * region + alpha * color
    return np.clip(img, 0.0, 1.0)


def synth_dataset(n: int, size: int, seed: int) -> list[ImageRecord]:
    """Deterministic images of gradients, sinusoids and colored rectangles."""
    if n < 1:
        raise ContractError("synth_dataset: n must be >= 1")
    if size < MIN_SIDE or size % 16:
        raise ContractError(f"synth_dataset: size must be a multiple of 16, got {size}")
    rng = make_rng(seed, SYNTH)
    width = len(str(n - 1))
    return [
        ImageRecord(f"synth_{i:0{width}d}", _synth_image(rng, size), f"synth(seed={seed}, size={size})")
        for i in range(n)
    ]


def random_crop(record: ImageRecord | np.ndarray, patch: int, rng: np.random.Generator) -> np.ndarray:
    px = record.pixels if isinstance(record, ImageRecord) else record
    h, w = px.shape[1:]
    if patch > min(h, w) or patch < 1:
        raise ContractError(f"random_crop: patch {patch} does not fit a {h}x{w} image")
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    return px[:, top : top + patch, left : left + patch]
