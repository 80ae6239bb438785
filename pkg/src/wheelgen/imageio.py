"""Grayscale image persistence (PGM required, PNG optional) and binarization.

Images are float arrays in [0, 1] of shape ``(rows, cols)``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def binarize(image: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Pixels at or above ``threshold`` become 1.0, the rest 0.0."""
    return (np.asarray(image, dtype=float) >= threshold).astype(float)


def _quantize(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("expected a 2D grayscale image")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(image: np.ndarray, ascii: bool = False) -> bytes:
    q = _quantize(image)
    h, w = q.shape
    if ascii:
        rows = "\n".join(" ".join(str(int(v)) for v in row) for row in q)
        return f"P2\n{w} {h}\n255\n{rows}\n".encode("ascii")
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens: list[bytes] = []
    i, n = 0, len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i >= n:
            raise ImageFormatError("truncated PGM header")
        if data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def decode_pgm(data: bytes) -> np.ndarray:
    tokens, end = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"unsupported magic number {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError("malformed PGM header") from exc
    if w <= 0 or h <= 0:
        raise ImageFormatError("PGM dimensions must be positive")
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"unsupported bit depth (maxval {maxval})")
    if magic == b"P5":
        start = end + 1  # exactly one whitespace byte follows maxval
        raw = data[start:start + w * h]
        if len(raw) != w * h:
            raise ImageFormatError("truncated PGM raster")
        pixels = np.frombuffer(raw, dtype=np.uint8).astype(float)
    else:
        body = data[end:].split()
        if len(body) < w * h:
            raise ImageFormatError("truncated PGM raster")
        try:
            pixels = np.array([int(t) for t in body[:w * h]], dtype=float)
        except ValueError as exc:
            raise ImageFormatError("non-numeric PGM raster value") from exc
        if pixels.max(initial=0) > maxval:
            raise ImageFormatError("PGM value exceeds maxval")
    return pixels.reshape(h, w) / maxval


def write_image(path: str | Path, image: np.ndarray, ascii: bool = False) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(_quantize(image), mode="L").save(path)
        return
    path.write_bytes(encode_pgm(image, ascii=ascii))


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "1", "P", "RGB", "RGBA", "LA"):
                raise ImageFormatError(f"unsupported PNG mode {im.mode}")
            arr = np.asarray(im.convert("L"), dtype=float)
        return arr / 255.0
    return decode_pgm(path.read_bytes())


def resample(image: np.ndarray, side: int) -> np.ndarray:
    """Nearest-neighbour resampling to ``side`` x ``side``."""
    img = np.asarray(image, dtype=float)
    if img.shape == (side, side):
        return img
    rows = np.minimum((np.arange(side) + 0.5) * img.shape[0] / side, img.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(side) + 0.5) * img.shape[1] / side, img.shape[1] - 1).astype(int)
    return img[np.ix_(rows, cols)]
