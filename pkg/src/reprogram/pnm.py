"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def _tokens(raw: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PNM header")
        out.append(raw[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte precedes the raster


def read_pnm(path) -> np.ndarray:
    """Return a float32 array ``(C, H, W)`` scaled to [0, 1]; C is 1 for P5 and 3 for P6."""
    raw = Path(path).read_bytes()
    toks, start = _tokens(raw, 4)
    magic = toks[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in toks[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PNM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PNM (maxval 255) is supported")
    c = 1 if magic == b"P5" else 3
    data = raw[start:start + w * h * c]
    if len(data) != w * h * c:
        raise FormatError(f"{path}: truncated raster")
    img = np.frombuffer(data, dtype=np.uint8).reshape(h, w, c).transpose(2, 0, 1)
    return img.astype(np.float32) / 255.0


def write_pnm(path, img) -> None:
    """Write ``(C, H, W)`` values in [0, 1] (or ``(H, W)``) as P5/P6."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    if c not in (1, 3):
        raise ValueError(f"PNM needs 1 or 3 channels, got {c}")
    raster = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(raster.tobytes())


def minmax(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def hstack_images(images, gap: int = 2) -> np.ndarray:
    """Place ``(C, H, W)`` images side by side, top-aligned, on a zero canvas."""
    c = max(im.shape[0] for im in images)
    h = max(im.shape[1] for im in images)
    w = sum(im.shape[2] for im in images) + gap * (len(images) - 1)
    out = np.zeros((c, h, w))
    x = 0
    for im in images:
        out[:, :im.shape[1], x:x + im.shape[2]] = im if im.shape[0] == c else np.repeat(im, c, axis=0)
        x += im.shape[2] + gap
    return out
