"""Static PPM (P6) renders of similarity matrices and start-probability traces."""
from __future__ import annotations

import numpy as np

from ._io import atomic_write_bytes

# dark blue -> teal -> yellow; luminance rises along the ramp
_ANCHORS = np.array([
    [20, 24, 100],
    [33, 145, 140],
    [253, 231, 37],
], dtype=np.float64)

BACKGROUND = (255, 255, 255)
TRACE = (20, 24, 100)
MARKER = (220, 30, 30)


def colormap(values) -> np.ndarray:
    """Map values in [0, 1] to RGB uint8 (0 -> dark blue, 1 -> yellow)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pos = v * (len(_ANCHORS) - 1)
    lo = np.minimum(pos.astype(int), len(_ANCHORS) - 2)
    frac = (pos - lo)[..., None]
    rgb = _ANCHORS[lo] * (1 - frac) + _ANCHORS[lo + 1] * frac
    return np.rint(rgb).astype(np.uint8)


def _auto_scale(n, target=256):
    return max(1, min(16, target // max(n, 1)))


def heatmap(matrix, scale=None) -> np.ndarray:
    """(H, W, 3) image with one ``scale`` x ``scale`` block per matrix cell."""
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("heatmap needs a 2-D matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite values")
    scale = scale or _auto_scale(max(M.shape))
    img = colormap(M)
    return np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)


def marker_column(frame, scale):
    return frame * scale + scale // 2


def probability_trace(probs, peaks=(), height=128, scale=None) -> np.ndarray:
    """Line plot of ``probs`` with a full-height marker at every peak index in ``peaks``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("probabilities must be a non-empty 1-D array")
    if not np.all(np.isfinite(p)):
        raise ValueError("probabilities contain non-finite values")
    scale = scale or _auto_scale(p.size, 768)
    width = p.size * scale
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for k in peaks:
        if not 0 <= k < p.size:
            raise ValueError(f"peak index {k} outside the series")
        img[:, marker_column(k, scale)] = MARKER
    centers = np.arange(p.size) * scale + scale // 2
    cols = np.arange(width)
    yv = (1.0 - np.clip(np.interp(cols, centers, p), 0, 1)) * (height - 1)
    y = np.rint(yv).astype(int)
    prev = y[0]
    for c in range(width):
        lo, hi = sorted((prev, y[c]))
        img[lo:hi + 1, c] = TRACE
        prev = y[c]
    return img


def encode_ppm(img) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 image")
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    parts = buf.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError("not a binary PPM written by this module")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def write_ppm(path, img):
    atomic_write_bytes(path, encode_ppm(img))
