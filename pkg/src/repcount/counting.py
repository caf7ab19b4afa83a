"""Start-probability targets, peak prominence and repetition counts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AnnotationTrack

DEFAULT_SIGMA = 1.0
DEFAULT_THRESHOLD = 0.2
TARGET_MODES = ("start", "periodicity")


@dataclass(frozen=True)
class Peak:
    index: int
    height: float
    prominence: float
    left_base: int
    right_base: int


def make_target(track: AnnotationTrack, mode: str = "start", sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Per-frame training target for ``track``.

    ``start`` places a truncated Gaussian (radius ceil(3 sigma)) on every
    repetition start, merging overlaps by pointwise max. ``periodicity`` is
    the indicator of lying inside any annotated interval.
    """
    T = track.total_frames
    out = np.zeros(T)
    if mode == "periodicity":
        for s, e in track.intervals:
            out[s:e + 1] = 1.0
        return out
    if mode != "start":
        raise ValueError(f"unknown target mode {mode!r}; choose from {TARGET_MODES}")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    radius = int(math.ceil(3 * sigma))
    for s in track.starts:
        lo, hi = max(0, s - radius), min(T, s + radius + 1)
        t = np.arange(lo, hi)
        if sigma > 0:
            bump = np.exp(-((t - s) ** 2) / (2 * sigma * sigma))
        else:
            bump = np.ones(1)
        np.maximum(out[lo:hi], bump, out=out[lo:hi])
    return np.clip(out, 0.0, 1.0)


def local_maxima(x) -> list:
    """Strict local maxima; a flat top counts once, at its (left-of-)middle sample.

    Samples at either end of the series are never maxima.
    """
    x = np.asarray(x)
    n = x.size
    peaks = []
    i = 1
    while i < n - 1:
        if x[i - 1] < x[i]:
            ahead = i + 1
            while ahead < n - 1 and x[ahead] == x[i]:
                ahead += 1
            if x[ahead] < x[i]:
                peaks.append((i + ahead - 1) // 2)
                i = ahead
                continue
        i += 1
    return peaks


def _nearest_greater(x, reverse=False):
    """Index of the nearest strictly greater sample to the left (or right); -1 / n if none."""
    n = x.size
    out = np.empty(n, dtype=int)
    stack = []
    order = range(n - 1, -1, -1) if reverse else range(n)
    missing = n if reverse else -1
    for i in order:
        while stack and x[stack[-1]] <= x[i]:
            stack.pop()
        out[i] = stack[-1] if stack else missing
        stack.append(i)
    return out


def find_peaks(series) -> list:
    """Local peaks of ``series`` with their topographic prominence.

    Each side's base is the lowest sample between the peak and the nearest
    strictly higher sample (or the series end); ties resolve to the base
    nearest the peak.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("series must be a non-empty 1-D array")
    idx = local_maxima(x)
    if not idx:
        return []
    left_gt = _nearest_greater(x)
    right_gt = _nearest_greater(x, reverse=True)
    out = []
    for p in idx:
        left = x[left_gt[p] + 1:p + 1]
        lb = left_gt[p] + 1 + (left.size - 1 - int(np.argmin(left[::-1])))
        right = x[p:right_gt[p]]
        rb = p + int(np.argmin(right))
        prom = x[p] - max(x[lb], x[rb])
        out.append(Peak(int(p), float(x[p]), float(prom), int(lb), int(rb)))
    return out


def count_repetitions(series, threshold: float = DEFAULT_THRESHOLD):
    """Number of peaks whose prominence is strictly above ``threshold``, and those peaks."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    kept = [p for p in find_peaks(series) if p.prominence > threshold]
    return len(kept), kept
