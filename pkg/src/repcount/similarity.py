"""Temporal self-similarity matrices.

The predicted matrix compares learned frame embeddings pairwise and min-max
normalizes every row. The reference matrix is drawn from annotations: unit
diagonal, start-to-start and end-to-end alignments, a rasterized warp line
between every pair of repetitions, then a Gaussian blur that keeps the hard
ones in place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .data import AnnotationTrack

MEASURES = ("hamming", "euclidean", "correlation")


@dataclass(frozen=True)
class SimilarityMeasure:
    kind: str = "hamming"
    beta: float = 4.0

    def __post_init__(self):
        if self.kind not in MEASURES:
            raise ValueError(f"unknown similarity measure {self.kind!r}; choose from {MEASURES}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be finite and positive, got {self.beta}")


def raw_similarity(a, b, m: SimilarityMeasure = SimilarityMeasure()) -> float:
    """Similarity of two feature vectors before any normalization (higher = more alike)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input")
    if m.kind == "hamming":
        return float(-np.mean(np.tanh(m.beta * np.abs(a - b))))
    if m.kind == "euclidean":
        return float(-np.linalg.norm(a - b))
    ac, bc = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(ac), np.linalg.norm(bc)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(ac, bc) / (na * nb))


def _pairwise(x, m):
    """All-pairs raw similarity plus whatever the backward pass needs."""
    if m.kind == "hamming":
        # (D, T, T) layout keeps the long axis contiguous; th is built in place
        xt = np.ascontiguousarray(x.T)
        th = xt[:, :, None] - xt[:, None, :]
        np.abs(th, out=th)
        th *= m.beta
        np.tanh(th, out=th)
        f = th.sum(axis=0)
        f *= -1.0 / x.shape[1]
        return f, (xt, th)
    if m.kind == "euclidean":
        diff = x[:, None, :] - x[None, :, :]
        dist = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
        return -dist, (diff, dist)
    xc = x - x.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(xc, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    z = np.where(norms[:, None] > 0, xc / safe[:, None], 0.0)
    return z @ z.T, (z, norms, safe)


def _pairwise_backward(x, m, aux, g):
    """Gradient of sum(g * f) w.r.t. the embeddings ``x``."""
    D = x.shape[1]
    if m.kind == "hamming":
        xt, th = aux
        # d f_ij / d x_i = -(beta/D) sech^2 sign(diff); f_ij also depends on x_j with opposite sign
        local = np.square(th)
        np.subtract(1.0, local, out=local)
        local *= np.sign(xt[:, :, None] - xt[:, None, :])
        local *= (g + g.T).astype(local.dtype, copy=False)
        return (-m.beta / D) * local.sum(axis=2).T
    if m.kind == "euclidean":
        diff, dist = aux
        inv = np.where(dist > 0, 1.0 / np.where(dist > 0, dist, 1.0), 0.0)
        gs = (g + g.T) * inv
        return -np.einsum("ij,ijd->id", gs, diff)
    z, norms, safe = aux
    dz = (g + g.T) @ z
    proj = dz - z * np.sum(dz * z, axis=1, keepdims=True)
    dxc = np.where(norms[:, None] > 0, proj / safe[:, None], 0.0)
    return dxc - dxc.mean(axis=1, keepdims=True)


def _rownorm(f):
    lo_idx = np.argmin(f, axis=1)
    hi_idx = np.argmax(f, axis=1)
    rows = np.arange(f.shape[0])
    lo = f[rows, lo_idx]
    span = f[rows, hi_idx] - lo
    degenerate = span == 0
    safe = np.where(degenerate, 1.0, span)
    S = (f - lo[:, None]) / safe[:, None]
    S[degenerate] = 0.5
    return np.clip(S, 0.0, 1.0), (lo_idx, hi_idx, safe, degenerate)


class TSMCache:
    __slots__ = ("x", "measure", "aux", "S", "norm")

    def __init__(self, x, measure, aux, S, norm):
        self.x, self.measure, self.aux, self.S, self.norm = x, measure, aux, S, norm


def predicted_tsm_forward(x, m: SimilarityMeasure = SimilarityMeasure()):
    """Row-normalized TSM of embeddings ``x`` (T, C), with a cache for the backward pass."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a (T, C) matrix with T >= 1, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite embedding")
    f, aux = _pairwise(x, m)
    S, norm = _rownorm(f)
    return S, TSMCache(x, m, aux, S, norm)


def predicted_tsm(seq, m: SimilarityMeasure = SimilarityMeasure()) -> np.ndarray:
    frames = getattr(seq, "frames", seq)
    S, _ = predicted_tsm_forward(np.asarray(frames, dtype=np.float64), m)
    return S


def predicted_tsm_backward(cache: TSMCache, dS):
    """Gradient w.r.t. the embeddings given dL/dS."""
    lo_idx, hi_idx, safe, degenerate = cache.norm
    S = cache.S
    T = S.shape[0]
    rows = np.arange(T)
    g = np.where(degenerate[:, None], 0.0, dS)
    inv = 1.0 / safe
    df = g * inv[:, None]
    # min and max enter every entry of their row
    d_lo = np.sum(g * (S - 1.0), axis=1) * inv
    d_hi = -np.sum(g * S, axis=1) * inv
    np.add.at(df, (rows, lo_idx), d_lo)
    np.add.at(df, (rows, hi_idx), d_hi)
    return _pairwise_backward(cache.x, cache.measure, cache.aux, df)


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def rasterize_line(p0, p1):
    """Integer cells on the segment p0 -> p1, sampled at max(|drow|, |dcol|) + 1 points."""
    (r0, c0), (r1, c1) = p0, p1
    n = max(abs(r1 - r0), abs(c1 - c0)) + 1
    t = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    rows = _round_half_away(r0 + t * (r1 - r0)).astype(int)
    cols = _round_half_away(c0 + t * (c1 - c0)).astype(int)
    return rows, cols


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(k * k) / (2 * sigma * sigma))
    return w / w.sum()


def reference_hard(track: AnnotationTrack) -> np.ndarray:
    """Binary reference TSM before smoothing."""
    T = track.total_frames
    R = np.eye(T)
    starts = np.array(track.starts, dtype=int)
    ends = np.array(track.ends, dtype=int)
    if starts.size:
        R[np.ix_(starts, starts)] = 1.0
        R[np.ix_(ends, ends)] = 1.0
    ivs = track.intervals
    for a in range(len(ivs)):
        for b in range(a + 1, len(ivs)):
            (i, j), (i2, j2) = ivs[a], ivs[b]
            rows, cols = rasterize_line((i, i2), (j, j2))
            R[rows, cols] = 1.0
            R[cols, rows] = 1.0
    return R


def reference_tsm(track: AnnotationTrack, smoothing: float = 1.0) -> np.ndarray:
    """Target TSM for ``track``; ``smoothing`` is the blur standard deviation in frames."""
    if not smoothing >= 0:
        raise ValueError("smoothing must be >= 0")
    hard = reference_hard(track)
    if smoothing == 0:
        return hard
    w = gaussian_kernel(smoothing)
    blurred = convolve1d(convolve1d(hard, w, axis=0, mode="constant"), w, axis=1, mode="constant")
    out = np.clip(blurred, 0.0, 1.0)
    out = 0.5 * (out + out.T)
    out[hard == 1.0] = 1.0
    return out
