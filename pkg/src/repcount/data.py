"""Synthetic annotated feature sequences and their on-disk formats.

The generator stands in for a frozen video encoder: each repetition is one
linearly time-warped copy of a per-sequence motif curve, idle stretches carry
a constant signature, and everything gets additive Gaussian noise.

File formats
------------
Embeddings: little-endian binary. ``b"RACE"``, u32 version (1), u64 T,
u64 D, then T*D float32 values, frame-major.

Annotations: UTF-8 JSON ``{"total_frames": N, "intervals": [[s, e], ...]}``
with inclusive, 0-indexed frame bounds.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text

EMBEDDING_MAGIC = b"RACE"
EMBEDDING_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class EmbeddingFormatError(ValueError):
    """Malformed embedding file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class AnnotationError(ValueError):
    """Invalid annotation track; ``index`` names the offending interval, if any."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"interval {index}: {message}"
        super().__init__(message)
        self.index = index


@dataclass(frozen=True, eq=False)
class EmbeddingSequence:
    """Per-frame feature matrix of shape (T, D), stored as float32."""

    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise ValueError(f"embeddings must be 2-D (T, D), got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"embeddings need T >= 1 and D >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("embeddings contain non-finite values")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSequence):
            return NotImplemented
        return np.array_equal(self.frames, other.frames)

    def strided(self, stride: int) -> "EmbeddingSequence":
        if stride < 1:
            raise ValueError("stride must be >= 1")
        return self if stride == 1 else EmbeddingSequence(self.frames[::stride])


@dataclass(frozen=True)
class AnnotationTrack:
    """Ordered, non-overlapping inclusive repetition intervals on ``total_frames`` frames."""

    intervals: tuple
    total_frames: int

    def __post_init__(self):
        total = int(self.total_frames)
        if total < 1:
            raise AnnotationError(f"total_frames must be >= 1, got {self.total_frames}")
        cleaned = []
        for k, pair in enumerate(self.intervals):
            try:
                s, e = (int(v) for v in pair)
            except (TypeError, ValueError):
                raise AnnotationError(f"expected a [start, end] pair, got {pair!r}", k) from None
            if e < s:
                raise AnnotationError(f"end {e} < start {s}", k)
            if s < 0 or e >= total:
                raise AnnotationError(f"[{s}, {e}] outside 0..{total - 1}", k)
            if cleaned and s <= cleaned[-1][1]:
                raise AnnotationError(
                    f"[{s}, {e}] overlaps or precedes [{cleaned[-1][0]}, {cleaned[-1][1]}]", k
                )
            cleaned.append((s, e))
        object.__setattr__(self, "intervals", tuple(cleaned))
        object.__setattr__(self, "total_frames", total)

    def count(self) -> int:
        return len(self.intervals)

    @property
    def starts(self) -> list:
        return [s for s, _ in self.intervals]

    @property
    def ends(self) -> list:
        return [e for _, e in self.intervals]

    def strided(self, stride: int) -> "AnnotationTrack":
        """Map annotations onto a sequence subsampled by ``stride``.

        Frame f maps to ``f // stride``. An end that would collide with the
        next start is pulled back one frame; two starts collapsing onto the
        same frame is an error (stride too coarse for the track).
        """
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if stride == 1:
            return self
        total = (self.total_frames + stride - 1) // stride
        mapped = []
        for k, (s, e) in enumerate(self.intervals):
            ms, me = s // stride, e // stride
            if mapped:
                ps, pe = mapped[-1]
                if ms <= ps:
                    raise AnnotationError(f"stride {stride} merges two repetition starts", k)
                if ms <= pe:
                    mapped[-1] = (ps, ms - 1)
            mapped.append((ms, me))
        return AnnotationTrack(tuple(mapped), total)


@dataclass(frozen=True)
class SyntheticSpec:
    rng_seed: int = 0
    T_range: tuple = (64, 256)
    D: int = 16
    reps_range: tuple = (2, 12)
    duration_range: tuple = (8, 20)
    gap_range: tuple = (0, 6)
    noise_sigma: float = 0.05
    motif_dim: int = 8
    # chance that one inter-repetition gap absorbs part of the spare frames
    break_prob: float = 0.25

    def validate(self):
        for name in ("T_range", "reps_range", "duration_range", "gap_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
            if lo < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.T_range[0] < 1:
            raise ValueError("T_range minimum must be >= 1")
        if self.duration_range[0] < 1:
            raise ValueError("duration_range minimum must be >= 1")
        if self.D < 1 or not 1 <= self.motif_dim <= self.D:
            raise ValueError(f"need 1 <= motif_dim <= D, got motif_dim={self.motif_dim}, D={self.D}")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.break_prob <= 1.0:
            raise ValueError("break_prob must lie in [0, 1]")
        n = self.reps_range[1]
        need = n * self.duration_range[0] + max(n - 1, 0) * self.gap_range[0]
        if need > self.T_range[1]:
            raise ValueError(
                f"infeasible spec: {n} repetitions need at least {need} frames "
                f"but T_range allows at most {self.T_range[1]}"
            )


def _motif_curve(rng, motif_dim):
    # under one cycle per repetition, so a repetition never ends where it began
    # and every start shows up as a jump in the motif dimensions
    freqs = rng.uniform(0.25, 0.75, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=(motif_dim, 3))
    amps = rng.uniform(0.5, 1.0, size=(motif_dim, 3)) / np.sqrt(3)

    def curve(u):
        u = np.asarray(u, dtype=np.float64)[:, None, None]
        return np.sum(amps * np.sin(2 * np.pi * freqs * u + phases), axis=-1)

    return curve


def _idle_signature(rng, D):
    # bounded away from zero so idle frames never mimic the silent
    # non-motif dimensions of a repetition
    return rng.choice([-1.0, 1.0], size=D) * rng.uniform(0.5, 1.0, size=D)


def generate_sequence(spec: SyntheticSpec):
    """Draw one (EmbeddingSequence, AnnotationTrack) pair, fully determined by ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    t_lo, t_hi = spec.T_range
    d_lo, d_hi = spec.duration_range
    g_lo, g_hi = spec.gap_range

    n = int(rng.integers(spec.reps_range[0], spec.reps_range[1] + 1))
    gaps = rng.integers(g_lo, g_hi + 1, size=max(n - 1, 0))
    budget = t_hi - int(gaps.sum())
    if n and budget // n < d_lo:
        gaps[:] = g_lo
        budget = t_hi - int(gaps.sum())
    dur_cap = min(d_hi, budget // n) if n else d_hi
    durations = rng.integers(d_lo, dur_cap + 1, size=n)

    used = int(durations.sum() + gaps.sum())
    T = int(rng.integers(max(t_lo, used, 1), t_hi + 1))
    slack = T - used
    if n >= 2 and rng.random() < spec.break_prob:
        k = int(rng.integers(0, n - 1))
        extra = int(rng.integers(0, slack + 1))
        gaps[k] += extra
        slack -= extra
    lead = int(rng.integers(0, slack + 1))

    curve = _motif_curve(rng, spec.motif_dim)
    # the motif always occupies the leading dimensions, the way an encoder's
    # features keep one meaning across videos
    motif_dims = np.arange(spec.motif_dim)
    idle = _idle_signature(rng, spec.D)

    frames = np.tile(idle, (T, 1))
    intervals = []
    t = lead
    for k in range(n):
        dur = int(durations[k])
        u = np.linspace(0.0, 1.0, dur) if dur > 1 else np.zeros(1)
        block = np.zeros((dur, spec.D))
        block[:, motif_dims] = curve(u)
        frames[t:t + dur] = block
        intervals.append((t, t + dur - 1))
        t += dur
        if k < n - 1:
            t += int(gaps[k])
    frames = frames + spec.noise_sigma * rng.standard_normal((T, spec.D))
    return EmbeddingSequence(frames), AnnotationTrack(tuple(intervals), T)


def encode_embeddings(seq: EmbeddingSequence) -> bytes:
    header = _HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, seq.T, seq.D)
    return header + seq.frames.astype("<f4").tobytes(order="C")


def decode_embeddings(buf: bytes) -> EmbeddingSequence:
    if len(buf) < _HEADER.size:
        raise EmbeddingFormatError(
            f"truncated header: need {_HEADER.size} bytes, file has {len(buf)}", len(buf)
        )
    magic, version, T, D = _HEADER.unpack_from(buf, 0)
    if magic != EMBEDDING_MAGIC:
        raise EmbeddingFormatError(f"bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}", 0)
    if version != EMBEDDING_VERSION:
        raise EmbeddingFormatError(f"unsupported version {version}", 4)
    if T < 1 or D < 1:
        raise EmbeddingFormatError(f"invalid shape T={T}, D={D}", 8 if T < 1 else 16)
    expected = T * D * 4
    payload = len(buf) - _HEADER.size
    if payload < expected:
        raise EmbeddingFormatError(
            f"truncated payload: expected {expected} bytes, found {payload}", len(buf)
        )
    if payload > expected:
        raise EmbeddingFormatError(f"{payload - expected} trailing bytes", _HEADER.size + expected)
    values = np.frombuffer(buf, dtype="<f4", count=T * D, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise EmbeddingFormatError("non-finite value", _HEADER.size + 4 * int(bad[0]))
    return EmbeddingSequence(values.reshape(T, D).astype(np.float32))


def write_embeddings(seq: EmbeddingSequence, path):
    atomic_write_bytes(path, encode_embeddings(seq))


def read_embeddings(path) -> EmbeddingSequence:
    with open(path, "rb") as fh:
        return decode_embeddings(fh.read())


def track_to_json(track: AnnotationTrack) -> str:
    obj = {"total_frames": track.total_frames, "intervals": [list(iv) for iv in track.intervals]}
    return json.dumps(obj)


def track_from_json(text: str) -> AnnotationTrack:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"total_frames", "intervals"}:
        raise AnnotationError('expected an object with keys "total_frames" and "intervals"')
    if not isinstance(obj["intervals"], list):
        raise AnnotationError('"intervals" must be a list')
    return AnnotationTrack(tuple(obj["intervals"]), obj["total_frames"])


def write_annotations(track: AnnotationTrack, path):
    atomic_write_text(path, track_to_json(track))


def read_annotations(path) -> AnnotationTrack:
    with open(path, encoding="utf-8") as fh:
        return track_from_json(fh.read())


def generate_dataset(base: SyntheticSpec, n: int, seed: int) -> list:
    """``n`` sequences whose seeds derive from ``seed``; returns (seed, seq, track) triples."""
    seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32) if n else []
    out = []
    for s in seeds:
        spec = replace(base, rng_seed=int(s))
        seq, track = generate_sequence(spec)
        out.append((int(s), seq, track))
    return out


def pairs_from(triples: Sequence) -> list:
    return [(seq, track) for _, seq, track in triples]


MANIFEST_NAME = "manifest.json"


def write_dataset(triples, out_dir) -> Path:
    """Write one .race/.json pair per triple plus a manifest listing them by relative path.

    If anything fails, files written so far by this call are removed again.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    entries = []
    try:
        for i, (seed, seq, track) in enumerate(triples):
            emb_name, ann_name = f"seq_{i:04d}.race", f"seq_{i:04d}.json"
            write_embeddings(seq, out_dir / emb_name)
            written.append(out_dir / emb_name)
            write_annotations(track, out_dir / ann_name)
            written.append(out_dir / ann_name)
            entries.append({"embeddings": emb_name, "annotations": ann_name, "seed": int(seed)})
        manifest = out_dir / MANIFEST_NAME
        atomic_write_text(manifest, json.dumps(entries, indent=2) + "\n")
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return manifest


def read_manifest(path) -> list:
    """Load the (EmbeddingSequence, AnnotationTrack) pairs a manifest points at."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    pairs = []
    for i, entry in enumerate(entries):
        try:
            emb, ann = entry["embeddings"], entry["annotations"]
        except (TypeError, KeyError):
            raise ValueError(f"{path}: entry {i} lacks 'embeddings'/'annotations'") from None
        seq = read_embeddings(path.parent / emb)
        track = read_annotations(path.parent / ann)
        if seq.T != track.total_frames:
            raise ValueError(f"{path}: entry {i} has {seq.T} frames but annotations cover {track.total_frames}")
        pairs.append((seq, track))
    return pairs
