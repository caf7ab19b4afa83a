"""Temporal aggregator + sigmoid multi-stage TCN, trained with hand-written backprop.

Layout is time-major throughout: activations are (T, C) arrays and a
temporal convolution weight is (kernel, C_in, C_out). Every stage ends in a
sigmoid; stage s > 1 reads the previous stage's probabilities, and only the
last stage feeds the loss.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import counting, losses, similarity
from ._io import atomic_write_bytes
from .data import AnnotationTrack, EmbeddingSequence
from .similarity import SimilarityMeasure

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RACW"
CHECKPOINT_VERSION = 1
TCN_KERNEL = 3


class StaleCacheError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 16
    kernel_size: int = 3
    agg_dim: int = 16
    stages: int = 2
    layers_per_stage: int = 8
    channels: int = 32
    dilation_base: int = 2
    target_mode: str = "start"
    similarity: SimilarityMeasure = field(default_factory=SimilarityMeasure)
    lam: float = losses.DEFAULT_LAMBDA
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.similarity, dict):
            object.__setattr__(self, "similarity", SimilarityMeasure(**self.similarity))
        for name in ("input_dim", "kernel_size", "agg_dim", "stages", "layers_per_stage",
                     "channels", "dilation_base"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.target_mode not in counting.TARGET_MODES:
            raise ValueError(f"target_mode must be one of {counting.TARGET_MODES}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")

    @property
    def receptive_radius(self) -> int:
        """Frames on either side that can influence one output frame."""
        per_stage = sum(self.dilation_base ** l for l in range(self.layers_per_stage))
        return (self.kernel_size - 1) // 2 + self.stages * per_stage * (TCN_KERNEL - 1) // 2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 6.4e-5
    batch_size: int = 16
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    stride: int = 1
    gaussian_sigma: float = counting.DEFAULT_SIGMA
    prominence_threshold: float = counting.DEFAULT_THRESHOLD
    tsm_smoothing: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0 or self.stride < 1:
            raise ValueError("need batch_size >= 1, epochs >= 0, stride >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam constants")
        if self.gaussian_sigma < 0 or self.tsm_smoothing < 0:
            raise ValueError("sigmas must be >= 0")
        if not 0 <= self.prominence_threshold <= 1:
            raise ValueError("prominence_threshold must lie in [0, 1]")


def param_shapes(cfg: NetworkConfig) -> dict:
    shapes = {
        "agg.w": (cfg.kernel_size, cfg.input_dim, cfg.agg_dim),
        "agg.b": (cfg.agg_dim,),
    }
    C = cfg.channels
    for s in range(cfg.stages):
        cin = cfg.agg_dim if s == 0 else 1
        shapes[f"s{s}.in.w"] = (cin, C)
        shapes[f"s{s}.in.b"] = (C,)
        for l in range(cfg.layers_per_stage):
            shapes[f"s{s}.l{l}.dil.w"] = (TCN_KERNEL, C, C)
            shapes[f"s{s}.l{l}.dil.b"] = (C,)
            shapes[f"s{s}.l{l}.pw.w"] = (C, C)
            shapes[f"s{s}.l{l}.pw.b"] = (C,)
        shapes[f"s{s}.out.w"] = (C, 1)
        shapes[f"s{s}.out.b"] = (1,)
    return shapes


class NetworkState:
    """Learnable tensors plus Adam moment buffers and step counter."""

    def __init__(self, config: NetworkConfig, params: dict, m=None, v=None, step=0):
        self.config = config
        self.params = params
        self.m = m if m is not None else {k: np.zeros_like(p) for k, p in params.items()}
        self.v = v if v is not None else {k: np.zeros_like(p) for k, p in params.items()}
        self.step = step
        # bumped on every update so caches from older forwards are detectable
        self.version = 0

    @classmethod
    def init(cls, config: NetworkConfig, dtype=np.float32) -> "NetworkState":
        rng = np.random.default_rng(config.seed)
        shapes = param_shapes(config)
        params = {}
        for name, shape in shapes.items():
            wshape = shapes[name[:-1] + "w"]
            fan_in = int(np.prod(wshape[:-1]))
            bound = math.sqrt(1.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return cls(config, params)

    @property
    def dtype(self):
        return self.params["agg.w"].dtype

    def astype(self, dtype) -> "NetworkState":
        conv = lambda d: {k: a.astype(dtype) for k, a in d.items()}
        return NetworkState(self.config, conv(self.params), conv(self.m), conv(self.v), self.step)

    def copy(self) -> "NetworkState":
        return self.astype(self.dtype)

    def equals(self, other: "NetworkState") -> bool:
        if self.config != other.config or self.step != other.step:
            return False
        return all(
            np.array_equal(a[k], b[k])
            for a, b in ((self.params, other.params), (self.m, other.m), (self.v, other.v))
            for k in a
        )


# -- layers -------------------------------------------------------------------

def _taps(kernel, dilation):
    half = (kernel - 1) // 2
    return [(j, (j - half) * dilation) for j in range(kernel)]


def conv1d(x, w, b, dilation=1):
    """Same-length temporal convolution with zero padding."""
    T = x.shape[0]
    y = np.broadcast_to(b, (T, w.shape[2])).copy()
    for j, o in _taps(w.shape[0], dilation):
        if abs(o) >= T:
            continue
        if o >= 0:
            y[:T - o] += x[o:] @ w[j]
        else:
            y[-o:] += x[:T + o] @ w[j]
    return y


def conv1d_backward(x, w, dy, dilation=1):
    T = x.shape[0]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for j, o in _taps(w.shape[0], dilation):
        if abs(o) >= T:
            continue
        if o >= 0:
            dw[j] = x[o:].T @ dy[:T - o]
            dx[o:] += dy[:T - o] @ w[j].T
        else:
            dw[j] = x[:T + o].T @ dy[-o:]
            dx[:T + o] += dy[-o:] @ w[j].T
    return dx, dw, dy.sum(axis=0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- forward / backward ---------------------------------------------------------

class ForwardCache:
    def __init__(self, state, inputs):
        self.state_id = id(state)
        self.version = state.version
        self.inputs = inputs
        self.agg_pre = None
        self.embeddings = None
        self.stages = []

    @property
    def stage_probs(self) -> list:
        """Sigmoid output of every stage, first to last."""
        return [st["p"][:, 0] for st in self.stages]


def forward(state: NetworkState, seq):
    """Run the network on one sequence.

    Returns ``(embeddings, probs, cache)``: the aggregator output (T, agg_dim),
    the last stage's start probabilities (T,), and everything ``backward`` needs.
    """
    cfg = state.config
    P = state.params
    frames = getattr(seq, "frames", seq)
    x = np.asarray(frames, dtype=state.dtype)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected input of shape (T, {cfg.input_dim}), got {x.shape}")
    cache = ForwardCache(state, x)
    a = conv1d(x, P["agg.w"], P["agg.b"])
    emb = np.tanh(a)
    cache.agg_pre, cache.embeddings = a, emb

    h_in = emb
    for s in range(cfg.stages):
        st = {"x": h_in}
        h = h_in @ P[f"s{s}.in.w"] + P[f"s{s}.in.b"]
        layers = []
        for l in range(cfg.layers_per_stage):
            d = cfg.dilation_base ** l
            pre = conv1d(h, P[f"s{s}.l{l}.dil.w"], P[f"s{s}.l{l}.dil.b"], d)
            r = np.maximum(pre, 0)
            layers.append((h, pre, r))
            h = h + r @ P[f"s{s}.l{l}.pw.w"] + P[f"s{s}.l{l}.pw.b"]
        z = h @ P[f"s{s}.out.w"] + P[f"s{s}.out.b"]
        p = _sigmoid(z)
        st.update(layers=layers, h=h, p=p)
        cache.stages.append(st)
        h_in = p
    return emb, h_in[:, 0], cache


def backward(state: NetworkState, cache: ForwardCache, d_probs, d_embeddings=None) -> dict:
    """Parameter gradients given dL/dprobs and (optionally) dL/dembeddings."""
    if cache.state_id != id(state) or cache.version != state.version:
        raise StaleCacheError("forward cache does not belong to the current network state")
    cfg = state.config
    P = state.params
    dt = state.dtype
    grads = {}
    dp = np.asarray(d_probs, dtype=dt).reshape(-1, 1)
    for s in reversed(range(cfg.stages)):
        st = cache.stages[s]
        p = st["p"]
        dz = dp * p * (1 - p)
        grads[f"s{s}.out.w"] = st["h"].T @ dz
        grads[f"s{s}.out.b"] = dz.sum(axis=0)
        dh = dz @ P[f"s{s}.out.w"].T
        for l in reversed(range(cfg.layers_per_stage)):
            h_prev, pre, r = st["layers"][l]
            grads[f"s{s}.l{l}.pw.w"] = r.T @ dh
            grads[f"s{s}.l{l}.pw.b"] = dh.sum(axis=0)
            dpre = (dh @ P[f"s{s}.l{l}.pw.w"].T) * (pre > 0)
            dx, dw, db = conv1d_backward(h_prev, P[f"s{s}.l{l}.dil.w"], dpre, cfg.dilation_base ** l)
            grads[f"s{s}.l{l}.dil.w"], grads[f"s{s}.l{l}.dil.b"] = dw, db
            dh = dh + dx
        grads[f"s{s}.in.w"] = st["x"].T @ dh
        grads[f"s{s}.in.b"] = dh.sum(axis=0)
        dp = dh @ P[f"s{s}.in.w"].T

    d_emb = dp
    if d_embeddings is not None:
        d_emb = d_emb + np.asarray(d_embeddings, dtype=dt)
    emb = cache.embeddings
    da = d_emb * (1 - emb * emb)
    _, dw, db = conv1d_backward(cache.inputs, P["agg.w"], da)
    grads["agg.w"], grads["agg.b"] = dw, db
    return {k: grads[k] for k in P}


def sequence_objective(state: NetworkState, seq, target, S_ref=None, lam=None):
    """Loss of one sequence and its parameter gradients.

    ``S_ref`` may be None when ``lam`` is zero; the TSM is then never built.
    """
    cfg = state.config
    lam = cfg.lam if lam is None else lam
    emb, probs, cache = forward(state, seq)
    sse, d_probs = losses.sse_loss(target, probs)
    treco, d_emb = 0.0, None
    if lam > 0:
        if S_ref is None:
            raise ValueError("a reference TSM is required when lambda > 0")
        S, tcache = similarity.predicted_tsm_forward(emb, cfg.similarity)
        treco, dS = losses.treco_loss(S, np.asarray(S_ref, dtype=emb.dtype))
        d_emb = similarity.predicted_tsm_backward(tcache, lam * dS)
    report = losses.total_loss(sse, treco, lam)
    grads = backward(state, cache, d_probs, d_emb)
    return report, grads


# -- optimizer ------------------------------------------------------------------

def adam_step(state: NetworkState, grads: dict, tc: TrainConfig) -> NetworkState:
    """One bias-corrected Adam update, in place; returns ``state``."""
    for k, g in grads.items():
        if k not in state.params:
            raise KeyError(f"gradient for unknown tensor {k!r}")
        if g.shape != state.params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor {k!r} {state.params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for tensor {k!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - tc.beta1 ** t
    c2 = 1.0 - tc.beta2 ** t
    for k, g in grads.items():
        p, m, v = state.params[k], state.m[k], state.v[k]
        g = g.astype(p.dtype, copy=False)
        m *= tc.beta1
        m += (1 - tc.beta1) * g
        v *= tc.beta2
        v += (1 - tc.beta2) * (g * g)
        p -= (tc.learning_rate * (m / c1) / (np.sqrt(v / c2) + tc.eps)).astype(p.dtype)
    state.version += 1
    return state


# -- training -------------------------------------------------------------------

def prepare_example(seq: EmbeddingSequence, track: AnnotationTrack, cfg: NetworkConfig,
                    tc: TrainConfig, need_tsm: bool):
    seq = seq.strided(tc.stride)
    track = track.strided(tc.stride)
    if seq.T != track.total_frames:
        raise ValueError(f"sequence has {seq.T} frames but annotations cover {track.total_frames}")
    target = counting.make_target(track, cfg.target_mode, tc.gaussian_sigma)
    S_ref = similarity.reference_tsm(track, tc.tsm_smoothing) if need_tsm else None
    return seq, target, S_ref


def train(dataset, net_cfg: NetworkConfig, train_cfg: TrainConfig, state: NetworkState = None,
          on_epoch=None):
    """Fit the network; returns ``(state, history)`` with one LossReport per epoch.

    Pass ``state`` to resume from a checkpoint (its Adam step counter carries on).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    if state is None:
        state = NetworkState.init(net_cfg)
    elif state.config != net_cfg:
        raise ValueError("resumed state was built with a different network config")
    lam = net_cfg.lam
    prepared = [prepare_example(seq, track, net_cfg, train_cfg, lam > 0) for seq, track in dataset]
    order_rng = np.random.default_rng([net_cfg.seed, 1])
    history = []
    for epoch in range(train_cfg.epochs):
        order = order_rng.permutation(len(prepared))
        reports = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            acc = None
            for i in batch:
                seq, target, S_ref = prepared[i]
                report, grads = sequence_objective(state, seq, target, S_ref, lam)
                if not math.isfinite(report.total):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, sequence {int(i)}")
                reports.append(report)
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(batch)
            try:
                adam_step(state, acc, train_cfg)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, batch at {start}: {exc}") from None
        summary = losses.mean_report(reports)
        history.append(summary)
        log.info("epoch %d sse=%.5f treco=%.3f total=%.5f", epoch, summary.sse, summary.treco, summary.total)
        if on_epoch is not None:
            on_epoch(epoch, summary, state)
    return state, history


def predict(state: NetworkState, seq, stride: int = 1) -> np.ndarray:
    """Start probabilities for ``seq`` subsampled by ``stride``; no TSM is computed."""
    if stride > 1:
        seq = seq.strided(stride) if hasattr(seq, "strided") else np.asarray(seq)[::stride]
    _, probs, _ = forward(state, seq)
    return probs.astype(np.float64)


# -- checkpoints ----------------------------------------------------------------

def encode_checkpoint(state: NetworkState) -> bytes:
    header = json.dumps({"network": state.config.to_dict(), "adam_step": state.step},
                        sort_keys=True).encode("utf-8")
    tensors = []
    for prefix, table in (("", state.params), ("adam.m.", state.m), ("adam.v.", state.v)):
        for k, a in table.items():
            tensors.append((prefix + k, a))
    parts = [CHECKPOINT_MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, len(header)), header,
             struct.pack("<I", len(tensors))]
    for name, a in tensors:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


class CheckpointError(ValueError):
    pass


def decode_checkpoint(buf: bytes) -> NetworkState:
    mv = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(mv):
            raise CheckpointError(f"truncated checkpoint at byte offset {pos}")
        out = mv[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic (byte offset 0)")
    version, hlen = struct.unpack("<IQ", take(12))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(bytes(take(hlen)).decode("utf-8"))
    cfg = NetworkConfig(**meta["network"])
    (count,) = struct.unpack("<I", take(4))
    tables = {"": {}, "adam.m.": {}, "adam.v.": {}}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        prefix = next((p for p in ("adam.m.", "adam.v.") if name.startswith(p)), "")
        tables[prefix][name[len(prefix):]] = arr
    if pos != len(mv):
        raise CheckpointError(f"{len(mv) - pos} trailing bytes at offset {pos}")
    shapes = param_shapes(cfg)
    for prefix, table in tables.items():
        if set(table) != set(shapes):
            raise CheckpointError(f"tensor set {prefix or 'params'} does not match the config")
        for k, shp in shapes.items():
            if table[k].shape != shp:
                raise CheckpointError(f"tensor {prefix}{k} has shape {table[k].shape}, expected {shp}")
    order = list(shapes)
    pick = lambda t: {k: t[k] for k in order}
    return NetworkState(cfg, pick(tables[""]), pick(tables["adam.m."]), pick(tables["adam.v."]),
                        int(meta["adam_step"]))


def save_checkpoint(state: NetworkState, path):
    atomic_write_bytes(path, encode_checkpoint(state))


def load_checkpoint(path) -> NetworkState:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
