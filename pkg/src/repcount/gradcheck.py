"""Finite-difference oracle for the network's composite loss.

The objective is only piecewise smooth (ReLU, row min/max selection, |.| in
the Hamming relaxation). A finite difference is trusted only when every
probe point shares the base point's activation pattern; otherwise the step
is shrunk, and coordinates that never settle are reported as skipped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, network, similarity

STEPS = (1e-4, 1e-5, 1e-6)


def composite_loss(state, x, target, S_ref, lam):
    """Total loss via forward passes only, plus the piecewise-linear activation pattern."""
    emb, probs, cache = network.forward(state, x)
    loss = losses.sse_loss(target, probs)[0]
    parts = [np.packbits(pre > 0) for st in cache.stages for _, pre, _ in st["layers"]]
    if lam > 0:
        S, tc = similarity.predicted_tsm_forward(emb, state.config.similarity)
        loss += lam * losses.treco_loss(S, S_ref)[0]
        lo, hi, _, degenerate = tc.norm
        parts += [lo, hi, np.packbits(degenerate)]
        if tc.measure.kind == "hamming":
            xt = tc.aux[0]
            parts.append(np.sign(xt[:, :, None] - xt[:, None, :]).astype(np.int8))
        else:
            # euclidean distances / correlation norms: zero is the kink
            parts.append(np.packbits(tc.aux[1] > 0))
    return loss, b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    worst: tuple = None


def check_gradients(state, x, target, S_ref, lam, floor=1e-8) -> GradCheckReport:
    """Compare analytic gradients with a five-point central difference, coordinate by coordinate.

    The relative error |a - n| / max(|a|, |n|) is taken over coordinates with
    |a| + |n| > ``floor``.
    """
    _, grads = network.sequence_objective(state, x, target, S_ref, lam)
    _, base_sig = composite_loss(state, x, target, S_ref, lam)
    worst, checked, skipped, where = 0.0, 0, 0, None
    for name, p in state.params.items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            num = None
            for h in STEPS:
                vals = []
                smooth = True
                for k in (2, 1, -1, -2):
                    p[idx] = orig + k * h
                    val, sig = composite_loss(state, x, target, S_ref, lam)
                    vals.append(val)
                    if sig != base_sig:
                        smooth = False
                        break
                p[idx] = orig
                if smooth:
                    f2, f1, fm1, fm2 = vals
                    num = (-f2 + 8 * f1 - 8 * fm1 + fm2) / (12 * h)
                    break
            if num is None:
                skipped += 1
                continue
            ana = float(grads[name][idx])
            if abs(ana) + abs(num) <= floor:
                continue
            checked += 1
            rel = abs(ana - num) / max(abs(ana), abs(num))
            if rel > worst:
                worst, where = rel, (name, idx, ana, num)
    return GradCheckReport(worst, checked, skipped, where)
