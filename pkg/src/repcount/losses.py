"""Training objectives and their gradients.

Both losses are plain sums (no averaging) so that finite-difference checks
compare directly against the formulas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_LAMBDA = 1.0e-5


@dataclass(frozen=True)
class LossReport:
    sse: float
    treco: float
    total: float
    lam: float


def treco_loss(S, S_ref):
    """Squared error between TSMs, counted only where the reference is non-zero.

    Returns ``(loss, dloss/dS)``.
    """
    S = np.asarray(S)
    S_ref = np.asarray(S_ref)
    if S.shape != S_ref.shape:
        raise ValueError(f"shape mismatch: {S.shape} vs {S_ref.shape}")
    mask = S_ref != 0
    resid = np.where(mask, S - S_ref, 0.0)
    return float(np.sum(resid * resid)), 2.0 * resid


def sse_loss(target, predicted):
    """Sum of squared per-frame errors; returns ``(loss, dloss/dpredicted)``."""
    target = np.asarray(target)
    predicted = np.asarray(predicted)
    if target.shape != predicted.shape:
        raise ValueError(f"length mismatch: {target.shape} vs {predicted.shape}")
    resid = target - predicted
    return float(np.sum(resid * resid)), -2.0 * resid


def total_loss(sse: float, treco: float, lam: float = DEFAULT_LAMBDA) -> LossReport:
    # NaN components pass through so the training loop can report where they arose
    for name, v in (("sse", sse), ("treco", treco)):
        if v < 0:
            raise ValueError(f"{name} must be >= 0, got {v}")
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return LossReport(sse=float(sse), treco=float(treco), total=float(sse + lam * treco), lam=float(lam))


def mean_report(reports) -> LossReport:
    reports = list(reports)
    if not reports:
        raise ValueError("no loss reports to average")
    n = len(reports)
    sse = math.fsum(r.sse for r in reports) / n
    treco = math.fsum(r.treco for r in reports) / n
    total = math.fsum(r.total for r in reports) / n
    return LossReport(sse=sse, treco=treco, total=total, lam=reports[0].lam)
