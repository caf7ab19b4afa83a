"""Counting metrics: Off-By-One Accuracy and ground-truth-normalized MAE."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import counting, network
from .counting import DEFAULT_THRESHOLD


@dataclass(frozen=True)
class EvalResult:
    mae: float
    oboa: float
    n: int
    excluded_zero_gt: int = 0
    threshold: float = DEFAULT_THRESHOLD
    # (predicted, ground_truth, abs_err_normalized or None, within_one)
    per_item: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "mae": self.mae,
            "oboa": self.oboa,
            "n": self.n,
            "excluded_zero_gt": self.excluded_zero_gt,
            "threshold": self.threshold,
            "per_item": [list(item) for item in self.per_item],
        }, indent=2)


def _check(pairs):
    pairs = [(int(p), int(g)) for p, g in pairs]
    if not pairs:
        raise ValueError("need at least one (predicted, ground_truth) pair")
    if any(g < 0 for _, g in pairs):
        raise ValueError("ground-truth counts must be >= 0")
    return pairs


def oboa(pairs) -> float:
    """Fraction of pairs whose predicted count is within one of the truth."""
    pairs = _check(pairs)
    return sum(abs(p - g) <= 1 for p, g in pairs) / len(pairs)


def mae(pairs) -> float:
    """Mean of |p - g| / g. Pairs with g == 0 are skipped; all-zero truth gives nan."""
    pairs = _check(pairs)
    errs = [abs(p - g) / g for p, g in pairs if g > 0]
    return math.fsum(errs) / len(errs) if errs else float("nan")


def summarize(pairs, threshold=DEFAULT_THRESHOLD) -> EvalResult:
    pairs = _check(pairs)
    items = [(p, g, abs(p - g) / g if g > 0 else None, abs(p - g) <= 1) for p, g in pairs]
    return EvalResult(
        mae=mae(pairs),
        oboa=oboa(pairs),
        n=len(pairs),
        excluded_zero_gt=sum(g == 0 for _, g in pairs),
        threshold=float(threshold),
        per_item=items,
    )


def evaluate(state, dataset, thresholds=(DEFAULT_THRESHOLD,), stride=1, sigma=counting.DEFAULT_SIGMA,
             oracle=False) -> list:
    """Count repetitions on every (sequence, track) pair; one EvalResult per threshold.

    The network runs once per sequence regardless of how many thresholds are
    swept. With ``oracle=True`` the exact start targets replace the network
    output and ``state`` is ignored.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    thresholds = [float(t) for t in thresholds]
    series = []
    for seq, track in dataset:
        if oracle:
            probs = counting.make_target(track.strided(stride), "start", sigma)
        else:
            probs = network.predict(state, seq, stride)
        series.append((counting.find_peaks(probs), track.count()))
    results = []
    for thr in thresholds:
        if not 0 <= thr <= 1:
            raise ValueError(f"threshold must lie in [0, 1], got {thr}")
        pairs = [(sum(pk.prominence > thr for pk in peaks), gt) for peaks, gt in series]
        results.append(summarize(pairs, thr))
    return results


def as_array(result: EvalResult) -> np.ndarray:
    return np.array([(p, g) for p, g, _, _ in result.per_item], dtype=int)
