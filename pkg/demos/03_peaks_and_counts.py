"""From a start-probability curve to a count.

Run:  python3 demos/03_peaks_and_counts.py [OUT_DIR]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from repcount import counting, metrics, render
from repcount.data import AnnotationTrack

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="repcount-demo-"))
out.mkdir(parents=True, exist_ok=True)

# %% The training target: a unit Gaussian bump on every start frame.
track = AnnotationTrack(((4, 15), (19, 33), (36, 47), (52, 60)), 64)
target = counting.make_target(track, "start", sigma=1.0)
print("target peaks at", [p.index for p in counting.find_peaks(target)])

# %% A plausible network output: the same bumps, rescaled, plus ripple.
rng = np.random.default_rng(0)
probs = np.clip(0.8 * target + 0.08 * rng.standard_normal(64).cumsum() % 0.15, 0, 1)

# %% Prominence measures how far a peak stands above the higher of its two
# surrounding valleys. Ripple makes many low-prominence peaks.
for p in counting.find_peaks(probs):
    print(f"  peak at {p.index:2d}  height {p.height:.2f}  prominence {p.prominence:.2f}")

# %% The threshold decides which of them count.
for thr in (0.05, 0.1, 0.2, 0.4):
    n, _ = counting.count_repetitions(probs, thr)
    print(f"threshold {thr:.2f}: count {n}  (truth {track.count()})")

# %% Scoring a batch of (predicted, true) counts.
pairs = [(4, 4), (5, 4), (7, 4), (3, 3)]
print(f"OBOA {metrics.oboa(pairs):.2f}, MAE {metrics.mae(pairs):.3f}")

_, kept = counting.count_repetitions(probs, 0.2)
render.write_ppm(out / "probs.ppm", render.probability_trace(probs, [p.index for p in kept]))
print(f"wrote {out / 'probs.ppm'}")
