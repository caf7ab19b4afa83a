"""Temporal self-similarity: predicted vs reference matrices.

Run:  python3 demos/02_self_similarity.py [OUT_DIR]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from repcount import data, losses, render, similarity

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="repcount-demo-"))
out.mkdir(parents=True, exist_ok=True)

# %% A sequence with equal-length repetitions and no noise:
# corresponding frames of two repetitions are identical, so their
# similarity is maximal after row normalization.
spec = data.SyntheticSpec(rng_seed=3, T_range=(60, 60), reps_range=(4, 4), duration_range=(12, 12),
                          gap_range=(2, 2), noise_sigma=0.0, break_prob=0.0)
seq, track = data.generate_sequence(spec)
S = similarity.predicted_tsm(seq)
a, b = track.starts[0], track.starts[1]
print("S between matching frames of reps 1 and 2:", S[a + 5, b + 5])

# %% The three measures on the same noisy sequence.
noisy, ntrack = data.generate_sequence(data.SyntheticSpec(rng_seed=3))
R = similarity.reference_tsm(ntrack)
for kind in similarity.MEASURES:
    P = similarity.predicted_tsm(noisy, similarity.SimilarityMeasure(kind))
    loss, _ = losses.treco_loss(P, R)
    print(f"{kind:12s} masked SSE against the reference: {loss:9.2f}")
    render.write_ppm(out / f"predicted_{kind}.ppm", render.heatmap(P))

# %% The loss only looks where the reference is non-zero.
# Idle stretches may look alike (they share one signature), and the mask
# keeps the loss from pushing them apart.
print(f"fraction of reference entries that count: {np.mean(R > 0):.3f}")
render.write_ppm(out / "reference.ppm", render.heatmap(R))

# %% Smoothing widens the lines; sigma 0 gives the binary matrix.
for sigma in (0.0, 1.0, 3.0):
    render.write_ppm(out / f"reference_sigma{sigma:g}.ppm",
                     render.heatmap(similarity.reference_tsm(ntrack, sigma)))
print(f"images in {out}")
