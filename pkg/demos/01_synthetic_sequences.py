"""Synthetic sequences: what the generator produces and how it is stored.

Run:  python3 demos/01_synthetic_sequences.py [OUT_DIR]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from repcount import data, render, similarity

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="repcount-demo-"))
out.mkdir(parents=True, exist_ok=True)

# %% One sequence from the default spec.
# Each repetition is a time-warped copy of one per-sequence motif curve,
# written into a random subset of the dimensions. Idle stretches hold a
# constant signature. Noise covers everything.
spec = data.SyntheticSpec(rng_seed=7)
seq, track = data.generate_sequence(spec)
print(f"T={seq.T} frames, D={seq.D} dims, {track.count()} repetitions")
for s, e in track.intervals:
    print(f"  frames {s:3d}..{e:3d}  ({e - s + 1} long)")

# %% Durations differ, so repetitions are warped to different lengths.
# Per-frame motion inside a repetition is small; the jump at each start is large.
step = np.linalg.norm(np.diff(seq.frames, axis=0), axis=1)
starts = np.array(track.starts[1:]) - 1
print(f"median frame-to-frame change: {np.median(step):.2f}")
print(f"median change into a start:   {np.median(step[starts]):.2f}")

# %% Files: binary embeddings ("RACE") and JSON annotations.
data.write_embeddings(seq, out / "seq.race")
data.write_annotations(track, out / "seq.json")
assert data.read_embeddings(out / "seq.race") == seq
assert data.read_annotations(out / "seq.json") == track
print((out / "seq.json").read_text())

# %% The reference similarity matrix drawn from the annotations alone.
# Bright lines connect matching phases of every pair of repetitions.
render.write_ppm(out / "reference.ppm", render.heatmap(similarity.reference_tsm(track)))
print(f"wrote {out / 'reference.ppm'}")
